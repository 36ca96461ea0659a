// Probabilistic verification toolkit: continuous ranked probability scores
// (sample, Gaussian and Student closed forms), rank histograms with a
// chi-square flatness test, a per-member exchangeability test, interval
// coverage, and a percentile bootstrap for mean scores.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "enscal/core.hpp"
#include "enscal/error.hpp"
#include "enscal/rng.hpp"
#include "enscal/stats.hpp"

namespace enscal {

// Linear-interpolation quantile of an ascending-sorted vector.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
    require(!sorted.empty(), errc::validation, "quantile of empty sample");
    require(p >= 0.0 && p <= 1.0, errc::validation, "quantile level outside [0,1]");
    const double h = p * (static_cast<double>(sorted.size()) - 1.0);
    const auto i = static_cast<std::size_t>(h);
    if (i + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(i);
    return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

// Sample score: mean absolute error against the sample minus half the mean
// absolute spread between members. Computed with the sorted-sample identity,
// which matches the pairwise double sum exactly.
inline double crps_sample(std::vector<double> sample, double y) {
    require(!sample.empty(), errc::validation, "score of an empty sample");
    for (double v : sample)
        require(std::isfinite(v), errc::domain, "non-finite sample value");
    require(std::isfinite(y), errc::domain, "non-finite observation");
    const double M = static_cast<double>(sample.size());
    std::sort(sample.begin(), sample.end());
    double abs_err = 0.0, spread = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        abs_err += std::abs(sample[i] - y);
        spread += (2.0 * static_cast<double>(i + 1) - M - 1.0) * sample[i];
    }
    return abs_err / M - spread / (M * M);
}

// Closed form for a Gaussian predictive law.
inline double crps_gaussian(double y, double mu, double sigma) {
    require(std::isfinite(mu) && std::isfinite(sigma) && sigma > 0.0,
            errc::validation, "Gaussian score needs sigma > 0");
    const double z = (y - mu) / sigma;
    return sigma * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - inv_sqrt_pi);
}

// Closed form for a scaled Student predictive law (dof > 1).
inline double crps_student(double y, double location, double scale, double dof) {
    require(scale > 0.0 && dof > 1.0, errc::validation,
            "Student score needs scale > 0 and dof > 1");
    const double z = (y - location) / scale;
    const double Fz = student_cdf(z, dof);
    const double fz = student_pdf(z, dof);
    const double b_half = beta_fn(0.5, 0.5 * dof);
    const double term = 2.0 * std::sqrt(dof) / (dof - 1.0) *
                        beta_fn(0.5, dof - 0.5) / (b_half * b_half);
    return scale * (z * (2.0 * Fz - 1.0) + 2.0 * fz * (dof + z * z) / (dof - 1.0) - term);
}

// Rank of the observation within the sample, ties broken uniformly at
// random, so a calibrated forecast yields a uniform rank on 1..M+1.
inline int observation_rank(const std::vector<double>& sample, double y, Rng& rng) {
    require(!sample.empty(), errc::validation, "rank within an empty sample");
    std::size_t below = 0, ties = 0;
    for (double v : sample) {
        if (v < y) ++below;
        else if (v == y) ++ties;
    }
    std::size_t offset = ties > 0 ? rng.below(ties + 1) : 0;
    return static_cast<int>(1 + below + offset);
}

struct RankHistogram {
    int members = 0;                  // sample size; bins = members + 1
    std::vector<long long> counts;

    static RankHistogram for_members(int members) {
        RankHistogram h;
        h.members = members;
        h.counts.assign(static_cast<std::size_t>(members) + 1, 0);
        return h;
    }

    void add(int rank) {
        require(rank >= 1 && rank <= members + 1, errc::validation,
                "rank outside 1..members+1");
        ++counts[static_cast<std::size_t>(rank - 1)];
    }

    long long total() const {
        long long t = 0;
        for (long long c : counts) t += c;
        return t;
    }
};

struct Chi2Flatness {
    double statistic = 0.0;
    double p_value = 1.0;
    bool low_counts = false;  // fewer than 5 expected per bin
};

// Pearson test of the bin counts against a flat histogram.
inline Chi2Flatness chi2_flatness(const std::vector<long long>& counts) {
    require(counts.size() >= 2, errc::validation, "test needs at least two bins");
    long long total = 0;
    for (long long c : counts) {
        require(c >= 0, errc::validation, "negative bin count");
        total += c;
    }
    require(total > 0, errc::validation, "empty histogram");
    const double expected = static_cast<double>(total) / static_cast<double>(counts.size());
    Chi2Flatness out;
    for (long long c : counts) {
        const double d = static_cast<double>(c) - expected;
        out.statistic += d * d / expected;
    }
    out.p_value = chi2_sf(static_cast<double>(counts.size()) - 1.0, out.statistic);
    out.low_counts = expected < 5.0;
    return out;
}

// Per-member test of exchangeability for one source: each member's rank
// within its ensemble should be uniform across cases. Returns one p-value
// per member.
inline std::vector<double> exchangeability_rank_test(const Dataset& ds,
                                                     int source_id, Rng& rng) {
    validate_dataset(ds);
    const auto s = static_cast<std::size_t>(ds.schema_index(source_id));
    const int K = ds.schema[s].member_count;
    require(K >= 2, errc::validation,
            "source " + std::to_string(source_id) +
                " has a single member; exchangeability is vacuous");
    require(!ds.cases.empty(), errc::validation, "empty dataset");

    std::vector<std::vector<long long>> counts(
        static_cast<std::size_t>(K), std::vector<long long>(static_cast<std::size_t>(K), 0));
    std::vector<int> order(static_cast<std::size_t>(K));
    std::vector<double> tiebreak(static_cast<std::size_t>(K));
    for (const auto& c : ds.cases) {
        const auto& mem = c.members[s];
        for (int k = 0; k < K; ++k) {
            order[static_cast<std::size_t>(k)] = k;
            tiebreak[static_cast<std::size_t>(k)] = rng.uniform();
        }
        std::sort(order.begin(), order.end(), [&](int i, int j) {
            double vi = mem[static_cast<std::size_t>(i)], vj = mem[static_cast<std::size_t>(j)];
            if (vi != vj) return vi < vj;
            return tiebreak[static_cast<std::size_t>(i)] < tiebreak[static_cast<std::size_t>(j)];
        });
        for (int r = 0; r < K; ++r)
            ++counts[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])]
                    [static_cast<std::size_t>(r)];
    }

    std::vector<double> pvalues(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        Chi2Flatness f = chi2_flatness(counts[static_cast<std::size_t>(k)]);
        pvalues[static_cast<std::size_t>(k)] = f.p_value;
    }
    return pvalues;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Fraction of truths falling inside their (closed) intervals.
inline double coverage_rate(const std::vector<Interval>& intervals,
                            const std::vector<double>& truths) {
    require(intervals.size() == truths.size(), errc::validation,
            "one interval per truth required");
    require(!intervals.empty(), errc::validation, "empty coverage input");
    double hits = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        require(intervals[i].lo <= intervals[i].hi, errc::validation,
                "interval bounds out of order");
        if (truths[i] >= intervals[i].lo && truths[i] <= intervals[i].hi) hits += 1.0;
    }
    return hits / static_cast<double>(truths.size());
}

struct BootstrapCI {
    double lo = 0.0;
    double hi = 0.0;
};

// Percentile bootstrap interval for the mean of `values`.
inline BootstrapCI bootstrap_ci(const std::vector<double>& values, int B,
                                double level, Rng& rng) {
    require(!values.empty(), errc::validation, "bootstrap of an empty sample");
    require(B >= 1, errc::validation, "need at least one resample");
    require(level > 0.0 && level < 1.0, errc::validation,
            "confidence level must lie in (0,1)");
    const std::size_t n = values.size();
    std::vector<double> means(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += values[rng.below(n)];
        means[static_cast<std::size_t>(b)] = s / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    const double tail = 0.5 * (1.0 - level);
    return {quantile_sorted(means, tail), quantile_sorted(means, 1.0 - tail)};
}

}  // namespace enscal
