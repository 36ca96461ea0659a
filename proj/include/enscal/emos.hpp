// Baseline post-processor: a single Gaussian predictive law whose mean is
// affine in the per-source ensemble means and whose variance is affine in
// the pooled ensemble variance. Fit by minimizing the mean closed-form
// Gaussian score over the training record.
#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "enscal/core.hpp"
#include "enscal/error.hpp"
#include "enscal/optimize.hpp"
#include "enscal/verification.hpp"

namespace enscal {

// Variance of all members pooled across sources (sample variance; zero for
// a single pooled member).
inline double pooled_ensemble_variance(const ForecastCase& c) {
    double n = 0.0, mean = 0.0;
    for (const auto& row : c.members)
        for (double v : row) {
            n += 1.0;
            mean += v;
        }
    require(n >= 1.0, errc::validation, "case has no members");
    if (n < 2.0) return 0.0;
    mean /= n;
    double ss = 0.0;
    for (const auto& row : c.members)
        for (double v : row) ss += (v - mean) * (v - mean);
    return ss / (n - 1.0);
}

// Predictive mean and standard deviation. A collapsed variance (all members
// identical with no offset) degrades to the smallest positive double rather
// than zero.
inline std::pair<double, double> predict_emos(const EmosParams& p,
                                              const ForecastCase& c) {
    p.validate();
    require(c.members.size() == p.b.size(), errc::validation,
            "parameter/source count mismatch");
    double mu = p.a;
    for (std::size_t s = 0; s < p.b.size(); ++s) {
        require(!c.members[s].empty(), errc::schema, "source without members");
        mu += p.b[s] * ensemble_mean(c.members[s]);
    }
    double var = p.c + p.d * pooled_ensemble_variance(c);
    double sigma = var > 0.0 ? std::sqrt(var) : std::numeric_limits<double>::min();
    return {mu, sigma};
}

namespace detail {

// Solve A x = rhs by Gaussian elimination with partial pivoting.
inline std::vector<double> solve_linear(std::vector<std::vector<double>> A,
                                        std::vector<double> rhs) {
    const std::size_t n = rhs.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(A[r][col]) > std::abs(A[pivot][col])) pivot = r;
        if (std::abs(A[pivot][col]) < 1e-12) return {};  // singular; caller falls back
        std::swap(A[col], A[pivot]);
        std::swap(rhs[col], rhs[pivot]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = A[r][col] / A[col][col];
            for (std::size_t k = col; k < n; ++k) A[r][k] -= f * A[col][k];
            rhs[r] -= f * rhs[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = rhs[i] / A[i][i];
    return x;
}

}  // namespace detail

// Minimum-score fit of the baseline. Searches over (a, b, sqrt(c), sqrt(d))
// so the variance terms stay nonnegative, starting from a least-squares
// fit, from climatology, and from equal weights; keeps the best optimum.
inline EmosParams fit_emos(const Dataset& ds) {
    validate_dataset(ds);
    require(!ds.cases.empty(), errc::validation, "empty dataset");
    require(ds.cases.size() >= 2, errc::degenerate,
            "baseline fit needs at least two cases");
    require(!ds.schema.empty(), errc::validation, "baseline needs predictor sources");
    require_observations(ds);
    const std::size_t E = ds.schema.size();
    const std::size_t n = ds.cases.size();

    std::vector<std::vector<double>> xbar(n, std::vector<double>(E));
    std::vector<double> s2(n), y(n);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t s = 0; s < E; ++s)
            xbar[t][s] = ensemble_mean(ds.cases[t].members[s]);
        s2[t] = pooled_ensemble_variance(ds.cases[t]);
        y[t] = *ds.cases[t].observation;
    }
    double y_mean = ensemble_mean(y);
    double y_var = 0.0;
    for (double v : y) y_var += (v - y_mean) * (v - y_mean);
    y_var /= static_cast<double>(n - 1);

    // Packed vector: a, b_1..b_E, u, v with c = u^2, d = v^2.
    auto objective = [&](const std::vector<double>& th) {
        double c = th[E + 1] * th[E + 1];
        double d = th[E + 2] * th[E + 2];
        double total = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            double mu = th[0];
            for (std::size_t s = 0; s < E; ++s) mu += th[1 + s] * xbar[t][s];
            double var = c + d * s2[t];
            double sigma = var > 0.0 ? std::sqrt(var) : std::numeric_limits<double>::min();
            total += crps_gaussian(y[t], mu, sigma);
        }
        return total / static_cast<double>(n);
    };

    std::vector<std::vector<double>> starts;
    {
        // Least squares of y on the source means.
        std::vector<std::vector<double>> A(E + 1, std::vector<double>(E + 1, 0.0));
        std::vector<double> rhs(E + 1, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            std::vector<double> row(E + 1, 1.0);
            for (std::size_t s = 0; s < E; ++s) row[1 + s] = xbar[t][s];
            for (std::size_t i = 0; i <= E; ++i) {
                rhs[i] += row[i] * y[t];
                for (std::size_t j = 0; j <= E; ++j) A[i][j] += row[i] * row[j];
            }
        }
        std::vector<double> beta = detail::solve_linear(A, rhs);
        if (!beta.empty()) {
            double rss = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                double fit = beta[0];
                for (std::size_t s = 0; s < E; ++s) fit += beta[1 + s] * xbar[t][s];
                rss += (y[t] - fit) * (y[t] - fit);
            }
            double resid_sd = std::sqrt(std::max(rss / static_cast<double>(n), 1e-12));
            std::vector<double> th(E + 3, 0.0);
            th[0] = beta[0];
            for (std::size_t s = 0; s < E; ++s) th[1 + s] = beta[1 + s];
            th[E + 1] = resid_sd;
            th[E + 2] = 0.5;
            starts.push_back(th);
        }
    }
    {
        std::vector<double> th(E + 3, 0.0);
        th[0] = y_mean;
        th[E + 1] = std::sqrt(std::max(y_var, 1e-12));
        th[E + 2] = 0.0;
        starts.push_back(th);  // climatology
    }
    {
        std::vector<double> th(E + 3, 0.0);
        double mean_forecast = 0.0;
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t s = 0; s < E; ++s)
                mean_forecast += xbar[t][s] / static_cast<double>(n * E);
        th[0] = y_mean - mean_forecast;
        for (std::size_t s = 0; s < E; ++s) th[1 + s] = 1.0 / static_cast<double>(E);
        th[E + 1] = std::sqrt(std::max(y_var, 1e-12));
        th[E + 2] = 0.5;
        starts.push_back(th);
    }

    NelderMeadOptions opt;
    opt.max_iterations = 8000;
    opt.tolerance = 1e-11;
    opt.polish_restarts = 3;
    NelderMeadResult best;
    for (const auto& start : starts) {
        NelderMeadResult r = nelder_mead(objective, start, opt);
        if (r.value < best.value) best = r;
    }

    EmosParams p;
    p.a = best.x[0];
    p.b.assign(best.x.begin() + 1, best.x.begin() + 1 + static_cast<long>(E));
    p.c = best.x[E + 1] * best.x[E + 1];
    p.d = best.x[E + 2] * best.x[E + 2];
    p.validate();
    return p;
}

}  // namespace enscal
