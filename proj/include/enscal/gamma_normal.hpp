// Latent-signal mixture model for multi-source ensembles. Every source
// (including the observation channel, pinned to unit slope and noise scale)
// regresses on a shared latent signal Z whose scale, together with all the
// noise terms, is mixed over a gamma-distributed precision. Conjugacy makes
// the per-case posterior of (Z, precision) normal-gamma, which yields an
// exact EM fit, a closed-form marginal likelihood, and a Student predictive
// law.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "enscal/core.hpp"
#include "enscal/error.hpp"
#include "enscal/optimize.hpp"
#include "enscal/stats.hpp"

namespace enscal {

struct EMConfig {
    double epsilon = 1e-6;      // max-norm stopping threshold on parameters
    int max_iterations = 500;
    double alpha_solver_tolerance = 1e-10;
    double alpha_lo = 1e-3;
    double alpha_hi = 1e3;
};

// Normal-gamma posterior of (Z, precision) for one case: precision is
// gamma(alpha, beta), Z given precision is normal(m, lambda / precision).
struct PosteriorNG {
    double m = 0.0;
    double lambda = 0.0;
    double alpha = 0.0;
    double beta = 0.0;

    double e_prec() const { return alpha / beta; }
    double e_log_prec() const { return digamma(alpha) - std::log(beta); }
    double e_z_prec() const { return m * alpha / beta; }
    double e_zz_prec() const { return lambda + m * m * alpha / beta; }
};

namespace detail {

// Accumulate the conjugate update over the case's channels. The observation
// enters as a unit-slope, unit-scale, single-member source when present.
inline PosteriorNG conjugate_posterior(const GammaNormalParams& p,
                                       const std::vector<std::vector<double>>& members,
                                       const double* observation) {
    require(members.size() == static_cast<std::size_t>(p.source_count()),
            errc::validation, "parameter/source count mismatch");
    double inv_lambda = 1.0 / p.lambda;
    double weighted_dev = 0.0;  // sum of (b_e/c_e^2) K_e (xbar_e - a_e)
    double sq = 0.0;            // sum of (x - a_e)^2 / c_e^2 over all members
    double count = 0.0;

    if (observation != nullptr) {
        double d = *observation - p.a_of(0);
        inv_lambda += 1.0;
        weighted_dev += d;
        sq += d * d;
        count += 1.0;
    }
    for (int e = 1; e <= p.source_count(); ++e) {
        const auto& mem = members[static_cast<std::size_t>(e - 1)];
        double K = static_cast<double>(mem.size());
        double b = p.b_of(e);
        double inv_c2 = 1.0 / (p.c_of(e) * p.c_of(e));
        double sum = 0.0, sumsq = 0.0;
        for (double x : mem) {
            double d = x - p.a_of(e);
            sum += d;
            sumsq += d * d;
        }
        inv_lambda += K * b * b * inv_c2;
        weighted_dev += b * inv_c2 * sum;
        sq += inv_c2 * sumsq;
        count += K;
    }

    PosteriorNG post;
    post.lambda = 1.0 / inv_lambda;
    post.m = post.lambda * weighted_dev;
    post.alpha = p.alpha + 0.5 * count;
    post.beta = p.beta + 0.5 * (sq - post.m * post.m * inv_lambda);
    require(post.beta > 0.0, errc::numeric, "posterior rate collapsed");
    return post;
}

inline double member_count(const Dataset& ds) {
    double n = 0.0;
    for (const auto& s : ds.schema) n += s.member_count;
    return n;
}

}  // namespace detail

// Posterior of (Z, precision) given a complete case (observation included).
inline PosteriorNG e_step(const GammaNormalParams& p, const ForecastCase& c) {
    require(c.observation.has_value(), errc::validation,
            "case t=" + std::to_string(c.time) + " has no observation");
    return detail::conjugate_posterior(p, c.members, &*c.observation);
}

// Posterior of (Z, precision) given the predictor sources only.
inline PosteriorNG predictive_posterior(const GammaNormalParams& p,
                                        const ForecastCase& c) {
    require(p.source_count() >= 1, errc::validation,
            "prediction needs at least one predictor source");
    return detail::conjugate_posterior(p, c.members, nullptr);
}

// Marginal log-likelihood of the observed data, summed over cases. The
// latent pair integrates out in closed form through the same conjugacy that
// drives the E-step.
inline double observed_loglik(const GammaNormalParams& p, const Dataset& ds) {
    p.validate();
    require(!ds.cases.empty(), errc::validation, "empty dataset");
    require_observations(ds);
    double total = 0.0;
    double log_c_sum = 0.0;
    for (int e = 1; e <= p.source_count(); ++e)
        log_c_sum += ds.schema[static_cast<std::size_t>(e - 1)].member_count *
                     std::log(p.c_of(e));
    const double n_t = detail::member_count(ds) + 1.0;
    for (const auto& c : ds.cases) {
        PosteriorNG post = e_step(p, c);
        total += -0.5 * n_t * log_2pi - log_c_sum +
                 0.5 * std::log(post.lambda / p.lambda) +
                 p.alpha * std::log(p.beta) - post.alpha * std::log(post.beta) +
                 lgamma(post.alpha) - lgamma(p.alpha);
    }
    return total;
}

// Solve log(coefficient * alpha) - digamma(alpha) = rhs. The left side is
// strictly decreasing in alpha, so bisection is safe once bracketed.
inline double solve_alpha(double log_ratio_coefficient, double rhs,
                          const EMConfig& cfg = {}) {
    require(log_ratio_coefficient > 0.0, errc::solver,
            "shape equation needs a positive coefficient");
    auto g = [&](double alpha) {
        return std::log(log_ratio_coefficient * alpha) - digamma(alpha) - rhs;
    };
    return bisect_decreasing(g, cfg.alpha_lo, cfg.alpha_hi,
                             cfg.alpha_solver_tolerance);
}

// Expected complete-data deviance under the given posteriors, up to an
// additive term that does not depend on the parameters. Decreases (weakly)
// across an M-step.
inline double expected_complete_deviance(const GammaNormalParams& p,
                                         const Dataset& ds,
                                         const std::vector<PosteriorNG>& posts) {
    require(posts.size() == ds.cases.size(), errc::validation,
            "one posterior per case required");
    double dev = 0.0;
    for (std::size_t t = 0; t < ds.cases.size(); ++t) {
        const auto& c = ds.cases[t];
        const auto& q = posts[t];
        double w = q.e_prec();
        double l = q.e_log_prec();
        dev += q.e_zz_prec() / p.lambda + std::log(p.lambda) - 2.0 * p.alpha * l +
               2.0 * p.beta * w - 2.0 * p.alpha * std::log(p.beta) +
               2.0 * lgamma(p.alpha);
        for (int e = 0; e <= p.source_count(); ++e) {
            double a = p.a_of(e), b = p.b_of(e), c2 = p.c_of(e) * p.c_of(e);
            double sum = 0.0;
            double K = 0.0;
            if (e == 0) {
                double d = *c.observation - a - b * q.m;
                sum = d * d;
                K = 1.0;
            } else {
                const auto& mem = c.members[static_cast<std::size_t>(e - 1)];
                for (double x : mem) {
                    double d = x - a - b * q.m;
                    sum += d * d;
                }
                K = static_cast<double>(mem.size());
            }
            dev += (w * sum + K * b * b * q.lambda) / c2 + K * std::log(c2);
        }
    }
    return dev;
}

// Exact maximizer of the expected complete log-likelihood. Slopes and
// intercepts come from a weighted least-squares system, the noise scales
// from the expected residual spread, and the mixing shape from a monotone
// scalar equation.
inline GammaNormalParams m_step(const Dataset& ds,
                                const std::vector<PosteriorNG>& posts,
                                const GammaNormalParams& current,
                                const EMConfig& cfg = {}) {
    require(!ds.cases.empty(), errc::validation, "empty dataset");
    require(posts.size() == ds.cases.size(), errc::validation,
            "one posterior per case required");
    const int E = current.source_count();
    const double n = static_cast<double>(ds.cases.size());
    const double post_lambda = posts[0].lambda;
    const double post_alpha = posts[0].alpha;

    double G = 0.0, B = 0.0, H = 0.0, log_beta_sum = 0.0;
    for (const auto& q : posts) {
        G += q.m / q.beta;
        B += 1.0 / q.beta;
        H += q.m * q.m / q.beta;
        log_beta_sum += std::log(q.beta);
    }

    GammaNormalParams next = current;

    // Per-source weighted regression of members on the posterior signal.
    for (int e = 0; e <= E; ++e) {
        double C_e = 0.0, D_e = 0.0;
        for (std::size_t t = 0; t < ds.cases.size(); ++t) {
            double xbar = e == 0 ? *ds.cases[t].observation
                                 : ensemble_mean(ds.cases[t].members[static_cast<std::size_t>(e - 1)]);
            C_e += posts[t].m * xbar / posts[t].beta;
            D_e += xbar / posts[t].beta;
        }
        if (e >= 1) {
            if (G != 0.0) {
                double denom = n * post_lambda / post_alpha + H - G * G / B;
                next.b[static_cast<std::size_t>(e - 1)] = (C_e - G * D_e / B) / denom;
            }
            // else: posterior means carry no signal this iteration; keep the
            // current slope and refresh everything else.
        }
        next.a[static_cast<std::size_t>(e)] = D_e / B - next.b_of(e) * G / B;
    }

    // Noise scale ratios from the expected residual spread around the fitted
    // signal, plus the slope-weighted posterior variance of the signal.
    for (int e = 1; e <= E; ++e) {
        double K = static_cast<double>(ds.schema[static_cast<std::size_t>(e - 1)].member_count);
        double a = next.a_of(e), b = next.b_of(e);
        double acc = 0.0;
        for (std::size_t t = 0; t < ds.cases.size(); ++t) {
            const auto& mem = ds.cases[t].members[static_cast<std::size_t>(e - 1)];
            double fitted = a + b * posts[t].m;
            double sum = 0.0;
            for (double x : mem) {
                double d = x - fitted;
                sum += d * d;
            }
            acc += sum / posts[t].beta;
        }
        double c2 = b * b * post_lambda + post_alpha * acc / (n * K);
        require(c2 > 0.0, errc::degenerate,
                "noise scale collapsed for source " +
                    std::to_string(ds.schema[static_cast<std::size_t>(e - 1)].source_id));
        next.c[static_cast<std::size_t>(e - 1)] = std::sqrt(c2);
    }

    next.lambda = post_lambda + post_alpha * H / n;

    const double coeff = n / (post_alpha * B);
    const double rhs = log_beta_sum / n - digamma(post_alpha);
    next.alpha = solve_alpha(coeff, rhs, cfg);
    next.beta = n * next.alpha / (post_alpha * B);

    next.validate();
    return next;
}

// Method-of-moments starting point for the EM iteration.
inline GammaNormalParams moment_init(const Dataset& ds) {
    require(!ds.cases.empty(), errc::validation, "empty dataset");
    require_observations(ds);
    const double n = static_cast<double>(ds.cases.size());
    require(n >= 2, errc::degenerate, "initialization needs at least two cases");

    std::vector<double> y;
    y.reserve(ds.cases.size());
    for (const auto& c : ds.cases) y.push_back(*c.observation);
    double y_mean = ensemble_mean(y);
    double y_var = 0.0;
    for (double v : y) y_var += (v - y_mean) * (v - y_mean);
    y_var /= (n - 1.0);
    require(y_var > 0.0, errc::degenerate,
            "all observations identical; nothing to fit");
    double y_sd = std::sqrt(y_var);

    auto clip = [](double v) { return std::clamp(v, 0.1, 10.0); };

    GammaNormalParams p;
    const int E = static_cast<int>(ds.schema.size());
    p.a.assign(static_cast<std::size_t>(E) + 1, 0.0);
    p.b.assign(static_cast<std::size_t>(E), 1.0);
    p.c.assign(static_cast<std::size_t>(E), 1.0);
    p.a[0] = y_mean;

    for (int e = 1; e <= E; ++e) {
        std::vector<double> xbar;
        xbar.reserve(ds.cases.size());
        double within_var = 0.0;
        bool has_within = ds.schema[static_cast<std::size_t>(e - 1)].member_count >= 2;
        for (const auto& c : ds.cases) {
            const auto& mem = c.members[static_cast<std::size_t>(e - 1)];
            double m = ensemble_mean(mem);
            xbar.push_back(m);
            if (has_within) {
                double s = 0.0;
                for (double x : mem) s += (x - m) * (x - m);
                within_var += s / (static_cast<double>(mem.size()) - 1.0);
            }
        }
        double x_mean = ensemble_mean(xbar);
        double cov = 0.0;
        for (std::size_t t = 0; t < xbar.size(); ++t)
            cov += (xbar[t] - x_mean) * (y[t] - y_mean);
        cov /= (n - 1.0);
        double b0 = clip(cov / y_var);
        p.b[static_cast<std::size_t>(e - 1)] = b0;
        p.a[static_cast<std::size_t>(e)] = x_mean - b0 * (y_mean - p.a[0]);
        p.c[static_cast<std::size_t>(e - 1)] =
            has_within ? clip(std::sqrt(within_var / n) / y_sd) : 1.0;
    }

    p.lambda = 0.5;
    p.alpha = 3.0;
    p.beta = (p.alpha - 1.0) * y_var;
    p.validate();
    return p;
}

inline std::vector<std::string> param_names(int source_count) {
    std::vector<std::string> names = {"alpha", "beta", "lambda"};
    for (int e = 0; e <= source_count; ++e) names.push_back("a" + std::to_string(e));
    for (int e = 1; e <= source_count; ++e) names.push_back("b" + std::to_string(e));
    for (int e = 1; e <= source_count; ++e) names.push_back("c" + std::to_string(e));
    return names;
}

inline std::vector<double> pack_params(const GammaNormalParams& p) {
    std::vector<double> v = {p.alpha, p.beta, p.lambda};
    v.insert(v.end(), p.a.begin(), p.a.end());
    v.insert(v.end(), p.b.begin(), p.b.end());
    v.insert(v.end(), p.c.begin(), p.c.end());
    return v;
}

inline GammaNormalParams unpack_params(const std::vector<double>& v, int source_count) {
    auto E = static_cast<std::size_t>(source_count);
    require(v.size() == 3 + (E + 1) + 2 * E, errc::validation,
            "packed parameter vector has wrong length");
    GammaNormalParams p;
    p.alpha = v[0];
    p.beta = v[1];
    p.lambda = v[2];
    p.a.assign(v.begin() + 3, v.begin() + 3 + static_cast<long>(E) + 1);
    p.b.assign(v.begin() + 4 + static_cast<long>(E), v.begin() + 4 + 2 * static_cast<long>(E));
    p.c.assign(v.begin() + 4 + 2 * static_cast<long>(E), v.end());
    return p;
}

// Exact EM fit: alternate conjugate posteriors with closed-form parameter
// updates until the parameter vector stops moving in max-norm.
inline std::pair<GammaNormalParams, FitTrace> fit_em(const Dataset& ds,
                                                     const EMConfig& cfg = {}) {
    validate_dataset(ds);
    require(!ds.cases.empty(), errc::validation, "empty dataset");
    require_observations(ds);

    GammaNormalParams params = moment_init(ds);
    FitTrace trace;
    trace.param_names = param_names(params.source_count());
    trace.params_path.push_back(pack_params(params));
    trace.loglik_path.push_back(observed_loglik(params, ds));
    trace.termination = "max_iterations";

    std::vector<PosteriorNG> posts(ds.cases.size());
    for (int h = 1; h <= cfg.max_iterations; ++h) {
        for (std::size_t t = 0; t < ds.cases.size(); ++t)
            posts[t] = e_step(params, ds.cases[t]);
        GammaNormalParams next = m_step(ds, posts, params, cfg);

        double delta = 0.0;
        auto packed_old = pack_params(params);
        auto packed_new = pack_params(next);
        for (std::size_t i = 0; i < packed_old.size(); ++i)
            delta = std::max(delta, std::abs(packed_new[i] - packed_old[i]));

        params = std::move(next);
        trace.params_path.push_back(packed_new);
        trace.loglik_path.push_back(observed_loglik(params, ds));
        trace.iterations = h;
        if (delta < cfg.epsilon) {
            trace.termination = "converged";
            break;
        }
    }
    return {params, trace};
}

// Student predictive law for the observation given the predictor sources.
struct StudentPredictive {
    double location = 0.0;
    double scale = 1.0;
    double dof = 1.0;

    double pdf(double y) const {
        return student_pdf((y - location) / scale, dof) / scale;
    }
    double cdf(double y) const { return student_cdf((y - location) / scale, dof); }
    double quantile(double p) const {
        return location + scale * student_quantile(p, dof);
    }
    double mean() const { return location; }
    double variance() const {
        require(dof > 2.0, errc::validation, "variance needs dof > 2");
        return scale * scale * dof / (dof - 2.0);
    }
};

inline StudentPredictive predict_student(const GammaNormalParams& p,
                                         const ForecastCase& c) {
    p.validate();
    PosteriorNG post = predictive_posterior(p, c);
    StudentPredictive s;
    s.location = p.a_of(0) + post.m;
    s.scale = std::sqrt((post.lambda + 1.0) * post.beta / post.alpha);
    s.dof = 2.0 * post.alpha;
    return s;
}

// Per-member weight of each source in the predictive mean, normalized over
// all declared members.
inline std::vector<double> contribution(const GammaNormalParams& p,
                                        const std::vector<SourceSpec>& schema) {
    p.validate();
    require(static_cast<int>(schema.size()) == p.source_count(), errc::validation,
            "parameter/schema source count mismatch");
    double denom = 0.0;
    std::vector<double> per_member(schema.size());
    for (int e = 1; e <= p.source_count(); ++e) {
        double w = p.b_of(e) / (p.c_of(e) * p.c_of(e));
        per_member[static_cast<std::size_t>(e - 1)] = w;
        denom += schema[static_cast<std::size_t>(e - 1)].member_count * w;
    }
    require(denom != 0.0, errc::degenerate, "all sources carry zero weight");
    for (double& w : per_member) w /= denom;
    return per_member;
}

}  // namespace enscal
