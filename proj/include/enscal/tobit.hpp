// Censored extension of the latent-signal mixture for nonnegative amounts
// (precipitation). Observed amounts map to the latent Gaussian scale through
// a power transform; zeros mean the latent value fell below the censoring
// threshold. Fitting alternates a stochastic imputation step (a short Gibbs
// chain per case) with the exact M-step of the uncensored model, and
// forecasting runs the same chain on the predictor sources alone.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "enscal/core.hpp"
#include "enscal/error.hpp"
#include "enscal/gamma_normal.hpp"
#include "enscal/optimize.hpp"
#include "enscal/rng.hpp"
#include "enscal/stats.hpp"

namespace enscal {

struct SEMConfig {
    int sem_iterations = 1000;
    int gibbs_inner_iterations = 4;
    double estimator_burn_in_fraction = 0.5;
    int forecast_gibbs_iterations = 1100;  // default burn-in + draw count
    int forecast_burn_in = 100;
    std::uint64_t seed = 0;
    EMConfig em;
};

// Amounts map to the latent scale by x' -> x'^gamma; zero stays the
// censored marker.
inline double apply_transform(double xprime, double gamma_power) {
    require(xprime >= 0.0, errc::domain, "amounts must be nonnegative");
    return xprime > 0.0 ? std::pow(xprime, gamma_power) : 0.0;
}

// Latent value back to the amount scale; anything at or below the censoring
// threshold becomes a zero amount.
inline double inverse_transform(double x, double gamma_power, double nu = 0.0) {
    return x > nu ? std::pow(x, 1.0 / gamma_power) : 0.0;
}

// Log-likelihood of amounts under a censored Gaussian on the transformed
// scale: positive amounts contribute a density (with the transform Jacobian),
// zeros contribute the mass below the threshold.
inline double censored_transform_loglik(const std::vector<double>& yprime,
                                        double gamma_power, double mu,
                                        double sigma) {
    require(gamma_power > 0.0, errc::validation, "transform exponent must be > 0");
    require(sigma > 0.0, errc::validation, "sigma must be > 0");
    double ll = 0.0;
    std::size_t zeros = 0;
    const double log_sigma = std::log(sigma);
    const double log_gamma_power = std::log(gamma_power);
    for (double y : yprime) {
        require(y >= 0.0, errc::domain, "amounts must be nonnegative");
        if (y <= 0.0) {
            ++zeros;
            continue;
        }
        double z = (std::pow(y, gamma_power) - mu) / sigma;
        ll += -0.5 * log_2pi - log_sigma - 0.5 * z * z +
              (gamma_power - 1.0) * std::log(y) + log_gamma_power;
    }
    if (zeros > 0) ll += static_cast<double>(zeros) * norm_logcdf(-mu / sigma);
    return ll;
}

// Maximum-likelihood power transform (exponent, latent mean and spread) for
// a record of amounts with exact zeros treated as censored.
inline TransformFit fit_power_transform(const std::vector<double>& yprime) {
    std::vector<double> positives;
    for (double y : yprime) {
        require(y >= 0.0 && std::isfinite(y), errc::domain,
                "amounts must be finite and nonnegative");
        if (y > 0.0) positives.push_back(y);
    }
    require(!positives.empty(), errc::degenerate, "all amounts are zero");
    require(positives.size() >= 10, errc::degenerate,
            "need at least 10 positive amounts to fit the transform");

    const double glo = 0.05, ghi = 1.0;
    auto objective = [&](const std::vector<double>& v) {
        double g = v[0], mu = v[1], ls = v[2];
        double violation = 0.0;
        violation += std::max(0.0, glo - g) + std::max(0.0, g - ghi);
        violation += std::max(0.0, std::abs(mu) - 50.0);
        violation += std::max(0.0, std::abs(ls) - 10.0);
        if (violation > 0.0) return 1e12 * (1.0 + violation);
        return -censored_transform_loglik(yprime, g, mu, std::exp(ls));
    };

    NelderMeadOptions opt;
    opt.max_iterations = 6000;
    opt.tolerance = 1e-10;
    opt.polish_restarts = 3;
    opt.initial_step = 0.2;

    NelderMeadResult best;
    bool any_converged = false;
    for (double g0 : {0.3, 0.5, 0.8}) {
        std::vector<double> z;
        z.reserve(positives.size());
        for (double y : positives) z.push_back(std::pow(y, g0));
        double mu0 = ensemble_mean(z);
        double var0 = 0.0;
        for (double v : z) var0 += (v - mu0) * (v - mu0);
        var0 = std::max(var0 / static_cast<double>(z.size()), 1e-8);
        NelderMeadResult r = nelder_mead(objective, {g0, mu0, 0.5 * std::log(var0)}, opt);
        any_converged = any_converged || r.converged;
        if (r.value < best.value) best = r;
    }
    require(any_converged, errc::solver,
            "transform optimizer did not converge; best value " +
                std::to_string(best.value));
    TransformFit fit;
    fit.gamma_power = std::min(std::max(best.x[0], glo), ghi);
    fit.mu = best.x[1];
    fit.sigma = std::exp(best.x[2]);
    fit.loglik = -best.value;
    fit.validate();
    return fit;
}

// Draw from a normal law conditioned to lie below `upper`. Moderate
// truncation inverts the CDF; beyond five standard deviations a shifted
// exponential proposal keeps acceptance high.
inline double sample_truncated_normal(double mean, double sd, double upper,
                                      Rng& rng) {
    require(std::isfinite(mean) && std::isfinite(sd) && sd > 0.0, errc::validation,
            "truncated normal needs finite mean and sd > 0");
    const double u = (upper - mean) / sd;
    double z;
    if (u >= 5.0) {
        do {
            z = rng.normal();
        } while (z >= u);
    } else if (u >= -5.0) {
        z = norm_quantile(rng.uniform() * norm_cdf(u));
    } else {
        const double a = -u;
        const double prop = 0.5 * (a + std::sqrt(a * a + 4.0));
        for (;;) {
            double w = a + rng.exponential() / prop;
            double diff = w - prop;
            if (std::log(rng.uniform()) <= -0.5 * diff * diff) {
                z = -w;
                break;
            }
        }
    }
    return mean + sd * z;
}

// Markov chain state for one case: completed latent-scale values plus the
// latent signal and precision.
struct GibbsState {
    std::vector<std::vector<double>> members;
    std::optional<double> observation;
    double z = 0.0;
    double omega_inv2 = 1.0;
};


// Fresh chain start: latent pair from its prior, uncensored coordinates
// mapped through the transform, censored ones at the threshold (they are
// redrawn before first use).
inline GibbsState gibbs_init(const GammaNormalParams& p, const ForecastCase& prime,
                             double gamma_power, bool include_observation,
                             double nu, Rng& rng) {
    GibbsState st;
    st.members.resize(prime.members.size());
    for (std::size_t s = 0; s < prime.members.size(); ++s) {
        st.members[s].resize(prime.members[s].size());
        for (std::size_t k = 0; k < prime.members[s].size(); ++k) {
            double xp = prime.members[s][k];
            st.members[s][k] = xp > 0.0 ? apply_transform(xp, gamma_power) : nu;
        }
    }
    if (include_observation) {
        require(prime.observation.has_value(), errc::validation,
                "case has no observation");
        double yp = *prime.observation;
        st.observation = yp > 0.0 ? apply_transform(yp, gamma_power) : nu;
    }
    st.omega_inv2 = rng.gamma(p.alpha, p.beta);
    st.z = rng.normal(0.0, std::sqrt(p.lambda / st.omega_inv2));
    return st;
}

// One data-augmentation sweep: redraw every censored coordinate from its
// truncated conditional given the latent pair, then redraw the latent pair
// from its conjugate posterior given the completed case.
inline void gibbs_sweep(const GammaNormalParams& p, const ForecastCase& prime,
                        GibbsState& st, bool include_observation, double nu,
                        Rng& rng) {
    if (include_observation)
        require(prime.observation.has_value() && st.observation.has_value(),
                errc::validation, "chain conditioned on a missing observation");
    const double omega = 1.0 / std::sqrt(st.omega_inv2);
    if (include_observation && *prime.observation <= 0.0)
        st.observation = sample_truncated_normal(p.a_of(0) + st.z, omega, nu, rng);
    for (int e = 1; e <= p.source_count(); ++e) {
        const auto& row = prime.members[static_cast<std::size_t>(e - 1)];
        auto& vals = st.members[static_cast<std::size_t>(e - 1)];
        const double center = p.a_of(e) + p.b_of(e) * st.z;
        const double spread = p.c_of(e) * omega;
        for (std::size_t k = 0; k < row.size(); ++k)
            if (row[k] <= 0.0)
                vals[k] = sample_truncated_normal(center, spread, nu, rng);
    }
    PosteriorNG post = detail::conjugate_posterior(
        p, st.members, include_observation ? &*st.observation : nullptr);
    st.omega_inv2 = rng.gamma(post.alpha, post.beta);
    st.z = rng.normal(post.m, std::sqrt(post.lambda / st.omega_inv2));
}

// Stochastic EM fit for censored amounts. Each iteration imputes every case
// with a short, freshly started Gibbs chain at the current parameters, then
// applies the exact M-step to the completed data. The estimate averages the
// parameter path after a burn-in fraction. Each case owns an RNG substream
// derived from (seed, time index), so the result does not depend on how
// cases are scheduled.
inline std::pair<TobitParams, FitTrace> sem_fit(const Dataset& data_prime,
                                                const TransformFit& transform,
                                                const SEMConfig& cfg = {}) {
    validate_dataset(data_prime);
    require(data_prime.kind == Kind::precipitation, errc::validation,
            "censored fitting expects amount data");
    require(!data_prime.cases.empty(), errc::validation, "empty dataset");
    require_observations(data_prime);
    transform.validate();
    require(cfg.sem_iterations >= 2, errc::validation,
            "need at least two stochastic EM iterations");
    require(cfg.gibbs_inner_iterations >= 1, errc::validation,
            "need at least one inner chain sweep");
    require(cfg.estimator_burn_in_fraction > 0.0 &&
                cfg.estimator_burn_in_fraction < 1.0,
            errc::validation, "burn-in fraction must lie in (0,1)");

    const double gamma_power = transform.gamma_power;
    const double nu = 0.0;
    const std::size_t n = data_prime.cases.size();

    // Latent-scale dataset with censored coordinates pinned at the threshold;
    // used for the starting point and refilled by each imputation pass.
    Dataset completed;
    completed.kind = Kind::gaussian;
    completed.schema = data_prime.schema;
    completed.cases.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const auto& prime = data_prime.cases[t];
        ForecastCase c;
        c.time = prime.time;
        c.members.resize(prime.members.size());
        for (std::size_t s = 0; s < prime.members.size(); ++s) {
            c.members[s].resize(prime.members[s].size());
            for (std::size_t k = 0; k < prime.members[s].size(); ++k)
                c.members[s][k] = apply_transform(prime.members[s][k], gamma_power);
        }
        c.observation = apply_transform(*prime.observation, gamma_power);
        completed.cases[t] = std::move(c);
    }

    GammaNormalParams params = moment_init(completed);
    std::vector<Rng> engines;
    engines.reserve(n);
    for (std::size_t t = 0; t < n; ++t)
        engines.push_back(Rng::substream(
            {cfg.seed, 0x5EBull, static_cast<std::uint64_t>(data_prime.cases[t].time)}));

    FitTrace trace;
    trace.param_names = param_names(params.source_count());
    trace.params_path.push_back(pack_params(params));
    trace.loglik_path.push_back(observed_loglik(params, completed));
    trace.termination = "completed";

    std::vector<PosteriorNG> posts(n);
    for (int h = 1; h <= cfg.sem_iterations; ++h) {
        for (std::size_t t = 0; t < n; ++t) {
            const auto& prime = data_prime.cases[t];
            GibbsState st = gibbs_init(params, prime, gamma_power, true, nu, engines[t]);
            for (int i = 0; i < cfg.gibbs_inner_iterations; ++i)
                gibbs_sweep(params, prime, st, true, nu, engines[t]);
            completed.cases[t].members = std::move(st.members);
            completed.cases[t].observation = st.observation;
        }
        for (std::size_t t = 0; t < n; ++t)
            posts[t] = e_step(params, completed.cases[t]);
        params = m_step(completed, posts, params, cfg.em);
        trace.params_path.push_back(pack_params(params));
        trace.loglik_path.push_back(observed_loglik(params, completed));
        trace.iterations = h;
    }

    // Average the post-burn-in parameter path (iterate 0 is the start point).
    const int H = cfg.sem_iterations;
    const int discard = static_cast<int>(std::floor(H * cfg.estimator_burn_in_fraction));
    const int first = discard + 1;
    std::vector<double> mean(trace.params_path[0].size(), 0.0);
    for (int h = first; h <= H; ++h)
        for (std::size_t i = 0; i < mean.size(); ++i)
            mean[i] += trace.params_path[static_cast<std::size_t>(h)][i];
    for (double& v : mean) v /= static_cast<double>(H - first + 1);

    TobitParams out;
    out.gn = unpack_params(mean, params.source_count());
    out.gn.validate();
    out.transform = transform;
    out.nu = nu;
    return {out, trace};
}

struct LatentDraw {
    double z = 0.0;
    double omega_sq = 0.0;
};

struct ForecastDraws {
    std::vector<double> amounts;      // predictive amount draws
    std::vector<LatentDraw> latents;  // matching latent signal / variance draws
};

// Predictive sampler: runs the imputation chain on the predictor sources
// alone, discards a burn-in, then turns each retained latent state into one
// draw of the amount.
inline ForecastDraws forecast_draws(const TobitParams& params,
                                    const ForecastCase& predictors_prime,
                                    int sample_size, const SEMConfig& cfg, Rng& rng) {
    params.validate();
    require(sample_size >= 1, errc::validation, "sample size must be >= 1");
    require(cfg.forecast_burn_in >= 0, errc::validation, "burn-in must be >= 0");
    const GammaNormalParams& p = params.gn;
    require(predictors_prime.members.size() ==
                static_cast<std::size_t>(p.source_count()),
            errc::validation, "parameter/source count mismatch");
    for (const auto& row : predictors_prime.members)
        for (double v : row)
            require(v >= 0.0, errc::domain, "amounts must be nonnegative");

    const double gp = params.transform.gamma_power;
    GibbsState st = gibbs_init(p, predictors_prime, gp, false, params.nu, rng);
    for (int i = 0; i < cfg.forecast_burn_in; ++i)
        gibbs_sweep(p, predictors_prime, st, false, params.nu, rng);

    ForecastDraws out;
    out.amounts.reserve(static_cast<std::size_t>(sample_size));
    out.latents.reserve(static_cast<std::size_t>(sample_size));
    for (int i = 0; i < sample_size; ++i) {
        gibbs_sweep(p, predictors_prime, st, false, params.nu, rng);
        double omega_sq = 1.0 / st.omega_inv2;
        out.latents.push_back({st.z, omega_sq});
        double y = rng.normal(p.a_of(0) + st.z, std::sqrt(omega_sq));
        out.amounts.push_back(inverse_transform(y, gp, params.nu));
    }
    return out;
}

inline std::vector<double> forecast_sample(const TobitParams& params,
                                           const ForecastCase& predictors_prime,
                                           int sample_size, const SEMConfig& cfg,
                                           Rng& rng) {
    return forecast_draws(params, predictors_prime, sample_size, cfg, rng).amounts;
}

}  // namespace enscal
