// Censored-model machinery: the power transform and its censored likelihood,
// the truncated-normal sampler, the imputation chain's stationary law against
// quadrature, equivalence of the stochastic fit with exact EM when nothing is
// censored, and the predictive sampler.
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "enscal/error.hpp"
#include "enscal/gamma_normal.hpp"
#include "enscal/rng.hpp"
#include "enscal/simstudy.hpp"
#include "enscal/stats.hpp"
#include "enscal/tobit.hpp"
#include "test_util.hpp"

using namespace enscal;

namespace {

// Censored log-likelihood written out directly, term by term, as a check on
// the library's vectorized version.
double censored_loglik_direct(const std::vector<double>& y, double g, double mu,
                              double sigma) {
    double ll = 0.0;
    for (double v : y) {
        if (v > 0.0) {
            const double t = std::pow(v, g);
            ll += std::log(g) + (g - 1.0) * std::log(v);
            ll += -0.5 * std::log(2.0 * M_PI) - std::log(sigma) -
                  (t - mu) * (t - mu) / (2.0 * sigma * sigma);
        } else {
            ll += std::log(norm_cdf(-mu / sigma));
        }
    }
    return ll;
}

std::vector<double> censored_amounts(std::mt19937_64& eng, int n, double g,
                                     double mu, double sigma) {
    std::normal_distribution<double> nd(mu, sigma);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double latent = nd(eng);
        out.push_back(latent > 0.0 ? std::pow(latent, 1.0 / g) : 0.0);
    }
    return out;
}

// Piecewise-linear CDF over a grid of unnormalized log densities.
struct GridCdf {
    std::vector<double> xs, cum;

    GridCdf(std::vector<double> grid, const std::vector<double>& logf)
        : xs(std::move(grid)), cum(xs.size(), 0.0) {
        const double top = *std::max_element(logf.begin(), logf.end());
        for (std::size_t i = 1; i < xs.size(); ++i)
            cum[i] = cum[i - 1] + 0.5 * (xs[i] - xs[i - 1]) *
                                      (std::exp(logf[i] - top) +
                                       std::exp(logf[i - 1] - top));
        for (double& c : cum) c /= cum.back();
    }

    double operator()(double x) const {
        if (x <= xs.front()) return 0.0;
        if (x >= xs.back()) return 1.0;
        const auto it = std::upper_bound(xs.begin(), xs.end(), x);
        const std::size_t i = static_cast<std::size_t>(it - xs.begin());
        const double f = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        return cum[i - 1] + f * (cum[i] - cum[i - 1]);
    }
};

GammaNormalParams chain_params() {
    GammaNormalParams p;
    p.alpha = 2.5;
    p.beta = 3.0;
    p.lambda = 0.5;
    p.a = {0.2, -0.4};
    p.b = {0.9};
    p.c = {0.8};
    return p;
}

TobitParams uncensoring_truth() {
    // offsets far above the censor point so simulated amounts stay positive
    TobitParams tp;
    tp.gn.alpha = 4.0;
    tp.gn.beta = 3.0;
    tp.gn.lambda = 0.5;
    tp.gn.a = {9.0, 9.5, 8.5};
    tp.gn.b = {1.1, 0.9};
    tp.gn.c = {0.8, 1.2};
    tp.transform.gamma_power = 0.6;
    tp.transform.mu = 9.0;
    tp.transform.sigma = 1.0;
    return tp;
}

const std::vector<SourceSpec> two_sources = {{1, 3, "first"}, {2, 2, "second"}};

}  // namespace

TEST_CASE("power transform round trips") {
    CHECK(apply_transform(2.5, 0.43) == Catch::Approx(std::pow(2.5, 0.43)));
    CHECK(inverse_transform(apply_transform(2.5, 0.43), 0.43) ==
          Catch::Approx(2.5).margin(1e-12));
    CHECK(apply_transform(0.0, 0.43) == 0.0);
    CHECK(inverse_transform(-1.3, 0.43) == 0.0);
    CHECK(inverse_transform(0.0, 0.43) == 0.0);
    CHECK(apply_transform(3.0, 1.0) == 3.0);
    CHECK(inverse_transform(3.0, 1.0) == 3.0);
    CHECK_THROWS_AS(apply_transform(-0.1, 0.5), Error);

    // monotone on the positive axis
    double prev = 0.0;
    for (double y = 0.1; y < 5.0; y += 0.1) {
        const double t = apply_transform(y, 0.37);
        CHECK(t > prev);
        prev = t;
    }
}

TEST_CASE("censored likelihood matches a direct reimplementation") {
    std::mt19937_64 eng(42);
    std::uniform_real_distribution<double> ug(0.1, 1.0);
    std::uniform_real_distribution<double> um(-2.0, 4.0);
    std::uniform_real_distribution<double> us(0.3, 2.5);
    for (int rep = 0; rep < 30; ++rep) {
        const double g = ug(eng), mu = um(eng), sigma = us(eng);
        auto y = censored_amounts(eng, 60, 0.5, 0.8, 1.4);
        CHECK(censored_transform_loglik(y, g, mu, sigma) ==
              Catch::Approx(censored_loglik_direct(y, g, mu, sigma))
                  .epsilon(1e-12));
    }
    CHECK_THROWS_AS(censored_transform_loglik({1.0}, 0.0, 0.0, 1.0), Error);
    CHECK_THROWS_AS(censored_transform_loglik({1.0}, 0.5, 0.0, 0.0), Error);
    CHECK_THROWS_AS(censored_transform_loglik({-1.0}, 0.5, 0.0, 1.0), Error);
}

TEST_CASE("transform fit recovers the exponent and sits at a local optimum") {
    std::mt19937_64 eng(777);
    const double g0 = 0.5, mu0 = 1.0, s0 = 1.5;
    auto y = censored_amounts(eng, 5000, g0, mu0, s0);
    TransformFit fit = fit_power_transform(y);
    CHECK(fit.gamma_power == Catch::Approx(g0).margin(0.05));
    CHECK(fit.mu == Catch::Approx(mu0).margin(0.15));
    CHECK(fit.sigma == Catch::Approx(s0).margin(0.15));

    auto objective = [&](const std::vector<double>& v) {
        return censored_transform_loglik(y, v[0], v[1], std::exp(v[2]));
    };
    const std::vector<double> x = {fit.gamma_power, fit.mu, std::log(fit.sigma)};
    const double f0 = objective(x);
    CHECK(fit.loglik == Catch::Approx(f0).margin(1e-6 * std::abs(f0)));

    // relative finite-difference gradient vanishes
    auto grad = testutil::fd_gradient(objective, x, 1e-6);
    for (std::size_t i = 0; i < grad.size(); ++i)
        CHECK(std::abs(grad[i]) * std::max(1.0, std::abs(x[i])) /
                  std::max(1.0, std::abs(f0)) <
              1e-4);

    // no uphill neighbor on the surrounding 3x3x3 grid at relative step 1e-3
    for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j)
            for (int k = -1; k <= 1; ++k) {
                if (i == 0 && j == 0 && k == 0) continue;
                std::vector<double> xp = x;
                xp[0] += i * 1e-3 * std::max(1.0, std::abs(x[0]));
                xp[1] += j * 1e-3 * std::max(1.0, std::abs(x[1]));
                xp[2] += k * 1e-3 * std::max(1.0, std::abs(x[2]));
                CHECK(objective(xp) <= f0 + 1e-9 * std::abs(f0));
            }
}

TEST_CASE("transform fit rejects unusable records") {
    CHECK_THROWS_AS(fit_power_transform({0.0, 0.0, 0.0}), Error);
    std::vector<double> few = {1.0, 2.0, 0.0, 3.0, 0.5, 1.5, 2.5, 0.0, 1.1};
    CHECK_THROWS_AS(fit_power_transform(few), Error);  // nine positives
    CHECK_THROWS_AS(fit_power_transform({1.0, -2.0}), Error);
}

TEST_CASE("truncated normal sampler is correct in all three regimes") {
    const double mean = 1.3, sd = 0.7;
    struct Regime {
        double upper;
        std::uint64_t seed;
    };
    // u = (upper - mean) / sd lands at +6 (plain rejection), 0 (inverse CDF)
    // and -6 (exponential rejection)
    for (const Regime r : {Regime{mean + 6.0 * sd, 11},
                           Regime{mean, 12},
                           Regime{mean - 6.0 * sd, 13}}) {
        Rng rng(r.seed);
        std::vector<double> draws;
        draws.reserve(100000);
        for (int i = 0; i < 100000; ++i)
            draws.push_back(sample_truncated_normal(mean, sd, r.upper, rng));
        const double u = (r.upper - mean) / sd;
        const double mass = norm_cdf(u);
        auto cdf = [&](double x) {
            if (x >= r.upper) return 1.0;
            return norm_cdf((x - mean) / sd) / mass;
        };
        for (double d : draws) REQUIRE(d < r.upper);
        INFO("upper " << r.upper);
        CHECK(testutil::ks_test(draws, cdf) > 0.01);
    }
}

TEST_CASE("truncated standard normal below zero has mean -sqrt(2/pi)") {
    Rng rng(20260817);
    double sum = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) sum += sample_truncated_normal(0.0, 1.0, 0.0, rng);
    CHECK(sum / n == Catch::Approx(-std::sqrt(2.0 / M_PI)).margin(0.003));
}

TEST_CASE("barely truncated sampler matches the untruncated law") {
    Rng rng(5);
    const double mean = -0.4, sd = 1.7;
    double s1 = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double d = sample_truncated_normal(mean, sd, mean + 40.0 * sd, rng);
        s1 += d;
        s2 += d * d;
    }
    const double m = s1 / n;
    CHECK(m == Catch::Approx(mean).margin(4.0 * sd / std::sqrt(n)));
    CHECK(std::sqrt(s2 / n - m * m) == Catch::Approx(sd).epsilon(0.01));
}

TEST_CASE("truncated normal rejects a degenerate spread") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_truncated_normal(0.0, 0.0, 1.0, rng), Error);
}

TEST_CASE("chain start maps uncensored values and pins censored ones") {
    auto p = chain_params();
    ForecastCase prime;
    prime.time = 1;
    prime.members = {{2.0, 0.0}};
    prime.observation = 1.44;
    Rng rng(99);
    GibbsState st = gibbs_init(p, prime, 0.5, true, 0.0, rng);
    CHECK(st.members[0][0] == Catch::Approx(std::pow(2.0, 0.5)));
    CHECK(st.members[0][1] == 0.0);
    REQUIRE(st.observation.has_value());
    CHECK(*st.observation == Catch::Approx(std::pow(1.44, 0.5)));
    CHECK(st.omega_inv2 > 0.0);

    GibbsState bare = gibbs_init(p, prime, 0.5, false, 0.0, rng);
    CHECK_FALSE(bare.observation.has_value());
}

TEST_CASE("sweep leaves uncensored coordinates alone and fills censored ones") {
    auto p = chain_params();
    Rng rng(3);

    ForecastCase clean;
    clean.time = 1;
    clean.members = {{1.5, 0.7}};
    clean.observation = 0.9;
    GibbsState st = gibbs_init(p, clean, 1.0, true, 0.0, rng);
    const auto before = st.members;
    const double obs_before = *st.observation;
    for (int i = 0; i < 50; ++i) gibbs_sweep(p, clean, st, true, 0.0, rng);
    CHECK(st.members == before);
    CHECK(*st.observation == obs_before);

    ForecastCase censored;
    censored.time = 2;
    censored.members = {{0.0, 1.2}};
    censored.observation = 0.0;
    GibbsState cs = gibbs_init(p, censored, 1.0, true, 0.0, rng);
    for (int i = 0; i < 200; ++i) {
        gibbs_sweep(p, censored, cs, true, 0.0, rng);
        CHECK(cs.members[0][0] < 0.0);
        CHECK(*cs.observation < 0.0);
        CHECK(cs.members[0][1] == apply_transform(1.2, 1.0));
    }
}

TEST_CASE("imputation chain reaches the exact conditional law") {
    // one censored member next to an uncensored observation; the stationary
    // marginals of the imputed coordinate and the latent signal must match
    // quadrature of the generative joint
    auto p = chain_params();
    const double y = 1.1;
    ForecastCase prime;
    prime.time = 1;
    prime.members = {{0.0}};
    prime.observation = y;

    Rng rng(314);
    GibbsState st = gibbs_init(p, prime, 1.0, true, 0.0, rng);
    for (int i = 0; i < 1000; ++i) gibbs_sweep(p, prime, st, true, 0.0, rng);
    std::vector<double> xs, zs;
    const int sweeps = 100000, thin = 20;
    for (int i = 0; i < sweeps; ++i) {
        gibbs_sweep(p, prime, st, true, 0.0, rng);
        if (i % thin == 0) {
            xs.push_back(st.members[0][0]);
            zs.push_back(st.z);
        }
    }

    // X marginal: the joint marginal likelihood of the completed pair (x, y)
    // as a function of x on the censored side
    {
        std::vector<double> grid, logf;
        for (double x = -14.0; x <= 0.0; x += 0.01) {
            std::vector<std::vector<double>> mem = {{x}};
            grid.push_back(x);
            logf.push_back(testutil::quad_posterior(p, mem, &y).log_norm);
        }
        GridCdf cdf(grid, logf);
        CHECK(testutil::ks_test(xs, [&](double v) { return cdf(v); }) > 0.01);
    }

    // Z marginal: integrate the precision out of the joint with the censored
    // member's mass below the threshold
    {
        auto gl = testutil::gauss_legendre(400);
        const double vlo = -25.0, vhi = 8.0;
        auto log_pz = [&](double z) {
            double t0 = -1e300;
            std::vector<double> terms;
            terms.reserve(gl.nodes.size());
            for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
                const double v = 0.5 * (vlo + vhi) + 0.5 * (vhi - vlo) * gl.nodes[i];
                const double w = std::exp(v);
                double lt = std::log(0.5 * (vhi - vlo) * gl.weights[i]);
                lt += p.alpha * v - p.beta * w;       // precision prior
                lt += 0.5 * v - w * z * z / (2.0 * p.lambda);
                const double ry = y - p.a_of(0) - z;  // observation channel
                lt += 0.5 * v - w * ry * ry / 2.0;
                const double uc = (0.0 - p.a_of(1) - p.b_of(1) * z) *
                                  std::sqrt(w) / p.c_of(1);
                lt += norm_logcdf(uc);                // censored member mass
                terms.push_back(lt);
                t0 = std::max(t0, lt);
            }
            double s = 0.0;
            for (double lt : terms) s += std::exp(lt - t0);
            return t0 + std::log(s);
        };
        std::vector<double> grid, logf;
        for (double z = -9.0; z <= 9.0; z += 0.01) {
            grid.push_back(z);
            logf.push_back(log_pz(z));
        }
        GridCdf cdf(grid, logf);
        CHECK(testutil::ks_test(zs, [&](double v) { return cdf(v); }) > 0.01);
    }
}

TEST_CASE("stochastic fit agrees with exact EM when nothing is censored") {
    // with no zeros the imputation is the identity, so the averaged stochastic
    // path must sit on the EM fixed point
    auto truth = uncensoring_truth();
    for (std::uint64_t seed : {901ull, 902ull, 903ull, 904ull}) {
        Rng rng(seed);
        Dataset amounts = simulate_tobit(truth, two_sources, 120, rng);
        bool any_zero = false;
        for (const auto& c : amounts.cases) {
            if (*c.observation <= 0.0) any_zero = true;
            for (const auto& row : c.members)
                for (double v : row)
                    if (v <= 0.0) any_zero = true;
        }
        REQUIRE_FALSE(any_zero);

        TransformFit tf;
        tf.gamma_power = truth.transform.gamma_power;
        tf.mu = truth.transform.mu;
        tf.sigma = truth.transform.sigma;

        SEMConfig cfg;
        cfg.sem_iterations = 1200;  // long path so the averaged tail has settled
        cfg.seed = seed;
        auto [sem, strace] = sem_fit(amounts, tf, cfg);
        (void)strace;

        Dataset latent = amounts;
        latent.kind = Kind::gaussian;
        for (auto& c : latent.cases) {
            for (auto& row : c.members)
                for (double& v : row) v = apply_transform(v, tf.gamma_power);
            c.observation = apply_transform(*c.observation, tf.gamma_power);
        }
        EMConfig em;
        em.epsilon = 1e-12;
        em.max_iterations = 20000;
        auto [emfit, etrace] = fit_em(latent, em);
        (void)etrace;

        auto xs = pack_params(sem.gn);
        auto xe = pack_params(emfit);
        for (std::size_t i = 0; i < xs.size(); ++i)
            CHECK(xs[i] ==
                  Catch::Approx(xe[i]).margin(1e-5 * (1.0 + std::abs(xe[i]))));
    }
}

TEST_CASE("stochastic fit is deterministic and averages its own path") {
    auto truth = uncensoring_truth();
    truth.gn.a = {0.8, 1.0, 0.6};  // censor a meaningful share
    Rng rng(41);
    Dataset amounts = simulate_tobit(truth, two_sources, 80, rng);
    std::size_t zeros = 0;
    for (const auto& c : amounts.cases)
        if (*c.observation <= 0.0) ++zeros;
    REQUIRE(zeros > 0);

    TransformFit tf;
    tf.gamma_power = truth.transform.gamma_power;
    tf.mu = 0.8;
    tf.sigma = 1.1;

    SEMConfig cfg;
    cfg.sem_iterations = 120;
    cfg.seed = 7;
    auto [fit1, trace1] = sem_fit(amounts, tf, cfg);
    auto [fit2, trace2] = sem_fit(amounts, tf, cfg);
    CHECK(pack_params(fit1.gn) == pack_params(fit2.gn));
    CHECK(trace1.loglik_path == trace2.loglik_path);
    CHECK(trace1.termination == "completed");
    CHECK(trace1.iterations == cfg.sem_iterations);
    REQUIRE(trace1.params_path.size() ==
            static_cast<std::size_t>(cfg.sem_iterations) + 1);

    // the estimate is the mean of the post-burn-in parameter path
    const int discard = static_cast<int>(
        std::floor(cfg.sem_iterations * cfg.estimator_burn_in_fraction));
    std::vector<double> mean(trace1.params_path[0].size(), 0.0);
    int used = 0;
    for (int h = discard + 1; h <= cfg.sem_iterations; ++h, ++used)
        for (std::size_t i = 0; i < mean.size(); ++i)
            mean[i] += trace1.params_path[static_cast<std::size_t>(h)][i];
    auto xs = pack_params(fit1.gn);
    for (std::size_t i = 0; i < mean.size(); ++i)
        CHECK(xs[i] == Catch::Approx(mean[i] / used).margin(1e-12));

    // a different seed moves the imputations, so the estimate moves too
    SEMConfig other = cfg;
    other.seed = 8;
    auto [fit3, trace3] = sem_fit(amounts, tf, other);
    (void)trace3;
    CHECK(pack_params(fit3.gn) != pack_params(fit1.gn));
}

TEST_CASE("predictive sampler matches the latent Student law when uncensored") {
    TobitParams tp;
    tp.gn.alpha = 3.0;
    tp.gn.beta = 2.0;
    tp.gn.lambda = 0.5;
    tp.gn.a = {0.3, 1.8, 1.5};
    tp.gn.b = {1.0, 0.9};
    tp.gn.c = {0.8, 1.1};
    tp.transform.gamma_power = 0.6;
    tp.transform.mu = 1.5;
    tp.transform.sigma = 1.0;

    ForecastCase predictors;
    predictors.time = 1;
    predictors.members = {{3.1, 2.4, 2.8}, {2.2, 2.9}};

    // latent-scale case for the exact Student predictive
    ForecastCase latent = predictors;
    for (auto& row : latent.members)
        for (double& v : row) v = apply_transform(v, tp.transform.gamma_power);
    StudentPredictive sp = predict_student(tp.gn, latent);
    const double p0 = sp.cdf(0.0);

    SEMConfig cfg;
    Rng rng(606);
    const int n = 40000;
    auto draws = forecast_draws(tp, predictors, n, cfg, rng);
    REQUIRE(draws.amounts.size() == static_cast<std::size_t>(n));
    REQUIRE(draws.latents.size() == static_cast<std::size_t>(n));
    std::size_t zeros = 0;
    for (double a : draws.amounts) {
        REQUIRE(a >= 0.0);
        if (a == 0.0) ++zeros;
    }
    for (const auto& l : draws.latents) REQUIRE(l.omega_sq > 0.0);
    const double phat = static_cast<double>(zeros) / n;
    const double se = std::sqrt(p0 * (1.0 - p0) / n);
    INFO("p0 " << p0 << " phat " << phat << " se " << se);
    CHECK(std::abs(phat - p0) <= 2.0 * se + 1e-12);

    // positive amounts are the Student law pushed through the inverse
    // transform: compare upper-tail quantiles
    std::vector<double> amounts = draws.amounts;
    std::sort(amounts.begin(), amounts.end());
    for (double q : {0.6, 0.8, 0.95}) {
        const double emp = quantile_sorted(amounts, q);
        const double exact =
            inverse_transform(sp.quantile(q), tp.transform.gamma_power);
        CHECK(emp == Catch::Approx(exact).margin(0.06 * std::max(1.0, exact)));
    }
}

TEST_CASE("all-censored predictors put most mass on zero") {
    TobitParams tp;
    tp.gn.alpha = 3.0;
    tp.gn.beta = 2.0;
    tp.gn.lambda = 0.5;
    tp.gn.a = {0.3, 1.0, 0.8};
    tp.gn.b = {1.0, 0.9};
    tp.gn.c = {0.8, 1.1};
    tp.transform.gamma_power = 0.6;
    tp.transform.mu = 0.5;
    tp.transform.sigma = 1.0;

    ForecastCase predictors;
    predictors.time = 1;
    predictors.members = {{0.0, 0.0, 0.0}, {0.0, 0.0}};

    SEMConfig cfg;
    Rng rng(707);
    auto sample = forecast_sample(tp, predictors, 20000, cfg, rng);
    std::size_t zeros = 0;
    for (double a : sample)
        if (a == 0.0) ++zeros;
    CHECK(static_cast<double>(zeros) / sample.size() > 0.5);

    Rng rng2(707);
    auto again = forecast_sample(tp, predictors, 20000, cfg, rng2);
    CHECK(sample == again);

    CHECK_THROWS_AS(forecast_sample(tp, predictors, 0, cfg, rng), Error);
    ForecastCase negative = predictors;
    negative.members[0][0] = -0.5;
    CHECK_THROWS_AS(forecast_sample(tp, negative, 10, cfg, rng), Error);
}
