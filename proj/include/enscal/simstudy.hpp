// Synthetic-data generators for both model kinds and the simulation-study
// pipeline: simulate many datasets, fit on the first half, forecast the
// second half with true and with estimated parameters, and score both
// against the raw ensembles (parameter recovery, rank-histogram flatness,
// CRPS, latent credible-interval coverage).
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "enscal/core.hpp"
#include "enscal/error.hpp"
#include "enscal/gamma_normal.hpp"
#include "enscal/io.hpp"
#include "enscal/rng.hpp"
#include "enscal/tobit.hpp"
#include "enscal/verification.hpp"

namespace enscal {

struct LatentTruth {
    double z = 0.0;
    double omega_sq = 0.0;
};

struct SimulatedData {
    Dataset data;
    std::vector<LatentTruth> latents;  // one per case
};

// Draw n cases from the latent-signal mixture: per case a precision from the
// gamma law, a signal given that precision, then every member and the
// observation around the signal. Draw order is fixed (observation first,
// then sources in schema order) so a seed pins the dataset bit for bit.
inline SimulatedData simulate_gamma_normal_latent(const GammaNormalParams& p,
                                                  const std::vector<SourceSpec>& schema,
                                                  int n, Rng& rng,
                                                  std::int64_t start_time = 1) {
    p.validate();
    validate_schema(schema);
    require(static_cast<int>(schema.size()) == p.source_count(), errc::validation,
            "parameter/schema source count mismatch");
    require(n >= 0, errc::validation, "negative case count");

    SimulatedData out;
    out.data.kind = Kind::gaussian;
    out.data.schema = schema;
    out.data.cases.reserve(static_cast<std::size_t>(n));
    out.latents.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        const double omega_inv2 = rng.gamma(p.alpha, p.beta);
        const double omega = 1.0 / std::sqrt(omega_inv2);
        const double z = rng.normal(0.0, std::sqrt(p.lambda) * omega);
        ForecastCase c;
        c.time = start_time + t;
        c.observation = p.a_of(0) + z + omega * rng.normal();
        c.members.resize(schema.size());
        for (std::size_t s = 0; s < schema.size(); ++s) {
            const int e = static_cast<int>(s) + 1;
            auto& row = c.members[s];
            row.resize(static_cast<std::size_t>(schema[s].member_count));
            for (double& v : row)
                v = p.a_of(e) + p.b_of(e) * z + p.c_of(e) * omega * rng.normal();
        }
        out.data.cases.push_back(std::move(c));
        out.latents.push_back({z, omega * omega});
    }
    return out;
}

inline Dataset simulate_gamma_normal(const GammaNormalParams& p,
                                     const std::vector<SourceSpec>& schema, int n,
                                     Rng& rng, std::int64_t start_time = 1) {
    return simulate_gamma_normal_latent(p, schema, n, rng, start_time).data;
}

// Same Gaussian layer, then censor at the threshold and map survivors back
// to the amount scale. Latents record the Gaussian layer's (signal,
// variance) pair.
inline SimulatedData simulate_tobit_latent(const TobitParams& p,
                                           const std::vector<SourceSpec>& schema,
                                           int n, Rng& rng,
                                           std::int64_t start_time = 1) {
    p.validate();
    SimulatedData out =
        simulate_gamma_normal_latent(p.gn, schema, n, rng, start_time);
    out.data.kind = Kind::precipitation;
    const double gp = p.transform.gamma_power;
    for (auto& c : out.data.cases) {
        c.observation = inverse_transform(*c.observation, gp, p.nu);
        for (auto& row : c.members)
            for (double& v : row) v = inverse_transform(v, gp, p.nu);
    }
    return out;
}

inline Dataset simulate_tobit(const TobitParams& p,
                              const std::vector<SourceSpec>& schema, int n,
                              Rng& rng, std::int64_t start_time = 1) {
    return simulate_tobit_latent(p, schema, n, rng, start_time).data;
}

struct StudyConfig {
    Kind kind = Kind::precipitation;
    GammaNormalParams truth;       // Gaussian layer of the generating model
    double transform_power = 1.0;  // amount-scale exponent (censored kind only)
    std::vector<SourceSpec> schema;
    int n_train = 100;
    int n_test = 100;
    int replications = 100;
    std::uint64_t seed = 1;
    SEMConfig sem;                 // censored fits and forecast chains
    EMConfig em;                   // uncensored fits
    int crps_sample_size = 1000;   // predictive draws per case
    int rank_members = 19;         // predictive sample size for rank counts
    double interval_level = 0.88;  // equal-tailed latent credible level

    TobitParams truth_tobit() const {
        TobitParams t;
        t.gn = truth;
        t.transform.gamma_power = transform_power;
        return t;
    }

    void validate() const {
        truth.validate();
        validate_schema(schema);
        require(static_cast<int>(schema.size()) == truth.source_count(),
                errc::validation, "parameter/schema source count mismatch");
        require(n_train >= 1 && n_test >= 1, errc::validation,
                "train and test sizes must be >= 1");
        require(replications >= 1, errc::validation, "replications must be >= 1");
        require(crps_sample_size >= 2, errc::validation,
                "predictive sample size must be >= 2");
        require(rank_members >= 1, errc::validation, "rank sample size must be >= 1");
        require(interval_level > 0.0 && interval_level < 1.0, errc::validation,
                "interval level must lie in (0,1)");
        if (kind == Kind::precipitation)
            require(transform_power > 0.0 && transform_power <= 1.0,
                    errc::validation, "transform exponent must lie in (0,1]");
    }
};

// One replication's scores. Method keys: "oracle" and "prediction" for the
// model forecasts, "raw_<source_id>" for each raw ensemble.
struct StudyReplication {
    int replication = 0;
    bool failed = false;
    std::string error;
    std::vector<double> estimate;                 // packed fitted parameters
    std::map<std::string, double> mean_crps;      // method -> mean over test cases
    std::map<std::string, double> flatness_p;     // method -> rank flatness p
    std::map<std::string, double> coverage_z;     // oracle/prediction
    std::map<std::string, double> coverage_omega; // oracle/prediction
};

struct StudyReport {
    StudyConfig config;
    std::vector<std::string> parameter_names;
    std::vector<double> parameter_truth;
    std::vector<StudyReplication> replications;

    int failed_count() const {
        int f = 0;
        for (const auto& r : replications)
            if (r.failed) ++f;
        return f;
    }

    // Per-parameter estimates across successful replications.
    std::vector<double> estimates_for(std::size_t param_index) const {
        std::vector<double> v;
        for (const auto& r : replications)
            if (!r.failed) v.push_back(r.estimate[param_index]);
        return v;
    }

    std::vector<double> crps_for(const std::string& method) const {
        std::vector<double> v;
        for (const auto& r : replications) {
            if (r.failed) continue;
            auto it = r.mean_crps.find(method);
            if (it != r.mean_crps.end()) v.push_back(it->second);
        }
        return v;
    }

    std::vector<double> coverage_for(const std::string& method, bool omega) const {
        std::vector<double> v;
        for (const auto& r : replications) {
            if (r.failed) continue;
            const auto& m = omega ? r.coverage_omega : r.coverage_z;
            auto it = m.find(method);
            if (it != m.end()) v.push_back(it->second);
        }
        return v;
    }

    std::vector<std::string> methods() const {
        std::vector<std::string> out = {"oracle", "prediction"};
        for (const auto& s : config.schema)
            out.push_back("raw_" + std::to_string(s.source_id));
        return out;
    }

    void write(const std::string& dir) const;
};

inline double median_of(std::vector<double> v) {
    require(!v.empty(), errc::validation, "median of an empty vector");
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, 0.5);
}

namespace detail {

constexpr std::uint64_t kStudyDataTag = 0xDA7Aull;
constexpr std::uint64_t kStudyFitTag = 0xF17ull;
constexpr std::uint64_t kStudyForecastTag = 0xF0CA57ull;

inline Interval equal_tailed(std::vector<double> draws, double level) {
    std::sort(draws.begin(), draws.end());
    const double tail = 0.5 * (1.0 - level);
    return {quantile_sorted(draws, tail), quantile_sorted(draws, 1.0 - tail)};
}

// Evenly spaced indexes into a predictive sample of size M, used to thin the
// chain output down to a small rank-histogram ensemble.
inline std::vector<std::size_t> thin_indexes(std::size_t m, int want) {
    std::vector<std::size_t> idx;
    idx.reserve(static_cast<std::size_t>(want));
    for (int j = 0; j < want; ++j) {
        auto i = static_cast<std::size_t>((static_cast<double>(j) + 0.5) *
                                          static_cast<double>(m) / want);
        idx.push_back(std::min(i, m - 1));
    }
    return idx;
}

struct MethodScore {
    std::vector<double> crps;
    RankHistogram hist;
    std::vector<Interval> z_intervals;
    std::vector<Interval> omega_intervals;
};

// Score one parameter set ("oracle" truth or "prediction" fit) on the test
// block of a censored-kind replication: chain forecasts per case.
inline MethodScore score_tobit_method(const TobitParams& params,
                                      const Dataset& test, const StudyConfig& cfg,
                                      int replication, std::uint64_t method_tag) {
    MethodScore ms;
    ms.hist = RankHistogram::for_members(cfg.rank_members);
    for (const auto& c : test.cases) {
        Rng rng = Rng::substream({cfg.seed, kStudyForecastTag,
                                  static_cast<std::uint64_t>(replication), method_tag,
                                  static_cast<std::uint64_t>(c.time)});
        ForecastCase predictors = c;
        predictors.observation.reset();
        ForecastDraws draws =
            forecast_draws(params, predictors, cfg.crps_sample_size, cfg.sem, rng);
        const double y = *c.observation;
        ms.crps.push_back(crps_sample(draws.amounts, y));

        std::vector<double> z_draws, w_draws;
        z_draws.reserve(draws.latents.size());
        w_draws.reserve(draws.latents.size());
        for (const auto& l : draws.latents) {
            z_draws.push_back(l.z);
            w_draws.push_back(l.omega_sq);
        }
        ms.z_intervals.push_back(equal_tailed(std::move(z_draws), cfg.interval_level));
        ms.omega_intervals.push_back(
            equal_tailed(std::move(w_draws), cfg.interval_level));

        std::vector<double> thinned;
        thinned.reserve(static_cast<std::size_t>(cfg.rank_members));
        for (std::size_t i : thin_indexes(draws.amounts.size(), cfg.rank_members))
            thinned.push_back(draws.amounts[i]);
        ms.hist.add(observation_rank(thinned, y, rng));
    }
    return ms;
}

// Gaussian counterpart: the predictive law is Student in closed form and the
// latent posterior is exact, so draws come straight from it.
inline MethodScore score_gaussian_method(const GammaNormalParams& params,
                                         const Dataset& test, const StudyConfig& cfg,
                                         int replication, std::uint64_t method_tag) {
    MethodScore ms;
    ms.hist = RankHistogram::for_members(cfg.rank_members);
    for (const auto& c : test.cases) {
        Rng rng = Rng::substream({cfg.seed, kStudyForecastTag,
                                  static_cast<std::uint64_t>(replication), method_tag,
                                  static_cast<std::uint64_t>(c.time)});
        const double y = *c.observation;
        StudentPredictive sp = predict_student(params, c);
        ms.crps.push_back(crps_student(y, sp.location, sp.scale, sp.dof));

        PosteriorNG post = predictive_posterior(params, c);
        std::vector<double> z_draws, w_draws;
        z_draws.reserve(static_cast<std::size_t>(cfg.crps_sample_size));
        w_draws.reserve(static_cast<std::size_t>(cfg.crps_sample_size));
        for (int i = 0; i < cfg.crps_sample_size; ++i) {
            const double w_inv = rng.gamma(post.alpha, post.beta);
            z_draws.push_back(rng.normal(post.m, std::sqrt(post.lambda / w_inv)));
            w_draws.push_back(1.0 / w_inv);
        }
        ms.z_intervals.push_back(equal_tailed(std::move(z_draws), cfg.interval_level));
        ms.omega_intervals.push_back(
            equal_tailed(std::move(w_draws), cfg.interval_level));

        std::vector<double> sample(static_cast<std::size_t>(cfg.rank_members));
        for (double& v : sample) {
            const double chi2 = 2.0 * rng.gamma(0.5 * sp.dof, 1.0);
            v = sp.location + sp.scale * rng.normal() / std::sqrt(chi2 / sp.dof);
        }
        ms.hist.add(observation_rank(sample, y, rng));
    }
    return ms;
}

inline StudyReplication run_replication(const StudyConfig& cfg, int r) {
    StudyReplication rep;
    rep.replication = r;

    Rng data_rng = Rng::substream(
        {cfg.seed, kStudyDataTag, static_cast<std::uint64_t>(r)});
    const int n_all = cfg.n_train + cfg.n_test;
    SimulatedData sim =
        cfg.kind == Kind::precipitation
            ? simulate_tobit_latent(cfg.truth_tobit(), cfg.schema, n_all, data_rng)
            : simulate_gamma_normal_latent(cfg.truth, cfg.schema, n_all, data_rng);

    Dataset train = sim.data, test = sim.data;
    train.cases.assign(sim.data.cases.begin(),
                       sim.data.cases.begin() + cfg.n_train);
    test.cases.assign(sim.data.cases.begin() + cfg.n_train, sim.data.cases.end());
    std::vector<double> z_truth, omega_truth;
    for (int t = cfg.n_train; t < n_all; ++t) {
        z_truth.push_back(sim.latents[static_cast<std::size_t>(t)].z);
        omega_truth.push_back(sim.latents[static_cast<std::size_t>(t)].omega_sq);
    }

    std::map<std::string, MethodScore> scores;
    if (cfg.kind == Kind::precipitation) {
        TransformFit tf;
        tf.gamma_power = cfg.transform_power;
        SEMConfig sem = cfg.sem;
        sem.seed = mix_labels({cfg.seed, kStudyFitTag, static_cast<std::uint64_t>(r)});
        auto [fit, trace] = sem_fit(train, tf, sem);
        rep.estimate = pack_params(fit.gn);
        scores["oracle"] = score_tobit_method(cfg.truth_tobit(), test, cfg, r, 1);
        scores["prediction"] = score_tobit_method(fit, test, cfg, r, 2);
    } else {
        EMConfig em = cfg.em;
        auto [fit, trace] = fit_em(train, em);
        rep.estimate = pack_params(fit);
        scores["oracle"] = score_gaussian_method(cfg.truth, test, cfg, r, 1);
        scores["prediction"] = score_gaussian_method(fit, test, cfg, r, 2);
    }

    for (const auto& [name, ms] : scores) {
        rep.mean_crps[name] = ensemble_mean(ms.crps);
        rep.flatness_p[name] = chi2_flatness(ms.hist.counts).p_value;
        rep.coverage_z[name] = coverage_rate(ms.z_intervals, z_truth);
        rep.coverage_omega[name] = coverage_rate(ms.omega_intervals, omega_truth);
    }

    // Raw ensembles as probabilistic forecasts: members are the sample.
    for (std::size_t s = 0; s < cfg.schema.size(); ++s) {
        const std::string name = "raw_" + std::to_string(cfg.schema[s].source_id);
        const int K = cfg.schema[s].member_count;
        Rng rng = Rng::substream({cfg.seed, kStudyForecastTag,
                                  static_cast<std::uint64_t>(r), 100 + s});
        RankHistogram hist = RankHistogram::for_members(K);
        std::vector<double> crps;
        for (const auto& c : test.cases) {
            const double y = *c.observation;
            crps.push_back(crps_sample(c.members[s], y));
            if (K >= 2) hist.add(observation_rank(c.members[s], y, rng));
        }
        rep.mean_crps[name] = ensemble_mean(crps);
        if (K >= 2) rep.flatness_p[name] = chi2_flatness(hist.counts).p_value;
    }
    return rep;
}

}  // namespace detail

// Run every replication (optionally on several threads; replication r is a
// pure function of (config, r), so the schedule cannot change any result)
// and collect the per-replication scores.
inline StudyReport run_simulation_study(const StudyConfig& cfg, int threads = 1) {
    cfg.validate();
    require(threads >= 1, errc::validation, "thread count must be >= 1");

    StudyReport report;
    report.config = cfg;
    report.parameter_names = param_names(cfg.truth.source_count());
    report.parameter_truth = pack_params(cfg.truth);
    report.replications.resize(static_cast<std::size_t>(cfg.replications));

    std::atomic<int> next{0};
    auto worker = [&] {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= cfg.replications) break;
            auto& slot = report.replications[static_cast<std::size_t>(r)];
            try {
                slot = detail::run_replication(cfg, r);
            } catch (const std::exception& ex) {
                slot.replication = r;
                slot.failed = true;
                slot.error = ex.what();
            }
        }
    };

    const int pool = std::min(threads, cfg.replications);
    if (pool <= 1) {
        worker();
    } else {
        std::vector<std::thread> ts;
        ts.reserve(static_cast<std::size_t>(pool));
        for (int i = 0; i < pool; ++i) ts.emplace_back(worker);
        for (auto& t : ts) t.join();
    }
    return report;
}

inline void StudyReport::write(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    const auto path = [&](const char* name) {
        return (std::filesystem::path(dir) / name).string();
    };

    std::string est = "replication,parameter,truth,estimate\n";
    std::string pv = "replication,method,p_value\n";
    std::string cr = "replication,method,mean_crps\n";
    std::string cov = "replication,method,latent,coverage\n";
    for (const auto& r : replications) {
        if (r.failed) continue;
        const std::string rs = std::to_string(r.replication);
        for (std::size_t i = 0; i < parameter_names.size(); ++i)
            est += rs + "," + parameter_names[i] + "," +
                   fmt_double(parameter_truth[i]) + "," + fmt_double(r.estimate[i]) +
                   "\n";
        for (const auto& [m, p] : r.flatness_p)
            pv += rs + "," + m + "," + fmt_double(p) + "\n";
        for (const auto& [m, v] : r.mean_crps)
            cr += rs + "," + m + "," + fmt_double(v) + "\n";
        for (const auto& [m, v] : r.coverage_z)
            cov += rs + "," + m + ",z," + fmt_double(v) + "\n";
        for (const auto& [m, v] : r.coverage_omega)
            cov += rs + "," + m + ",omega_sq," + fmt_double(v) + "\n";
    }
    write_text_file(path("estimates.csv"), est);
    write_text_file(path("pvalues.csv"), pv);
    write_text_file(path("crps.csv"), cr);
    write_text_file(path("coverage.csv"), cov);

    nlohmann::json manifest;
    manifest["kind"] = kind_name(config.kind);
    manifest["truth"] = to_json(config.truth);
    if (config.kind == Kind::precipitation)
        manifest["transform_power"] = config.transform_power;
    manifest["schema"] = schema_to_json(config.schema);
    manifest["n_train"] = config.n_train;
    manifest["n_test"] = config.n_test;
    manifest["replications"] = config.replications;
    manifest["seed"] = config.seed;
    manifest["sem"] = {{"sem_iterations", config.sem.sem_iterations},
                       {"gibbs_inner_iterations", config.sem.gibbs_inner_iterations},
                       {"estimator_burn_in_fraction", config.sem.estimator_burn_in_fraction},
                       {"forecast_burn_in", config.sem.forecast_burn_in}};
    manifest["crps_sample_size"] = config.crps_sample_size;
    manifest["rank_members"] = config.rank_members;
    manifest["interval_level"] = config.interval_level;
    manifest["failed_replications"] = nlohmann::json::array();
    for (const auto& r : replications)
        if (r.failed)
            manifest["failed_replications"].push_back(
                {{"replication", r.replication}, {"error", r.error}});
    write_text_file(path("manifest.json"), manifest.dump(2) + "\n");
}

// Overlay fields present in a JSON object onto a study configuration, so a
// partial config file tweaks only what it names.
inline void apply_study_config_json(StudyConfig& cfg, const nlohmann::json& j) {
    require(j.is_object(), errc::parse, "study config must be a JSON object");
    if (j.contains("kind")) cfg.kind = kind_from_name(j["kind"].get<std::string>());
    if (j.contains("truth")) cfg.truth = gamma_normal_from_json(j["truth"]);
    if (j.contains("transform_power"))
        cfg.transform_power = detail::json_number(j, "transform_power");
    if (j.contains("schema")) cfg.schema = schema_from_json(j["schema"]);
    if (j.contains("n_train")) cfg.n_train = j["n_train"].get<int>();
    if (j.contains("n_test")) cfg.n_test = j["n_test"].get<int>();
    if (j.contains("replications")) cfg.replications = j["replications"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("sem")) {
        const auto& s = j["sem"];
        if (s.contains("sem_iterations"))
            cfg.sem.sem_iterations = s["sem_iterations"].get<int>();
        if (s.contains("gibbs_inner_iterations"))
            cfg.sem.gibbs_inner_iterations = s["gibbs_inner_iterations"].get<int>();
        if (s.contains("estimator_burn_in_fraction"))
            cfg.sem.estimator_burn_in_fraction =
                s["estimator_burn_in_fraction"].get<double>();
        if (s.contains("forecast_burn_in"))
            cfg.sem.forecast_burn_in = s["forecast_burn_in"].get<int>();
    }
    if (j.contains("em")) {
        const auto& e = j["em"];
        if (e.contains("epsilon")) cfg.em.epsilon = e["epsilon"].get<double>();
        if (e.contains("max_iterations"))
            cfg.em.max_iterations = e["max_iterations"].get<int>();
    }
    if (j.contains("crps_sample_size"))
        cfg.crps_sample_size = j["crps_sample_size"].get<int>();
    if (j.contains("rank_members")) cfg.rank_members = j["rank_members"].get<int>();
    if (j.contains("interval_level"))
        cfg.interval_level = j["interval_level"].get<double>();
}

// The published synthetic-experiment configuration: three predictor sources
// of 10, 35 and 1 members, moderate censoring, one hundred replications.
inline StudyConfig reference_study_config() {
    StudyConfig cfg;
    cfg.kind = Kind::precipitation;
    cfg.truth.alpha = 2.5;
    cfg.truth.beta = 3.0;
    cfg.truth.lambda = 0.5;
    cfg.truth.a = {0.0, 1.0, 0.7, -0.1};
    cfg.truth.b = {1.1, 1.0, 0.9};
    cfg.truth.c = {0.8, 0.7, 1.1};
    cfg.transform_power = 1.0;
    cfg.schema = {{1, 10, "ensemble1"}, {2, 35, "ensemble2"}, {3, 1, "ensemble3"}};
    cfg.n_train = 100;
    cfg.n_test = 100;
    cfg.replications = 100;
    cfg.seed = 1;
    return cfg;
}

}  // namespace enscal
