// Data model: forecast sources, cases, datasets and the parameter records
// produced by the fitting routines. A dataset holds one forecast case per
// time index; each case carries the member values of every declared source
// and, optionally, the verifying observation (source id 0, single member).
#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "enscal/error.hpp"

namespace enscal {

enum class Kind { gaussian, precipitation };

inline const char* kind_name(Kind k) {
    return k == Kind::gaussian ? "gaussian" : "precipitation";
}

inline Kind kind_from_name(const std::string& s) {
    if (s == "gaussian") return Kind::gaussian;
    if (s == "precipitation" || s == "precip") return Kind::precipitation;
    fail(errc::validation, "unknown kind '" + s + "' (expected gaussian or precip)");
}

struct SourceSpec {
    int source_id = 0;
    int member_count = 0;
    std::string label;
};

struct ForecastCase {
    std::int64_t time = 0;
    // Aligned with the dataset schema: members[s][k] is member k+1 of the
    // s-th declared source.
    std::vector<std::vector<double>> members;
    std::optional<double> observation;
};

struct Dataset {
    Kind kind = Kind::gaussian;
    std::vector<SourceSpec> schema;  // predictor sources, ascending ids >= 1
    std::vector<ForecastCase> cases; // strictly increasing time

    int source_count() const { return static_cast<int>(schema.size()); }

    int schema_index(int source_id) const {
        for (std::size_t s = 0; s < schema.size(); ++s)
            if (schema[s].source_id == source_id) return static_cast<int>(s);
        fail(errc::schema, "source " + std::to_string(source_id) + " not declared");
    }
};

inline void validate_schema(const std::vector<SourceSpec>& schema) {
    int prev = 0;
    for (const auto& s : schema) {
        require(s.source_id >= 1, errc::schema,
                "predictor source ids must be >= 1 (0 is the observation)");
        require(s.source_id > prev, errc::schema,
                "schema source ids must be unique and ascending");
        require(s.member_count >= 1, errc::schema,
                "source " + std::to_string(s.source_id) + " declares no members");
        prev = s.source_id;
    }
}

inline void validate_dataset(const Dataset& ds) {
    validate_schema(ds.schema);
    std::int64_t prev_time = std::numeric_limits<std::int64_t>::min();
    for (const auto& c : ds.cases) {
        require(c.time > prev_time, errc::validation,
                "case times must be strictly increasing");
        prev_time = c.time;
        require(c.members.size() == ds.schema.size(), errc::schema,
                "case t=" + std::to_string(c.time) + " has wrong source count");
        for (std::size_t s = 0; s < ds.schema.size(); ++s) {
            require(static_cast<int>(c.members[s].size()) == ds.schema[s].member_count,
                    errc::schema,
                    "case t=" + std::to_string(c.time) + " source " +
                        std::to_string(ds.schema[s].source_id) +
                        " has wrong member count");
            for (double v : c.members[s]) {
                require(std::isfinite(v), errc::domain, "non-finite member value");
                if (ds.kind == Kind::precipitation)
                    require(v >= 0.0, errc::domain,
                            "negative precipitation at t=" + std::to_string(c.time));
            }
        }
        if (c.observation) {
            require(std::isfinite(*c.observation), errc::domain,
                    "non-finite observation");
            if (ds.kind == Kind::precipitation)
                require(*c.observation >= 0.0, errc::domain,
                        "negative precipitation observation at t=" +
                            std::to_string(c.time));
        }
    }
}

inline void require_observations(const Dataset& ds) {
    for (const auto& c : ds.cases)
        require(c.observation.has_value(), errc::validation,
                "fitting needs an observation for every case; t=" +
                    std::to_string(c.time) + " has none");
}

// Latent-signal mixture parameters. The observation channel is pinned to
// unit slope and unit noise scale, so b and c start at source index 1.
struct GammaNormalParams {
    double alpha = 0.0;   // shape of the precision mixing law
    double beta = 0.0;    // rate of the precision mixing law
    double lambda = 0.0;  // signal-to-noise variance ratio
    std::vector<double> a;  // intercepts, a[0] for the observation
    std::vector<double> b;  // slopes for sources 1..E
    std::vector<double> c;  // noise scale ratios for sources 1..E

    int source_count() const { return static_cast<int>(b.size()); }

    double a_of(int e) const { return a[static_cast<std::size_t>(e)]; }
    double b_of(int e) const { return e == 0 ? 1.0 : b[static_cast<std::size_t>(e - 1)]; }
    double c_of(int e) const { return e == 0 ? 1.0 : c[static_cast<std::size_t>(e - 1)]; }

    void validate() const {
        require(std::isfinite(alpha) && alpha > 0.0, errc::validation, "alpha must be > 0");
        require(std::isfinite(beta) && beta > 0.0, errc::validation, "beta must be > 0");
        require(std::isfinite(lambda) && lambda > 0.0, errc::validation, "lambda must be > 0");
        require(!a.empty(), errc::validation, "intercept vector empty");
        require(a.size() == b.size() + 1, errc::validation,
                "intercept count must be one more than slope count");
        require(b.size() == c.size(), errc::validation,
                "slope and scale vectors must have equal length");
        for (double v : a)
            require(std::isfinite(v), errc::validation, "non-finite intercept");
        for (double v : b)
            require(std::isfinite(v), errc::validation, "non-finite slope");
        for (double v : c)
            require(std::isfinite(v) && v > 0.0, errc::validation,
                    "noise scale ratios must be > 0");
    }
};

// Fitted power transform that maps censored amounts to the latent scale.
struct TransformFit {
    double gamma_power = 1.0;  // exponent in (0, 1]
    double mu = 0.0;           // latent mean on the transformed scale
    double sigma = 1.0;        // latent standard deviation
    double loglik = 0.0;       // censored log-likelihood at the optimum

    void validate() const {
        require(std::isfinite(gamma_power) && gamma_power > 0.0 && gamma_power <= 1.0,
                errc::validation, "transform exponent must lie in (0, 1]");
        require(std::isfinite(mu), errc::validation, "non-finite transform mu");
        require(std::isfinite(sigma) && sigma > 0.0, errc::validation,
                "transform sigma must be > 0");
    }
};

// Censored-model parameters: the latent mixture plus the transform and the
// censoring threshold (fixed at zero for amounts).
struct TobitParams {
    GammaNormalParams gn;
    TransformFit transform;
    double nu = 0.0;

    void validate() const {
        gn.validate();
        transform.validate();
        require(nu == 0.0, errc::validation, "censoring threshold is fixed at 0");
    }
};

// Affine-regression baseline with spread-dependent variance.
struct EmosParams {
    double a = 0.0;
    std::vector<double> b;  // one slope per source
    double c = 0.0;
    double d = 0.0;

    void validate() const {
        require(std::isfinite(a), errc::validation, "non-finite intercept");
        require(!b.empty(), errc::validation, "baseline needs at least one source");
        for (double v : b)
            require(std::isfinite(v), errc::validation, "non-finite slope");
        require(std::isfinite(c) && c >= 0.0, errc::validation,
                "variance offset must be >= 0");
        require(std::isfinite(d) && d >= 0.0, errc::validation,
                "variance slope must be >= 0");
    }
};

// Per-iteration record of an iterative fit.
struct FitTrace {
    std::vector<std::string> param_names;
    std::vector<std::vector<double>> params_path;  // one packed vector per iteration
    std::vector<double> loglik_path;
    std::string termination;  // "converged" or "max_iterations"
    int iterations = 0;
};

inline double ensemble_mean(const std::vector<double>& v) {
    require(!v.empty(), errc::validation, "mean of an empty vector");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace enscal
