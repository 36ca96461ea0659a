// File formats. Datasets travel as long-form CSV (time,source_id,member_id,
// value) with the observation stored as source 0 / member 1. Parameters
// travel as JSON tagged by a "model" field. All numbers are written with
// shortest round-trip decimal form, so save followed by load is bit-exact.
#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "enscal/core.hpp"
#include "enscal/error.hpp"

namespace enscal {

inline std::string fmt_double(double v) {
    char buf[40];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s, int line) {
    double v = 0.0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    require(r.ec == std::errc() && r.ptr == s.data() + s.size(), errc::parse,
            "line " + std::to_string(line) + ": bad number '" + s + "'");
    require(std::isfinite(v), errc::parse,
            "line " + std::to_string(line) + ": non-finite value");
    return v;
}

inline std::int64_t parse_int(const std::string& s, int line) {
    std::int64_t v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    require(r.ec == std::errc() && r.ptr == s.data() + s.size(), errc::parse,
            "line " + std::to_string(line) + ": bad integer '" + s + "'");
    return v;
}

inline std::vector<std::string> split_csv_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_numbers;
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), errc::io, "cannot open " + path);
    CsvTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        auto fields = split_csv_line(line);
        if (lineno == 1) {
            t.header = fields;
        } else {
            t.rows.push_back(std::move(fields));
            t.line_numbers.push_back(lineno);
        }
    }
    require(!t.header.empty(), errc::parse, path + ": missing header");
    return t;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), errc::io, "cannot write " + path);
    out << content;
    require(out.good(), errc::io, "write failed for " + path);
}

inline const std::vector<std::string> dataset_header = {"time", "source_id",
                                                        "member_id", "value"};

// Build a dataset from already-tokenized rows. Shared by the file loader and
// by callers that pre-partition rows (e.g. by lead time).
inline Dataset parse_dataset_rows(const std::vector<std::vector<std::string>>& rows,
                                  const std::vector<int>& line_numbers,
                                  std::vector<SourceSpec> schema, Kind kind) {
    validate_schema(schema);
    struct Builder {
        std::vector<std::vector<double>> members;
        std::vector<std::vector<bool>> seen;
        std::optional<double> observation;
    };
    std::map<std::int64_t, Builder> builders;

    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const int line = i < line_numbers.size() ? line_numbers[i] : -1;
        require(r.size() == 4, errc::parse,
                "line " + std::to_string(line) + ": expected 4 fields");
        std::int64_t time = parse_int(r[0], line);
        std::int64_t source = parse_int(r[1], line);
        std::int64_t member = parse_int(r[2], line);
        double value = parse_double(r[3], line);
        if (kind == Kind::precipitation)
            require(value >= 0.0, errc::domain,
                    "line " + std::to_string(line) + ": negative precipitation");

        auto it = builders.find(time);
        if (it == builders.end()) {
            Builder b;
            b.members.resize(schema.size());
            b.seen.resize(schema.size());
            for (std::size_t s = 0; s < schema.size(); ++s) {
                b.members[s].assign(static_cast<std::size_t>(schema[s].member_count), 0.0);
                b.seen[s].assign(static_cast<std::size_t>(schema[s].member_count), false);
            }
            it = builders.emplace(time, std::move(b)).first;
        }
        Builder& bld = it->second;

        if (source == 0) {
            require(member == 1, errc::schema,
                    "line " + std::to_string(line) + ": observation member_id must be 1");
            require(!bld.observation.has_value(), errc::schema,
                    "line " + std::to_string(line) + ": duplicate observation for t=" +
                        std::to_string(time));
            bld.observation = value;
            continue;
        }
        int s = -1;
        for (std::size_t k = 0; k < schema.size(); ++k)
            if (schema[k].source_id == source) s = static_cast<int>(k);
        require(s >= 0, errc::schema,
                "line " + std::to_string(line) + ": undeclared source " +
                    std::to_string(source));
        require(member >= 1 && member <= schema[static_cast<std::size_t>(s)].member_count,
                errc::schema,
                "line " + std::to_string(line) + ": member_id " + std::to_string(member) +
                    " outside 1.." +
                    std::to_string(schema[static_cast<std::size_t>(s)].member_count));
        auto m = static_cast<std::size_t>(member - 1);
        require(!bld.seen[static_cast<std::size_t>(s)][m], errc::schema,
                "line " + std::to_string(line) + ": duplicate (time,source,member)");
        bld.seen[static_cast<std::size_t>(s)][m] = true;
        bld.members[static_cast<std::size_t>(s)][m] = value;
    }

    Dataset ds;
    ds.kind = kind;
    ds.schema = std::move(schema);
    ds.cases.reserve(builders.size());
    for (auto& [time, bld] : builders) {
        for (std::size_t s = 0; s < ds.schema.size(); ++s)
            for (int k = 0; k < ds.schema[s].member_count; ++k)
                require(bld.seen[s][static_cast<std::size_t>(k)], errc::schema,
                        "t=" + std::to_string(time) + ": source " +
                            std::to_string(ds.schema[s].source_id) + " is missing member " +
                            std::to_string(k + 1));
        ForecastCase c;
        c.time = time;
        c.members = std::move(bld.members);
        c.observation = bld.observation;
        ds.cases.push_back(std::move(c));
    }
    validate_dataset(ds);
    return ds;
}

inline Dataset load_dataset(const std::string& path, std::vector<SourceSpec> schema,
                            Kind kind) {
    CsvTable t = read_csv(path);
    require(t.header == dataset_header, errc::parse,
            path + ": header must be time,source_id,member_id,value");
    return parse_dataset_rows(t.rows, t.line_numbers, std::move(schema), kind);
}

// Scan a dataset file and declare each source with its largest member id.
inline std::vector<SourceSpec> infer_schema(const std::string& path) {
    CsvTable t = read_csv(path);
    require(t.header == dataset_header, errc::parse,
            path + ": header must be time,source_id,member_id,value");
    std::map<int, int> max_member;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        const int line = t.line_numbers[i];
        require(r.size() == 4, errc::parse,
                "line " + std::to_string(line) + ": expected 4 fields");
        int source = static_cast<int>(parse_int(r[1], line));
        int member = static_cast<int>(parse_int(r[2], line));
        if (source == 0) continue;
        auto [it, inserted] = max_member.emplace(source, member);
        if (!inserted && member > it->second) it->second = member;
    }
    std::vector<SourceSpec> schema;
    for (auto [source, members] : max_member)
        schema.push_back({source, members, "source" + std::to_string(source)});
    return schema;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
    validate_dataset(ds);
    std::string out = "time,source_id,member_id,value\n";
    for (const auto& c : ds.cases) {
        std::string t = std::to_string(c.time);
        if (c.observation)
            out += t + ",0,1," + fmt_double(*c.observation) + "\n";
        for (std::size_t s = 0; s < ds.schema.size(); ++s) {
            std::string sid = std::to_string(ds.schema[s].source_id);
            for (std::size_t k = 0; k < c.members[s].size(); ++k)
                out += t + "," + sid + "," + std::to_string(k + 1) + "," +
                       fmt_double(c.members[s][k]) + "\n";
        }
    }
    write_text_file(path, out);
}

// ---- parameter JSON ----

inline nlohmann::json schema_to_json(const std::vector<SourceSpec>& schema) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : schema)
        arr.push_back({{"source_id", s.source_id},
                       {"member_count", s.member_count},
                       {"label", s.label}});
    return arr;
}

inline std::vector<SourceSpec> schema_from_json(const nlohmann::json& arr) {
    require(arr.is_array(), errc::parse, "schema must be an array");
    std::vector<SourceSpec> schema;
    for (const auto& s : arr) {
        require(s.contains("source_id") && s.contains("member_count"), errc::parse,
                "schema entries need source_id and member_count");
        SourceSpec spec;
        spec.source_id = s["source_id"].get<int>();
        spec.member_count = s["member_count"].get<int>();
        if (s.contains("label") && s["label"].is_string())
            spec.label = s["label"].get<std::string>();
        schema.push_back(std::move(spec));
    }
    validate_schema(schema);
    return schema;
}

inline nlohmann::json to_json(const GammaNormalParams& p) {
    return nlohmann::json{{"model", "gamma_normal"}, {"alpha", p.alpha},
                          {"beta", p.beta},          {"lambda", p.lambda},
                          {"a", p.a},                {"b", p.b},
                          {"c", p.c}};
}

inline nlohmann::json to_json(const TobitParams& p) {
    nlohmann::json j = to_json(p.gn);
    j["model"] = "tobit";
    j["nu"] = p.nu;
    j["transform"] = {{"gamma_power", p.transform.gamma_power},
                      {"mu", p.transform.mu},
                      {"sigma", p.transform.sigma},
                      {"loglik", p.transform.loglik}};
    return j;
}

inline nlohmann::json to_json(const EmosParams& p) {
    return nlohmann::json{{"model", "emos"}, {"a", p.a}, {"b", p.b},
                          {"c", p.c},        {"d", p.d}};
}

namespace detail {

inline nlohmann::json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), errc::io, "cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    require(!j.is_discarded(), errc::parse, path + ": invalid JSON");
    return j;
}

inline double json_number(const nlohmann::json& j, const std::string& key) {
    require(j.contains(key) && j[key].is_number(), errc::parse,
            "parameter file missing numeric field '" + key + "'");
    return j[key].get<double>();
}

inline std::vector<double> json_vector(const nlohmann::json& j, const std::string& key) {
    require(j.contains(key) && j[key].is_array(), errc::parse,
            "parameter file missing array field '" + key + "'");
    std::vector<double> out;
    for (const auto& v : j[key]) {
        require(v.is_number(), errc::parse, "non-numeric entry in '" + key + "'");
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace detail

inline GammaNormalParams gamma_normal_from_json(const nlohmann::json& j) {
    GammaNormalParams p;
    p.alpha = detail::json_number(j, "alpha");
    p.beta = detail::json_number(j, "beta");
    p.lambda = detail::json_number(j, "lambda");
    p.a = detail::json_vector(j, "a");
    p.b = detail::json_vector(j, "b");
    p.c = detail::json_vector(j, "c");
    p.validate();
    return p;
}

inline TobitParams tobit_from_json(const nlohmann::json& j) {
    TobitParams p;
    p.gn = gamma_normal_from_json(j);
    p.nu = detail::json_number(j, "nu");
    require(j.contains("transform") && j["transform"].is_object(), errc::parse,
            "censored-model parameters need a 'transform' object");
    const auto& t = j["transform"];
    p.transform.gamma_power = detail::json_number(t, "gamma_power");
    p.transform.mu = detail::json_number(t, "mu");
    p.transform.sigma = detail::json_number(t, "sigma");
    p.transform.loglik = t.contains("loglik") ? detail::json_number(t, "loglik") : 0.0;
    p.validate();
    return p;
}

inline EmosParams emos_from_json(const nlohmann::json& j) {
    EmosParams p;
    p.a = detail::json_number(j, "a");
    p.b = detail::json_vector(j, "b");
    p.c = detail::json_number(j, "c");
    p.d = detail::json_number(j, "d");
    p.validate();
    return p;
}

template <class Params>
inline void save_params(const std::string& path, const Params& p) {
    p.validate();
    write_text_file(path, to_json(p).dump(2) + "\n");
}

inline std::string params_model_name(const std::string& path) {
    nlohmann::json j = detail::parse_json_file(path);
    require(j.contains("model") && j["model"].is_string(), errc::parse,
            path + ": missing 'model' tag");
    return j["model"].get<std::string>();
}

namespace detail {
inline void check_model_tag(const nlohmann::json& j, const std::string& want,
                            const std::string& path) {
    require(j.contains("model") && j["model"].is_string() &&
                j["model"].get<std::string>() == want,
            errc::validation, path + ": not a " + want + " parameter file");
}
}  // namespace detail

inline GammaNormalParams load_gamma_normal_params(const std::string& path) {
    nlohmann::json j = detail::parse_json_file(path);
    detail::check_model_tag(j, "gamma_normal", path);
    return gamma_normal_from_json(j);
}

inline TobitParams load_tobit_params(const std::string& path) {
    nlohmann::json j = detail::parse_json_file(path);
    detail::check_model_tag(j, "tobit", path);
    return tobit_from_json(j);
}

inline EmosParams load_emos_params(const std::string& path) {
    nlohmann::json j = detail::parse_json_file(path);
    detail::check_model_tag(j, "emos", path);
    return emos_from_json(j);
}

// ---- fit trace CSV ----

inline void save_trace_csv(const std::string& path, const FitTrace& trace) {
    std::string out = "iteration,loglik";
    for (const auto& n : trace.param_names) out += "," + n;
    out += "\n";
    for (std::size_t i = 0; i < trace.params_path.size(); ++i) {
        out += std::to_string(i) + "," + fmt_double(trace.loglik_path[i]);
        for (double v : trace.params_path[i]) out += "," + fmt_double(v);
        out += "\n";
    }
    write_text_file(path, out);
}

// ---- forecast sample CSV (time,draw_index,value) ----

inline void save_samples_csv(const std::string& path,
                             const std::vector<std::int64_t>& times,
                             const std::vector<std::vector<double>>& draws) {
    require(times.size() == draws.size(), errc::validation,
            "times and draw rows must align");
    std::string out = "time,draw_index,value\n";
    for (std::size_t i = 0; i < times.size(); ++i)
        for (std::size_t d = 0; d < draws[i].size(); ++d)
            out += std::to_string(times[i]) + "," + std::to_string(d + 1) + "," +
                   fmt_double(draws[i][d]) + "\n";
    write_text_file(path, out);
}

inline std::map<std::int64_t, std::vector<double>> load_samples_csv(
    const std::string& path) {
    CsvTable t = read_csv(path);
    require(t.header == std::vector<std::string>{"time", "draw_index", "value"},
            errc::parse, path + ": header must be time,draw_index,value");
    std::map<std::int64_t, std::vector<double>> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        const int line = t.line_numbers[i];
        require(r.size() == 3, errc::parse,
                "line " + std::to_string(line) + ": expected 3 fields");
        out[parse_int(r[0], line)].push_back(parse_double(r[2], line));
    }
    return out;
}

}  // namespace enscal
