// Command-line front end: fit models to forecast archives, emit predictive
// laws or samples, reorder scenarios, verify against observations, test
// member exchangeability, and run the synthetic study. All randomized
// commands take --seed and reproduce bit for bit. Outputs are computed fully
// before anything is written, so a failing run leaves no partial files.
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "enscal/core.hpp"
#include "enscal/emos.hpp"
#include "enscal/error.hpp"
#include "enscal/gamma_normal.hpp"
#include "enscal/io.hpp"
#include "enscal/rng.hpp"
#include "enscal/scenario.hpp"
#include "enscal/simstudy.hpp"
#include "enscal/svg.hpp"
#include "enscal/tobit.hpp"
#include "enscal/verification.hpp"

namespace {

using namespace enscal;

constexpr std::uint64_t kPredictTag = 0x92ED1C7ull;
constexpr std::uint64_t kVerifyTag = 0x0E21F1ull;
constexpr std::uint64_t kExchTag = 0xE8C4ull;
constexpr int kRankMembers = 19;  // predictive sample size for rank histograms

// ---- deferred output writing ----

struct OutputSet {
    std::vector<std::pair<std::string, std::string>> files;  // path, content

    void add(const std::filesystem::path& dir, const std::string& name,
             std::string content) {
        files.emplace_back((dir / name).string(), std::move(content));
    }

    void write_all() const {
        for (const auto& [path, content] : files) {
            auto parent = std::filesystem::path(path).parent_path();
            if (!parent.empty()) std::filesystem::create_directories(parent);
            write_text_file(path, content);
            std::cout << "wrote " << path << "\n";
        }
    }
};

// ---- dataset loading, single- or multi-lead ----

const std::vector<std::string> lead_last_header = {"time", "source_id", "member_id",
                                                   "value", "lead_time"};
const std::vector<std::string> lead_second_header = {"time", "lead_time", "source_id",
                                                     "member_id", "value"};

struct LeadData {
    bool multi = false;                      // file carried a lead_time column
    std::vector<std::int64_t> leads;         // ascending
    std::map<std::int64_t, Dataset> by_lead; // one dataset per lead
};

std::vector<SourceSpec> infer_schema_from_rows(
    const std::vector<std::vector<std::string>>& rows,
    const std::vector<int>& lines) {
    std::map<int, int> max_member;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i].size() == 4, errc::parse,
                "line " + std::to_string(lines[i]) + ": expected 4 fields");
        int source = static_cast<int>(parse_int(rows[i][1], lines[i]));
        int member = static_cast<int>(parse_int(rows[i][2], lines[i]));
        if (source == 0) continue;
        auto [it, inserted] = max_member.emplace(source, member);
        if (!inserted && member > it->second) it->second = member;
    }
    std::vector<SourceSpec> schema;
    for (auto [source, members] : max_member)
        schema.push_back({source, members, "source" + std::to_string(source)});
    return schema;
}

// Load a forecast archive. A plain file (time,source_id,member_id,value) is
// one lead; a file with an extra lead_time column is split into independent
// per-lead datasets. `lead_filter` keeps a single lead; `schema`, when
// given, is enforced (otherwise each lead's schema is inferred).
LeadData load_lead_data(const std::string& path, Kind kind,
                        std::optional<std::int64_t> lead_filter,
                        const std::optional<std::vector<SourceSpec>>& schema) {
    CsvTable t = read_csv(path);
    LeadData out;
    if (t.header == dataset_header) {
        require(!lead_filter.has_value(), errc::validation,
                path + " has no lead_time column; --lead does not apply");
        auto s = schema ? *schema : infer_schema_from_rows(t.rows, t.line_numbers);
        out.leads.push_back(0);
        out.by_lead[0] = parse_dataset_rows(t.rows, t.line_numbers, std::move(s), kind);
        return out;
    }
    require(t.header == lead_last_header || t.header == lead_second_header,
            errc::parse,
            path + ": header must be time,source_id,member_id,value "
                   "(optionally with a lead_time column)");
    const std::size_t lead_col = t.header == lead_second_header ? 1 : 4;
    out.multi = true;

    std::map<std::int64_t, std::pair<std::vector<std::vector<std::string>>,
                                     std::vector<int>>> groups;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        auto& r = t.rows[i];
        const int line = t.line_numbers[i];
        require(r.size() == 5, errc::parse,
                "line " + std::to_string(line) + ": expected 5 fields");
        std::int64_t lead = parse_int(r[lead_col], line);
        if (lead_filter && lead != *lead_filter) continue;
        std::vector<std::string> four;
        four.reserve(4);
        for (std::size_t k = 0; k < r.size(); ++k)
            if (k != lead_col) four.push_back(std::move(r[k]));
        auto& g = groups[lead];
        g.first.push_back(std::move(four));
        g.second.push_back(line);
    }
    require(!groups.empty(), errc::validation,
            lead_filter ? "lead " + std::to_string(*lead_filter) + " not present in " +
                              path
                        : path + " has no data rows");
    for (auto& [lead, g] : groups) {
        auto s = schema ? *schema : infer_schema_from_rows(g.first, g.second);
        out.leads.push_back(lead);
        out.by_lead[lead] = parse_dataset_rows(g.first, g.second, std::move(s), kind);
    }
    return out;
}

// Suffix for per-lead output names: empty for single-lead files.
std::string lead_suffix(const LeadData& ld, std::int64_t lead) {
    return ld.multi ? "_lead" + std::to_string(lead) : "";
}

// ---- per-lead parameter files ----

struct LoadedParams {
    Kind kind = Kind::gaussian;
    std::string model;  // "gamma_normal" or "tobit"
    std::map<std::int64_t, GammaNormalParams> gaussian;
    std::map<std::int64_t, TobitParams> tobit;
    std::map<std::int64_t, std::vector<SourceSpec>> schema;  // when recorded
};

void load_one_params(const std::string& path, std::int64_t lead, LoadedParams& out) {
    nlohmann::json j = detail::parse_json_file(path);
    require(j.contains("model") && j["model"].is_string(), errc::parse,
            path + ": missing 'model' tag");
    const std::string model = j["model"].get<std::string>();
    if (out.model.empty()) out.model = model;
    require(out.model == model, errc::validation,
            "mixed model kinds across parameter files");
    if (model == "gamma_normal") {
        out.kind = Kind::gaussian;
        out.gaussian[lead] = gamma_normal_from_json(j);
    } else if (model == "tobit") {
        out.kind = Kind::precipitation;
        out.tobit[lead] = tobit_from_json(j);
    } else {
        fail(errc::validation, path + ": model '" + model +
                                   "' is not a forecasting model for this command");
    }
    if (j.contains("schema")) out.schema[lead] = schema_from_json(j["schema"]);
}

int source_count_of(const LoadedParams& lp, std::int64_t lead) {
    return lp.kind == Kind::gaussian ? lp.gaussian.at(lead).source_count()
                                     : lp.tobit.at(lead).gn.source_count();
}

// The dataset must declare exactly the sources the fit saw, with the same
// member counts; errors name the offending source.
void check_schema_match(const Dataset& ds, const std::vector<SourceSpec>& recorded,
                        std::int64_t lead) {
    const std::string where = "lead " + std::to_string(lead) + ": ";
    for (const auto& rec : recorded) {
        bool found = false;
        for (const auto& got : ds.schema) {
            if (got.source_id != rec.source_id) continue;
            found = true;
            require(got.member_count == rec.member_count, errc::validation,
                    where + "source " + std::to_string(rec.source_id) + " has " +
                        std::to_string(got.member_count) + " members but the fit saw " +
                        std::to_string(rec.member_count));
        }
        require(found, errc::validation,
                where + "data is missing source " + std::to_string(rec.source_id));
    }
    for (const auto& got : ds.schema) {
        bool known = false;
        for (const auto& rec : recorded)
            known = known || rec.source_id == got.source_id;
        require(known, errc::validation,
                where + "data declares source " + std::to_string(got.source_id) +
                    ", unknown to the parameters");
    }
}

// Load parameters (one file, or a directory of params_lead<h>.json) together
// with the forecast data they will be applied to.
struct Loaded {
    LoadedParams params;
    LeadData data;
};

Loaded load_params_and_data(const std::string& data_path,
                            const std::string& params_path,
                            std::optional<std::int64_t> lead_filter) {
    Loaded out;
    if (std::filesystem::is_directory(params_path)) {
        LeadData probe =
            load_lead_data(data_path, Kind::gaussian, lead_filter, std::nullopt);
        require(probe.multi, errc::validation,
                "--params is a directory but " + data_path +
                    " has no lead_time column");
        for (std::int64_t lead : probe.leads) {
            auto p = std::filesystem::path(params_path) /
                     ("params_lead" + std::to_string(lead) + ".json");
            require(std::filesystem::exists(p), errc::io,
                    "no parameter file for lead " + std::to_string(lead) + ": " +
                        p.string());
            load_one_params(p.string(), lead, out.params);
        }
    } else {
        load_one_params(params_path, 0, out.params);
    }

    out.data = load_lead_data(data_path, out.params.kind, lead_filter, std::nullopt);
    if (!std::filesystem::is_directory(params_path)) {
        require(out.data.leads.size() == 1, errc::validation,
                "data file has " + std::to_string(out.data.leads.size()) +
                    " lead times but --params is a single file; pass --lead or a "
                    "parameter directory");
        const std::int64_t lead = out.data.leads.front();
        if (lead != 0) {
            if (out.params.kind == Kind::gaussian) {
                auto p = std::move(out.params.gaussian.at(0));
                out.params.gaussian.clear();
                out.params.gaussian.emplace(lead, std::move(p));
            } else {
                auto p = std::move(out.params.tobit.at(0));
                out.params.tobit.clear();
                out.params.tobit.emplace(lead, std::move(p));
            }
            if (out.params.schema.count(0)) {
                auto s = std::move(out.params.schema.at(0));
                out.params.schema.clear();
                out.params.schema.emplace(lead, std::move(s));
            }
        }
    }

    for (std::int64_t lead : out.data.leads) {
        const Dataset& ds = out.data.by_lead.at(lead);
        auto it = out.params.schema.find(lead);
        if (it != out.params.schema.end()) check_schema_match(ds, it->second, lead);
        require(ds.source_count() == source_count_of(out.params, lead),
                errc::validation,
                "lead " + std::to_string(lead) + ": data declares " +
                    std::to_string(ds.source_count()) +
                    " sources but the parameters expect " +
                    std::to_string(source_count_of(out.params, lead)));
    }
    return out;
}

// ---- fit ----

struct FitArgs {
    std::string data_path;
    std::string kind_name = "gaussian";
    std::string out_dir = ".";
    std::string config_path;
    std::optional<std::int64_t> lead;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

int cmd_fit(const FitArgs& args) {
    Kind kind = kind_from_name(args.kind_name);
    EMConfig em;
    SEMConfig sem;
    if (!args.config_path.empty()) {
        nlohmann::json j = detail::parse_json_file(args.config_path);
        if (j.contains("em")) {
            const auto& e = j["em"];
            if (e.contains("epsilon")) em.epsilon = e["epsilon"].get<double>();
            if (e.contains("max_iterations"))
                em.max_iterations = e["max_iterations"].get<int>();
        }
        if (j.contains("sem")) {
            const auto& s = j["sem"];
            if (s.contains("sem_iterations"))
                sem.sem_iterations = s["sem_iterations"].get<int>();
            if (s.contains("gibbs_inner_iterations"))
                sem.gibbs_inner_iterations = s["gibbs_inner_iterations"].get<int>();
            if (s.contains("estimator_burn_in_fraction"))
                sem.estimator_burn_in_fraction =
                    s["estimator_burn_in_fraction"].get<double>();
            if (s.contains("forecast_burn_in"))
                sem.forecast_burn_in = s["forecast_burn_in"].get<int>();
        }
        if (j.contains("seed") && !args.seed_given)
            sem.seed = j["seed"].get<std::uint64_t>();
    }
    if (args.seed_given) sem.seed = args.seed;
    sem.em = em;

    LeadData ld = load_lead_data(args.data_path, kind, args.lead, {});
    OutputSet out;
    const std::filesystem::path dir(args.out_dir);
    std::vector<std::string> summaries;

    for (std::int64_t lead : ld.leads) {
        const Dataset& ds = ld.by_lead.at(lead);
        require_observations(ds);
        const std::string sfx = lead_suffix(ld, lead);
        nlohmann::json pj;
        FitTrace trace;
        if (kind == Kind::gaussian) {
            auto [params, tr] = fit_em(ds, em);
            trace = std::move(tr);
            pj = to_json(params);
        } else {
            std::vector<double> amounts;
            for (const auto& c : ds.cases) amounts.push_back(*c.observation);
            TransformFit tf = fit_power_transform(amounts);
            SEMConfig lead_sem = sem;
            lead_sem.seed = mix_labels({sem.seed, static_cast<std::uint64_t>(lead)});
            auto [params, tr] = sem_fit(ds, tf, lead_sem);
            trace = std::move(tr);
            pj = to_json(params);
        }
        pj["schema"] = schema_to_json(ds.schema);

        std::string trace_csv = "iteration,loglik";
        for (const auto& n : trace.param_names) trace_csv += "," + n;
        trace_csv += "\n";
        for (std::size_t i = 0; i < trace.params_path.size(); ++i) {
            trace_csv += std::to_string(i) + "," + fmt_double(trace.loglik_path[i]);
            for (double v : trace.params_path[i]) trace_csv += "," + fmt_double(v);
            trace_csv += "\n";
        }
        out.add(dir, "params" + sfx + ".json", pj.dump(2) + "\n");
        out.add(dir, "trace" + sfx + ".csv", trace_csv);
        summaries.push_back(
            (ld.multi ? "lead " + std::to_string(lead) + ": " : std::string()) +
            trace.termination + " after " + std::to_string(trace.iterations) +
            " iterations, final loglik " + fmt_double(trace.loglik_path.back()));
    }
    out.write_all();
    for (const auto& s : summaries) std::cout << s << "\n";
    return 0;
}

// ---- predict ----

struct PredictArgs {
    std::string data_path;
    std::string params_path;
    std::string out_dir = ".";
    std::string ecc_template;  // empty, "all", or a source id
    std::optional<std::int64_t> lead;
    int samples = 0;
    std::uint64_t seed = 0;
};

// Template member values for one case: a single source's members or all
// sources concatenated in schema order.
std::vector<double> template_members(const Dataset& ds, const ForecastCase& c,
                                     const std::string& spec) {
    std::vector<double> v;
    if (spec == "all") {
        for (const auto& row : c.members) v.insert(v.end(), row.begin(), row.end());
    } else {
        int source_id = static_cast<int>(parse_int(spec, 0));
        const auto s = static_cast<std::size_t>(ds.schema_index(source_id));
        v = c.members[s];
    }
    require(!v.empty(), errc::validation, "empty scenario template");
    return v;
}

int cmd_predict(const PredictArgs& args) {
    Loaded loaded = load_params_and_data(args.data_path, args.params_path, args.lead);
    LoadedParams& lp = loaded.params;
    LeadData& ld = loaded.data;

    const int samples = args.samples > 0
                            ? args.samples
                            : (lp.kind == Kind::precipitation ? 1000 : 0);
    OutputSet out;
    const std::filesystem::path dir(args.out_dir);

    // Predictive law table (closed form exists only on the Gaussian side).
    if (lp.kind == Kind::gaussian) {
        std::string csv = ld.multi ? "time,lead_time,location,scale,dof\n"
                                   : "time,location,scale,dof\n";
        for (std::int64_t lead : ld.leads) {
            const Dataset& ds = ld.by_lead.at(lead);
            const auto& params = lp.gaussian.at(lead);
            for (const auto& c : ds.cases) {
                StudentPredictive sp = predict_student(params, c);
                csv += std::to_string(c.time) +
                       (ld.multi ? "," + std::to_string(lead) : "") + "," +
                       fmt_double(sp.location) + "," + fmt_double(sp.scale) + "," +
                       fmt_double(sp.dof) + "\n";
            }
        }
        out.add(dir, "predictive.csv", csv);
    }

    if (samples > 0) {
        std::string csv = ld.multi ? "time,lead_time,draw_index,value\n"
                                   : "time,draw_index,value\n";
        for (std::int64_t lead : ld.leads) {
            const Dataset& ds = ld.by_lead.at(lead);
            for (const auto& c : ds.cases) {
                Rng rng = Rng::substream({args.seed, kPredictTag,
                                          static_cast<std::uint64_t>(lead),
                                          static_cast<std::uint64_t>(c.time)});
                std::vector<double> draws;
                if (lp.kind == Kind::gaussian) {
                    StudentPredictive sp = predict_student(lp.gaussian.at(lead), c);
                    draws.reserve(static_cast<std::size_t>(samples));
                    for (int i = 0; i < samples; ++i) {
                        double chi2 = 2.0 * rng.gamma(0.5 * sp.dof, 1.0);
                        draws.push_back(sp.location + sp.scale * rng.normal() /
                                                          std::sqrt(chi2 / sp.dof));
                    }
                } else {
                    ForecastCase predictors = c;
                    predictors.observation.reset();
                    SEMConfig cfg;  // forecast chain settings (default burn-in)
                    draws = forecast_sample(lp.tobit.at(lead), predictors, samples,
                                            cfg, rng);
                }
                const std::string prefix =
                    std::to_string(c.time) +
                    (ld.multi ? "," + std::to_string(lead) : "");
                for (std::size_t i = 0; i < draws.size(); ++i)
                    csv += prefix + "," + std::to_string(i + 1) + "," +
                           fmt_double(draws[i]) + "\n";
            }
        }
        out.add(dir, "samples.csv", csv);
    }

    if (!args.ecc_template.empty()) {
        // Scenario reordering across lead times: every time must appear at
        // every lead, and the template supplies the rank structure.
        std::set<std::int64_t> common;
        for (std::size_t h = 0; h < ld.leads.size(); ++h) {
            std::set<std::int64_t> times;
            for (const auto& c : ld.by_lead.at(ld.leads[h]).cases)
                times.insert(c.time);
            if (h == 0) {
                common = std::move(times);
            } else {
                std::set<std::int64_t> inter;
                for (std::int64_t t : common)
                    if (times.count(t)) inter.insert(t);
                common = std::move(inter);
            }
        }
        require(!common.empty(), errc::validation,
                "no forecast time appears at every lead time");

        std::string csv = "time,member,lead_time,value\n";
        for (std::int64_t t : common) {
            std::vector<std::vector<double>> raw;        // [member][lead]
            std::vector<std::vector<double>> quantiles;  // [lead][level]
            std::size_t m_count = 0;
            for (std::size_t h = 0; h < ld.leads.size(); ++h) {
                const std::int64_t lead = ld.leads[h];
                const Dataset& ds = ld.by_lead.at(lead);
                const ForecastCase* cp = nullptr;
                for (const auto& c : ds.cases)
                    if (c.time == t) cp = &c;
                std::vector<double> tmpl = template_members(ds, *cp, args.ecc_template);
                if (h == 0) {
                    m_count = tmpl.size();
                    raw.assign(m_count, std::vector<double>(ld.leads.size(), 0.0));
                }
                require(tmpl.size() == m_count, errc::validation,
                        "template member count differs across lead times");
                for (std::size_t m = 0; m < m_count; ++m) raw[m][h] = tmpl[m];

                std::vector<double> levels =
                    mid_quantile_levels(static_cast<int>(m_count));
                std::vector<double> q(levels.size());
                if (lp.kind == Kind::gaussian) {
                    StudentPredictive sp = predict_student(lp.gaussian.at(lead), *cp);
                    for (std::size_t i = 0; i < levels.size(); ++i)
                        q[i] = sp.quantile(levels[i]);
                } else {
                    Rng rng = Rng::substream({args.seed, kPredictTag, 0xECCull,
                                              static_cast<std::uint64_t>(lead),
                                              static_cast<std::uint64_t>(t)});
                    ForecastCase predictors = *cp;
                    predictors.observation.reset();
                    SEMConfig cfg;
                    std::vector<double> draws = forecast_sample(
                        lp.tobit.at(lead), predictors,
                        static_cast<int>(20 * m_count), cfg, rng);
                    std::sort(draws.begin(), draws.end());
                    for (std::size_t i = 0; i < levels.size(); ++i)
                        q[i] = quantile_sorted(draws, levels[i]);
                }
                quantiles.push_back(std::move(q));
            }
            ScenarioSet sc = ecc_q(quantiles, raw, ld.leads);
            for (std::size_t m = 0; m < sc.values.size(); ++m)
                for (std::size_t h = 0; h < sc.lead_times.size(); ++h)
                    csv += std::to_string(t) + "," + std::to_string(m + 1) + "," +
                           std::to_string(sc.lead_times[h]) + "," +
                           fmt_double(sc.values[m][h]) + "\n";
        }
        out.add(dir, "scenarios.csv", csv);
    }

    out.write_all();
    return 0;
}

// ---- verify ----

struct VerifyArgs {
    std::string data_path;
    std::string params_path;
    std::string out_dir = ".";
    std::optional<std::int64_t> lead;
    int samples = 1000;
    std::uint64_t seed = 0;
};

int cmd_verify(const VerifyArgs& args) {
    Loaded loaded = load_params_and_data(args.data_path, args.params_path, args.lead);
    LoadedParams& lp = loaded.params;
    LeadData& ld = loaded.data;

    OutputSet out;
    const std::filesystem::path dir(args.out_dir);
    std::string report = "lead_time,method,mean_crps,ci_lo,ci_hi\n";
    std::string flat = "lead_time,method,statistic,p_value,low_counts\n";
    std::vector<SvgSeries> crps_series;
    std::map<std::string, std::size_t> series_index;

    for (std::int64_t lead : ld.leads) {
        const Dataset& ds = ld.by_lead.at(lead);
        require_observations(ds);
        std::vector<std::pair<std::string, std::vector<double>>> method_scores;
        std::vector<std::pair<std::string, RankHistogram>> method_hists;

        // The fitted model's forecasts.
        {
            std::vector<double> scores;
            RankHistogram hist = RankHistogram::for_members(kRankMembers);
            for (const auto& c : ds.cases) {
                Rng rng = Rng::substream({args.seed, kVerifyTag,
                                          static_cast<std::uint64_t>(lead), 1,
                                          static_cast<std::uint64_t>(c.time)});
                const double y = *c.observation;
                if (lp.kind == Kind::gaussian) {
                    StudentPredictive sp = predict_student(lp.gaussian.at(lead), c);
                    scores.push_back(crps_student(y, sp.location, sp.scale, sp.dof));
                    std::vector<double> sample(kRankMembers);
                    for (double& v : sample) {
                        double chi2 = 2.0 * rng.gamma(0.5 * sp.dof, 1.0);
                        v = sp.location +
                            sp.scale * rng.normal() / std::sqrt(chi2 / sp.dof);
                    }
                    hist.add(observation_rank(sample, y, rng));
                } else {
                    ForecastCase predictors = c;
                    predictors.observation.reset();
                    SEMConfig cfg;
                    std::vector<double> draws =
                        forecast_sample(lp.tobit.at(lead), predictors,
                                        std::max(args.samples, kRankMembers), cfg, rng);
                    scores.push_back(crps_sample(draws, y));
                    std::vector<double> thinned;
                    const std::size_t M = draws.size();
                    for (int j = 0; j < kRankMembers; ++j) {
                        auto idx = static_cast<std::size_t>(
                            (static_cast<double>(j) + 0.5) * static_cast<double>(M) /
                            kRankMembers);
                        thinned.push_back(draws[std::min(idx, M - 1)]);
                    }
                    hist.add(observation_rank(thinned, y, rng));
                }
            }
            method_scores.emplace_back("prediction", std::move(scores));
            method_hists.emplace_back("prediction", std::move(hist));
        }

        // Raw ensembles as probabilistic forecasts.
        for (std::size_t s = 0; s < ds.schema.size(); ++s) {
            const std::string name = "raw_" + std::to_string(ds.schema[s].source_id);
            const int K = ds.schema[s].member_count;
            std::vector<double> scores;
            RankHistogram hist = RankHistogram::for_members(K);
            Rng rng = Rng::substream({args.seed, kVerifyTag,
                                      static_cast<std::uint64_t>(lead), 2,
                                      static_cast<std::uint64_t>(s)});
            for (const auto& c : ds.cases) {
                const double y = *c.observation;
                scores.push_back(crps_sample(c.members[s], y));
                if (K >= 2) hist.add(observation_rank(c.members[s], y, rng));
            }
            method_scores.emplace_back(name, std::move(scores));
            if (K >= 2) method_hists.emplace_back(name, std::move(hist));
        }

        for (std::size_t mi = 0; mi < method_scores.size(); ++mi) {
            const auto& [name, scores] = method_scores[mi];
            Rng rng = Rng::substream({args.seed, kVerifyTag,
                                      static_cast<std::uint64_t>(lead), 3,
                                      static_cast<std::uint64_t>(mi)});
            const double mean = ensemble_mean(scores);
            BootstrapCI ci = scores.size() >= 2 ? bootstrap_ci(scores, 1000, 0.90, rng)
                                                : BootstrapCI{mean, mean};
            report += std::to_string(lead) + "," + name + "," + fmt_double(mean) +
                      "," + fmt_double(ci.lo) + "," + fmt_double(ci.hi) + "\n";
            auto it = series_index.find(name);
            if (it == series_index.end()) {
                it = series_index.emplace(name, crps_series.size()).first;
                crps_series.push_back({name, {}, {}});
            }
            crps_series[it->second].x.push_back(static_cast<double>(lead));
            crps_series[it->second].y.push_back(mean);
        }

        for (const auto& [name, hist] : method_hists) {
            Chi2Flatness f = chi2_flatness(hist.counts);
            flat += std::to_string(lead) + "," + name + "," + fmt_double(f.statistic) +
                    "," + fmt_double(f.p_value) + "," + (f.low_counts ? "1" : "0") +
                    "\n";
            std::string csv = "bin,count\n";
            for (std::size_t b = 0; b < hist.counts.size(); ++b)
                csv += std::to_string(b + 1) + "," + std::to_string(hist.counts[b]) +
                       "\n";
            const std::string base = "hist_" + name + lead_suffix(ld, lead);
            out.add(dir, base + ".csv", csv);
            out.add(dir, base + ".svg",
                    svg_bar_chart(hist.counts,
                                  "Rank histogram, " + name +
                                      (ld.multi ? ", lead " + std::to_string(lead)
                                                : std::string())));
        }
    }

    out.add(dir, "report.csv", report);
    out.add(dir, "flatness.csv", flat);
    if (ld.multi && ld.leads.size() >= 2)
        out.add(dir, "crps_by_lead.svg",
                svg_line_chart(crps_series, "Mean score by lead time", "lead time",
                               "mean score"));
    out.write_all();
    return 0;
}

// ---- exchangeability ----

struct ExchArgs {
    std::string data_path;
    std::string kind_name = "gaussian";
    std::string out_dir = ".";
    std::optional<std::int64_t> lead;
    int source_id = 0;  // 0 = every source with at least two members
    std::uint64_t seed = 0;
};

int cmd_exchangeability(const ExchArgs& args) {
    Kind kind = kind_from_name(args.kind_name);
    LeadData ld = load_lead_data(args.data_path, kind, args.lead, {});
    OutputSet out;
    std::string csv = ld.multi ? "lead_time,source_id,member,p_value\n"
                               : "source_id,member,p_value\n";
    bool any = false;
    for (std::int64_t lead : ld.leads) {
        const Dataset& ds = ld.by_lead.at(lead);
        for (const auto& spec : ds.schema) {
            if (args.source_id != 0 && spec.source_id != args.source_id) continue;
            if (args.source_id == 0 && spec.member_count < 2) continue;
            Rng rng = Rng::substream({args.seed, kExchTag,
                                      static_cast<std::uint64_t>(lead),
                                      static_cast<std::uint64_t>(spec.source_id)});
            std::vector<double> p = exchangeability_rank_test(ds, spec.source_id, rng);
            for (std::size_t k = 0; k < p.size(); ++k)
                csv += (ld.multi ? std::to_string(lead) + "," : std::string()) +
                       std::to_string(spec.source_id) + "," + std::to_string(k + 1) +
                       "," + fmt_double(p[k]) + "\n";
            any = true;
        }
    }
    require(any, errc::validation,
            args.source_id != 0
                ? "source " + std::to_string(args.source_id) + " not found"
                : "no source has two or more members; the test does not apply");
    out.add(std::filesystem::path(args.out_dir), "exchangeability.csv", csv);
    out.write_all();
    return 0;
}

// ---- simstudy ----

struct StudyArgs {
    std::string config_path;
    std::string out_dir = "study_report";
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 1;
    int replications = 0;  // 0 = keep configured value
};

int cmd_simstudy(const StudyArgs& args) {
    StudyConfig cfg = reference_study_config();
    if (!args.config_path.empty())
        apply_study_config_json(cfg, detail::parse_json_file(args.config_path));
    if (args.seed_given) cfg.seed = args.seed;
    if (args.replications > 0) cfg.replications = args.replications;

    StudyReport report = run_simulation_study(cfg, args.threads);
    report.write(args.out_dir);
    std::cout << "wrote " << args.out_dir
              << "/{estimates,pvalues,crps,coverage}.csv and manifest.json\n";

    const int failed = report.failed_count();
    std::cout << "replications: " << cfg.replications - failed << " ok, " << failed
              << " failed\n";
    if (failed < cfg.replications) {
        for (std::size_t i = 0; i < report.parameter_names.size(); ++i)
            std::cout << "median " << report.parameter_names[i] << " = "
                      << fmt_double(median_of(report.estimates_for(i))) << " (truth "
                      << fmt_double(report.parameter_truth[i]) << ")\n";
        for (const auto& m : {std::string("oracle"), std::string("prediction")})
            std::cout << "median coverage[" << m << "] z = "
                      << fmt_double(median_of(report.coverage_for(m, false)))
                      << ", omega_sq = "
                      << fmt_double(median_of(report.coverage_for(m, true))) << "\n";
        for (const auto& m : report.methods())
            std::cout << "mean crps[" << m << "] = "
                      << fmt_double(ensemble_mean(report.crps_for(m))) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Exchangeable-ensemble forecast calibration toolkit"};
    app.require_subcommand(1);

    FitArgs fit_args;
    std::int64_t fit_lead_value = 0;
    auto* fit = app.add_subcommand("fit", "Fit model parameters to a forecast archive");
    fit->add_option("--data", fit_args.data_path, "training CSV")->required();
    fit->add_option("--kind", fit_args.kind_name, "gaussian or precip");
    fit->add_option("--out-dir", fit_args.out_dir, "output directory");
    fit->add_option("--config", fit_args.config_path, "JSON settings file");
    auto* fit_lead = fit->add_option("--lead", fit_lead_value, "fit only this lead time");
    auto* fit_seed = fit->add_option("--seed", fit_args.seed, "chain seed");

    PredictArgs pred_args;
    std::int64_t pred_lead_value = 0;
    auto* pred = app.add_subcommand("predict", "Issue predictive laws or samples");
    pred->add_option("--data", pred_args.data_path, "predictor CSV")->required();
    pred->add_option("--params", pred_args.params_path, "parameter file or directory")
        ->required();
    pred->add_option("--out-dir", pred_args.out_dir, "output directory");
    pred->add_option("--samples", pred_args.samples,
                     "predictive draws per case (amounts default to 1000)");
    pred->add_option("--seed", pred_args.seed, "sampling seed");
    pred->add_option("--ecc-template", pred_args.ecc_template,
                     "scenario template: a source id or 'all'");
    auto* pred_lead = pred->add_option("--lead", pred_lead_value, "predict only this lead");

    VerifyArgs ver_args;
    std::int64_t ver_lead_value = 0;
    auto* ver = app.add_subcommand("verify", "Score forecasts against observations");
    ver->add_option("--data", ver_args.data_path, "forecast+observation CSV")->required();
    ver->add_option("--params", ver_args.params_path, "parameter file or directory")
        ->required();
    ver->add_option("--out-dir", ver_args.out_dir, "output directory");
    ver->add_option("--samples", ver_args.samples, "predictive draws per case");
    ver->add_option("--seed", ver_args.seed, "sampling seed");
    auto* ver_lead = ver->add_option("--lead", ver_lead_value, "verify only this lead");

    ExchArgs exch_args;
    std::int64_t exch_lead_value = 0;
    auto* exch = app.add_subcommand("exchangeability",
                                    "Rank-occupancy test of member exchangeability");
    exch->add_option("--data", exch_args.data_path, "forecast CSV")->required();
    exch->add_option("--kind", exch_args.kind_name, "gaussian or precip");
    exch->add_option("--out-dir", exch_args.out_dir, "output directory");
    exch->add_option("--source", exch_args.source_id, "test only this source id");
    exch->add_option("--seed", exch_args.seed, "tie-breaking seed");
    auto* exch_lead = exch->add_option("--lead", exch_lead_value, "test only this lead");

    StudyArgs study_args;
    auto* study = app.add_subcommand("simstudy", "Run the synthetic recovery study");
    study->add_option("--config", study_args.config_path, "JSON study settings");
    study->add_option("--out-dir", study_args.out_dir, "report directory");
    auto* study_seed = study->add_option("--seed", study_args.seed, "study seed");
    study->add_option("--threads", study_args.threads, "worker threads");
    study->add_option("--replications", study_args.replications,
                      "override replication count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (fit->parsed()) {
            if (*fit_lead) fit_args.lead = fit_lead_value;
            fit_args.seed_given = fit_seed->count() > 0;
            return cmd_fit(fit_args);
        }
        if (pred->parsed()) {
            if (*pred_lead) pred_args.lead = pred_lead_value;
            return cmd_predict(pred_args);
        }
        if (ver->parsed()) {
            if (*ver_lead) ver_args.lead = ver_lead_value;
            return cmd_verify(ver_args);
        }
        if (exch->parsed()) {
            if (*exch_lead) exch_args.lead = exch_lead_value;
            return cmd_exchangeability(exch_args);
        }
        if (study->parsed()) {
            study_args.seed_given = study_seed->count() > 0;
            return cmd_simstudy(study_args);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
