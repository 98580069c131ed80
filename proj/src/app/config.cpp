#include "hcthmm/app/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace hcthmm::app {

using nlohmann::json;

namespace {

// Typed access to one JSON object with path-qualified errors.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_, "expected an object");
    }

    std::string child(const std::string& key) const { return path_ + "." + key; }
    bool has(const std::string& key) const { return obj_.contains(key); }
    const json& at(const std::string& key) const {
        used_.insert(key);
        return obj_.at(key);
    }

    void number(const std::string& key, double& out, double lo = -HUGE_VAL, double hi = HUGE_VAL,
                bool open_lo = false) const {
        if (!has(key)) return;
        const auto& v = at(key);
        if (!v.is_number()) throw ConfigError(child(key), "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x) || x < lo || x > hi || (open_lo && x == lo)) {
            throw ConfigError(child(key), "value " + v.dump() + " out of range");
        }
        out = x;
    }

    template <typename Int>
    void integer(const std::string& key, Int& out, long long lo, long long hi) const {
        if (!has(key)) return;
        const auto& v = at(key);
        if (!v.is_number_integer()) throw ConfigError(child(key), "expected an integer");
        const auto x = v.get<long long>();
        if (x < lo || x > hi) throw ConfigError(child(key), "value " + v.dump() + " out of range");
        out = static_cast<Int>(x);
    }

    void boolean(const std::string& key, bool& out) const {
        if (!has(key)) return;
        const auto& v = at(key);
        if (!v.is_boolean()) throw ConfigError(child(key), "expected true or false");
        out = v.get<bool>();
    }

    // Call last: rejects keys no accessor asked for.
    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            if (!used_.count(key)) throw ConfigError(child(key), "unknown field");
        }
    }

private:
    const json& obj_;
    std::string path_;
    mutable std::set<std::string> used_;
};

constexpr long long kMaxInt = 1'000'000'000;

void read_fit(const ObjectReader& r, FitConfig& f) {
    r.number("rho", f.rho, 0.0, HUGE_VAL, true);
    r.number("min_rho", f.min_rho, 0.0, HUGE_VAL, true);
    r.boolean("adaptive_rho", f.adaptive_rho);
    r.number("balance_ratio", f.balance_ratio, 1.0);
    r.number("rho_factor", f.rho_factor, 1.0, HUGE_VAL, true);
    r.integer("stall_window", f.stall_window, 0, kMaxInt);
    r.number("tol_abs", f.tol_abs, 0.0, HUGE_VAL, true);
    r.integer("max_iter", f.max_iter, 1, kMaxInt);
    r.number("inner_tol", f.inner_tol, 0.0, HUGE_VAL, true);
    r.integer("inner_max_iter", f.inner_max_iter, 1, kMaxInt);
    r.integer("inner_retries", f.inner_retries, 0, 100);
    r.boolean("curvature_metric", f.curvature_metric);
    r.integer("hessian_refresh", f.hessian_refresh, 0, kMaxInt);
    r.integer("n_starts", f.n_starts, 1, 10000);
    r.number("jitter_sd", f.jitter_sd, 0.0);
    r.finish();
}

void read_preprocess(const ObjectReader& r, PreprocessConfig& p) {
    r.integer("missing_run_length", p.missing_run_length, 1, kMaxInt);
    r.integer("truncation_cap", p.truncation_cap, 1, kMaxInt);
    r.integer("min_valid_minutes", p.min_valid_minutes, 1, kMaxInt);
    r.number("age_min", p.age_min, 0.0, HUGE_VAL, true);
    r.number("age_max", p.age_max, 0.0, HUGE_VAL, true);
    r.integer("study_start_weekday", p.study_start_weekday, 0, 6);
    r.finish();
    if (p.age_max <= p.age_min) throw ConfigError(r.child("age_max"), "must exceed age_min");
}

void read_simulate(const ObjectReader& r, SimDesign& d) {
    r.integer("n_subjects", d.n_subjects, 1, kMaxInt);
    r.integer("min_length", d.min_length, 1, kMaxInt);
    r.integer("max_length", d.max_length, 1, kMaxInt);
    r.integer("max_gap", d.max_gap, 1, kMaxInt);
    r.number("weekend_fraction", d.weekend_fraction, 0.0, 1.0);
    r.boolean("interleave_weekend", d.interleave_weekend);
    r.number("intercept_sd", d.intercept_sd, 0.0);
    r.finish();
    if (d.max_length < d.min_length) throw ConfigError(r.child("max_length"), "must be at least min_length");
}

std::vector<double> probability_list(const ObjectReader& r, const std::string& key, bool closed) {
    const auto& v = r.at(key);
    if (!v.is_array() || v.empty()) throw ConfigError(r.child(key), "expected a non-empty array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto path = r.child(key) + "[" + std::to_string(i) + "]";
        if (!v[i].is_number()) throw ConfigError(path, "expected a number");
        const double p = v[i].get<double>();
        const bool ok = closed ? (p >= 0.0 && p <= 1.0) : (p > 0.0 && p < 1.0);
        if (!ok) throw ConfigError(path, "value " + v[i].dump() + (closed ? " outside [0, 1]" : " outside (0, 1)"));
        out.push_back(p);
    }
    return out;
}

void read_bootstrap(const ObjectReader& r, BootstrapConfig& b) {
    r.integer("replicates", b.replicates, 2, kMaxInt);
    if (r.has("levels")) b.levels = probability_list(r, "levels", false);
    r.integer("max_iter", b.max_iter, 1, kMaxInt);
    r.integer("retry_budget", b.retry_budget, 0, 1000);
    r.finish();
}

void read_select(const ObjectReader& r, SelectGrid& s) {
    if (r.has("states")) {
        const auto& v = r.at("states");
        if (!v.is_array() || v.empty()) throw ConfigError(r.child("states"), "expected a non-empty array of integers");
        s.states.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number_integer() || v[i].get<int>() < 2 || v[i].get<int>() > 10) {
                throw ConfigError(r.child("states") + "[" + std::to_string(i) + "]", "expected an integer in 2..10");
            }
            s.states.push_back(v[i].get<int>());
        }
    }
    if (r.has("hierarchies")) {
        const auto& v = r.at("hierarchies");
        if (!v.is_array() || v.empty()) throw ConfigError(r.child("hierarchies"), "expected a non-empty array");
        s.hierarchies.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto path = r.child("hierarchies") + "[" + std::to_string(i) + "]";
            if (!v[i].is_string()) throw ConfigError(path, "expected a hierarchy name");
            try {
                parse_preset(v[i].get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ConfigError(path, e.what());
            }
            s.hierarchies.push_back(v[i].get<std::string>());
        }
    }
    r.finish();
}

void read_report(const ObjectReader& r, ReportConfig& c) {
    if (r.has("quantile_probs")) c.quantile_probs = probability_list(r, "quantile_probs", true);
    r.integer("simulation_draws", c.simulation_draws, 1, 10000);
    r.boolean("gnuplot", c.gnuplot);
    r.finish();
}

HierarchyChoice read_hierarchy(const json& v, const std::string& path) {
    if (v.is_string()) {
        try {
            return parse_hierarchy(v.get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(path, e.what());
        }
    }
    ObjectReader r(v, path);
    HierarchyChoice h;
    h.name = "custom";
    const auto level = [&](const char* key, Level& out) {
        if (!r.has(key)) throw ConfigError(r.child(key), "missing level");
        const auto& x = r.at(key);
        if (!x.is_string()) throw ConfigError(r.child(key), "expected subject, subgroup or population");
        try {
            out = parse_level(x.get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(r.child(key), e.what());
        }
    };
    level("initial", h.levels.initial);
    level("rates", h.levels.rates);
    level("intercepts", h.levels.intercepts);
    level("slopes", h.levels.slopes);
    r.finish();
    return h;
}

}  // namespace

ReportConfig::ReportConfig() {
    for (int k = 1; k <= 99; ++k) quantile_probs.push_back(k / 100.0);
}

HierarchyChoice parse_hierarchy(const std::string& name) {
    if (name == "custom") throw std::invalid_argument("hierarchy 'custom' needs per-block levels in the config file");
    HierarchyChoice h;
    h.name = name;
    h.levels = BlockLevels::from_preset(parse_preset(name));
    return h;
}

AppConfig parse_config(const json& doc) {
    ObjectReader r(doc, "config");
    if (!r.has("schema_version")) throw ConfigError("config.schema_version", "missing field");
    int version = 0;
    r.integer("schema_version", version, 0, kMaxInt);
    if (version != kSchemaVersion) {
        throw ConfigError("config.schema_version", "unsupported version " + std::to_string(version) + ", expected " +
                                                       std::to_string(kSchemaVersion));
    }

    AppConfig c;
    r.integer("states", c.fit.states, 2, 10);
    if (r.has("hierarchy")) c.hierarchy = read_hierarchy(r.at("hierarchy"), r.child("hierarchy"));
    if (r.has("fit")) read_fit(ObjectReader(r.at("fit"), r.child("fit")), c.fit);
    if (r.has("preprocess")) read_preprocess(ObjectReader(r.at("preprocess"), r.child("preprocess")), c.preprocess);
    if (r.has("simulate")) read_simulate(ObjectReader(r.at("simulate"), r.child("simulate")), c.simulate);
    if (r.has("bootstrap")) read_bootstrap(ObjectReader(r.at("bootstrap"), r.child("bootstrap")), c.bootstrap);
    if (r.has("select")) read_select(ObjectReader(r.at("select"), r.child("select")), c.select);
    if (r.has("report")) read_report(ObjectReader(r.at("report"), r.child("report")), c.report);

    std::uint64_t seed = c.fit.seed;
    if (r.has("seed")) {
        const auto& v = r.at("seed");
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) throw ConfigError("config.seed", "expected a non-negative integer");
        seed = v.get<std::uint64_t>();
    }
    c.fit.seed = c.simulate.seed = c.bootstrap.seed = seed;
    int workers = 0;
    r.integer("workers", workers, 0, 4096);
    c.fit.workers = c.bootstrap.workers = workers;
    r.finish();
    return c;
}

AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(doc);
}

json to_json(const AppConfig& c) {
    json h;
    if (c.hierarchy.name == "custom") {
        h = {{"initial", level_name(c.hierarchy.levels.initial)},
             {"rates", level_name(c.hierarchy.levels.rates)},
             {"intercepts", level_name(c.hierarchy.levels.intercepts)},
             {"slopes", level_name(c.hierarchy.levels.slopes)}};
    } else {
        h = c.hierarchy.name;
    }
    const auto& f = c.fit;
    const auto& p = c.preprocess;
    const auto& s = c.simulate;
    const auto& b = c.bootstrap;
    return {
        {"schema_version", kSchemaVersion},
        {"states", f.states},
        {"hierarchy", h},
        {"fit",
         {{"rho", f.rho}, {"min_rho", f.min_rho}, {"adaptive_rho", f.adaptive_rho}, {"balance_ratio", f.balance_ratio},
          {"rho_factor", f.rho_factor}, {"stall_window", f.stall_window}, {"tol_abs", f.tol_abs}, {"max_iter", f.max_iter}, {"inner_tol", f.inner_tol},
          {"inner_max_iter", f.inner_max_iter}, {"inner_retries", f.inner_retries},
          {"curvature_metric", f.curvature_metric}, {"hessian_refresh", f.hessian_refresh},
          {"n_starts", f.n_starts}, {"jitter_sd", f.jitter_sd}}},
        {"preprocess",
         {{"missing_run_length", p.missing_run_length}, {"truncation_cap", p.truncation_cap},
          {"min_valid_minutes", p.min_valid_minutes}, {"age_min", p.age_min}, {"age_max", p.age_max},
          {"study_start_weekday", p.study_start_weekday}}},
        {"simulate",
         {{"n_subjects", s.n_subjects}, {"min_length", s.min_length}, {"max_length", s.max_length},
          {"max_gap", s.max_gap}, {"weekend_fraction", s.weekend_fraction},
          {"interleave_weekend", s.interleave_weekend}, {"intercept_sd", s.intercept_sd}}},
        {"bootstrap",
         {{"replicates", b.replicates}, {"levels", b.levels}, {"max_iter", b.max_iter},
          {"retry_budget", b.retry_budget}}},
        {"select", {{"states", c.select.states}, {"hierarchies", c.select.hierarchies}}},
        {"report",
         {{"quantile_probs", c.report.quantile_probs}, {"simulation_draws", c.report.simulation_draws},
          {"gnuplot", c.report.gnuplot}}},
        {"seed", f.seed},
        {"workers", f.workers},
    };
}

}  // namespace hcthmm::app
