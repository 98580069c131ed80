#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcthmm/admm.hpp"
#include "hcthmm/app/preprocess.hpp"
#include "hcthmm/bootstrap.hpp"
#include "hcthmm/simulate.hpp"

namespace hcthmm::app {

inline constexpr int kSchemaVersion = 1;

// Schema violation; path() is the dotted location of the offending field.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& path, const std::string& what)
        : std::invalid_argument(path + ": " + what), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

// A preset name (I..IV) or "custom" with explicit per-block levels.
struct HierarchyChoice {
    std::string name = "III";
    BlockLevels levels = BlockLevels::from_preset(HierarchyPreset::TypeIII);
};

struct SelectGrid {
    std::vector<int> states{2, 3, 4};
    std::vector<std::string> hierarchies{"III"};
};

struct ReportConfig {
    std::vector<double> quantile_probs;  // default 0.01, 0.02, ..., 0.99
    int simulation_draws = 1;            // simulated series per subject
    bool gnuplot = true;

    ReportConfig();
};

// CLI default: 500 replicates (the library default of 50 suits tests).
inline BootstrapConfig production_bootstrap() {
    BootstrapConfig b;
    b.replicates = 500;
    return b;
}

struct AppConfig {
    HierarchyChoice hierarchy;
    FitConfig fit;
    PreprocessConfig preprocess;
    SimDesign simulate;
    BootstrapConfig bootstrap = production_bootstrap();
    SelectGrid select;
    ReportConfig report;
};

// Parses a config document. Every key is optional except schema_version;
// unknown keys and wrongly typed values raise ConfigError.
//
// {
//   "schema_version": 1,
//   "states": 3,
//   "hierarchy": "III" | {"initial": "subgroup", "rates": ..., "intercepts": ..., "slopes": ...},
//   "fit": {"rho", "min_rho", "adaptive_rho", "balance_ratio", "rho_factor", "stall_window", "tol_abs", "max_iter",
//           "inner_tol", "inner_max_iter", "inner_retries", "curvature_metric", "hessian_refresh",
//           "n_starts", "jitter_sd"},
//   "preprocess": {"missing_run_length", "truncation_cap", "min_valid_minutes", "age_min", "age_max",
//                  "study_start_weekday"},
//   "simulate": {"n_subjects", "min_length", "max_length", "max_gap", "weekend_fraction",
//                "interleave_weekend", "intercept_sd"},
//   "bootstrap": {"replicates", "levels", "max_iter", "retry_budget"},
//   "select": {"states": [...], "hierarchies": [...]},
//   "report": {"quantile_probs": [...], "simulation_draws", "gnuplot"},
//   "seed": 1,
//   "workers": 0
// }
AppConfig parse_config(const nlohmann::json& doc);
AppConfig load_config(const std::string& path);

HierarchyChoice parse_hierarchy(const std::string& name);

nlohmann::json to_json(const AppConfig& config);

}  // namespace hcthmm::app
