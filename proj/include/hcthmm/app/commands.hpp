#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "hcthmm/app/config.hpp"
#include "hcthmm/app/serialize.hpp"

namespace hcthmm::app {

// Flags shared by the subcommands; unset flags fall back to the config file,
// then to built-in defaults.
struct CommandOptions {
    std::optional<std::string> config;
    std::optional<std::string> input;
    std::optional<std::string> output;
    std::optional<std::string> fit;        // fit.json from an earlier run
    std::optional<std::string> bootstrap;  // bootstrap.json from an earlier run
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> hierarchy;
    std::optional<int> states;
    std::optional<int> bootstrap_reps;
};

AppConfig resolve_config(const CommandOptions& options);

// Each command writes its files under options.output and returns a summary
// document for stdout.
nlohmann::json run_preprocess(const CommandOptions& options);  // cleaned.csv, preprocess_report.json
nlohmann::json run_simulate(const CommandOptions& options);    // cohort.csv, truth.json
nlohmann::json run_fit(const CommandOptions& options);         // fit.json, eta.csv, phi.csv
nlohmann::json run_select(const CommandOptions& options);      // bic.csv, select.json
nlohmann::json run_bootstrap(const CommandOptions& options);   // bootstrap.json, phi_ci.csv
nlohmann::json run_report(const CommandOptions& options);      // quantiles.csv, phi_ci.csv

// Loads the input CSV into series with compacted group ids.
ActivityCohort load_cohort(const std::string& path, const PreprocessConfig& config);

// Fits one (states, hierarchy) candidate and fills the posterior summaries.
FitRecord fit_cohort(const ActivityCohort& cohort, const HierarchyChoice& hierarchy, const FitConfig& config);

}  // namespace hcthmm::app
