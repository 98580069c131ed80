#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hcthmm/app/commands.hpp"
#include "hcthmm/inference.hpp"

namespace {

using hcthmm::app::CommandOptions;
using nlohmann::json;

int fail(const std::string& type, const std::string& message, const json& extra = json::object()) {
    json err = {{"type", type}, {"message", message}};
    err.update(extra);
    std::cerr << json{{"schema_version", hcthmm::app::kSchemaVersion}, {"error", err}}.dump() << std::endl;
    return type == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical continuous-time hidden Markov models for zero-inflated count series"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "hcthmm 1.0");

    CommandOptions opt;
    std::string hierarchy;
    std::uint64_t seed = 0;
    int workers = 0, states = 0, reps = 0;
    std::string config, input, output, fit_path, boot_path;

    const auto common = [&](CLI::App* sub, bool wants_input) {
        sub->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
        if (wants_input) sub->add_option("--input", input, "activity CSV")->required()->check(CLI::ExistingFile);
        sub->add_option("--output", output, "output directory")->required();
        sub->add_option("--seed", seed, "random seed");
        sub->add_option("--workers", workers, "worker threads (0: all cores)");
    };
    const auto model = [&](CLI::App* sub) {
        sub->add_option("--hierarchy", hierarchy, "I, II, III, IV or custom")
            ->check(CLI::IsMember({"I", "II", "III", "IV", "custom"}));
        sub->add_option("--states", states, "number of latent states");
    };

    auto* preprocess = app.add_subcommand("preprocess", "clean a raw activity CSV");
    common(preprocess, true);
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic three-state cohort");
    common(simulate, false);
    auto* fit = app.add_subcommand("fit", "fit a model by consensus ADMM");
    common(fit, true);
    model(fit);
    auto* select = app.add_subcommand("select", "BIC sweep over state counts and hierarchies");
    common(select, true);
    model(select);
    auto* boot = app.add_subcommand("bootstrap", "stratified bootstrap intervals for time in state");
    common(boot, true);
    model(boot);
    boot->add_option("--bootstrap-reps", reps, "bootstrap replicates");
    boot->add_option("--fit", fit_path, "fit.json to warm-start from")->check(CLI::ExistingFile);
    auto* report = app.add_subcommand("report", "quantile and interval tables for a fitted model");
    common(report, true);
    report->add_option("--fit", fit_path, "fit.json")->required()->check(CLI::ExistingFile);
    report->add_option("--bootstrap", boot_path, "bootstrap.json")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    CLI::App* sub = app.get_subcommands().front();
    const auto set = [&](const char* flag) { return sub->get_option_no_throw(flag) && sub->count(flag) > 0; };
    if (set("--config")) opt.config = config;
    if (set("--input")) opt.input = input;
    if (set("--output")) opt.output = output;
    if (set("--fit")) opt.fit = fit_path;
    if (set("--bootstrap")) opt.bootstrap = boot_path;
    if (set("--seed")) opt.seed = seed;
    if (set("--workers")) opt.workers = workers;
    if (set("--hierarchy")) opt.hierarchy = hierarchy;
    if (set("--states")) opt.states = states;
    if (set("--bootstrap-reps")) opt.bootstrap_reps = reps;

    try {
        json summary;
        const std::string name = sub->get_name();
        if (name == "preprocess") summary = hcthmm::app::run_preprocess(opt);
        else if (name == "simulate") summary = hcthmm::app::run_simulate(opt);
        else if (name == "fit") summary = hcthmm::app::run_fit(opt);
        else if (name == "select") summary = hcthmm::app::run_select(opt);
        else if (name == "bootstrap") summary = hcthmm::app::run_bootstrap(opt);
        else summary = hcthmm::app::run_report(opt);
        std::cout << summary.dump(2) << std::endl;
        return 0;
    } catch (const hcthmm::app::ConfigError& e) {
        return fail("config", e.what(), {{"path", e.path()}});
    } catch (const hcthmm::app::CsvError& e) {
        return fail("input", e.what(), {{"line", e.line()}});
    } catch (const hcthmm::LikelihoodError& e) {
        return fail("likelihood", e.what(), {{"time_index", e.time_index()}});
    } catch (const std::exception& e) {
        return fail("runtime", e.what());
    }
}
