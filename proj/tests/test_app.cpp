#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hcthmm/app/commands.hpp"
#include "hcthmm/app/report.hpp"

using namespace hcthmm;
using namespace hcthmm::app;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string error_path(const json& doc) {
    try {
        parse_config(doc);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "";
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("hcthmm_test_app_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::string> lines(const fs::path& path) {
    std::ifstream in(path);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

// Writes a simulated cohort CSV through the simulate command.
fs::path simulated_csv(const fs::path& dir, int n, int min_len, int max_len, std::uint64_t seed) {
    const json cfg = {{"schema_version", 1},
                      {"seed", seed},
                      {"simulate", {{"n_subjects", n}, {"min_length", min_len}, {"max_length", max_len}}}};
    std::ofstream(dir / "sim.json") << cfg.dump();
    CommandOptions o;
    o.config = (dir / "sim.json").string();
    o.output = (dir / "sim").string();
    run_simulate(o);
    return dir / "sim" / "cohort.csv";
}

}  // namespace

TEST_CASE("config defaults and overrides") {
    const AppConfig d = parse_config({{"schema_version", 1}});
    CHECK(d.fit.states == 3);
    CHECK(d.hierarchy.name == "III");
    CHECK(d.preprocess.truncation_cap == 1500);
    CHECK(d.report.quantile_probs.size() == 99);

    const json doc = {{"schema_version", 1},
                      {"states", 4},
                      {"hierarchy", "IV"},
                      {"fit", {{"rho", 3.0}, {"max_iter", 50}, {"curvature_metric", false}}},
                      {"preprocess", {{"study_start_weekday", 6}}},
                      {"simulate", {{"n_subjects", 8}}},
                      {"bootstrap", {{"replicates", 7}, {"levels", {0.9, 0.99}}}},
                      {"select", {{"states", {2, 3}}, {"hierarchies", {"I", "III"}}}},
                      {"report", {{"simulation_draws", 4}, {"gnuplot", false}}},
                      {"seed", 99},
                      {"workers", 2}};
    const AppConfig c = parse_config(doc);
    CHECK(c.fit.states == 4);
    CHECK(c.hierarchy.levels == BlockLevels::from_preset(HierarchyPreset::TypeIV));
    CHECK(c.fit.rho == 3.0);
    CHECK(c.fit.max_iter == 50);
    CHECK_FALSE(c.fit.curvature_metric);
    CHECK(c.preprocess.study_start_weekday == 6);
    CHECK(c.simulate.n_subjects == 8);
    CHECK(c.bootstrap.replicates == 7);
    CHECK(c.bootstrap.levels == std::vector<double>{0.9, 0.99});
    CHECK(c.select.states == std::vector<int>{2, 3});
    CHECK(c.report.simulation_draws == 4);
    CHECK(c.fit.seed == 99);
    CHECK(c.simulate.seed == 99);
    CHECK(c.bootstrap.seed == 99);
    CHECK(c.fit.workers == 2);
    // serialization is a fixed point
    CHECK(to_json(parse_config(to_json(c))) == to_json(c));
}

TEST_CASE("custom hierarchies") {
    const json doc = {{"schema_version", 1},
                      {"hierarchy", {{"initial", "population"}, {"rates", "subgroup"}, {"intercepts", "subject"}, {"slopes", "population"}}}};
    const AppConfig c = parse_config(doc);
    CHECK(c.hierarchy.name == "custom");
    CHECK(c.hierarchy.levels == BlockLevels{Level::Population, Level::Subgroup, Level::Subject, Level::Population});
    CHECK_THROWS_AS(parse_hierarchy("custom"), std::invalid_argument);
}

TEST_CASE("config errors name the offending field") {
    CHECK(error_path(json::object()) == "config.schema_version");
    CHECK(error_path({{"schema_version", 2}}) == "config.schema_version");
    CHECK(error_path({{"schema_version", 1}, {"colour", 1}}) == "config.colour");
    CHECK(error_path({{"schema_version", 1}, {"fit", {{"rho", "big"}}}}) == "config.fit.rho");
    CHECK(error_path({{"schema_version", 1}, {"fit", {{"rho", -1.0}}}}) == "config.fit.rho");
    CHECK(error_path({{"schema_version", 1}, {"fit", {{"max_itr", 3}}}}) == "config.fit.max_itr");
    CHECK(error_path({{"schema_version", 1}, {"states", 1}}) == "config.states");
    CHECK(error_path({{"schema_version", 1}, {"hierarchy", "V"}}) == "config.hierarchy");
    CHECK(error_path({{"schema_version", 1}, {"hierarchy", {{"initial", "subject"}}}}) == "config.hierarchy.rates");
    CHECK(error_path({{"schema_version", 1}, {"bootstrap", {{"levels", {0.5, 1.0}}}}}) == "config.bootstrap.levels[1]");
    CHECK(error_path({{"schema_version", 1}, {"select", {{"states", {3, 11}}}}}) == "config.select.states[1]");
    CHECK(error_path({{"schema_version", 1}, {"preprocess", {{"age_min", 50}, {"age_max", 40}}}}) == "config.preprocess.age_max");
    CHECK(error_path({{"schema_version", 1}, {"seed", -4}}) == "config.seed");
}

TEST_CASE("command option resolution") {
    CommandOptions o;
    o.seed = 5;
    o.workers = 3;
    o.hierarchy = "II";
    o.states = 4;
    o.bootstrap_reps = 9;
    const AppConfig c = resolve_config(o);
    CHECK(c.fit.seed == 5);
    CHECK(c.bootstrap.workers == 3);
    CHECK(c.hierarchy.name == "II");
    CHECK(c.fit.states == 4);
    CHECK(c.bootstrap.replicates == 9);
    o.hierarchy = "custom";
    CHECK_THROWS_AS(resolve_config(o), ConfigError);
    o.hierarchy.reset();
    o.states = 1;
    CHECK_THROWS_AS(resolve_config(o), ConfigError);
}

TEST_CASE("fit records round-trip through JSON") {
    const fs::path dir = scratch("roundtrip");
    const auto csv = simulated_csv(dir, 4, 200, 300, 3);
    const auto cohort = load_cohort(csv.string(), PreprocessConfig{});
    CHECK(cohort.group_labels == std::vector<std::string>{"male, age < 40", "female, age < 40"});
    FitConfig fc;
    const FitRecord rec = fit_cohort(cohort, parse_hierarchy("III"), fc);
    const json doc = fit_to_json(rec);
    CHECK(doc["schema_version"] == 1);
    CHECK(doc["kind"] == "fit");
    const FitRecord back = fit_from_json(json::parse(doc.dump()));
    CHECK(back.hierarchy_name == "III");
    CHECK(back.spec.levels == rec.spec.levels);
    CHECK(back.spec.groups == rec.spec.groups);
    CHECK(back.subject_ids == rec.subject_ids);
    CHECK(back.group_labels == rec.group_labels);
    CHECK(back.fit.z_hat == rec.fit.z_hat);
    CHECK(back.fit.neg_loglik == rec.fit.neg_loglik);
    CHECK(back.fit.converged == rec.fit.converged);
    for (std::size_t i = 0; i < rec.fit.theta_hat.size(); ++i) CHECK(back.fit.theta_hat[i].values() == rec.fit.theta_hat[i].values());
    CHECK(back.posterior.phi == rec.posterior.phi);

    json broken = doc;
    broken["subjects"][1]["group"] = 7;
    try {
        fit_from_json(broken);
        FAIL("expected a schema error");
    } catch (const ConfigError& e) {
        CHECK(e.path() == "fit.subjects[1].group");
    }
    broken = doc;
    broken.erase("z_hat");
    CHECK_THROWS_AS(fit_from_json(broken), ConfigError);
}

TEST_CASE("bootstrap results round-trip through JSON") {
    BootstrapResult r;
    r.n_replicates = 3;
    r.levels = {0.95};
    r.phi_hat = Matrix::Constant(2, 3, 1.0 / 3.0);
    r.shared_hat = Vector::LinSpaced(4, 0.0, 1.0);
    for (int b = 0; b < 3; ++b) {
        r.phi.push_back(r.phi_hat.array() + 0.01 * b);
        r.shared.push_back(r.shared_hat.array() - 0.1 * b);
    }
    r.phi_lower = {r.phi_hat.array() - 0.05};
    r.phi_upper = {r.phi_hat.array() + 0.05};
    r.phi_se = Matrix::Constant(2, 3, 0.02);
    r.shared_lower = {r.shared_hat.array() - 1.0};
    r.shared_upper = {r.shared_hat.array() + 1.0};
    r.shared_se = Vector::Constant(4, 0.3);
    const BootstrapResult back = bootstrap_from_json(json::parse(bootstrap_to_json(r, {"a", "b"}).dump()));
    CHECK(back.n_replicates == 3);
    CHECK(back.phi_hat == r.phi_hat);
    CHECK(back.phi_lower[0] == r.phi_lower[0]);
    CHECK(back.phi_upper[0] == r.phi_upper[0]);
    CHECK(back.phi_se == r.phi_se);

    std::ostringstream csv;
    write_phi_ci_csv(csv, r, {"a", "b"});
    std::istringstream in(csv.str());
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "group,label,state,level,estimate,lower,upper,se");
    CHECK(first.rfind("1,a,1,0.95,", 0) == 0);
}

TEST_CASE("BIC ranking") {
    std::vector<SelectionRow> rows(4);
    rows[0] = {2, "III", 10.0, 5, 40.0, true, 3, false, ""};
    rows[1] = {3, "III", 8.0, 9, 30.0, true, 3, false, ""};
    rows[2] = {4, "III", 0.0, 0, 0.0, false, 0, false, "diverged"};
    rows[3] = {4, "I", 7.0, 20, 35.0, true, 3, false, ""};
    rank_by_bic(rows);
    CHECK(rows[0].states == 3);
    CHECK(rows[0].selected);
    CHECK(rows[1].bic == 35.0);
    CHECK_FALSE(rows[1].selected);
    CHECK(rows[3].error == "diverged");
    std::ostringstream out;
    write_bic_csv(out, rows);
    CHECK(out.str().find("diverged") != std::string::npos);
}

TEST_CASE("quantile tables") {
    const Cohort c = generate_cohort([] {
        SimDesign d;
        d.n_subjects = 4;
        d.min_length = 300;
        d.max_length = 400;
        return d;
    }());
    RandomSource rng(2);
    const std::vector<double> probs{0.1, 0.5, 0.9};
    const auto rows = quantile_table(c.data, c.truth, probs, 3, rng);
    REQUIRE(rows.size() == 3);
    std::vector<double> pooled;
    for (const auto& s : c.data) {
        for (auto y : s.counts) pooled.push_back(static_cast<double>(y));
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
        CHECK(rows[k].prob == probs[k]);
        CHECK(rows[k].observed == sample_quantile(pooled, probs[k]));
    }
    CHECK(rows[0].fitted <= rows[1].fitted);
    CHECK(rows[1].fitted <= rows[2].fitted);
    const double range = *std::max_element(pooled.begin(), pooled.end()) - *std::min_element(pooled.begin(), pooled.end());
    double gap = 0;
    for (const auto& r : rows) gap = std::max(gap, std::abs(r.fitted - r.observed));
    CHECK(max_quantile_gap_fraction(rows, c.data) == doctest::Approx(gap / range));
    CHECK(phi_ci_gnuplot("phi_ci.csv", 2, 3).find("phi_ci.csv") != std::string::npos);
    CHECK(quantile_gnuplot("q.csv").find("q.csv") != std::string::npos);
}

TEST_CASE("fit command on a three-subject toy file") {
    const fs::path dir = scratch("fit");
    CommandOptions o;
    o.input = std::string(HCTHMM_TEST_DATA) + "/toy.csv";
    o.output = (dir / "out").string();
    const json summary = run_fit(o);
    CHECK(summary["converged"] == true);
    CHECK(summary["primal_residual"].get<double>() <= summary["tol_primal"].get<double>());
    CHECK(summary["dual_residual"].get<double>() <= summary["tol_dual"].get<double>());
    for (const char* f : {"fit.json", "eta.csv", "phi.csv"}) CHECK(fs::exists(dir / "out" / f));
    CHECK(lines(dir / "out" / "eta.csv").size() == 1 + 3 * 3);
    CHECK(lines(dir / "out" / "phi.csv").front() == "group,label,state,phi");
    const FitRecord rec = fit_from_json(read_json_file((dir / "out" / "fit.json").string()));
    CHECK(rec.subject_ids.size() == 3);
}

TEST_CASE("preprocess command") {
    const fs::path dir = scratch("preprocess");
    CommandOptions o;
    o.input = std::string(HCTHMM_TEST_DATA) + "/preprocess_input.csv";
    o.output = dir.string();
    const json summary = run_preprocess(o);
    CHECK(summary["report"]["output_subjects"] == 3);
    std::ifstream a(dir / "cleaned.csv"), b(std::string(HCTHMM_TEST_DATA) + "/preprocess_expected.csv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    const json rep = read_json_file((dir / "preprocess_report.json").string());
    CHECK(rep["schema_version"] == 1);
    CHECK(rep["removed_runs"] == 5);
}

TEST_CASE("select prefers three states on three-state data") {
    const fs::path dir = scratch("select");
    const auto csv = simulated_csv(dir, 20, 500, 2500, 1);
    CommandOptions o;
    o.input = csv.string();
    o.output = (dir / "select").string();
    const json cfg = {{"schema_version", 1}, {"select", {{"states", {2, 3}}}}};
    std::ofstream(dir / "select.json") << cfg.dump();
    o.config = (dir / "select.json").string();
    const json summary = run_select(o);
    CHECK(summary["selected"]["states"] == 3);
    const json table = read_json_file((dir / "select" / "select.json").string());
    double bic2 = 0, bic3 = 0;
    for (const auto& r : table["candidates"]) (r["states"] == 2 ? bic2 : bic3) = r["bic"].get<double>();
    CHECK(bic3 < bic2);
    CHECK(lines(dir / "select" / "bic.csv").size() == 3);
}

TEST_CASE("report quantiles on well-specified data") {
    const fs::path dir = scratch("report");
    const auto csv = simulated_csv(dir, 20, 500, 2500, 1);
    const json cfg = {{"schema_version", 1}, {"report", {{"simulation_draws", 10}}}};
    std::ofstream(dir / "report.json") << cfg.dump();
    CommandOptions fit_opt;
    fit_opt.input = csv.string();
    fit_opt.output = (dir / "fit").string();
    run_fit(fit_opt);

    CommandOptions o;
    o.config = (dir / "report.json").string();
    o.input = csv.string();
    o.output = (dir / "report").string();
    o.fit = (dir / "fit" / "fit.json").string();
    const json summary = run_report(o);
    CHECK(summary["quantile_rows"] == 99);
    CHECK(summary["max_quantile_gap_fraction"].get<double>() <= 0.05);
    CHECK(fs::exists(dir / "report" / "quantiles.gp"));

    // a fit from other data is refused
    CommandOptions wrong = o;
    wrong.input = std::string(HCTHMM_TEST_DATA) + "/toy.csv";
    CHECK_THROWS_AS(run_report(wrong), ConfigError);
}

TEST_CASE("bootstrap command reuses a saved fit") {
    const fs::path dir = scratch("bootstrap");
    CommandOptions fit_opt;
    fit_opt.input = std::string(HCTHMM_TEST_DATA) + "/toy.csv";
    fit_opt.output = (dir / "fit").string();
    run_fit(fit_opt);

    CommandOptions o;
    o.input = fit_opt.input;
    o.output = (dir / "boot").string();
    o.fit = (dir / "fit" / "fit.json").string();
    o.bootstrap_reps = 3;
    const json summary = run_bootstrap(o);
    CHECK(summary["replicates"].get<int>() + summary["failed"].get<int>() == 3);
    const auto csv = lines(dir / "boot" / "phi_ci.csv");
    CHECK(csv.size() == 1 + 2 * 3);
    CHECK(fs::exists(dir / "boot" / "phi_ci.gp"));

    CommandOptions rep;
    rep.input = fit_opt.input;
    rep.output = (dir / "report").string();
    rep.fit = o.fit;
    rep.bootstrap = (dir / "boot" / "bootstrap.json").string();
    const json r = run_report(rep);
    CHECK(r["phi_ci_rows"] == 6);
    CHECK(lines(dir / "report" / "phi_ci.csv") == csv);
}

TEST_CASE("simulate refuses other state counts") {
    CommandOptions o;
    o.output = scratch("sim_states").string();
    o.states = 4;
    CHECK_THROWS_AS(run_simulate(o), ConfigError);
}
