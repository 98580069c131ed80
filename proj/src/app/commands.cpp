#include "hcthmm/app/commands.hpp"

#include <filesystem>
#include <fstream>

#include "hcthmm/app/report.hpp"

namespace hcthmm::app {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string& require(const std::optional<std::string>& value, const char* flag) {
    if (!value || value->empty()) throw ConfigError(flag, "required");
    return *value;
}

fs::path output_dir(const CommandOptions& o) {
    const fs::path dir = require(o.output, "--output");
    fs::create_directories(dir);
    return dir;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

json report_to_json(const PreprocessReport& r) {
    return {{"input_subjects", r.input_subjects},     {"excluded_age", r.excluded_age},
            {"excluded_min_minutes", r.excluded_min_minutes}, {"output_subjects", r.output_subjects},
            {"input_minutes", r.input_minutes},       {"removed_runs", r.removed_runs},
            {"removed_minutes", r.removed_minutes},   {"truncated_counts", r.truncated_counts},
            {"output_minutes", r.output_minutes}};
}

FitRecord load_matching_fit(const std::string& path, const ActivityCohort& cohort) {
    FitRecord rec = fit_from_json(read_json_file(path));
    if (rec.subject_ids.size() != cohort.series.size()) {
        throw ConfigError("--fit", "fit has " + std::to_string(rec.subject_ids.size()) + " subjects, input has " +
                                       std::to_string(cohort.series.size()));
    }
    for (std::size_t i = 0; i < cohort.series.size(); ++i) {
        if (rec.subject_ids[i] != cohort.series[i].subject_id || rec.spec.groups[i] != cohort.series[i].group_id) {
            throw ConfigError("--fit", "subject " + std::to_string(i + 1) + " does not match the input");
        }
    }
    if (rec.spec.covariates != cohort.series.front().covariate_dim()) {
        throw ConfigError("--fit", "covariate dimension does not match the input");
    }
    return rec;
}

}  // namespace

AppConfig resolve_config(const CommandOptions& o) {
    AppConfig c = o.config ? load_config(*o.config) : AppConfig{};
    if (o.seed) c.fit.seed = c.simulate.seed = c.bootstrap.seed = *o.seed;
    if (o.workers) {
        if (*o.workers < 0) throw ConfigError("--workers", "must be non-negative");
        c.fit.workers = c.bootstrap.workers = *o.workers;
    }
    if (o.hierarchy) {
        if (*o.hierarchy == "custom") {
            if (c.hierarchy.name != "custom") throw ConfigError("--hierarchy", "custom needs per-block levels under config.hierarchy");
        } else {
            try {
                c.hierarchy = parse_hierarchy(*o.hierarchy);
            } catch (const std::invalid_argument& e) {
                throw ConfigError("--hierarchy", e.what());
            }
        }
    }
    if (o.states) {
        if (*o.states < 2 || *o.states > 10) throw ConfigError("--states", "expected an integer in 2..10");
        c.fit.states = *o.states;
    }
    if (o.bootstrap_reps) {
        if (*o.bootstrap_reps < 2) throw ConfigError("--bootstrap-reps", "must be at least 2");
        c.bootstrap.replicates = *o.bootstrap_reps;
    }
    return c;
}

ActivityCohort load_cohort(const std::string& path, const PreprocessConfig& config) {
    return to_cohort(read_activity_csv_file(path), config);
}

FitRecord fit_cohort(const ActivityCohort& cohort, const HierarchyChoice& hierarchy, const FitConfig& config) {
    FitRecord rec;
    rec.hierarchy_name = hierarchy.name;
    rec.group_labels = cohort.group_labels;
    rec.spec = HierarchySpec::for_data(cohort.series, hierarchy.levels, config.states,
                                       static_cast<int>(cohort.group_labels.size()));
    for (const auto& s : cohort.series) rec.subject_ids.push_back(s.subject_id);
    rec.fit = fit(cohort.series, rec.spec, config);
    std::vector<ForwardBackwardResult> fb;
    fb.reserve(cohort.series.size());
    for (std::size_t i = 0; i < cohort.series.size(); ++i) fb.push_back(forward_backward(cohort.series[i], rec.fit.theta_hat[i]));
    rec.posterior = time_in_state(fb, rec.spec.groups, rec.spec.n_groups);
    return rec;
}

json run_preprocess(const CommandOptions& o) {
    const AppConfig c = resolve_config(o);
    const auto records = read_activity_csv_file(require(o.input, "--input"));
    const auto dir = output_dir(o);
    const auto cleaned = clean_records(records, c.preprocess);
    auto csv = open_out(dir / "cleaned.csv");
    write_activity_csv(csv, cleaned.records);
    json rep = report_to_json(cleaned.report);
    rep["schema_version"] = kSchemaVersion;
    rep["kind"] = "preprocess_report";
    write_json_file((dir / "preprocess_report.json").string(), rep);
    return {{"command", "preprocess"}, {"report", report_to_json(cleaned.report)}};
}

json run_simulate(const CommandOptions& o) {
    const AppConfig c = resolve_config(o);
    if (o.states && *o.states != 3) throw ConfigError("--states", "the simulator generates three-state data");
    const auto dir = output_dir(o);
    const Cohort cohort = generate_cohort(c.simulate);
    // Group 1 is male and group 2 female; both get an age inside the younger band.
    const auto records = to_records(cohort.data, {Sex::Male, Sex::Female}, {30.0, 30.0});
    auto csv = open_out(dir / "cohort.csv");
    write_activity_csv(csv, records);
    write_json_file((dir / "truth.json").string(), truth_to_json(cohort));
    return {{"command", "simulate"}, {"subjects", cohort.data.size()}, {"observations", records.size()},
            {"seed", c.simulate.seed}};
}

json run_fit(const CommandOptions& o) {
    const AppConfig c = resolve_config(o);
    const auto cohort = load_cohort(require(o.input, "--input"), c.preprocess);
    const auto dir = output_dir(o);
    const FitRecord rec = fit_cohort(cohort, c.hierarchy, c.fit);
    write_json_file((dir / "fit.json").string(), fit_to_json(rec));
    auto eta = open_out(dir / "eta.csv");
    write_eta_csv(eta, rec);
    auto phi = open_out(dir / "phi.csv");
    write_phi_csv(phi, rec);
    const auto& f = rec.fit;
    return {{"command", "fit"},
            {"converged", f.converged},
            {"n_iterations", f.n_iterations},
            {"neg_loglik", f.neg_loglik},
            {"bic", f.bic},
            {"primal_residual", f.residual_history.empty() ? 0.0 : f.residual_history.back().primal},
            {"dual_residual", f.residual_history.empty() ? 0.0 : f.residual_history.back().dual},
            {"tol_primal", f.tol_primal},
            {"tol_dual", f.tol_dual}};
}

json run_select(const CommandOptions& o) {
    const AppConfig c = resolve_config(o);
    const auto cohort = load_cohort(require(o.input, "--input"), c.preprocess);
    const auto dir = output_dir(o);
    std::vector<int> states = c.select.states;
    if (o.states) states = {*o.states};
    std::vector<std::string> hierarchies = c.select.hierarchies;
    if (o.hierarchy) hierarchies = {c.hierarchy.name};

    std::vector<SelectionRow> rows;
    for (const auto& h : hierarchies) {
        const HierarchyChoice choice = h == c.hierarchy.name ? c.hierarchy : parse_hierarchy(h);
        for (int m : states) {
            SelectionRow row;
            row.states = m;
            row.hierarchy = h;
            FitConfig fc = c.fit;
            fc.states = m;
            try {
                const auto spec = HierarchySpec::for_data(cohort.series, choice.levels, m,
                                                          static_cast<int>(cohort.group_labels.size()));
                const FitResult r = fit(cohort.series, spec, fc);
                row.neg_loglik = r.neg_loglik;
                row.free_parameters = free_parameter_count(spec);
                row.bic = r.bic;
                row.converged = r.converged;
                row.n_iterations = r.n_iterations;
            } catch (const std::exception& e) {
                row.error = e.what();
            }
            rows.push_back(std::move(row));
        }
    }
    rank_by_bic(rows);
    auto csv = open_out(dir / "bic.csv");
    write_bic_csv(csv, rows);
    json table = json::array();
    for (const auto& r : rows) {
        json jr = {{"states", r.states}, {"hierarchy", r.hierarchy}, {"selected", r.selected}};
        if (r.error.empty()) {
            jr.update({{"neg_loglik", r.neg_loglik}, {"free_parameters", r.free_parameters}, {"bic", r.bic},
                       {"converged", r.converged}, {"n_iterations", r.n_iterations}});
        } else {
            jr["error"] = r.error;
        }
        table.push_back(std::move(jr));
    }
    write_json_file((dir / "select.json").string(),
                    {{"schema_version", kSchemaVersion}, {"kind", "select"}, {"candidates", table}});
    json out = {{"command", "select"}, {"candidates", rows.size()}};
    if (!rows.empty() && rows.front().selected) {
        out["selected"] = {{"states", rows.front().states}, {"hierarchy", rows.front().hierarchy}, {"bic", rows.front().bic}};
    }
    return out;
}

json run_bootstrap(const CommandOptions& o) {
    const AppConfig c = resolve_config(o);
    const auto cohort = load_cohort(require(o.input, "--input"), c.preprocess);
    const auto dir = output_dir(o);
    FitRecord base = o.fit ? load_matching_fit(*o.fit, cohort) : fit_cohort(cohort, c.hierarchy, c.fit);
    FitConfig fc = c.fit;
    fc.states = base.spec.states;
    const BootstrapResult r = bootstrap(cohort.series, base.spec, fc, base.fit, c.bootstrap);
    write_json_file((dir / "bootstrap.json").string(), bootstrap_to_json(r, base.group_labels));
    auto csv = open_out(dir / "phi_ci.csv");
    write_phi_ci_csv(csv, r, base.group_labels);
    if (c.report.gnuplot) {
        auto gp = open_out(dir / "phi_ci.gp");
        gp << phi_ci_gnuplot("phi_ci.csv", static_cast<int>(r.phi_hat.rows()), static_cast<int>(r.phi_hat.cols()));
    }
    return {{"command", "bootstrap"}, {"replicates", r.n_replicates}, {"failed", r.n_failed}};
}

json run_report(const CommandOptions& o) {
    const AppConfig c = resolve_config(o);
    const auto cohort = load_cohort(require(o.input, "--input"), c.preprocess);
    const FitRecord rec = load_matching_fit(require(o.fit, "--fit"), cohort);
    const auto dir = output_dir(o);
    RandomSource rng(c.fit.seed);
    const auto rows = quantile_table(cohort.series, rec.fit.theta_hat, c.report.quantile_probs,
                                     c.report.simulation_draws, rng);
    auto q = open_out(dir / "quantiles.csv");
    write_quantile_csv(q, rows);
    json out = {{"command", "report"},
                {"quantile_rows", rows.size()},
                {"max_quantile_gap_fraction", max_quantile_gap_fraction(rows, cohort.series)}};
    if (c.report.gnuplot) {
        auto gp = open_out(dir / "quantiles.gp");
        gp << quantile_gnuplot("quantiles.csv");
    }
    if (o.bootstrap) {
        const BootstrapResult b = bootstrap_from_json(read_json_file(*o.bootstrap));
        if (b.phi_hat.rows() != rec.spec.n_groups || b.phi_hat.cols() != rec.spec.states) {
            throw ConfigError("--bootstrap", "bootstrap result does not match the fit");
        }
        auto csv = open_out(dir / "phi_ci.csv");
        write_phi_ci_csv(csv, b, rec.group_labels);
        if (c.report.gnuplot) {
            auto gp = open_out(dir / "phi_ci.gp");
            gp << phi_ci_gnuplot("phi_ci.csv", static_cast<int>(b.phi_hat.rows()), static_cast<int>(b.phi_hat.cols()));
        }
        out["phi_ci_rows"] = b.phi_hat.size() * static_cast<Eigen::Index>(b.levels.size());
    }
    return out;
}

}  // namespace hcthmm::app
