#include "hcthmm/app/serialize.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>

#include "hcthmm/app/config.hpp"

namespace hcthmm::app {

using nlohmann::json;

namespace {

json vec(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec(m.row(r).transpose()));
    return rows;
}

const json& field(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) throw ConfigError(path + "." + key, "missing field");
    return obj.at(key);
}

Vector vec_from(const json& j, const std::string& path, Eigen::Index expected = -1) {
    if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t k = 0; k < j.size(); ++k) {
        if (!j[k].is_number()) throw ConfigError(path + "[" + std::to_string(k) + "]", "expected a number");
        v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
    }
    if (expected >= 0 && v.size() != expected) {
        throw ConfigError(path, "expected " + std::to_string(expected) + " entries, got " + std::to_string(v.size()));
    }
    return v;
}

Matrix mat_from(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path, "expected an array of rows");
    Matrix m;
    for (std::size_t r = 0; r < j.size(); ++r) {
        const Vector row = vec_from(j[r], path + "[" + std::to_string(r) + "]");
        if (r == 0) m.resize(static_cast<Eigen::Index>(j.size()), row.size());
        if (row.size() != m.cols()) throw ConfigError(path + "[" + std::to_string(r) + "]", "ragged matrix");
        m.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    return m;
}

template <typename T>
T get_as(const json& obj, const std::string& key, const std::string& path) {
    const auto& v = field(obj, key, path);
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + "." + key, "wrong type");
    }
}

void check_schema(const json& doc, const std::string& kind) {
    if (!doc.is_object()) throw ConfigError(kind, "expected an object");
    const int version = get_as<int>(doc, "schema_version", kind);
    if (version != kSchemaVersion) throw ConfigError(kind + ".schema_version", "unsupported version");
    if (get_as<std::string>(doc, "kind", kind) != kind) throw ConfigError(kind + ".kind", "expected '" + kind + "'");
}

}  // namespace

json natural_to_json(const NaturalParams& p) {
    const auto& e = p.emission;
    return {{"pi", vec(p.pi)},
            {"rates", mat(p.rates.matrix())},
            {"delta_intercept", e.delta_intercept},
            {"delta_slope", vec(e.delta_slope)},
            {"lambda_intercepts", vec(e.lambda_intercepts)},
            {"lambda_slopes", mat(e.lambda_slopes)}};
}

json theta_to_json(const ThetaSubject& theta) {
    json out;
    for (Block b : kAllBlocks) out[std::string(block_name(b))] = vec(theta.block(b));
    return out;
}

ThetaSubject theta_from_json(const json& j, const ThetaLayout& layout, const std::string& path) {
    ThetaSubject theta(layout);
    for (Block b : kAllBlocks) {
        const std::string key(block_name(b));
        theta.block(b) = vec_from(field(j, key, path), path + "." + key, layout.block_size(b));
    }
    if (!theta.values().allFinite()) throw ConfigError(path, "non-finite parameter");
    return theta;
}

json fit_to_json(const FitRecord& rec) {
    const auto& f = rec.fit;
    const auto& s = rec.spec;
    json subjects = json::array();
    for (std::size_t i = 0; i < f.theta_hat.size(); ++i) {
        json sj = {{"subject_id", rec.subject_ids.at(i)},
                   {"group", s.groups.at(i)},
                   {"theta", theta_to_json(f.theta_hat[i])},
                   {"natural", natural_to_json(to_natural(f.theta_hat[i]))}};
        if (rec.posterior.eta.rows() == static_cast<Eigen::Index>(f.theta_hat.size())) {
            sj["eta"] = vec(rec.posterior.eta.row(static_cast<Eigen::Index>(i)).transpose());
        }
        subjects.push_back(std::move(sj));
    }
    json history = json::array();
    for (const auto& h : f.residual_history) {
        history.push_back({{"iteration", h.iteration},
                           {"primal", h.primal},
                           {"dual", h.dual},
                           {"rho", h.rho},
                           {"neg_loglik", h.neg_loglik}});
    }
    json doc = {
        {"schema_version", kSchemaVersion},
        {"kind", "fit"},
        {"states", s.states},
        {"covariates", s.covariates},
        {"n_groups", s.n_groups},
        {"group_labels", rec.group_labels},
        {"hierarchy",
         {{"name", rec.hierarchy_name},
          {"initial", level_name(s.levels.initial)},
          {"rates", level_name(s.levels.rates)},
          {"intercepts", level_name(s.levels.intercepts)},
          {"slopes", level_name(s.levels.slopes)}}},
        {"converged", f.converged},
        {"n_iterations", f.n_iterations},
        {"neg_loglik", f.neg_loglik},
        {"bic", f.bic},
        {"free_parameters", free_parameter_count(s)},
        {"rho", f.rho},
        {"tol_primal", f.tol_primal},
        {"tol_dual", f.tol_dual},
        {"start_index", f.start_index},
        {"z_hat", vec(f.z_hat)},
        {"residual_history", history},
        {"subjects", subjects},
    };
    if (rec.posterior.phi.size() > 0) doc["phi"] = mat(rec.posterior.phi);
    return doc;
}

FitRecord fit_from_json(const json& doc) {
    check_schema(doc, "fit");
    FitRecord rec;
    auto& s = rec.spec;
    s.states = get_as<int>(doc, "states", "fit");
    s.covariates = get_as<int>(doc, "covariates", "fit");
    s.n_groups = get_as<int>(doc, "n_groups", "fit");
    if (s.states < 2) throw ConfigError("fit.states", "must be at least 2");
    if (s.covariates < 0 || s.n_groups < 1) throw ConfigError("fit", "bad covariate or group count");
    const auto& h = field(doc, "hierarchy", "fit");
    rec.hierarchy_name = get_as<std::string>(h, "name", "fit.hierarchy");
    try {
        s.levels.initial = parse_level(get_as<std::string>(h, "initial", "fit.hierarchy"));
        s.levels.rates = parse_level(get_as<std::string>(h, "rates", "fit.hierarchy"));
        s.levels.intercepts = parse_level(get_as<std::string>(h, "intercepts", "fit.hierarchy"));
        s.levels.slopes = parse_level(get_as<std::string>(h, "slopes", "fit.hierarchy"));
    } catch (const std::invalid_argument& e) {
        if (dynamic_cast<const ConfigError*>(&e)) throw;
        throw ConfigError("fit.hierarchy", e.what());
    }
    rec.group_labels = get_as<std::vector<std::string>>(doc, "group_labels", "fit");

    auto& f = rec.fit;
    f.converged = get_as<bool>(doc, "converged", "fit");
    f.n_iterations = get_as<int>(doc, "n_iterations", "fit");
    f.neg_loglik = get_as<double>(doc, "neg_loglik", "fit");
    f.bic = get_as<double>(doc, "bic", "fit");
    f.rho = get_as<double>(doc, "rho", "fit");
    f.tol_primal = get_as<double>(doc, "tol_primal", "fit");
    f.tol_dual = get_as<double>(doc, "tol_dual", "fit");
    f.start_index = get_as<int>(doc, "start_index", "fit");
    f.z_hat = vec_from(field(doc, "z_hat", "fit"), "fit.z_hat");
    for (const auto& r : field(doc, "residual_history", "fit")) {
        f.residual_history.push_back({get_as<int>(r, "iteration", "fit.residual_history"),
                                      get_as<double>(r, "primal", "fit.residual_history"),
                                      get_as<double>(r, "dual", "fit.residual_history"),
                                      get_as<double>(r, "rho", "fit.residual_history"),
                                      get_as<double>(r, "neg_loglik", "fit.residual_history")});
    }

    const auto& subjects = field(doc, "subjects", "fit");
    if (!subjects.is_array() || subjects.empty()) throw ConfigError("fit.subjects", "expected a non-empty array");
    const ThetaLayout layout = s.layout();
    Matrix eta(static_cast<Eigen::Index>(subjects.size()), s.states);
    bool have_eta = true;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const std::string path = "fit.subjects[" + std::to_string(i) + "]";
        const auto& sj = subjects[i];
        rec.subject_ids.push_back(get_as<std::string>(sj, "subject_id", path));
        const int g = get_as<int>(sj, "group", path);
        if (g < 1 || g > s.n_groups) throw ConfigError(path + ".group", "out of range");
        s.groups.push_back(g);
        f.theta_hat.push_back(theta_from_json(field(sj, "theta", path), layout, path + ".theta"));
        if (sj.contains("eta")) {
            eta.row(static_cast<Eigen::Index>(i)) = vec_from(sj.at("eta"), path + ".eta", s.states).transpose();
        } else {
            have_eta = false;
        }
    }
    if (static_cast<int>(rec.group_labels.size()) != s.n_groups) {
        throw ConfigError("fit.group_labels", "expected one label per group");
    }
    if (have_eta) rec.posterior.eta = eta;
    if (doc.contains("phi")) rec.posterior.phi = mat_from(doc.at("phi"), "fit.phi");
    if (f.z_hat.size() != build_constraints(s).z_dim) throw ConfigError("fit.z_hat", "length does not match the hierarchy");
    return rec;
}

json truth_to_json(const Cohort& cohort) {
    json subjects = json::array();
    for (std::size_t i = 0; i < cohort.data.size(); ++i) {
        subjects.push_back({{"subject_id", cohort.data[i].subject_id},
                            {"group", cohort.data[i].group_id},
                            {"theta", theta_to_json(cohort.truth[i])},
                            {"natural", natural_to_json(to_natural(cohort.truth[i]))}});
    }
    json groups = json::array();
    for (std::size_t g = 0; g < 2; ++g) {
        groups.push_back({{"group", g + 1}, {"pi", vec(cohort.group_pi[g])}, {"rates", mat(cohort.group_rates[g])}});
    }
    return {{"schema_version", kSchemaVersion},
            {"kind", "truth"},
            {"states", 3},
            {"weekend_slopes", vec(cohort.slopes)},
            {"groups", groups},
            {"subjects", subjects}};
}

json bootstrap_to_json(const BootstrapResult& r, const std::vector<std::string>& group_labels) {
    json intervals = json::array();
    for (std::size_t l = 0; l < r.levels.size(); ++l) {
        intervals.push_back({{"level", r.levels[l]},
                             {"phi_lower", mat(r.phi_lower[l])},
                             {"phi_upper", mat(r.phi_upper[l])},
                             {"shared_lower", vec(r.shared_lower[l])},
                             {"shared_upper", vec(r.shared_upper[l])}});
    }
    json reps = json::array();
    for (std::size_t b = 0; b < r.phi.size(); ++b) reps.push_back({{"phi", mat(r.phi[b])}, {"shared", vec(r.shared[b])}});
    return {{"schema_version", kSchemaVersion},
            {"kind", "bootstrap"},
            {"n_replicates", r.n_replicates},
            {"n_failed", r.n_failed},
            {"group_labels", group_labels},
            {"phi_hat", mat(r.phi_hat)},
            {"phi_se", mat(r.phi_se)},
            {"shared_hat", vec(r.shared_hat)},
            {"shared_se", vec(r.shared_se)},
            {"intervals", intervals},
            {"replicates", reps}};
}

BootstrapResult bootstrap_from_json(const json& doc) {
    check_schema(doc, "bootstrap");
    BootstrapResult r;
    r.n_replicates = get_as<int>(doc, "n_replicates", "bootstrap");
    r.n_failed = get_as<int>(doc, "n_failed", "bootstrap");
    r.phi_hat = mat_from(field(doc, "phi_hat", "bootstrap"), "bootstrap.phi_hat");
    r.phi_se = mat_from(field(doc, "phi_se", "bootstrap"), "bootstrap.phi_se");
    r.shared_hat = vec_from(field(doc, "shared_hat", "bootstrap"), "bootstrap.shared_hat");
    r.shared_se = vec_from(field(doc, "shared_se", "bootstrap"), "bootstrap.shared_se");
    const auto& intervals = field(doc, "intervals", "bootstrap");
    for (std::size_t l = 0; l < intervals.size(); ++l) {
        const std::string path = "bootstrap.intervals[" + std::to_string(l) + "]";
        const auto& iv = intervals[l];
        r.levels.push_back(get_as<double>(iv, "level", path));
        r.phi_lower.push_back(mat_from(field(iv, "phi_lower", path), path + ".phi_lower"));
        r.phi_upper.push_back(mat_from(field(iv, "phi_upper", path), path + ".phi_upper"));
        r.shared_lower.push_back(vec_from(field(iv, "shared_lower", path), path + ".shared_lower"));
        r.shared_upper.push_back(vec_from(field(iv, "shared_upper", path), path + ".shared_upper"));
    }
    if (doc.contains("replicates")) {
        for (const auto& rep : doc.at("replicates")) {
            r.phi.push_back(mat_from(field(rep, "phi", "bootstrap.replicates"), "bootstrap.replicates.phi"));
            r.shared.push_back(vec_from(field(rep, "shared", "bootstrap.replicates"), "bootstrap.replicates.shared"));
        }
    }
    return r;
}

namespace {

// Quotes a field only when it contains a delimiter, quote or line break.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + '"';
}

}  // namespace

void write_phi_ci_csv(std::ostream& out, const BootstrapResult& r, const std::vector<std::string>& group_labels) {
    out << "group,label,state,level,estimate,lower,upper,se\n";
    out << std::setprecision(10);
    for (std::size_t l = 0; l < r.levels.size(); ++l) {
        for (Eigen::Index j = 0; j < r.phi_hat.rows(); ++j) {
            for (Eigen::Index m = 0; m < r.phi_hat.cols(); ++m) {
                const auto label = static_cast<std::size_t>(j) < group_labels.size()
                                       ? group_labels[static_cast<std::size_t>(j)]
                                       : "group " + std::to_string(j + 1);
                out << j + 1 << ',' << csv_field(label) << ',' << m + 1 << ',' << r.levels[l] << ',' << r.phi_hat(j, m) << ','
                    << r.phi_lower[l](j, m) << ',' << r.phi_upper[l](j, m) << ',' << r.phi_se(j, m) << '\n';
            }
        }
    }
}

void write_eta_csv(std::ostream& out, const FitRecord& rec) {
    out << "subject_id,group,state,eta\n" << std::setprecision(10);
    for (Eigen::Index i = 0; i < rec.posterior.eta.rows(); ++i) {
        for (Eigen::Index m = 0; m < rec.posterior.eta.cols(); ++m) {
            out << rec.subject_ids[static_cast<std::size_t>(i)] << ',' << rec.spec.groups[static_cast<std::size_t>(i)]
                << ',' << m + 1 << ',' << rec.posterior.eta(i, m) << '\n';
        }
    }
}

void write_phi_csv(std::ostream& out, const FitRecord& rec) {
    out << "group,label,state,phi\n" << std::setprecision(10);
    for (Eigen::Index j = 0; j < rec.posterior.phi.rows(); ++j) {
        for (Eigen::Index m = 0; m < rec.posterior.phi.cols(); ++m) {
            out << j + 1 << ",\"" << rec.group_labels.at(static_cast<std::size_t>(j)) << "\"," << m + 1 << ','
                << rec.posterior.phi(j, m) << '\n';
        }
    }
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path + ": invalid JSON: " + e.what());
    }
}

void write_json_file(const std::string& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace hcthmm::app
