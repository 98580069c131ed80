#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcthmm/admm.hpp"
#include "hcthmm/bootstrap.hpp"
#include "hcthmm/inference.hpp"
#include "hcthmm/simulate.hpp"

namespace hcthmm::app {

// A fitted model together with everything needed to use it again.
struct FitRecord {
    std::string hierarchy_name;
    HierarchySpec spec;
    std::vector<std::string> subject_ids;
    std::vector<std::string> group_labels;
    FitResult fit;
    PosteriorSummary posterior;
};

nlohmann::json natural_to_json(const NaturalParams& params);
nlohmann::json theta_to_json(const ThetaSubject& theta);
ThetaSubject theta_from_json(const nlohmann::json& j, const ThetaLayout& layout, const std::string& path);

nlohmann::json fit_to_json(const FitRecord& record);
// Throws ConfigError with a field path on schema violations.
FitRecord fit_from_json(const nlohmann::json& doc);

nlohmann::json truth_to_json(const Cohort& cohort);

nlohmann::json bootstrap_to_json(const BootstrapResult& result, const std::vector<std::string>& group_labels);
BootstrapResult bootstrap_from_json(const nlohmann::json& doc);

// Tidy table: group,state,level,estimate,lower,upper,se (state is 1-based).
void write_phi_ci_csv(std::ostream& out, const BootstrapResult& result, const std::vector<std::string>& group_labels);
// subject_id,group,state,eta
void write_eta_csv(std::ostream& out, const FitRecord& record);
// group,label,state,phi
void write_phi_csv(std::ostream& out, const FitRecord& record);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& doc);

}  // namespace hcthmm::app
