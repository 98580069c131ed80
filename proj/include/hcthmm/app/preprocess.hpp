#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcthmm/model.hpp"

namespace hcthmm::app {

enum class Sex { Male, Female };

// One row of the activity CSV:
//   subject_id,minute,count,age,sex,weekend
// minute is an integer offset from study start, sex is M or F and weekend is
// 0 or 1. An empty weekend field is derived from the minute index.
struct ActivityRecord {
    std::string subject_id;
    std::int64_t minute = 0;
    std::int64_t count = 0;
    double age = 0.0;
    Sex sex = Sex::Male;
    std::optional<int> weekend;

    bool operator==(const ActivityRecord&) const = default;
};

// Malformed input. line() is 1-based and counts the header; 0 when the
// problem is not tied to one line.
class CsvError : public std::runtime_error {
public:
    CsvError(const std::string& what, std::size_t line) : std::runtime_error(what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

inline constexpr const char* kActivityHeader = "subject_id,minute,count,age,sex,weekend";

std::vector<ActivityRecord> read_activity_csv(std::istream& in);
std::vector<ActivityRecord> read_activity_csv_file(const std::string& path);
void write_activity_csv(std::ostream& out, const std::vector<ActivityRecord>& records);

struct PreprocessConfig {
    int missing_run_length = 20;   // zero runs at least this long are treated as missing
    std::int64_t truncation_cap = 1500;
    int min_valid_minutes = 500;
    double age_min = 20.0;
    double age_max = 60.0;
    int study_start_weekday = 0;   // 0 = Monday ... 6 = Sunday

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct PreprocessReport {
    int input_subjects = 0;
    int excluded_age = 0;
    int excluded_min_minutes = 0;
    int output_subjects = 0;
    long input_minutes = 0;
    long removed_runs = 0;
    long removed_minutes = 0;
    long truncated_counts = 0;
    long output_minutes = 0;
};

struct CleanedRecords {
    std::vector<ActivityRecord> records;  // sorted by subject (first appearance), then minute
    PreprocessReport report;
};

// Age filter, zero-run removal, truncation and the minimum-wear filter, in
// that order. A zero run is a maximal stretch of zero counts at consecutive
// minute indices; removed minutes leave gaps in the time grid. Weekend flags
// are filled in on the output. Throws CsvError on duplicate (subject, minute)
// pairs or inconsistent baseline fields within a subject.
CleanedRecords clean_records(const std::vector<ActivityRecord>& records, const PreprocessConfig& config);

// 1 = male under 40, 2 = male 40 and over, 3 = female under 40, 4 = female 40 and over.
int subgroup_of(Sex sex, double age);
std::string subgroup_label(int subgroup);

int weekend_flag(std::int64_t minute, int study_start_weekday);

struct ActivityCohort {
    std::vector<SubjectSeries> series;  // covariate: weekend indicator
    std::vector<int> subgroup;          // 1..4 per subject, before compaction
    std::vector<std::string> group_labels;  // label of each compacted group id
};

// Groups records into series. Subgroups that occur are renumbered 1..J in
// increasing subgroup order so empty subgroups do not enter the hierarchy.
ActivityCohort to_cohort(const std::vector<ActivityRecord>& records, const PreprocessConfig& config = {});

// Inverse of to_cohort for simulated data: writes records with the given
// baseline fields per group (index group_id - 1).
std::vector<ActivityRecord> to_records(const std::vector<SubjectSeries>& series, const std::vector<Sex>& group_sex,
                                       const std::vector<double>& group_age);

}  // namespace hcthmm::app
