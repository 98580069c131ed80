#include "hcthmm/app/preprocess.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <utility>

namespace hcthmm::app {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view text, const char* field, std::size_t line) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (text.empty() || ec != std::errc() || ptr != end) {
        throw CsvError("line " + std::to_string(line) + ": " + field + " is not a valid number: '" +
                           std::string(text) + "'",
                       line);
    }
    return value;
}

struct SubjectRows {
    std::string id;
    std::vector<ActivityRecord> rows;
};

// Groups records by subject in order of first appearance, rows sorted by minute.
std::vector<SubjectRows> by_subject(const std::vector<ActivityRecord>& records) {
    std::unordered_map<std::string, std::size_t> index;
    std::vector<SubjectRows> out;
    for (const auto& r : records) {
        auto [it, inserted] = index.try_emplace(r.subject_id, out.size());
        if (inserted) out.push_back({r.subject_id, {}});
        auto& s = out[it->second];
        if (!s.rows.empty() && (s.rows.front().age != r.age || s.rows.front().sex != r.sex)) {
            throw CsvError("subject " + r.subject_id + " has inconsistent age or sex across rows", 0);
        }
        s.rows.push_back(r);
    }
    for (auto& s : out) {
        std::stable_sort(s.rows.begin(), s.rows.end(),
                         [](const ActivityRecord& a, const ActivityRecord& b) { return a.minute < b.minute; });
        for (std::size_t k = 1; k < s.rows.size(); ++k) {
            if (s.rows[k].minute == s.rows[k - 1].minute) {
                throw CsvError("duplicate minute " + std::to_string(s.rows[k].minute) + " for subject " + s.id, 0);
            }
        }
    }
    return out;
}

}  // namespace

std::vector<ActivityRecord> read_activity_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw CsvError("empty input: expected header '" + std::string(kActivityHeader) + "'", 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kActivityHeader) {
        throw CsvError("line 1: expected header '" + std::string(kActivityHeader) + "', got '" + line + "'", 1);
    }

    std::vector<ActivityRecord> out;
    std::map<std::pair<std::string, std::int64_t>, std::size_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 6) {
            throw CsvError("line " + std::to_string(line_no) + ": expected 6 fields, got " + std::to_string(fields.size()),
                           line_no);
        }
        ActivityRecord r;
        r.subject_id = std::string(fields[0]);
        if (r.subject_id.empty()) throw CsvError("line " + std::to_string(line_no) + ": empty subject_id", line_no);
        r.minute = parse_number<std::int64_t>(fields[1], "minute", line_no);
        if (r.minute < 0) throw CsvError("line " + std::to_string(line_no) + ": minute must be non-negative", line_no);
        r.count = parse_number<std::int64_t>(fields[2], "count", line_no);
        if (r.count < 0) throw CsvError("line " + std::to_string(line_no) + ": count must be non-negative", line_no);
        r.age = parse_number<double>(fields[3], "age", line_no);
        if (fields[4] == "M") {
            r.sex = Sex::Male;
        } else if (fields[4] == "F") {
            r.sex = Sex::Female;
        } else {
            throw CsvError("line " + std::to_string(line_no) + ": sex must be M or F, got '" + std::string(fields[4]) + "'",
                           line_no);
        }
        if (!fields[5].empty()) {
            const int w = parse_number<int>(fields[5], "weekend", line_no);
            if (w != 0 && w != 1) throw CsvError("line " + std::to_string(line_no) + ": weekend must be 0 or 1", line_no);
            r.weekend = w;
        }
        const auto [it, inserted] = seen.try_emplace({r.subject_id, r.minute}, line_no);
        if (!inserted) {
            throw CsvError("line " + std::to_string(line_no) + ": duplicate (subject, minute) = (" + r.subject_id + ", " +
                               std::to_string(r.minute) + "), first seen on line " + std::to_string(it->second),
                           line_no);
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ActivityRecord> read_activity_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_activity_csv(in);
}

void write_activity_csv(std::ostream& out, const std::vector<ActivityRecord>& records) {
    out << kActivityHeader << '\n';
    for (const auto& r : records) {
        std::ostringstream age;
        age << r.age;
        out << r.subject_id << ',' << r.minute << ',' << r.count << ',' << age.str() << ','
            << (r.sex == Sex::Male ? 'M' : 'F') << ',';
        if (r.weekend) out << *r.weekend;
        out << '\n';
    }
}

void PreprocessConfig::validate() const {
    if (missing_run_length < 1) throw std::invalid_argument("preprocess.missing_run_length must be positive");
    if (truncation_cap < 1) throw std::invalid_argument("preprocess.truncation_cap must be positive");
    if (min_valid_minutes < 1) throw std::invalid_argument("preprocess.min_valid_minutes must be positive");
    if (!(age_min > 0.0) || !(age_max > age_min)) {
        throw std::invalid_argument("preprocess.age_min/age_max must be positive with age_min < age_max");
    }
    if (study_start_weekday < 0 || study_start_weekday > 6) {
        throw std::invalid_argument("preprocess.study_start_weekday must lie in 0..6");
    }
}

int weekend_flag(std::int64_t minute, int study_start_weekday) {
    const std::int64_t day = minute / (24 * 60);
    const auto weekday = (study_start_weekday + day) % 7;
    return weekday >= 5 ? 1 : 0;
}

CleanedRecords clean_records(const std::vector<ActivityRecord>& records, const PreprocessConfig& config) {
    config.validate();
    CleanedRecords out;
    auto& rep = out.report;
    const auto subjects = by_subject(records);
    rep.input_subjects = static_cast<int>(subjects.size());

    for (const auto& s : subjects) {
        rep.input_minutes += static_cast<long>(s.rows.size());
        const double age = s.rows.front().age;
        if (age < config.age_min || age > config.age_max) {
            ++rep.excluded_age;
            continue;
        }

        std::vector<ActivityRecord> kept;
        kept.reserve(s.rows.size());
        long removed_runs = 0;
        long removed_minutes = 0;
        std::size_t k = 0;
        while (k < s.rows.size()) {
            if (s.rows[k].count != 0) {
                kept.push_back(s.rows[k++]);
                continue;
            }
            std::size_t end = k + 1;
            while (end < s.rows.size() && s.rows[end].count == 0 && s.rows[end].minute == s.rows[end - 1].minute + 1) ++end;
            const auto run = static_cast<long>(end - k);
            if (run >= config.missing_run_length) {
                ++removed_runs;
                removed_minutes += run;
            } else {
                kept.insert(kept.end(), s.rows.begin() + static_cast<std::ptrdiff_t>(k),
                            s.rows.begin() + static_cast<std::ptrdiff_t>(end));
            }
            k = end;
        }

        long truncated = 0;
        for (auto& r : kept) {
            if (r.count > config.truncation_cap) {
                r.count = config.truncation_cap;
                ++truncated;
            }
            if (!r.weekend) r.weekend = weekend_flag(r.minute, config.study_start_weekday);
        }

        rep.removed_runs += removed_runs;
        rep.removed_minutes += removed_minutes;
        rep.truncated_counts += truncated;
        if (static_cast<long>(kept.size()) < config.min_valid_minutes) {
            ++rep.excluded_min_minutes;
            continue;
        }
        ++rep.output_subjects;
        rep.output_minutes += static_cast<long>(kept.size());
        out.records.insert(out.records.end(), kept.begin(), kept.end());
    }
    return out;
}

int subgroup_of(Sex sex, double age) {
    const int older = age >= 40.0 ? 1 : 0;
    return (sex == Sex::Male ? 1 : 3) + older;
}

std::string subgroup_label(int subgroup) {
    switch (subgroup) {
        case 1: return "male, age < 40";
        case 2: return "male, age >= 40";
        case 3: return "female, age < 40";
        case 4: return "female, age >= 40";
        default: throw std::invalid_argument("unknown subgroup " + std::to_string(subgroup));
    }
}

ActivityCohort to_cohort(const std::vector<ActivityRecord>& records, const PreprocessConfig& config) {
    const auto subjects = by_subject(records);
    if (subjects.empty()) throw std::invalid_argument("no subjects in input");
    ActivityCohort out;
    std::vector<int> present(5, 0);
    for (const auto& s : subjects) {
        const int g = subgroup_of(s.rows.front().sex, s.rows.front().age);
        out.subgroup.push_back(g);
        present[static_cast<std::size_t>(g)] = 1;
    }
    std::vector<int> compact(5, 0);
    for (int g = 1, next = 1; g <= 4; ++g) {
        if (present[static_cast<std::size_t>(g)]) {
            compact[static_cast<std::size_t>(g)] = next++;
            out.group_labels.push_back(subgroup_label(g));
        }
    }

    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto& rows = subjects[i].rows;
        SubjectSeries s;
        s.subject_id = subjects[i].id;
        s.group_id = compact[static_cast<std::size_t>(out.subgroup[i])];
        s.times.reserve(rows.size());
        s.counts.reserve(rows.size());
        s.covariates.resize(static_cast<Eigen::Index>(rows.size()), 1);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            s.times.push_back(static_cast<double>(rows[k].minute));
            s.counts.push_back(rows[k].count);
            s.covariates(static_cast<Eigen::Index>(k), 0) =
                rows[k].weekend ? *rows[k].weekend : weekend_flag(rows[k].minute, config.study_start_weekday);
        }
        s.validate();
        out.series.push_back(std::move(s));
    }
    return out;
}

std::vector<ActivityRecord> to_records(const std::vector<SubjectSeries>& series, const std::vector<Sex>& group_sex,
                                       const std::vector<double>& group_age) {
    std::vector<ActivityRecord> out;
    for (const auto& s : series) {
        const auto g = static_cast<std::size_t>(s.group_id - 1);
        if (s.group_id < 1 || g >= group_sex.size() || g >= group_age.size()) {
            throw std::invalid_argument("to_records: no baseline fields for group " + std::to_string(s.group_id));
        }
        if (s.covariate_dim() != 1) throw std::invalid_argument("to_records: expected the weekend indicator as the only covariate");
        for (std::size_t k = 0; k < s.size(); ++k) {
            ActivityRecord r;
            r.subject_id = s.subject_id;
            r.minute = static_cast<std::int64_t>(std::llround(s.times[k]));
            if (static_cast<double>(r.minute) != s.times[k]) {
                throw std::invalid_argument("to_records: time " + std::to_string(s.times[k]) + " is not a whole minute");
            }
            r.count = s.counts[k];
            r.age = group_age[g];
            r.sex = group_sex[g];
            r.weekend = s.covariates(static_cast<Eigen::Index>(k), 0) != 0.0 ? 1 : 0;
            out.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace hcthmm::app
