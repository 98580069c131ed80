#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hcthmm/model.hpp"

namespace hcthmm::app {

struct QuantileRow {
    double prob = 0.0;
    double observed = 0.0;
    double fitted = 0.0;
};

// Pooled count quantiles of the data against those of series simulated from
// the fitted parameters on the same grids (draws simulated series per subject).
std::vector<QuantileRow> quantile_table(std::span<const SubjectSeries> data, std::span<const ThetaSubject> thetas,
                                        const std::vector<double>& probs, int draws, RandomSource& rng);

// max |fitted - observed| over the table, divided by the observed count range.
double max_quantile_gap_fraction(const std::vector<QuantileRow>& rows, std::span<const SubjectSeries> data);

void write_quantile_csv(std::ostream& out, const std::vector<QuantileRow>& rows);

// One candidate of a model-selection sweep.
struct SelectionRow {
    int states = 0;
    std::string hierarchy;
    double neg_loglik = 0.0;
    long free_parameters = 0;
    double bic = 0.0;
    bool converged = false;
    int n_iterations = 0;
    bool selected = false;
    std::string error;  // non-empty when the fit failed; such rows sort last
};

// Sorts by ascending BIC and flags the minimum.
void rank_by_bic(std::vector<SelectionRow>& rows);
void write_bic_csv(std::ostream& out, const std::vector<SelectionRow>& rows);

// gnuplot scripts over the emitted CSV tables.
std::string phi_ci_gnuplot(const std::string& csv_name, int n_groups, int n_states);
std::string quantile_gnuplot(const std::string& csv_name);

}  // namespace hcthmm::app
