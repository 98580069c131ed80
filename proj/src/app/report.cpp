#include "hcthmm/app/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "hcthmm/bootstrap.hpp"
#include "hcthmm/simulate.hpp"

namespace hcthmm::app {

std::vector<QuantileRow> quantile_table(std::span<const SubjectSeries> data, std::span<const ThetaSubject> thetas,
                                        const std::vector<double>& probs, int draws, RandomSource& rng) {
    if (data.size() != thetas.size()) throw std::invalid_argument("quantile_table: data and parameters differ in size");
    if (draws < 1) throw std::invalid_argument("quantile_table: draws must be positive");
    std::vector<double> observed, fitted;
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (auto y : data[i].counts) observed.push_back(static_cast<double>(y));
        for (int d = 0; d < draws; ++d) {
            const auto sim = simulate_series(data[i], thetas[i], rng);
            for (auto y : sim.counts) fitted.push_back(static_cast<double>(y));
        }
    }
    if (observed.empty()) throw std::invalid_argument("quantile_table: no observations");
    std::sort(observed.begin(), observed.end());
    std::sort(fitted.begin(), fitted.end());
    std::vector<QuantileRow> rows;
    rows.reserve(probs.size());
    for (double p : probs) rows.push_back({p, sample_quantile(observed, p), sample_quantile(fitted, p)});
    return rows;
}

double max_quantile_gap_fraction(const std::vector<QuantileRow>& rows, std::span<const SubjectSeries> data) {
    std::int64_t lo = std::numeric_limits<std::int64_t>::max();
    std::int64_t hi = std::numeric_limits<std::int64_t>::min();
    for (const auto& s : data) {
        for (auto y : s.counts) {
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
    }
    if (hi <= lo) throw std::invalid_argument("max_quantile_gap_fraction: observed counts have zero range");
    double gap = 0.0;
    for (const auto& r : rows) gap = std::max(gap, std::abs(r.fitted - r.observed));
    return gap / static_cast<double>(hi - lo);
}

void write_quantile_csv(std::ostream& out, const std::vector<QuantileRow>& rows) {
    out << "prob,observed,fitted\n" << std::setprecision(10);
    for (const auto& r : rows) out << r.prob << ',' << r.observed << ',' << r.fitted << '\n';
}

void rank_by_bic(std::vector<SelectionRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const SelectionRow& a, const SelectionRow& b) {
        if (a.error.empty() != b.error.empty()) return a.error.empty();
        return a.bic < b.bic;
    });
    for (auto& r : rows) r.selected = false;
    if (!rows.empty() && rows.front().error.empty()) rows.front().selected = true;
}

void write_bic_csv(std::ostream& out, const std::vector<SelectionRow>& rows) {
    out << "states,hierarchy,neg_loglik,free_parameters,bic,converged,n_iterations,selected,error\n"
        << std::setprecision(12);
    for (const auto& r : rows) {
        out << r.states << ',' << r.hierarchy << ',';
        if (r.error.empty()) {
            out << r.neg_loglik << ',' << r.free_parameters << ',' << r.bic;
        } else {
            out << ",,";
        }
        std::string err = r.error;
        std::replace(err.begin(), err.end(), '"', '\'');
        out << ',' << (r.converged ? 1 : 0) << ',' << r.n_iterations << ',' << (r.selected ? 1 : 0) << ",\"" << err
            << "\"\n";
    }
}

std::string phi_ci_gnuplot(const std::string& csv_name, int n_groups, int n_states) {
    std::ostringstream s;
    s << "# time in state by group with bootstrap intervals\n"
      << "set datafile separator ','\n"
      << "set key autotitle columnhead\n"
      << "set yrange [0:1]\n"
      << "set xrange [0.5:" << n_states + 0.5 << "]\n"
      << "set xlabel 'state'\nset ylabel 'proportion of time'\n"
      << "set terminal pngcairo size 900,600\nset output 'phi_ci.png'\n"
      << "plot \\\n";
    for (int j = 1; j <= n_groups; ++j) {
        s << "  '" << csv_name << "' using ($3+" << (j - 0.5 * (n_groups + 1)) * 0.1 << "):($1==" << j
          << "?$5:1/0):6:7 with yerrorbars title 'group " << j << "'" << (j < n_groups ? ", \\\n" : "\n");
    }
    return s.str();
}

std::string quantile_gnuplot(const std::string& csv_name) {
    std::ostringstream s;
    s << "# fitted versus observed count quantiles\n"
      << "set datafile separator ','\n"
      << "set xlabel 'observed quantile'\nset ylabel 'fitted quantile'\n"
      << "set terminal pngcairo size 700,700\nset output 'quantiles.png'\n"
      << "plot '" << csv_name << "' using 2:3 skip 1 with points pt 7 title 'quantiles', x with lines title 'y = x'\n";
    return s.str();
}

}  // namespace hcthmm::app
