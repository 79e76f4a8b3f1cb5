#pragma once

#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lspt/errors.hpp"
#include "lspt/projection.hpp"

namespace lspt {

// One weighted cost contribution tied to a diagnostic station.
struct CostTerm {
    int station_id = 0;
    double weight = 1.0;
};

// Which measurable channels enter the tuning cost. Deflecting-cavity terms
// compare the full (z, E) grid; spectrum terms compare only the 1D energy
// profile derived from the (x, E) grid.
struct CostSpec {
    std::vector<CostTerm> tcav_terms;
    std::vector<CostTerm> spectrum_terms;

    void validate() const {
        if (tcav_terms.empty() && spectrum_terms.empty())
            throw ConfigError("cost: need at least one term");
        double total = 0.0;
        for (const auto* terms : {&tcav_terms, &spectrum_terms})
            for (const CostTerm& t : *terms) {
                if (!(t.weight >= 0.0)) throw ConfigError("cost: weights must be >= 0");
                total += t.weight;
            }
        if (!(total > 0.0)) throw ConfigError("cost: weights must not all be zero");
    }

    std::vector<int> stations() const {
        std::set<int> ids;
        for (const CostTerm& t : tcav_terms) ids.insert(t.station_id);
        for (const CostTerm& t : spectrum_terms) ids.insert(t.station_id);
        return {ids.begin(), ids.end()};
    }
};

// Discretized L1 distance sum |a_i - b_i|. For normalized densities this is
// symmetric, zero iff equal, and bounded by 2.
template <typename TA, typename TB>
double l1_distance(std::span<const TA> a, std::span<const TB> b) {
    if (a.empty() || a.size() != b.size()) throw ConfigError("cost: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return acc;
}

// Cost of a predicted (z, E) grid against the measured one.
template <typename TA, typename TB>
double cost_tcav(std::span<const TA> pred_ze, std::span<const TB> meas_ze) {
    return l1_distance(pred_ze, meas_ze);
}

// 1D energy profile of an (x, E) grid: sum over the x rows.
template <typename T>
std::vector<double> spectrum_of(std::span<const T> grid_xe, int grid) {
    if (grid_xe.size() != static_cast<size_t>(grid) * grid)
        throw ConfigError("cost: spectrum grid size mismatch");
    std::vector<double> m(static_cast<size_t>(grid), 0.0);
    for (int a = 0; a < grid; ++a)
        for (int b = 0; b < grid; ++b)
            m[static_cast<size_t>(b)] +=
                static_cast<double>(grid_xe[static_cast<size_t>(a) * grid + b]);
    return m;
}

// Cost of a predicted (x, E) grid against a measured 1D energy spectrum.
template <typename T>
double cost_spectrum(std::span<const T> pred_xe, int grid, std::span<const double> meas_spectrum) {
    const std::vector<double> pred = spectrum_of(pred_xe, grid);
    return l1_distance<double, double>(pred, meas_spectrum);
}

// Current "measured" channels for the stations a cost references.
struct Measurements {
    int grid = 0;
    std::map<int, std::vector<double>> tcav;     // station id -> (z, E) grid
    std::map<int, std::vector<double>> spectra;  // station id -> 1D energy spectrum
};

namespace detail {

inline int require_station(const std::vector<int>& station_ids, int station_id) {
    for (size_t s = 0; s < station_ids.size(); ++s)
        if (station_ids[s] == station_id) return static_cast<int>(s);
    throw ConfigError("cost: station " + std::to_string(station_id) +
                      " not present in prediction stack");
}

}  // namespace detail

// Channel slice of a decoded stack laid out [station][channel][G][G] in the
// order of station_ids.
template <typename T>
std::span<const T> stack_channel(std::span<const T> decoded, const std::vector<int>& station_ids,
                                 int grid, int station_index, int channel) {
    const size_t elems = static_cast<size_t>(grid) * grid;
    if (decoded.size() != station_ids.size() * kNumProjections * elems)
        throw ConfigError("cost: decoded stack size mismatch");
    const size_t off =
        (static_cast<size_t>(station_index) * kNumProjections + static_cast<size_t>(channel)) *
        elems;
    return decoded.subspan(off, elems);
}

// Weighted sum of all term costs evaluated on a decoded channel stack.
template <typename T>
double combined_cost(const CostSpec& spec, std::span<const T> decoded,
                     const std::vector<int>& station_ids, int grid, const Measurements& meas) {
    spec.validate();
    double total = 0.0;
    for (const CostTerm& term : spec.tcav_terms) {
        const int s = detail::require_station(station_ids, term.station_id);
        auto it = meas.tcav.find(term.station_id);
        if (it == meas.tcav.end())
            throw ConfigError("cost: no measured (z, E) grid for station " +
                              std::to_string(term.station_id));
        total += term.weight *
                 cost_tcav(stack_channel(decoded, station_ids, grid, s, kChannelZE),
                           std::span<const double>(it->second));
    }
    for (const CostTerm& term : spec.spectrum_terms) {
        const int s = detail::require_station(station_ids, term.station_id);
        auto it = meas.spectra.find(term.station_id);
        if (it == meas.spectra.end())
            throw ConfigError("cost: no measured spectrum for station " +
                              std::to_string(term.station_id));
        total += term.weight *
                 cost_spectrum(stack_channel(decoded, station_ids, grid, s, kChannelXE), grid,
                               std::span<const double>(it->second));
    }
    return total;
}

// Global channel indices (station_index * 15 + channel) that enter the cost.
inline std::vector<int> measured_channel_indices(const CostSpec& spec,
                                                 const std::vector<int>& station_ids) {
    std::set<int> out;
    for (const CostTerm& t : spec.tcav_terms)
        out.insert(detail::require_station(station_ids, t.station_id) * kNumProjections +
                   kChannelZE);
    for (const CostTerm& t : spec.spectrum_terms)
        out.insert(detail::require_station(station_ids, t.station_id) * kNumProjections +
                   kChannelXE);
    return {out.begin(), out.end()};
}

}  // namespace lspt
