#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "lspt/beam.hpp"
#include "lspt/errors.hpp"

namespace lspt {

// The 15 unique coordinate pairs over (x, x', y, y', z, E), in fixed channel
// order: (0,1) (0,2) (0,3) (0,4) (0,5) (1,2) (1,3) (1,4) (1,5) (2,3) (2,4)
// (2,5) (3,4) (3,5) (4,5). Channel 14 is the longitudinal phase space (z, E);
// channel 4 is (x, E); channel 1 is (x, y).
constexpr int kNumProjections = 15;
constexpr std::array<std::pair<int, int>, kNumProjections> kProjectionPairs = {{
    {0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5},
    {1, 2}, {1, 3}, {1, 4}, {1, 5},
    {2, 3}, {2, 4}, {2, 5},
    {3, 4}, {3, 5}, {4, 5},
}};
constexpr int kChannelXY = 1;   // rho_13
constexpr int kChannelXE = 4;   // rho_16
constexpr int kChannelZE = 14;  // rho_56

inline int channel_for_pair(int i, int j) {
    for (int c = 0; c < kNumProjections; ++c)
        if (kProjectionPairs[c].first == i && kProjectionPairs[c].second == j) return c;
    throw ConfigError("projection: no channel for pair");
}

struct AxisRange {
    double lo = 0.0;
    double hi = 1.0;
};

// Frozen per-station, per-coordinate histogram ranges plus the input-image
// (x, y) ranges. Computed once from a pilot batch and stored with every
// dataset and checkpoint so all grids share identical axes.
struct AxisTable {
    std::vector<int> station_ids;
    std::vector<std::array<AxisRange, 6>> station_axes;  // one entry per station
    std::array<AxisRange, 2> input_axes{};               // x, y at injection

    int station_index(int station_id) const {
        for (size_t s = 0; s < station_ids.size(); ++s)
            if (station_ids[s] == station_id) return static_cast<int>(s);
        throw ConfigError("axis table: unknown station id " + std::to_string(station_id));
    }
};

// Normalized 2D histogram of coordinate pair (i, j), i < j, both 0-based.
// Out-of-range particles are clamped into the edge bins so each grid always
// carries total mass 1.
inline std::vector<double> project(const ParticleEnsemble& beam, int i, int j,
                                   const AxisRange& range_i, const AxisRange& range_j, int grid) {
    if (grid < 2) throw ConfigError("projection: grid size must be >= 2");
    if (i < 0 || j > 5 || i >= j) throw ConfigError("projection: need 0 <= i < j <= 5");
    if (!(range_i.lo < range_i.hi) || !(range_j.lo < range_j.hi) ||
        !std::isfinite(range_i.lo) || !std::isfinite(range_i.hi) ||
        !std::isfinite(range_j.lo) || !std::isfinite(range_j.hi))
        throw ConfigError("projection: axis range must be finite with lo < hi");

    const double wi = (range_i.hi - range_i.lo) / grid;
    const double wj = (range_j.hi - range_j.lo) / grid;
    std::vector<double> counts(static_cast<size_t>(grid) * grid, 0.0);
    for (const Particle& p : beam.coords) {
        int a = static_cast<int>(std::floor((p.coord(i) - range_i.lo) / wi));
        int b = static_cast<int>(std::floor((p.coord(j) - range_j.lo) / wj));
        a = std::clamp(a, 0, grid - 1);
        b = std::clamp(b, 0, grid - 1);
        counts[static_cast<size_t>(a) * grid + b] += 1.0;
    }
    const double inv_n = 1.0 / static_cast<double>(beam.n_particles());
    for (double& c : counts) c *= inv_n;
    return counts;
}

// Stack of all 15 projections at every station, channel order as above.
struct ProjectionSet {
    std::vector<int> station_ids;
    int grid = 0;
    std::vector<double> grids;  // [station][channel][grid][grid]

    size_t grid_elems() const { return static_cast<size_t>(grid) * grid; }

    std::span<const double> at(int station_index, int channel) const {
        const size_t off =
            (static_cast<size_t>(station_index) * kNumProjections + channel) * grid_elems();
        return {grids.data() + off, grid_elems()};
    }
    std::span<double> at(int station_index, int channel) {
        const size_t off =
            (static_cast<size_t>(station_index) * kNumProjections + channel) * grid_elems();
        return {grids.data() + off, grid_elems()};
    }
};

inline ProjectionSet all_projections(const std::map<int, ParticleEnsemble>& snapshots,
                                     const AxisTable& axes, int grid) {
    ProjectionSet set;
    set.grid = grid;
    set.station_ids = axes.station_ids;
    set.grids.resize(axes.station_ids.size() * kNumProjections * static_cast<size_t>(grid) *
                     grid);
    for (size_t s = 0; s < axes.station_ids.size(); ++s) {
        auto it = snapshots.find(axes.station_ids[s]);
        if (it == snapshots.end())
            throw ConfigError("projection: missing snapshot for station " +
                              std::to_string(axes.station_ids[s]));
        const auto& ranges = axes.station_axes[s];
        for (int c = 0; c < kNumProjections; ++c) {
            const auto [i, j] = kProjectionPairs[c];
            std::vector<double> g = project(it->second, i, j, ranges[i], ranges[j], grid);
            std::copy(g.begin(), g.end(), set.at(static_cast<int>(s), c).begin());
        }
    }
    return set;
}

// Marginal over one axis of a G x G grid. axis 0 sums out the first (row)
// coordinate, axis 1 the second.
inline std::vector<double> marginal(std::span<const double> grid2d, int grid, int axis) {
    if (grid2d.size() != static_cast<size_t>(grid) * grid)
        throw ConfigError("marginal: grid size mismatch");
    std::vector<double> m(static_cast<size_t>(grid), 0.0);
    for (int a = 0; a < grid; ++a)
        for (int b = 0; b < grid; ++b) {
            const double v = grid2d[static_cast<size_t>(a) * grid + b];
            m[axis == 0 ? b : a] += v;
        }
    return m;
}

// 1D energy-spread spectrum rho(E): the (x, E) grid summed over x.
inline std::vector<double> energy_spectrum(std::span<const double> grid_xe, int grid) {
    return marginal(grid_xe, grid, 0);
}

}  // namespace lspt
