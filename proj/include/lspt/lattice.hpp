#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <variant>
#include <vector>

#include "lspt/beam.hpp"
#include "lspt/errors.hpp"

namespace lspt {

struct Drift {
    double length;  // m
};

// Thin lens sandwiched between two half-drifts; per-plane determinant 1.
// k1 > 0 focuses in x and defocuses in y.
struct Quad {
    double length;  // m
    double k1;      // 1/m^2
};

// delta += v * cos(phase + wavenumber * z). `section` 1 or 2 marks elements
// modulated by the machine parameters (0 = fixed).
struct Rf {
    double v;           // relative energy gain
    double phase;       // rad
    double wavenumber;  // rad/m
    int section = 0;
};

// z += r56 * delta + t566 * delta^2
struct Chicane {
    double r56;   // m
    double t566;  // m
};

// Head-to-tail ramp: particles sorted by z descending (head first) lose
// delta proportional to their rank: delta -= kappa * charge * rank / N.
struct WakeSurrogate {
    double kappa;  // 1/C
};

struct Marker {
    int station_id;
};

using LatticeElement = std::variant<Drift, Quad, Rf, Chicane, WakeSurrogate, Marker>;
using Lattice = std::vector<LatticeElement>;

namespace detail {

inline void apply_in_place(const Drift& e, ParticleEnsemble& beam) {
    for (Particle& p : beam.coords) {
        p.x += e.length * p.xp;
        p.y += e.length * p.yp;
    }
}

inline void apply_in_place(const Quad& e, ParticleEnsemble& beam) {
    const double half = 0.5 * e.length;
    const double kick = e.k1 * e.length;
    for (Particle& p : beam.coords) {
        p.x += half * p.xp;
        p.y += half * p.yp;
        p.xp -= kick * p.x;
        p.yp += kick * p.y;
        p.x += half * p.xp;
        p.y += half * p.yp;
    }
}

inline void apply_in_place(const Rf& e, ParticleEnsemble& beam) {
    for (Particle& p : beam.coords)
        p.delta += e.v * std::cos(e.phase + e.wavenumber * p.z);
}

inline void apply_in_place(const Chicane& e, ParticleEnsemble& beam) {
    for (Particle& p : beam.coords)
        p.z += e.r56 * p.delta + e.t566 * p.delta * p.delta;
}

inline void apply_in_place(const WakeSurrogate& e, ParticleEnsemble& beam) {
    const size_t n = beam.n_particles();
    std::vector<uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        return beam.coords[a].z > beam.coords[b].z;
    });
    const double unit = e.kappa * beam.charge / static_cast<double>(n);
    for (size_t rank = 0; rank < n; ++rank)
        beam.coords[order[rank]].delta -= unit * static_cast<double>(rank);
}

inline void apply_in_place(const Marker&, ParticleEnsemble&) {}

}  // namespace detail

inline ParticleEnsemble apply_element(const LatticeElement& elem, ParticleEnsemble beam) {
    std::visit([&](const auto& e) { detail::apply_in_place(e, beam); }, elem);
    return beam;
}

inline void validate_lattice(const Lattice& lattice) {
    std::set<int> stations;
    for (const LatticeElement& elem : lattice) {
        if (const Drift* d = std::get_if<Drift>(&elem); d && d->length < 0.0)
            throw ConfigError("lattice: drift length must be >= 0");
        if (const Quad* q = std::get_if<Quad>(&elem); q && q->length < 0.0)
            throw ConfigError("lattice: quad length must be >= 0");
        if (const Marker* m = std::get_if<Marker>(&elem)) {
            if (!stations.insert(m->station_id).second)
                throw ConfigError("lattice: duplicate station id " +
                                  std::to_string(m->station_id));
        }
    }
}

inline std::vector<int> lattice_station_ids(const Lattice& lattice) {
    std::vector<int> ids;
    for (const LatticeElement& elem : lattice)
        if (const Marker* m = std::get_if<Marker>(&elem)) ids.push_back(m->station_id);
    return ids;
}

// Applies the machine parameters to the section-tagged RF elements:
// amplitude scaled by l{1,2}_amplitude, phase shifted by l{1,2}_phase.
inline Lattice modulated_lattice(const Lattice& lattice, const MachineParams& params) {
    Lattice out = lattice;
    for (LatticeElement& elem : out) {
        if (Rf* rf = std::get_if<Rf>(&elem)) {
            if (rf->section == 1) {
                rf->v *= params.l1_amplitude;
                rf->phase += params.l1_phase;
            } else if (rf->section == 2) {
                rf->v *= params.l2_amplitude;
                rf->phase += params.l2_phase;
            }
        }
    }
    return out;
}

// Tracks the beam through the lattice and snapshots it at every marker,
// in lattice order. Bit-identical for identical inputs.
inline std::map<int, ParticleEnsemble> track(const Lattice& lattice,
                                             const ParticleEnsemble& beam,
                                             const MachineParams& params) {
    validate_lattice(lattice);
    if (lattice_station_ids(lattice).empty())
        throw ConfigError("lattice: needs at least one marker");
    const Lattice mod = modulated_lattice(lattice, params);
    std::map<int, ParticleEnsemble> snapshots;
    ParticleEnsemble state = beam;
    for (const LatticeElement& elem : mod) {
        std::visit([&](const auto& e) { detail::apply_in_place(e, state); }, elem);
        if (const Marker* m = std::get_if<Marker>(&elem)) snapshots[m->station_id] = state;
    }
    return snapshots;
}

}  // namespace lspt
