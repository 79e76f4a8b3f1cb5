#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lspt/errors.hpp"
#include "lspt/rng.hpp"

namespace lspt {

// One macroparticle: transverse position/slope, longitudinal position and
// relative energy deviation delta = (E - E_ref)/E_ref.
struct Particle {
    double x;      // m
    double xp;     // rad, p_x/p_z
    double y;      // m
    double yp;     // rad, p_y/p_z
    double z;      // m
    double delta;  // dimensionless

    double coord(int i) const {
        switch (i) {
            case 0: return x;
            case 1: return xp;
            case 2: return y;
            case 3: return yp;
            case 4: return z;
            default: return delta;
        }
    }
};

struct ParticleEnsemble {
    std::vector<Particle> coords;
    double charge = 0.0;  // C

    size_t n_particles() const { return coords.size(); }

    void validate() const {
        if (coords.empty()) throw ConfigError("ensemble: needs at least one particle");
        if (!(charge > 0.0)) throw ConfigError("ensemble: charge must be positive");
        for (const Particle& p : coords)
            for (int i = 0; i < 6; ++i)
                if (!std::isfinite(p.coord(i)))
                    throw NumericError("ensemble: non-finite particle coordinate");
    }
};

// The 7 tunable accelerator and beam parameters.
struct MachineParams {
    double x_offset = 0.0;      // m
    double y_offset = 0.0;      // m
    double charge = 1e-9;       // C
    double l1_amplitude = 1.0;  // relative scale on section-1 RF voltage
    double l1_phase = 0.0;      // rad added to section-1 RF phase
    double l2_amplitude = 1.0;
    double l2_phase = 0.0;

    static constexpr int kCount = 7;

    std::array<double, kCount> to_array() const {
        return {x_offset, y_offset, charge, l1_amplitude, l1_phase, l2_amplitude, l2_phase};
    }

    static MachineParams from_array(const std::array<double, kCount>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
    }

    static const std::array<std::string, kCount>& names() {
        static const std::array<std::string, kCount> n = {
            "x_offset", "y_offset", "charge", "l1_amplitude", "l1_phase",
            "l2_amplitude", "l2_phase"};
        return n;
    }
};

// Input-beam generator configuration. The beam is a mixture of 1 or 2
// Gaussian blobs. For two-blob beams the blob separation, weight split and
// per-blob size factor are drawn per seed from the ranges below, which is
// how "unknown input beam structure" enters the data. Blob centers are
// recentered so the weighted mean stays at (x_offset, y_offset, 0, ...).
// The z separation is mirrored into x (dx = xz_coupling * dz) so the
// longitudinal two-bunch structure is visible in the measured (x, y) input
// image and therefore learnable.
struct GeneratorConfig {
    int n_particles = 20000;
    double sigma_x = 1e-3;       // m
    double sigma_xp = 2e-4;      // rad
    double sigma_y = 1e-3;       // m
    double sigma_yp = 2e-4;      // rad
    double sigma_z = 4e-4;       // m
    double sigma_delta = 1e-3;
    int n_blobs = 1;             // 1 or 2
    double sep_z_lo = 6e-4;      // m, two-blob z separation range
    double sep_z_hi = 1.8e-3;
    double weight_lo = 0.35;     // first-blob weight range
    double weight_hi = 0.65;
    double scale_lo = 0.8;       // per-blob sigma factor range
    double scale_hi = 1.25;
    double xz_coupling = 0.6;    // dx = xz_coupling * dz
    double sep_y_jitter = 3e-4;  // m, extra random y split

    void validate() const {
        if (n_particles <= 0) throw ConfigError("generator: n_particles must be positive");
        const double sigmas[] = {sigma_x, sigma_xp, sigma_y, sigma_yp, sigma_z, sigma_delta};
        for (double s : sigmas)
            if (!(s > 0.0)) throw ConfigError("generator: sigmas must be positive");
        if (n_blobs < 1 || n_blobs > 2) throw ConfigError("generator: n_blobs must be 1 or 2");
        if (!(sep_z_lo <= sep_z_hi) || !(weight_lo <= weight_hi) || !(scale_lo <= scale_hi))
            throw ConfigError("generator: invalid jitter range");
        if (!(weight_lo > 0.0) || !(weight_hi < 1.0))
            throw ConfigError("generator: blob weights must stay inside (0, 1)");
        if (!(scale_lo > 0.0)) throw ConfigError("generator: scale range must be positive");
    }
};

// Samples the beam entering the lattice. Deterministic for a fixed seed.
inline ParticleEnsemble sample_input_beam(const MachineParams& params,
                                          const GeneratorConfig& gen, uint64_t seed) {
    gen.validate();
    if (!(params.charge > 0.0)) throw ConfigError("params: charge must be positive");
    Rng rng(seed);

    struct Blob {
        double w, cx, cy, cz, scale;
    };
    std::array<Blob, 2> blobs{};
    int n_blobs = gen.n_blobs;
    if (n_blobs == 1) {
        blobs[0] = {1.0, 0.0, 0.0, 0.0, 1.0};
    } else {
        const double w = rng.uniform(gen.weight_lo, gen.weight_hi);
        const double dz = rng.uniform(gen.sep_z_lo, gen.sep_z_hi);
        const double dx = gen.xz_coupling * dz;
        const double dy = rng.uniform(-gen.sep_y_jitter, gen.sep_y_jitter);
        const double s0 = rng.uniform(gen.scale_lo, gen.scale_hi);
        const double s1 = rng.uniform(gen.scale_lo, gen.scale_hi);
        // Centers at -(1-w)*sep and +w*sep keep the weighted mean at zero.
        blobs[0] = {w, -(1.0 - w) * dx, -(1.0 - w) * dy, -(1.0 - w) * dz, s0};
        blobs[1] = {1.0 - w, w * dx, w * dy, w * dz, s1};
    }

    ParticleEnsemble beam;
    beam.charge = params.charge;
    beam.coords.resize(static_cast<size_t>(gen.n_particles));
    for (Particle& p : beam.coords) {
        const Blob& b = (n_blobs == 2 && rng.uniform() >= blobs[0].w) ? blobs[1] : blobs[0];
        p.x = params.x_offset + b.cx + b.scale * gen.sigma_x * rng.normal();
        p.xp = b.scale * gen.sigma_xp * rng.normal();
        p.y = params.y_offset + b.cy + b.scale * gen.sigma_y * rng.normal();
        p.yp = b.scale * gen.sigma_yp * rng.normal();
        p.z = b.cz + b.scale * gen.sigma_z * rng.normal();
        p.delta = b.scale * gen.sigma_delta * rng.normal();
    }
    return beam;
}

}  // namespace lspt
