#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <vector>

#include "lspt/beam.hpp"
#include "lspt/lattice.hpp"
#include "lspt/projection.hpp"
#include "lspt/rng.hpp"
#include "oracles.hpp"

using namespace lspt;

namespace {

double coord_mean(const ParticleEnsemble& beam, int i) {
    double acc = 0.0;
    for (const Particle& p : beam.coords) acc += p.coord(i);
    return acc / static_cast<double>(beam.n_particles());
}

double coord_variance(const ParticleEnsemble& beam, int i) {
    const double m = coord_mean(beam, i);
    double acc = 0.0;
    for (const Particle& p : beam.coords) acc += (p.coord(i) - m) * (p.coord(i) - m);
    return acc / static_cast<double>(beam.n_particles());
}

bool identical(const ParticleEnsemble& a, const ParticleEnsemble& b) {
    if (a.n_particles() != b.n_particles() || a.charge != b.charge) return false;
    return std::memcmp(a.coords.data(), b.coords.data(),
                       a.coords.size() * sizeof(Particle)) == 0;
}

ParticleEnsemble standard_normal_beam(size_t n, uint64_t seed) {
    Rng rng(seed);
    ParticleEnsemble beam;
    beam.charge = 1e-9;
    beam.coords.resize(n);
    for (Particle& p : beam.coords) {
        p.x = rng.normal();
        p.xp = rng.normal();
        p.y = rng.normal();
        p.yp = rng.normal();
        p.z = rng.normal();
        p.delta = rng.normal();
    }
    return beam;
}

Lattice small_test_lattice() {
    return {
        Rf{0.05, 0.3, 2500.0, 1},  Marker{0},
        Chicane{-0.045, 0.0},      Marker{1},
        Rf{0.03, -0.5, 2500.0, 2}, Chicane{-0.030, 0.0}, Marker{2},
        Chicane{-0.015, 0.4},      Marker{3},
        Drift{1.0},                Marker{4},
    };
}

}  // namespace

TEST_SUITE_BEGIN("beamsim");

TEST_CASE("zero-offset beam has near-zero sample mean") {
    GeneratorConfig gen;
    gen.n_particles = 10000;
    const MachineParams params;
    const auto beam = sample_input_beam(params, gen, 1);
    REQUIRE(beam.n_particles() == 10000);
    // 3 sigma / sqrt(N) for sigma = 1 mm
    CHECK(std::abs(coord_mean(beam, 0)) < 3e-5);
    CHECK(std::abs(coord_mean(beam, 2)) < 3e-5);
}

TEST_CASE("x offset shifts the sample mean") {
    GeneratorConfig gen;
    gen.n_particles = 10000;
    MachineParams params;
    params.x_offset = 2e-3;
    const auto beam = sample_input_beam(params, gen, 1);
    CHECK(coord_mean(beam, 0) > 1.97e-3);
    CHECK(coord_mean(beam, 0) < 2.03e-3);
}

TEST_CASE("same seed gives bit-identical ensembles") {
    GeneratorConfig gen;
    gen.n_particles = 2000;
    gen.n_blobs = 2;
    MachineParams params;
    params.x_offset = 1e-4;
    CHECK(identical(sample_input_beam(params, gen, 7), sample_input_beam(params, gen, 7)));
    CHECK_FALSE(identical(sample_input_beam(params, gen, 7), sample_input_beam(params, gen, 8)));
}

TEST_CASE("two-blob beams keep the configured mean offsets") {
    GeneratorConfig gen;
    gen.n_particles = 10000;
    gen.n_blobs = 2;
    MachineParams params;
    params.x_offset = 2e-3;
    for (uint64_t seed : {2u, 9u, 33u}) {
        const auto beam = sample_input_beam(params, gen, seed);
        CHECK(std::abs(coord_mean(beam, 0) - 2e-3) < 5e-5);
        CHECK(std::abs(coord_mean(beam, 4)) < 5e-5);  // blob centers cancel in z
    }
}

TEST_CASE("generator rejects invalid configuration") {
    GeneratorConfig gen;
    gen.n_particles = 0;
    CHECK_THROWS_AS(sample_input_beam(MachineParams{}, gen, 1), ConfigError);
    gen.n_particles = 100;
    gen.sigma_z = -1.0;
    CHECK_THROWS_AS(sample_input_beam(MachineParams{}, gen, 1), ConfigError);
    gen.sigma_z = 4e-4;
    gen.n_blobs = 3;
    CHECK_THROWS_AS(sample_input_beam(MachineParams{}, gen, 1), ConfigError);
}

TEST_CASE("drift moves x by L times xp") {
    ParticleEnsemble beam;
    beam.charge = 1e-9;
    beam.coords = {{1e-3, 0.5e-3, 0.0, 0.0, 0.0, 0.0}};
    const auto out = apply_element(Drift{2.0}, beam);
    CHECK(out.coords[0].x == doctest::Approx(2e-3));
    CHECK(out.coords[0].xp == 0.5e-3);
}

TEST_CASE("chicane maps delta into z") {
    ParticleEnsemble beam;
    beam.charge = 1e-9;
    beam.coords = {{0.0, 0.0, 0.0, 0.0, 0.0, 0.01}};
    const auto out = apply_element(Chicane{-0.050, 0.0}, beam);
    CHECK(out.coords[0].z == doctest::Approx(-5e-4));
    CHECK(out.coords[0].delta == 0.01);

    const auto quad = apply_element(Chicane{-0.050, 2.0}, beam);
    CHECK(quad.coords[0].z == doctest::Approx(-5e-4 + 2.0 * 1e-4));
}

TEST_CASE("rf adds the on-crest energy gain at z=0") {
    ParticleEnsemble beam;
    beam.charge = 1e-9;
    beam.coords = {{0.0, 0.0, 0.0, 0.0, 0.0, 0.0}};
    const auto out = apply_element(Rf{0.05, 0.0, 2500.0, 0}, beam);
    CHECK(out.coords[0].delta == doctest::Approx(0.05));
}

TEST_CASE("quad transfer map has determinant one per plane") {
    const Quad q{0.4, 2.5};
    auto propagate = [&](double x, double xp) {
        ParticleEnsemble beam;
        beam.charge = 1e-9;
        beam.coords = {{x, xp, x, xp, 0.0, 0.0}};
        return apply_element(q, beam).coords[0];
    };
    const Particle e1 = propagate(1.0, 0.0);
    const Particle e2 = propagate(0.0, 1.0);
    CHECK(e1.x * e2.xp - e2.x * e1.xp == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e1.y * e2.yp - e2.y * e1.yp == doctest::Approx(1.0).epsilon(1e-12));
    // focusing in x, defocusing in y for k1 > 0
    CHECK(e1.xp < 0.0);
    CHECK(e1.yp > 0.0);
}

TEST_CASE("elements touch only their own coordinates") {
    const auto beam = standard_normal_beam(256, 11);
    for (const LatticeElement& elem :
         {LatticeElement{Drift{1.5}}, LatticeElement{Quad{0.3, 1.8}}}) {
        const auto out = apply_element(elem, beam);
        for (size_t i = 0; i < beam.n_particles(); ++i) {
            CHECK(out.coords[i].z == beam.coords[i].z);
            CHECK(out.coords[i].delta == beam.coords[i].delta);
        }
    }
    for (const LatticeElement& elem :
         {LatticeElement{Rf{0.05, 0.1, 2500.0, 0}}, LatticeElement{Chicane{-0.04, 0.3}},
          LatticeElement{WakeSurrogate{1e7}}}) {
        const auto out = apply_element(elem, beam);
        for (size_t i = 0; i < beam.n_particles(); ++i) {
            CHECK(out.coords[i].x == beam.coords[i].x);
            CHECK(out.coords[i].xp == beam.coords[i].xp);
            CHECK(out.coords[i].y == beam.coords[i].y);
            CHECK(out.coords[i].yp == beam.coords[i].yp);
        }
    }
    // wake changes delta only; chicane changes z only
    const auto wake = apply_element(WakeSurrogate{1e7}, beam);
    for (size_t i = 0; i < beam.n_particles(); ++i) CHECK(wake.coords[i].z == beam.coords[i].z);
    const auto chic = apply_element(Chicane{-0.04, 0.3}, beam);
    for (size_t i = 0; i < beam.n_particles(); ++i)
        CHECK(chic.coords[i].delta == beam.coords[i].delta);
}

TEST_CASE("wake ramps energy loss from head to tail") {
    ParticleEnsemble beam;
    beam.charge = 2e-9;
    // z = 1 mm, 0, 2 mm: head is particle 2, then 0, then 1
    beam.coords = {{0, 0, 0, 0, 1e-3, 0.0}, {0, 0, 0, 0, 0.0, 0.0}, {0, 0, 0, 0, 2e-3, 0.0}};
    const double kappa = 3e6;
    const auto out = apply_element(WakeSurrogate{kappa}, beam);
    const double unit = kappa * beam.charge / 3.0;
    CHECK(out.coords[2].delta == doctest::Approx(0.0));
    CHECK(out.coords[0].delta == doctest::Approx(-unit));
    CHECK(out.coords[1].delta == doctest::Approx(-2.0 * unit));
}

TEST_CASE("marker-only lattice returns the input beam") {
    const auto beam = standard_normal_beam(64, 3);
    const auto snaps = track({Marker{0}}, beam, MachineParams{});
    REQUIRE(snaps.count(0) == 1);
    CHECK(identical(snaps.at(0), beam));
}

TEST_CASE("drift grows the spread of an uncorrelated beam") {
    GeneratorConfig gen;
    gen.n_particles = 5000;
    const auto beam = sample_input_beam(MachineParams{}, gen, 5);
    const auto snaps = track({Drift{1.0}, Marker{0}, Drift{1.0}, Marker{1}}, beam,
                             MachineParams{});
    const double v0 = coord_variance(snaps.at(0), 0);
    const double v1 = coord_variance(snaps.at(1), 0);
    CHECK(v1 >= v0);

    // propagated second-moment oracle from the input ensemble:
    // var(x + L xp) = var(x) + 2L cov(x,xp) + L^2 var(xp)
    auto moment_oracle = [&](double L) {
        const double mx = coord_mean(beam, 0), mxp = coord_mean(beam, 1);
        double vx = 0.0, vxp = 0.0, cov = 0.0;
        for (const Particle& p : beam.coords) {
            vx += (p.x - mx) * (p.x - mx);
            vxp += (p.xp - mxp) * (p.xp - mxp);
            cov += (p.x - mx) * (p.xp - mxp);
        }
        const double n = static_cast<double>(beam.n_particles());
        return vx / n + 2.0 * L * cov / n + L * L * vxp / n;
    };
    CHECK(v0 == doctest::Approx(moment_oracle(1.0)).epsilon(1e-9));
    CHECK(v1 == doctest::Approx(moment_oracle(2.0)).epsilon(1e-9));
}

TEST_CASE("section-1 phase shift changes downstream mean energy") {
    GeneratorConfig gen;
    gen.n_particles = 5000;
    const auto beam = sample_input_beam(MachineParams{}, gen, 3);
    const auto nominal = track(small_test_lattice(), beam, MachineParams{});
    MachineParams shifted;
    shifted.l1_phase = 0.2;
    const auto moved = track(small_test_lattice(), beam, shifted);
    CHECK(std::abs(coord_mean(nominal.at(3), 5) - coord_mean(moved.at(3), 5)) > 1e-6);
}

TEST_CASE("track is deterministic") {
    GeneratorConfig gen;
    gen.n_particles = 1000;
    const auto beam = sample_input_beam(MachineParams{}, gen, 9);
    const auto a = track(small_test_lattice(), beam, MachineParams{});
    const auto b = track(small_test_lattice(), beam, MachineParams{});
    for (const auto& [sid, snap] : a) CHECK(identical(snap, b.at(sid)));
}

TEST_CASE("lattice without markers is rejected") {
    const auto beam = standard_normal_beam(16, 1);
    CHECK_THROWS_AS(track({Drift{1.0}}, beam, MachineParams{}), ConfigError);
    CHECK_THROWS_AS(track({Marker{0}, Marker{0}}, beam, MachineParams{}), ConfigError);
    CHECK_THROWS_AS(track({Drift{-1.0}, Marker{0}}, beam, MachineParams{}), ConfigError);
}

TEST_CASE("single particle lands in its bin with full mass") {
    ParticleEnsemble beam;
    beam.charge = 1e-9;
    const int G = 4;
    // bin centers of bin (1, 2) on [0,1] x [0,1]
    beam.coords = {{0.375, 0.0, 0.625, 0.0, 0.0, 0.0}};
    const auto grid = project(beam, 0, 2, AxisRange{0.0, 1.0}, AxisRange{0.0, 1.0}, G);
    for (int a = 0; a < G; ++a)
        for (int b = 0; b < G; ++b)
            CHECK(grid[static_cast<size_t>(a) * G + b] == (a == 1 && b == 2 ? 1.0 : 0.0));
}

TEST_CASE("two particles split the mass") {
    ParticleEnsemble beam;
    beam.charge = 1e-9;
    beam.coords = {{0.1, 0.0, 0.1, 0.0, 0.0, 0.0}, {0.9, 0.0, 0.9, 0.0, 0.0, 0.0}};
    const auto grid = project(beam, 0, 2, AxisRange{0.0, 1.0}, AxisRange{0.0, 1.0}, 4);
    CHECK(grid[0] == 0.5);
    CHECK(grid[15] == 0.5);
}

TEST_CASE("out-of-range particles clamp into edge bins") {
    ParticleEnsemble beam;
    beam.charge = 1e-9;
    beam.coords = {{-5.0, 0.0, 0.5, 0.0, 0.0, 0.0}, {7.0, 0.0, 0.5, 0.0, 0.0, 0.0}};
    const auto grid = project(beam, 0, 2, AxisRange{0.0, 1.0}, AxisRange{0.0, 1.0}, 4);
    double total = 0.0;
    for (double v : grid) total += v;
    CHECK(total == doctest::Approx(1.0));
    CHECK(grid[0 * 4 + 2] == 0.5);
    CHECK(grid[3 * 4 + 2] == 0.5);
}

TEST_CASE("gaussian histogram matches analytic bin masses") {
    const int G = 16;
    Rng rng(42);
    ParticleEnsemble beam;
    beam.charge = 1e-9;
    beam.coords.resize(100000);
    for (Particle& p : beam.coords) {
        p.x = rng.normal();
        p.xp = 0.0;
        p.y = rng.normal();
        p.yp = 0.0;
        p.z = 0.0;
        p.delta = 0.0;
    }
    const auto grid = project(beam, 0, 2, AxisRange{-4.0, 4.0}, AxisRange{-4.0, 4.0}, G);
    const auto masses = oracle::gaussian_bin_masses(0.0, 1.0, -4.0, 4.0, G);
    double tv = 0.0;
    for (int a = 0; a < G; ++a)
        for (int b = 0; b < G; ++b)
            tv += std::abs(grid[static_cast<size_t>(a) * G + b] -
                           masses[static_cast<size_t>(a)] * masses[static_cast<size_t>(b)]);
    CHECK(0.5 * tv < 0.02);

    // independent naive recount agrees bin-for-bin
    std::vector<double> xs(beam.n_particles()), ys(beam.n_particles());
    for (size_t i = 0; i < beam.n_particles(); ++i) {
        xs[i] = beam.coords[i].x;
        ys[i] = beam.coords[i].y;
    }
    const auto naive = oracle::naive_pair_histogram(xs, ys, -4.0, 4.0, -4.0, 4.0, G);
    for (size_t i = 0; i < naive.size(); ++i) CHECK(grid[i] == doctest::Approx(naive[i]));
}

TEST_CASE("projection input validation") {
    const auto beam = standard_normal_beam(8, 2);
    CHECK_THROWS_AS(project(beam, 0, 2, AxisRange{0, 1}, AxisRange{0, 1}, 1), ConfigError);
    CHECK_THROWS_AS(project(beam, 2, 0, AxisRange{0, 1}, AxisRange{0, 1}, 8), ConfigError);
    CHECK_THROWS_AS(project(beam, 0, 2, AxisRange{1, 0}, AxisRange{0, 1}, 8), ConfigError);
}

TEST_CASE("channel table covers all 15 unique pairs in order") {
    REQUIRE(kProjectionPairs.size() == 15);
    int c = 0;
    for (int i = 0; i < 6; ++i)
        for (int j = i + 1; j < 6; ++j) {
            CHECK(kProjectionPairs[static_cast<size_t>(c)].first == i);
            CHECK(kProjectionPairs[static_cast<size_t>(c)].second == j);
            CHECK(channel_for_pair(i, j) == c);
            ++c;
        }
    CHECK(kChannelXY == channel_for_pair(0, 2));
    CHECK(kChannelXE == channel_for_pair(0, 5));
    CHECK(kChannelZE == channel_for_pair(4, 5));
}

TEST_CASE("all projections normalize and stay marginally consistent") {
    const int G = 32;
    GeneratorConfig gen;
    gen.n_particles = 20000;
    gen.n_blobs = 2;
    const auto beam = sample_input_beam(MachineParams{}, gen, 21);
    const auto snaps = track(small_test_lattice(), beam, MachineParams{});

    AxisTable axes;
    axes.station_ids = {0, 1, 2, 3, 4};
    axes.station_axes.resize(5);
    for (auto& st : axes.station_axes)
        for (int i = 0; i < 6; ++i) st[static_cast<size_t>(i)] = AxisRange{-6e-3, 6e-3};
    const auto set = all_projections(snaps, axes, G);
    REQUIRE(set.grids.size() == static_cast<size_t>(5 * 15 * G * G));
    REQUIRE(set.station_ids.size() == 5);

    for (int s = 0; s < 5; ++s)
        for (int c = 0; c < kNumProjections; ++c) {
            double total = 0.0;
            for (double v : set.at(s, c)) total += v;
            CHECK(std::abs(total - 1.0) < 1e-6);
        }

    // every pair sharing a coordinate agrees on that coordinate's marginal
    for (int s = 0; s < 5; ++s) {
        const auto mx_from_xy = marginal(set.at(s, kChannelXY), G, 1);
        const auto mx_from_xe = marginal(set.at(s, kChannelXE), G, 1);
        const auto mx_from_xxp = marginal(set.at(s, channel_for_pair(0, 1)), G, 1);
        const auto me_from_xe = marginal(set.at(s, kChannelXE), G, 0);
        const auto me_from_ze = marginal(set.at(s, kChannelZE), G, 0);
        for (int a = 0; a < G; ++a) {
            CHECK(std::abs(mx_from_xy[static_cast<size_t>(a)] -
                           mx_from_xe[static_cast<size_t>(a)]) < 1e-6);
            CHECK(std::abs(mx_from_xy[static_cast<size_t>(a)] -
                           mx_from_xxp[static_cast<size_t>(a)]) < 1e-6);
            CHECK(std::abs(me_from_xe[static_cast<size_t>(a)] -
                           me_from_ze[static_cast<size_t>(a)]) < 1e-6);
        }
    }
}

TEST_CASE("energy spectrum marginalizes out x") {
    const int G = 8;
    std::vector<double> grid(static_cast<size_t>(G) * G, 0.0);
    grid[static_cast<size_t>(3) * G + 5] = 1.0;  // delta at (x bin 3, E bin 5)
    const auto spec = energy_spectrum(grid, G);
    for (int e = 0; e < G; ++e) CHECK(spec[static_cast<size_t>(e)] == (e == 5 ? 1.0 : 0.0));

    std::vector<double> uniform(static_cast<size_t>(G) * G, 1.0 / (G * G));
    const auto flat = energy_spectrum(uniform, G);
    for (int e = 0; e < G; ++e) CHECK(flat[static_cast<size_t>(e)] == doctest::Approx(1.0 / G));

    // product-Gaussian grid -> marginal equals the 1D bin masses
    const auto mx = oracle::gaussian_bin_masses(0.1, 0.8, -4.0, 4.0, G);
    const auto me = oracle::gaussian_bin_masses(-0.2, 1.1, -4.0, 4.0, G);
    std::vector<double> gauss(static_cast<size_t>(G) * G);
    for (int a = 0; a < G; ++a)
        for (int b = 0; b < G; ++b)
            gauss[static_cast<size_t>(a) * G + b] =
                mx[static_cast<size_t>(a)] * me[static_cast<size_t>(b)];
    const auto ms = energy_spectrum(gauss, G);
    for (int e = 0; e < G; ++e)
        CHECK(std::abs(ms[static_cast<size_t>(e)] - me[static_cast<size_t>(e)]) < 1e-6);
}

TEST_CASE("ensemble validation catches bad members") {
    ParticleEnsemble empty;
    empty.charge = 1e-9;
    CHECK_THROWS_AS(empty.validate(), ConfigError);

    ParticleEnsemble nocharge;
    nocharge.coords = {{0, 0, 0, 0, 0, 0}};
    CHECK_THROWS_AS(nocharge.validate(), ConfigError);

    ParticleEnsemble bad;
    bad.charge = 1e-9;
    bad.coords = {{std::nan(""), 0, 0, 0, 0, 0}};
    CHECK_THROWS_AS(bad.validate(), NumericError);
}

TEST_SUITE_END();
