#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numbers>
#include <span>
#include <vector>

#include "lspt/config.hpp"
#include "lspt/cost.hpp"
#include "lspt/dataset.hpp"
#include "lspt/nn.hpp"
#include "lspt/rng.hpp"
#include "lspt/tune.hpp"
#include "oracles.hpp"

using namespace lspt;

namespace {

// Normalized histogram masses of a unit-variance Gaussian centred at mu,
// midpoint rule on a fine common axis.
std::vector<double> gaussian_bins(double mu, double lo, double hi, int n) {
    std::vector<double> g(static_cast<size_t>(n));
    const double dx = (hi - lo) / n;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = lo + (i + 0.5) * dx;
        g[static_cast<size_t>(i)] =
            std::exp(-0.5 * (x - mu) * (x - mu)) / std::sqrt(2.0 * std::numbers::pi);
        total += g[static_cast<size_t>(i)];
    }
    for (double& v : g) v /= total;
    return g;
}

// Random normalized density on n cells.
std::vector<double> random_density(Rng& rng, size_t n) {
    std::vector<double> g(n);
    double total = 0.0;
    for (double& v : g) {
        v = rng.uniform();
        total += v;
    }
    for (double& v : g) v /= total;
    return g;
}

// Decoder-only model bundle around the small architecture: one station,
// 15 output channels on an 8x8 grid, 2-dim latent with unit stats.
ModelBundle<double> tiny_bundle(uint64_t seed) {
    NetworkArch a;
    a.grid = 8;
    a.n_scalars = 7;
    a.latent_dim = 2;
    a.encoder_conv = {2};
    a.encoder_dense = {};
    a.decoder_dense = {};
    a.base_size = 4;
    a.base_channels = 2;
    a.decoder_conv = {4};
    a.output_channels = kNumProjections;
    ModelBundle<double> m;
    m.net = init_network<double>(a, seed);
    m.axes.station_ids = {1};
    m.axes.station_axes.resize(1);
    m.latent_mean = {0.0, 0.0};
    m.latent_std = {1.0, 1.0};
    return m;
}

// Fill one channel of a 1-station stack with a density that has all its
// mass in a single cell, chosen per channel.
std::vector<double> delta_stack(int grid, const std::vector<size_t>& cell_of_channel) {
    const size_t elems = static_cast<size_t>(grid) * grid;
    std::vector<double> stack(kNumProjections * elems, 0.0);
    for (size_t c = 0; c < static_cast<size_t>(kNumProjections); ++c)
        stack[c * elems + cell_of_channel[c]] = 1.0;
    return stack;
}

}  // namespace

TEST_SUITE("latentune") {

TEST_CASE("channel cost is zero on identical densities and two on disjoint ones") {
    Rng rng(7);
    const auto a = random_density(rng, 64);
    CHECK(cost_tcav(std::span<const double>(a), std::span<const double>(a)) == doctest::Approx(0.0));

    std::vector<double> left(64, 0.0), right(64, 0.0);
    for (int i = 0; i < 8; ++i) left[static_cast<size_t>(i)] = 1.0 / 8.0;
    for (int i = 56; i < 64; ++i) right[static_cast<size_t>(i)] = 1.0 / 8.0;
    CHECK(cost_tcav(std::span<const double>(left), std::span<const double>(right)) ==
          doctest::Approx(2.0));
}

TEST_CASE("channel cost stays within [0, 2] for random density pairs") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_density(rng, 128);
        const auto b = random_density(rng, 128);
        const double c = cost_tcav(std::span<const double>(a), std::span<const double>(b));
        CHECK(c >= 0.0);
        CHECK(c <= 2.0);
    }
}

TEST_CASE("unit-sigma shifted Gaussian pair costs 2 erf(1/(2 sqrt 2))") {
    // Oracle 1: closed form for the L1 distance between N(0,1) and N(1,1).
    const double analytic = 2.0 * std::erf(1.0 / (2.0 * std::sqrt(2.0)));

    // Oracle 2: independent trapezoid integration of |phi0 - phi1|.
    const double lo = -8.0, hi = 9.0;
    const int n = 200000;
    const double dx = (hi - lo) / n;
    auto diff = [](double x) {
        const double a = std::exp(-0.5 * x * x);
        const double b = std::exp(-0.5 * (x - 1.0) * (x - 1.0));
        return std::abs(a - b) / std::sqrt(2.0 * std::numbers::pi);
    };
    double numeric = 0.5 * (diff(lo) + diff(hi));
    for (int i = 1; i < n; ++i) numeric += diff(lo + i * dx);
    numeric *= dx;
    CHECK(std::abs(numeric - analytic) < 1e-8);

    // Library path on binned masses must land within 5% of the oracle.
    const auto a = gaussian_bins(0.0, lo, hi, 2000);
    const auto b = gaussian_bins(1.0, lo, hi, 2000);
    const double c = cost_tcav(std::span<const double>(a), std::span<const double>(b));
    CHECK(std::abs(c - analytic) / analytic < 0.05);
    CHECK(c == doctest::Approx(analytic).epsilon(5e-3));
}

TEST_CASE("spectrum cost equals the L1 of independently recomputed energy marginals") {
    const int grid = 16;
    Rng rng(23);
    const auto pred = random_density(rng, static_cast<size_t>(grid) * grid);
    const auto meas = random_density(rng, static_cast<size_t>(grid) * grid);

    // Independent marginalization: row-major (x, E) grid, energy index fast.
    auto marginal = [&](const std::vector<double>& g) {
        std::vector<double> m(static_cast<size_t>(grid), 0.0);
        for (int a = 0; a < grid; ++a)
            for (int e = 0; e < grid; ++e)
                m[static_cast<size_t>(e)] += g[static_cast<size_t>(a) * grid + e];
        return m;
    };
    const auto mp = marginal(pred);
    const auto mm = marginal(meas);
    double expected = 0.0;
    for (int e = 0; e < grid; ++e)
        expected += std::abs(mp[static_cast<size_t>(e)] - mm[static_cast<size_t>(e)]);

    const auto meas_spec = spectrum_of(std::span<const double>(meas), grid);
    const double c = cost_spectrum(std::span<const double>(pred), grid,
                                   std::span<const double>(meas_spec));
    CHECK(std::abs(c - expected) < 1e-9);

    // The marginal of a normalized grid is itself normalized.
    double mass = 0.0;
    for (double v : meas_spec) mass += v;
    CHECK(std::abs(mass - 1.0) < 1e-9);
}

TEST_CASE("combined cost is the weighted sum of its terms") {
    const int grid = 8;
    const std::vector<int> stations = {1, 3};
    const size_t elems = static_cast<size_t>(grid) * grid;
    Rng rng(31);
    std::vector<double> decoded;
    for (size_t c = 0; c < stations.size() * kNumProjections; ++c) {
        const auto g = random_density(rng, elems);
        decoded.insert(decoded.end(), g.begin(), g.end());
    }

    Measurements meas;
    meas.grid = grid;
    meas.tcav[1] = random_density(rng, elems);
    meas.tcav[3] = random_density(rng, elems);
    const auto xe3 = random_density(rng, elems);
    meas.spectra[3] = spectrum_of(std::span<const double>(xe3), grid);

    CostSpec spec;
    spec.tcav_terms = {{1, 0.7}, {3, 1.3}};
    spec.spectrum_terms = {{3, 0.25}};

    const double total =
        combined_cost(spec, std::span<const double>(decoded), stations, grid, meas);

    const auto ze1 = stack_channel(std::span<const double>(decoded), stations, grid, 0, kChannelZE);
    const auto ze3 = stack_channel(std::span<const double>(decoded), stations, grid, 1, kChannelZE);
    const auto pxe3 = stack_channel(std::span<const double>(decoded), stations, grid, 1, kChannelXE);
    const double expected =
        0.7 * cost_tcav(ze1, std::span<const double>(meas.tcav[1])) +
        1.3 * cost_tcav(ze3, std::span<const double>(meas.tcav[3])) +
        0.25 * cost_spectrum(pxe3, grid, std::span<const double>(meas.spectra[3]));
    CHECK(total == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("combined cost rejects missing measurements, unknown stations, empty specs") {
    const int grid = 8;
    const std::vector<int> stations = {1};
    const size_t elems = static_cast<size_t>(grid) * grid;
    std::vector<double> decoded(kNumProjections * elems, 0.0);

    Measurements meas;
    meas.grid = grid;

    CostSpec no_meas;
    no_meas.tcav_terms = {{1, 1.0}};
    CHECK_THROWS_AS(
        combined_cost(no_meas, std::span<const double>(decoded), stations, grid, meas),
        ConfigError);

    CostSpec bad_station;
    bad_station.tcav_terms = {{9, 1.0}};
    CHECK_THROWS_AS(
        combined_cost(bad_station, std::span<const double>(decoded), stations, grid, meas),
        ConfigError);

    CostSpec empty;
    CHECK_THROWS_AS(empty.validate(), ConfigError);

    CostSpec zero_weights;
    zero_weights.tcav_terms = {{1, 0.0}};
    CHECK_THROWS_AS(zero_weights.validate(), ConfigError);
}

TEST_CASE("plateau detector latches on noisy plateaus above threshold only") {
    auto run = [](const std::vector<double>& windows, double thr) {
        detail::StuckDetector det(10, 0.01, 5, thr);
        for (double w : windows)
            for (int i = 0; i < 10; ++i) det.push(w);
        return det.stuck();
    };

    // Steady descent: 3% per window, never flat across a 5-window span.
    std::vector<double> descent;
    double v = 1.0;
    for (int i = 0; i < 40; ++i) {
        descent.push_back(v);
        v *= 0.97;
    }
    CHECK_FALSE(run(descent, 0.05));

    // Plateau at 0.5 with +/-2% alternating window noise: adjacent windows
    // swing past the tolerance but the span comparison still latches.
    std::vector<double> plateau;
    for (int i = 0; i < 12; ++i) plateau.push_back(i % 2 == 0 ? 0.51 : 0.49);
    CHECK(run(plateau, 0.05));

    // The same plateau below the threshold is success, not stuck.
    CHECK_FALSE(run(plateau, 0.6));

    // Windows dipping below the threshold inside every span block the latch.
    std::vector<double> dipping;
    for (int i = 0; i < 20; ++i) dipping.push_back(i % 5 == 2 ? 0.04 : 0.5);
    CHECK_FALSE(run(dipping, 0.05));
}

TEST_CASE("manufactured target is recovered from a corner start") {
    const ModelBundle<double> m = tiny_bundle(2024);
    const auto [lo, hi] = latent_bounds(m, 3.0);
    const double diameter = latent_box_diameter(lo, hi);

    Rng rng(5);
    std::vector<double> target(2), corner(2);
    for (size_t i = 0; i < 2; ++i)
        target[i] = lo[i] + (hi[i] - lo[i]) * rng.uniform(0.25, 0.75);
    for (size_t i = 0; i < 2; ++i) corner[i] = rng.next_u64() % 2 ? hi[i] : lo[i];

    DecoderTargetProvider<double> provider(m, std::span<const double>(target));
    CostSpec spec;
    spec.tcav_terms = {{1, 1.0}};
    TuneConfig cfg;
    cfg.n_steps = 2000;

    const TuneResult r = tune(m, provider, spec, cfg, std::span<const double>(corner));
    REQUIRE(r.steps() == 2000);

    double dist = 0.0;
    for (size_t i = 0; i < 2; ++i)
        dist += (r.final_latent[i] - target[i]) * (r.final_latent[i] - target[i]);
    dist = std::sqrt(dist);
    CHECK(dist < 0.1 * diameter);
    CHECK(r.costs.back() < r.costs.front());
}

TEST_CASE("zero dither amplitude freezes the latent and the decoder stays frozen") {
    const ModelBundle<double> m = tiny_bundle(99);
    std::vector<double> target = {0.4, -0.3};
    DecoderTargetProvider<double> provider(m, std::span<const double>(target));
    CostSpec spec;
    spec.tcav_terms = {{1, 1.0}};

    TuneConfig cfg;
    cfg.n_steps = 300;
    cfg.amplitude_frac = 0.0;

    const std::vector<double> params_before = m.net.params;
    const std::vector<double> init = {0.8, 0.8};
    const TuneResult r = tune(m, provider, spec, cfg, std::span<const double>(init));

    for (size_t s = 0; s < r.steps(); ++s) {
        const auto row = r.latent_at(s);
        CHECK(row[0] == init[0]);
        CHECK(row[1] == init[1]);
    }
    CHECK(r.costs.front() == r.costs.back());

    // Weights bit-identical after tuning.
    REQUIRE(m.net.params.size() == params_before.size());
    CHECK(std::memcmp(m.net.params.data(), params_before.data(),
                      params_before.size() * sizeof(double)) == 0);
}

TEST_CASE("unseen-channel report partitions the stack and averages each side") {
    const int grid = 8;

    // Decoded and truth differ by a known amount per channel: channel c has
    // its unit mass moved across disjoint cells for odd c (L1 = 2), and is
    // identical for even c (L1 = 0).
    std::vector<size_t> cells_a(kNumProjections), cells_b(kNumProjections);
    for (size_t c = 0; c < static_cast<size_t>(kNumProjections); ++c) {
        cells_a[c] = c;
        cells_b[c] = (c % 2 == 0) ? c : c + 32;
    }
    const auto decoded = delta_stack(grid, cells_a);
    const auto truth = delta_stack(grid, cells_b);

    CostSpec spec;
    spec.tcav_terms = {{1, 1.0}};
    const std::vector<int> stations = {1};
    const auto measured = measured_channel_indices(spec, stations);
    REQUIRE(measured.size() == 1);
    CHECK(measured[0] == kChannelZE);

    const ErrorReport rep = evaluate_unseen(std::span<const double>(decoded),
                                            std::span<const double>(truth), measured, grid, 1);
    REQUIRE(rep.channel_l1.size() == static_cast<size_t>(kNumProjections));
    CHECK(rep.measured_channels.size() + rep.unseen_channels.size() ==
          static_cast<size_t>(kNumProjections));
    for (size_t c = 0; c < static_cast<size_t>(kNumProjections); ++c)
        CHECK(rep.channel_l1[c] == doctest::Approx(c % 2 == 0 ? 0.0 : 2.0));

    // kChannelZE = 14 is even, so the measured side averages to zero and the
    // unseen side holds the seven odd channels.
    CHECK(rep.measured_mean == doctest::Approx(0.0));
    CHECK(rep.unseen_mean == doctest::Approx(2.0 * 7.0 / 14.0));
}

TEST_CASE("simulated measurements are normalized, deterministic, and noise-seeded") {
    const Lattice lattice = default_lattice();
    const SamplingRanges ranges = default_sampling();
    GeneratorConfig gen;
    gen.n_particles = 2000;

    Rng rng(77);
    const MachineParams hidden = ranges.sample(rng);
    const AxisTable axes = compute_axis_table(lattice, gen, ranges, 8, 2.0, 99);
    const int grid = 16;

    SimulatorOptions clean;
    SimulatorProvider a(lattice, gen, hidden, 1234, axes, grid, clean);
    SimulatorProvider b(lattice, gen, hidden, 1234, axes, grid, clean);
    const Measurements& ma = a.measure(0);
    const Measurements& mb = b.measure(0);
    for (const auto& [id, g] : ma.tcav) {
        double mass = 0.0;
        for (double v : g) mass += v;
        CHECK(std::abs(mass - 1.0) < 1e-9);
        CHECK(g == mb.tcav.at(id));
    }

    SimulatorOptions noisy;
    noisy.noise_level = 0.05;
    noisy.noise_seed = 5;
    SimulatorProvider c(lattice, gen, hidden, 1234, axes, grid, noisy);
    SimulatorProvider d(lattice, gen, hidden, 1234, axes, grid, noisy);
    noisy.noise_seed = 6;
    SimulatorProvider e(lattice, gen, hidden, 1234, axes, grid, noisy);

    const auto& g_c = c.measure(0).tcav.at(1);
    const auto& g_d = d.measure(0).tcav.at(1);
    const auto& g_e = e.measure(0).tcav.at(1);
    CHECK(g_c == g_d);
    CHECK(g_c != g_e);
    CHECK(g_c != ma.tcav.at(1));
    double mass = 0.0;
    for (double v : g_c) mass += v;
    CHECK(std::abs(mass - 1.0) < 1e-9);
}

TEST_CASE("latent box diameter and bounds come from the stored latent statistics") {
    ModelBundle<double> m = tiny_bundle(1);
    m.latent_mean = {1.0, -1.0};
    m.latent_std = {0.5, 2.0};
    const auto [lo, hi] = latent_bounds(m, 2.0);
    CHECK(lo[0] == doctest::Approx(0.0));
    CHECK(hi[0] == doctest::Approx(2.0));
    CHECK(lo[1] == doctest::Approx(-5.0));
    CHECK(hi[1] == doctest::Approx(3.0));

    const std::vector<double> box_lo = {0.0, 0.0}, box_hi = {3.0, 4.0};
    CHECK(latent_box_diameter(box_lo, box_hi) == doctest::Approx(5.0));

    m.latent_mean.clear();
    CHECK_THROWS_AS(latent_bounds(m, 2.0), ConfigError);
}

}  // TEST_SUITE
