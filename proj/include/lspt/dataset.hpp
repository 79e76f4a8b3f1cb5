#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "lspt/beam.hpp"
#include "lspt/checkpoint.hpp"
#include "lspt/container.hpp"
#include "lspt/lattice.hpp"
#include "lspt/nn.hpp"
#include "lspt/projection.hpp"
#include "lspt/rng.hpp"

namespace lspt {

// Uniform sampling box for the 7 machine parameters.
struct SamplingRanges {
    std::array<double, MachineParams::kCount> lo{};
    std::array<double, MachineParams::kCount> hi{};

    void validate() const {
        for (int i = 0; i < MachineParams::kCount; ++i)
            if (!(lo[i] <= hi[i]))
                throw ConfigError("sampling: lo > hi for parameter " +
                                  MachineParams::names()[i]);
    }

    MachineParams sample(Rng& rng) const {
        std::array<double, MachineParams::kCount> a;
        for (int i = 0; i < MachineParams::kCount; ++i)
            a[i] = lo[i] == hi[i] ? lo[i] : lo[i] + (hi[i] - lo[i]) * rng.uniform();
        return MachineParams::from_array(a);
    }

    MachineParams midpoint() const {
        std::array<double, MachineParams::kCount> a;
        for (int i = 0; i < MachineParams::kCount; ++i) a[i] = 0.5 * (lo[i] + hi[i]);
        return MachineParams::from_array(a);
    }
};

// Worker-thread cap: LATENT_SCOPE_THREADS when set, hardware count otherwise.
inline int worker_count(size_t jobs) {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("LATENT_SCOPE_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1)
            throw ConfigError("LATENT_SCOPE_THREADS must be a positive integer");
        n = static_cast<unsigned>(v);
    }
    return static_cast<int>(std::min<size_t>(n, std::max<size_t>(jobs, 1)));
}

// Runs `jobs` independent tasks, each deterministic in its index, across
// worker threads. Results must be written to disjoint locations so the
// thread count never changes the output.
template <typename Fn>
void parallel_for(size_t jobs, Fn&& fn) {
    const int workers = worker_count(jobs);
    if (workers <= 1) {
        for (size_t i = 0; i < jobs; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    std::atomic<size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (size_t i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

namespace detail {

// Envelope of per-run percentiles for one coordinate stream.
struct RangeAccumulator {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add_run(std::vector<double>& values, double low_q, double high_q) {
        if (values.empty()) return;
        const auto nth = [&](double q) {
            const size_t k = static_cast<size_t>(q * static_cast<double>(values.size() - 1));
            std::nth_element(values.begin(), values.begin() + static_cast<long>(k),
                             values.end());
            return values[k];
        };
        lo = std::min(lo, nth(low_q));
        hi = std::max(hi, nth(high_q));
    }

    AxisRange padded(double padding) const {
        if (!(lo <= hi)) throw NumericError("axis range: no data accumulated");
        const double center = 0.5 * (lo + hi);
        double half = 0.5 * (hi - lo) * padding;
        if (!(half > 0.0)) half = std::max(1e-12, std::abs(center) * 1e-6 + 1e-12);
        return {center - half, center + half};
    }
};

}  // namespace detail

// Freezes histogram axes from a pilot batch: for every station and
// coordinate, the envelope of per-run [low_q, high_q] percentiles, widened
// by `padding` about its center. Input-image (x, y) axes come from the
// injected beams of the same runs.
inline AxisTable compute_axis_table(const Lattice& lattice, const GeneratorConfig& gen,
                                    const SamplingRanges& ranges, int pilot_runs,
                                    double padding, uint64_t seed, double low_q = 0.01,
                                    double high_q = 0.99) {
    if (pilot_runs < 1) throw ConfigError("axis table: pilot_runs must be >= 1");
    if (!(padding >= 1.0)) throw ConfigError("axis table: padding must be >= 1");
    ranges.validate();
    validate_lattice(lattice);

    const std::vector<int> stations = lattice_station_ids(lattice);
    std::vector<std::array<detail::RangeAccumulator, 6>> acc(stations.size());
    std::array<detail::RangeAccumulator, 2> input_acc;

    std::vector<double> scratch;
    for (int run = 0; run < pilot_runs; ++run) {
        Rng rng(seed + static_cast<uint64_t>(run));
        const MachineParams params = ranges.sample(rng);
        const ParticleEnsemble beam = sample_input_beam(params, gen, rng.next_u64());
        for (int axis = 0; axis < 2; ++axis) {
            scratch.clear();
            for (const Particle& p : beam.coords) scratch.push_back(p.coord(axis == 0 ? 0 : 2));
            input_acc[static_cast<size_t>(axis)].add_run(scratch, low_q, high_q);
        }
        const auto snapshots = track(lattice, beam, params);
        for (size_t s = 0; s < stations.size(); ++s) {
            const ParticleEnsemble& snap = snapshots.at(stations[s]);
            for (int c = 0; c < 6; ++c) {
                scratch.clear();
                for (const Particle& p : snap.coords) scratch.push_back(p.coord(c));
                acc[s][static_cast<size_t>(c)].add_run(scratch, low_q, high_q);
            }
        }
    }

    AxisTable axes;
    axes.station_ids = stations;
    axes.station_axes.resize(stations.size());
    for (size_t s = 0; s < stations.size(); ++s)
        for (int c = 0; c < 6; ++c)
            axes.station_axes[s][static_cast<size_t>(c)] =
                acc[s][static_cast<size_t>(c)].padded(padding);
    axes.input_axes[0] = input_acc[0].padded(padding);
    axes.input_axes[1] = input_acc[1].padded(padding);
    return axes;
}

// One training pair: measured input-beam image + raw machine settings in,
// the full projection stack out.
struct Dataset {
    int grid = 0;
    int n_stations = 0;
    size_t n_samples = 0;
    size_t n_train = 0;
    AxisTable axes;
    uint64_t seed = 0;
    std::vector<float> images;   // [n, grid, grid]
    std::vector<float> scalars;  // [n, 7] raw (unstandardized)
    std::vector<float> targets;  // [n, n_stations*15, grid, grid]

    size_t image_elems() const { return static_cast<size_t>(grid) * grid; }
    int target_channels() const { return n_stations * kNumProjections; }
    size_t target_elems() const { return static_cast<size_t>(target_channels()) * image_elems(); }

    std::span<const float> image(size_t i) const {
        return {images.data() + i * image_elems(), image_elems()};
    }
    std::span<const float> raw_scalars(size_t i) const {
        return {scalars.data() + i * MachineParams::kCount, MachineParams::kCount};
    }
    std::span<const float> target(size_t i) const {
        return {targets.data() + i * target_elems(), target_elems()};
    }

    void validate() const {
        if (grid < 2 || n_stations < 1) throw ConfigError("dataset: empty geometry");
        if (n_samples == 0) throw ConfigError("dataset: no samples");
        if (n_train > n_samples) throw ConfigError("dataset: train split exceeds sample count");
        if (images.size() != n_samples * image_elems() ||
            scalars.size() != n_samples * MachineParams::kCount ||
            targets.size() != n_samples * target_elems())
            throw ConfigError("dataset: array sizes inconsistent");
    }
};

// Simulates one input-output pair. Deterministic in (lattice, gen, params,
// axes, grid, seed).
inline void generate_sample(const Lattice& lattice, const GeneratorConfig& gen,
                            const MachineParams& params, const AxisTable& axes, int grid,
                            uint64_t seed, std::span<float> image_out,
                            std::span<float> target_out) {
    const ParticleEnsemble beam = sample_input_beam(params, gen, seed);
    const std::vector<double> img =
        project(beam, 0, 2, axes.input_axes[0], axes.input_axes[1], grid);
    if (image_out.size() != img.size()) throw ConfigError("datagen: image buffer size");
    for (size_t i = 0; i < img.size(); ++i) image_out[i] = static_cast<float>(img[i]);

    const auto snapshots = track(lattice, beam, params);
    const ProjectionSet set = all_projections(snapshots, axes, grid);
    if (target_out.size() != set.grids.size()) throw ConfigError("datagen: target buffer size");
    for (size_t i = 0; i < set.grids.size(); ++i)
        target_out[i] = static_cast<float>(set.grids[i]);
}

// Generates the full dataset. Sample i draws its parameters from seed + i,
// so any worker count produces identical bytes. The beam itself is seeded
// from the drawn parameter values (mixed with the base seed), so degenerate
// sampling ranges collapse the whole sample: identical parameters give
// identical beams and therefore identical targets.
inline Dataset generate_dataset(const Lattice& lattice, const GeneratorConfig& gen,
                                const SamplingRanges& ranges, const AxisTable& axes,
                                size_t n_train, size_t n_test, int grid, uint64_t seed) {
    ranges.validate();
    validate_lattice(lattice);
    if (grid < 2) throw ConfigError("datagen: grid must be >= 2");
    if (n_train + n_test == 0) throw ConfigError("datagen: need at least one sample");

    Dataset d;
    d.grid = grid;
    d.n_stations = static_cast<int>(axes.station_ids.size());
    d.n_samples = n_train + n_test;
    d.n_train = n_train;
    d.axes = axes;
    d.seed = seed;
    d.images.resize(d.n_samples * d.image_elems());
    d.scalars.resize(d.n_samples * MachineParams::kCount);
    d.targets.resize(d.n_samples * d.target_elems());

    parallel_for(d.n_samples, [&](size_t i) {
        Rng rng(seed + i);
        const MachineParams params = ranges.sample(rng);
        const auto raw = params.to_array();
        for (int k = 0; k < MachineParams::kCount; ++k)
            d.scalars[i * MachineParams::kCount + static_cast<size_t>(k)] =
                static_cast<float>(raw[static_cast<size_t>(k)]);
        const uint64_t beam_seed = fnv1a_bytes(raw.data(), raw.size() * sizeof(double)) ^ seed;
        generate_sample(lattice, gen, params, axes, grid, beam_seed,
                        {d.images.data() + i * d.image_elems(), d.image_elems()},
                        {d.targets.data() + i * d.target_elems(), d.target_elems()});
    });
    return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) {
    d.validate();
    TensorContainer c;
    c.put_scalar("meta/grid", d.grid);
    c.put_scalar("meta/n_stations", d.n_stations);
    c.put_scalar("meta/n_samples", static_cast<double>(d.n_samples));
    c.put_scalar("meta/n_train", static_cast<double>(d.n_train));
    c.put_scalar("meta/seed", static_cast<double>(d.seed));
    put_axis_table(c, d.axes);
    c.put_f32("images",
              {d.n_samples, static_cast<uint64_t>(d.grid), static_cast<uint64_t>(d.grid)},
              d.images);
    c.put_f32("scalars", {d.n_samples, MachineParams::kCount}, d.scalars);
    c.put_f32("targets",
              {d.n_samples, static_cast<uint64_t>(d.target_channels()),
               static_cast<uint64_t>(d.grid), static_cast<uint64_t>(d.grid)},
              d.targets);
    c.write(path);
}

inline Dataset load_dataset(const std::string& path) {
    const TensorContainer c = TensorContainer::read(path);
    Dataset d;
    d.grid = static_cast<int>(c.scalar("meta/grid"));
    d.n_stations = static_cast<int>(c.scalar("meta/n_stations"));
    d.n_samples = static_cast<size_t>(c.scalar("meta/n_samples"));
    d.n_train = static_cast<size_t>(c.scalar("meta/n_train"));
    d.seed = static_cast<uint64_t>(c.scalar("meta/seed"));
    d.axes = get_axis_table(c);
    d.images = c.at("images").f32;
    d.scalars = c.at("scalars").f32;
    d.targets = c.at("targets").f32;
    d.validate();
    return d;
}

// Scalar normalization statistics over the train split.
inline NormStats scalar_stats_from(const Dataset& d) {
    if (d.n_train == 0) throw ConfigError("dataset: no train split for statistics");
    NormStats stats;
    stats.mean.assign(MachineParams::kCount, 0.0);
    stats.stdev.assign(MachineParams::kCount, 0.0);
    for (size_t i = 0; i < d.n_train; ++i)
        for (int k = 0; k < MachineParams::kCount; ++k)
            stats.mean[static_cast<size_t>(k)] += d.raw_scalars(i)[static_cast<size_t>(k)];
    for (double& m : stats.mean) m /= static_cast<double>(d.n_train);
    for (size_t i = 0; i < d.n_train; ++i)
        for (int k = 0; k < MachineParams::kCount; ++k) {
            const double r = d.raw_scalars(i)[static_cast<size_t>(k)] -
                             stats.mean[static_cast<size_t>(k)];
            stats.stdev[static_cast<size_t>(k)] += r * r;
        }
    for (double& s : stats.stdev) {
        s = std::sqrt(s / static_cast<double>(d.n_train));
        // A collapsed sampling range gives zero spread; unit scale keeps the
        // standardized value finite (and exactly zero).
        if (!(s > 0.0)) s = 1.0;
    }
    return stats;
}

// Materialized training views: standardized scalars + span-based samples.
template <typename T>
struct SampleViews {
    std::vector<T> scalars_std;        // [n, 7]
    std::vector<T> images;             // converted storage (only when T != float)
    std::vector<T> targets;            // converted storage (only when T != float)
    std::vector<BatchSample<T>> train;
    std::vector<BatchSample<T>> test;
};

template <typename T>
SampleViews<T> make_sample_views(const Dataset& d, const NormStats& stats) {
    d.validate();
    stats.validate();
    if (stats.mean.size() != MachineParams::kCount)
        throw ConfigError("dataset: scalar statistics size mismatch");

    SampleViews<T> v;
    v.scalars_std.resize(d.n_samples * MachineParams::kCount);
    for (size_t i = 0; i < d.n_samples; ++i)
        for (size_t k = 0; k < MachineParams::kCount; ++k)
            v.scalars_std[i * MachineParams::kCount + k] = static_cast<T>(
                stats.standardize(k, d.raw_scalars(i)[k]));

    const T* image_base;
    const T* target_base;
    if constexpr (std::is_same_v<T, float>) {
        image_base = d.images.data();
        target_base = d.targets.data();
    } else {
        v.images.assign(d.images.begin(), d.images.end());
        v.targets.assign(d.targets.begin(), d.targets.end());
        image_base = v.images.data();
        target_base = v.targets.data();
    }

    v.train.reserve(d.n_train);
    v.test.reserve(d.n_samples - d.n_train);
    for (size_t i = 0; i < d.n_samples; ++i) {
        BatchSample<T> s{
            {image_base + i * d.image_elems(), d.image_elems()},
            {v.scalars_std.data() + i * MachineParams::kCount, MachineParams::kCount},
            {target_base + i * d.target_elems(), d.target_elems()}};
        if (i < d.n_train)
            v.train.push_back(s);
        else
            v.test.push_back(s);
    }
    return v;
}

}  // namespace lspt
