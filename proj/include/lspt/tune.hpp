#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lspt/beam.hpp"
#include "lspt/checkpoint.hpp"
#include "lspt/cost.hpp"
#include "lspt/csvio.hpp"
#include "lspt/es.hpp"
#include "lspt/lattice.hpp"
#include "lspt/nn.hpp"
#include "lspt/pgm.hpp"
#include "lspt/projection.hpp"
#include "lspt/rng.hpp"

namespace lspt {

// Source of "measured" channels the tuner compares its predictions against.
// `measure` returns normalized grids/spectra on the shared axis table;
// `truth_stack` exposes the full hidden channel stack for scoring the
// channels the cost never saw.
class MeasurementProvider {
public:
    virtual ~MeasurementProvider() = default;
    virtual const Measurements& measure(int step) = 0;
    virtual const std::vector<double>& truth_stack(int step) = 0;
    virtual int grid() const = 0;
    virtual const std::vector<int>& station_ids() const = 0;
};

// Measurements synthesized by tracking a hidden true beam through the
// lattice. The hidden machine parameters may drift over time; optional
// counting noise perturbs the measured grids (variance proportional to the
// local density, renormalized afterwards), default off.
using DriftFn = std::function<MachineParams(int step, const MachineParams& base)>;

struct SimulatorOptions {
    DriftFn drift;             // empty = static hidden beam
    double noise_level = 0.0;  // 0 = noise off
    uint64_t noise_seed = 1;
};

class SimulatorProvider : public MeasurementProvider {
public:
    using Options = SimulatorOptions;

    SimulatorProvider(Lattice lattice, GeneratorConfig gen, MachineParams hidden,
                      uint64_t beam_seed, AxisTable axes, int grid, Options opt = {})
        : lattice_(std::move(lattice)),
          gen_(gen),
          hidden_(hidden),
          beam_seed_(beam_seed),
          axes_(std::move(axes)),
          grid_(grid),
          opt_(std::move(opt)) {
        validate_lattice(lattice_);
        gen_.validate();
        if (grid_ < 2) throw ConfigError("provider: grid must be >= 2");
        if (!(opt_.noise_level >= 0.0)) throw ConfigError("provider: noise level must be >= 0");
    }

    const Measurements& measure(int step) override {
        refresh_measure(step);
        return meas_;
    }

    const std::vector<double>& truth_stack(int step) override {
        refresh_truth(step);
        return truth_;
    }

    int grid() const override { return grid_; }
    const std::vector<int>& station_ids() const override { return axes_.station_ids; }

    MachineParams params_at(int step) const {
        return opt_.drift ? opt_.drift(step, hidden_) : hidden_;
    }

private:
    bool is_static() const { return !opt_.drift; }

    std::map<int, ParticleEnsemble> tracked(int step) const {
        const MachineParams p = params_at(step);
        const ParticleEnsemble beam = sample_input_beam(p, gen_, beam_seed_);
        return track(lattice_, beam, p);
    }

    void refresh_measure(int step) {
        if (meas_step_ == step || (is_static() && meas_step_ >= 0)) return;
        const auto snapshots = tracked(step);
        meas_ = Measurements{};
        meas_.grid = grid_;
        Rng noise_rng(opt_.noise_seed + static_cast<uint64_t>(step));
        for (size_t s = 0; s < axes_.station_ids.size(); ++s) {
            const int id = axes_.station_ids[s];
            const ParticleEnsemble& snap = snapshots.at(id);
            const auto& r = axes_.station_axes[s];
            std::vector<double> ze = project(snap, 4, 5, r[4], r[5], grid_);
            std::vector<double> xe = project(snap, 0, 5, r[0], r[5], grid_);
            if (opt_.noise_level > 0.0) {
                add_counting_noise(ze, noise_rng);
                add_counting_noise(xe, noise_rng);
            }
            meas_.spectra[id] = spectrum_of(std::span<const double>(xe), grid_);
            meas_.tcav[id] = std::move(ze);
        }
        meas_step_ = step;
    }

    void refresh_truth(int step) {
        if (truth_step_ == step || (is_static() && truth_step_ >= 0)) return;
        const auto snapshots = tracked(step);
        truth_ = all_projections(snapshots, axes_, grid_).grids;
        truth_step_ = step;
    }

    void add_counting_noise(std::vector<double>& g, Rng& rng) const {
        double total = 0.0;
        for (double& v : g) {
            v = std::max(0.0, v + opt_.noise_level * std::sqrt(v) * rng.normal());
            total += v;
        }
        if (!(total > 0.0)) throw NumericError("provider: noise wiped out the measurement");
        for (double& v : g) v /= total;
    }

    Lattice lattice_;
    GeneratorConfig gen_;
    MachineParams hidden_;
    uint64_t beam_seed_;
    AxisTable axes_;
    int grid_;
    Options opt_;
    Measurements meas_;
    std::vector<double> truth_;
    int meas_step_ = -1;
    int truth_step_ = -1;
};

// Manufactured-target provider: the "measurement" is the decoder's own
// output at a known latent point, so the cost has an exact zero and the
// optimum location is known by construction.
template <typename T>
class DecoderTargetProvider : public MeasurementProvider {
public:
    DecoderTargetProvider(const ModelBundle<T>& model, std::span<const double> target_latent)
        : grid_(model.net.arch.grid), station_ids_(model.axes.station_ids) {
        if (target_latent.size() != static_cast<size_t>(model.net.arch.latent_dim))
            throw ConfigError("provider: target latent dimension mismatch");
        std::vector<T> latent(target_latent.size());
        for (size_t i = 0; i < latent.size(); ++i) latent[i] = static_cast<T>(target_latent[i]);
        const std::vector<T> stack = decode(model.net, std::span<const T>(latent));
        truth_.assign(stack.begin(), stack.end());
        meas_.grid = grid_;
        for (size_t s = 0; s < station_ids_.size(); ++s) {
            const auto ze = stack_channel(std::span<const double>(truth_), station_ids_, grid_,
                                          static_cast<int>(s), kChannelZE);
            const auto xe = stack_channel(std::span<const double>(truth_), station_ids_, grid_,
                                          static_cast<int>(s), kChannelXE);
            meas_.tcav[station_ids_[s]] = std::vector<double>(ze.begin(), ze.end());
            meas_.spectra[station_ids_[s]] = spectrum_of(xe, grid_);
        }
    }

    const Measurements& measure(int) override { return meas_; }
    const std::vector<double>& truth_stack(int) override { return truth_; }
    int grid() const override { return grid_; }
    const std::vector<int>& station_ids() const override { return station_ids_; }

private:
    int grid_;
    std::vector<int> station_ids_;
    Measurements meas_;
    std::vector<double> truth_;
};

// Knobs of one tuning run. The extremum-seeking law is assembled from these
// plus the latent box stored in the checkpoint: parameter j dithers inside
// [mean_j - bound_sigma*std_j, mean_j + bound_sigma*std_j] with oscillation
// amplitude amplitude_frac times the box half-width.
struct TuneConfig {
    int n_steps = 2000;
    double omega = 12.0;           // base dither frequency, rad/s
    double dt = 1e-2;              // integration step
    double gain = 2.0;             // cost feedback gain
    double amplitude_frac = 0.15;  // dither amplitude / box half-width
    double bound_sigma = 3.0;      // latent box half-width in train-latent sigmas
    bool normalize_cost = false;
    DitherKind kind = DitherKind::cosine;
    double success_threshold = 0.05;  // "converged" when cost drops below
    int stuck_window = 100;           // steps per plateau window
    double stuck_rel_tol = 0.01;      // windowed-mean improvement below 1%
    int stuck_consecutive = 5;        // consecutive flat windows to latch

    void validate() const {
        if (n_steps < 1) throw ConfigError("tune: n_steps must be >= 1");
        if (!(omega > 0.0) || !(dt > 0.0)) throw ConfigError("tune: omega and dt must be positive");
        if (!(gain >= 0.0)) throw ConfigError("tune: gain must be >= 0");
        // amplitude_frac = 0 is the degenerate zero-dither law: the latent
        // stays frozen, useful as an untuned baseline.
        if (!(amplitude_frac >= 0.0)) throw ConfigError("tune: amplitude_frac must be >= 0");
        if (!(bound_sigma > 0.0)) throw ConfigError("tune: bound_sigma must be positive");
        if (!(success_threshold > 0.0)) throw ConfigError("tune: threshold must be positive");
        if (stuck_window < 1 || stuck_consecutive < 1)
            throw ConfigError("tune: stuck detector needs positive window counts");
        if (!(stuck_rel_tol >= 0.0)) throw ConfigError("tune: stuck tolerance must be >= 0");
    }
};

// Latent box the tuner is allowed to explore, from the train-split latent
// statistics stored in the checkpoint.
template <typename T>
std::pair<std::vector<double>, std::vector<double>> latent_bounds(const ModelBundle<T>& model,
                                                                  double bound_sigma) {
    const size_t n = static_cast<size_t>(model.net.arch.latent_dim);
    if (model.latent_mean.size() != n || model.latent_std.size() != n)
        throw ConfigError("tune: checkpoint carries no latent statistics");
    std::vector<double> lo(n), hi(n);
    for (size_t i = 0; i < n; ++i) {
        const double half = std::max(bound_sigma * model.latent_std[i], 1e-6);
        lo[i] = model.latent_mean[i] - half;
        hi[i] = model.latent_mean[i] + half;
    }
    return {lo, hi};
}

// Euclidean diagonal of the latent box; the natural length scale for
// "how close to the optimum did the tuner land".
inline double latent_box_diameter(std::span<const double> lo, std::span<const double> hi) {
    double acc = 0.0;
    for (size_t i = 0; i < lo.size(); ++i) acc += (hi[i] - lo[i]) * (hi[i] - lo[i]);
    return std::sqrt(acc);
}

inline ESConfig make_es_config(const TuneConfig& cfg, std::span<const double> lo,
                               std::span<const double> hi) {
    cfg.validate();
    const size_t n = lo.size();
    ESConfig es;
    es.n_params = n;
    es.omega = cfg.omega;
    es.ratios = es_default_ratios(n);
    es.gain = cfg.gain;
    es.dt = cfg.dt;
    es.kind = cfg.kind;
    es.normalize_cost = cfg.normalize_cost;
    es.lo.assign(lo.begin(), lo.end());
    es.hi.assign(hi.begin(), hi.end());
    es.alpha.resize(n);
    // amplitude a under dp/dt = sqrt(alpha*w) cos(w t) is sqrt(alpha/w),
    // so alpha = a^2 * w_j gives each parameter the same relative reach.
    for (size_t i = 0; i < n; ++i) {
        const double amp = cfg.amplitude_frac * 0.5 * (hi[i] - lo[i]);
        es.alpha[i] = amp * amp * cfg.omega * es.ratios[i];
    }
    es.validate();
    return es;
}

struct TuneResult {
    int n_latent = 0;
    std::vector<double> latents;  // row-major [step][latent], one row per evaluation
    std::vector<double> costs;    // one entry per evaluation
    long steps_to_threshold = -1; // first step with cost below threshold, -1 = never
    bool stuck = false;           // plateau above threshold, latched
    std::vector<double> final_latent;          // windowed mean over the last window
    std::vector<double> final_channel_errors;  // L1 vs hidden truth at final_latent

    size_t steps() const { return costs.size(); }
    std::span<const double> latent_at(size_t step) const {
        return {latents.data() + step * static_cast<size_t>(n_latent),
                static_cast<size_t>(n_latent)};
    }
};

namespace detail {

// Tracks non-overlapping windowed means of the cost and latches the stuck
// flag once the mean has improved by less than rel_tol across a span of
// `consecutive` windows whose means all sit above the success threshold.
// Spanning the comparison (oldest vs newest mean) rather than comparing
// adjacent windows keeps the detector robust to dither-induced window-to-
// window fluctuation while still firing on genuine plateaus.
class StuckDetector {
public:
    StuckDetector(int window, double rel_tol, int consecutive, double threshold)
        : window_(window), rel_tol_(rel_tol), consecutive_(consecutive), threshold_(threshold) {
        means_.reserve(static_cast<size_t>(consecutive_) + 1);
    }

    void push(double cost) {
        acc_ += cost;
        if (++in_window_ < window_) return;
        const double mean = acc_ / static_cast<double>(window_);
        acc_ = 0.0;
        in_window_ = 0;
        if (means_.size() == static_cast<size_t>(consecutive_) + 1) {
            means_.erase(means_.begin());
        }
        means_.push_back(mean);
        if (means_.size() < static_cast<size_t>(consecutive_) + 1) return;
        const bool all_above =
            std::all_of(means_.begin(), means_.end(), [&](double m) { return m > threshold_; });
        const double oldest = means_.front();
        const double improvement = (oldest - mean) / std::max(oldest, 1e-300);
        if (all_above && improvement < rel_tol_) latched_ = true;
    }

    bool stuck() const { return latched_; }

private:
    int window_;
    double rel_tol_;
    int consecutive_;
    double threshold_;
    int in_window_ = 0;
    double acc_ = 0.0;
    std::vector<double> means_;
    bool latched_ = false;
};

}  // namespace detail

// Decode helper: latent (double) through the frozen decoder.
template <typename T>
std::vector<T> decode_latent(const Network<T>& net, std::span<const double> latent) {
    std::vector<T> l(latent.size());
    for (size_t i = 0; i < latent.size(); ++i) l[i] = static_cast<T>(latent[i]);
    return decode(net, std::span<const T>(l));
}

// Drives the decoder's latent vector by bounded extremum seeking so the
// predicted measurable channels match the provider's measurements. The
// decoder weights are never touched (verified by checksum).
template <typename T>
TuneResult tune(const ModelBundle<T>& model, MeasurementProvider& provider, const CostSpec& spec,
                const TuneConfig& cfg, std::span<const double> init_latent) {
    cfg.validate();
    spec.validate();
    const int grid = model.net.arch.grid;
    const std::vector<int>& stations = model.axes.station_ids;
    if (provider.grid() != grid) throw ConfigError("tune: provider grid mismatch");
    if (provider.station_ids() != stations) throw ConfigError("tune: provider station mismatch");
    if (model.net.arch.output_channels !=
        static_cast<int>(stations.size()) * kNumProjections)
        throw ConfigError("tune: decoder output does not cover the station stack");
    if (init_latent.size() != static_cast<size_t>(model.net.arch.latent_dim))
        throw ConfigError("tune: init latent dimension mismatch");

    const auto [lo, hi] = latent_bounds(model, cfg.bound_sigma);
    const ESConfig es = make_es_config(cfg, lo, hi);
    const uint64_t weights_before =
        fnv1a_bytes(model.net.params.data(), model.net.params.size() * sizeof(T));

    ESState state = make_es_state(es, init_latent);
    detail::StuckDetector detector(cfg.stuck_window, cfg.stuck_rel_tol, cfg.stuck_consecutive,
                                   cfg.success_threshold);

    TuneResult r;
    r.n_latent = model.net.arch.latent_dim;
    r.latents.reserve(static_cast<size_t>(cfg.n_steps) * static_cast<size_t>(r.n_latent));
    r.costs.reserve(static_cast<size_t>(cfg.n_steps));

    for (int step = 0; step < cfg.n_steps; ++step) {
        const std::vector<T> stack = decode_latent(model.net, state.p);
        const double cost = combined_cost(spec, std::span<const T>(stack), stations, grid,
                                          provider.measure(step));
        if (!std::isfinite(cost)) throw NumericError("tune: non-finite cost");
        r.latents.insert(r.latents.end(), state.p.begin(), state.p.end());
        r.costs.push_back(cost);
        if (r.steps_to_threshold < 0 && cost < cfg.success_threshold) r.steps_to_threshold = step;
        detector.push(cost);
        es_step(state, cost, es);
    }
    r.stuck = detector.stuck();

    // De-dithered endpoint: mean latent over the last window.
    const size_t win = std::min<size_t>(static_cast<size_t>(cfg.stuck_window), r.steps());
    r.final_latent.assign(static_cast<size_t>(r.n_latent), 0.0);
    for (size_t s = r.steps() - win; s < r.steps(); ++s) {
        const auto row = r.latent_at(s);
        for (int i = 0; i < r.n_latent; ++i)
            r.final_latent[static_cast<size_t>(i)] += row[static_cast<size_t>(i)];
    }
    for (double& v : r.final_latent) v /= static_cast<double>(win);

    const std::vector<T> final_stack = decode_latent(model.net, r.final_latent);
    const std::vector<double>& truth = provider.truth_stack(cfg.n_steps - 1);
    const size_t elems = static_cast<size_t>(grid) * grid;
    const size_t n_channels = stations.size() * kNumProjections;
    if (truth.size() != n_channels * elems) throw ConfigError("tune: truth stack size mismatch");
    r.final_channel_errors.resize(n_channels);
    for (size_t c = 0; c < n_channels; ++c)
        r.final_channel_errors[c] =
            l1_distance(std::span<const T>(final_stack).subspan(c * elems, elems),
                        std::span<const double>(truth).subspan(c * elems, elems));

    const uint64_t weights_after =
        fnv1a_bytes(model.net.params.data(), model.net.params.size() * sizeof(T));
    if (weights_before != weights_after)
        throw NumericError("tune: decoder weights changed during tuning");
    return r;
}

// Per-channel L1 errors of a decoded stack against the hidden truth,
// partitioned into the channels the cost saw and the ones it never did.
struct ErrorReport {
    std::vector<double> channel_l1;      // all channels, stack order
    std::vector<int> measured_channels;  // global indices entering the cost
    std::vector<int> unseen_channels;    // complement
    double measured_mean = 0.0;
    double unseen_mean = 0.0;
};

template <typename T>
ErrorReport evaluate_unseen(std::span<const T> decoded, std::span<const double> truth,
                            const std::vector<int>& measured_channels, int grid,
                            size_t n_stations) {
    const size_t elems = static_cast<size_t>(grid) * grid;
    const size_t n_channels = n_stations * kNumProjections;
    if (decoded.size() != n_channels * elems || truth.size() != n_channels * elems)
        throw ConfigError("evaluate: stack shape mismatch");

    ErrorReport rep;
    rep.channel_l1.resize(n_channels);
    for (size_t c = 0; c < n_channels; ++c)
        rep.channel_l1[c] = l1_distance(decoded.subspan(c * elems, elems),
                                        truth.subspan(c * elems, elems));

    std::vector<bool> seen(n_channels, false);
    for (int c : measured_channels) {
        if (c < 0 || static_cast<size_t>(c) >= n_channels)
            throw ConfigError("evaluate: measured channel index out of range");
        seen[static_cast<size_t>(c)] = true;
    }
    for (size_t c = 0; c < n_channels; ++c) {
        if (seen[c]) {
            rep.measured_channels.push_back(static_cast<int>(c));
            rep.measured_mean += rep.channel_l1[c];
        } else {
            rep.unseen_channels.push_back(static_cast<int>(c));
            rep.unseen_mean += rep.channel_l1[c];
        }
    }
    if (!rep.measured_channels.empty())
        rep.measured_mean /= static_cast<double>(rep.measured_channels.size());
    if (!rep.unseen_channels.empty())
        rep.unseen_mean /= static_cast<double>(rep.unseen_channels.size());
    return rep;
}

inline void export_cost_csv(const TuneResult& r, const std::string& path) {
    CsvWriter w(path, {"step", "cost"});
    for (size_t s = 0; s < r.steps(); ++s)
        w.row({static_cast<double>(s), r.costs[s]});
}

inline void export_latent_csv(const TuneResult& r, const std::string& path) {
    std::vector<std::string> cols{"step"};
    for (int i = 0; i < r.n_latent; ++i) cols.push_back("y" + std::to_string(i));
    CsvWriter w(path, cols);
    std::vector<double> row(1 + static_cast<size_t>(r.n_latent));
    for (size_t s = 0; s < r.steps(); ++s) {
        row[0] = static_cast<double>(s);
        const auto l = r.latent_at(s);
        for (int i = 0; i < r.n_latent; ++i) row[1 + static_cast<size_t>(i)] = l[i];
        w.row(row);
    }
}

// Side-by-side PGM frames of the predicted vs measured (z, E) grid at the
// given station for selected steps of a finished run.
template <typename T>
void export_tune_frames(const ModelBundle<T>& model, MeasurementProvider& provider,
                        const TuneResult& r, int station_id, std::span<const size_t> steps,
                        const std::string& path_prefix) {
    const int grid = model.net.arch.grid;
    const int s_idx = model.axes.station_index(station_id);
    for (size_t step : steps) {
        if (step >= r.steps()) throw ConfigError("frames: step index out of range");
        const std::vector<T> stack = decode_latent(model.net, r.latent_at(step));
        const auto pred = stack_channel(std::span<const T>(stack), model.axes.station_ids, grid,
                                        s_idx, kChannelZE);
        const std::vector<double> predd(pred.begin(), pred.end());
        const auto& meas = provider.measure(static_cast<int>(step)).tcav.at(station_id);
        const std::string tag = std::to_string(step);
        write_pgm(path_prefix + "_step" + tag + "_pred.pgm", predd, grid, grid);
        write_pgm(path_prefix + "_step" + tag + "_meas.pgm", meas, grid, grid);
    }
}

}  // namespace lspt
