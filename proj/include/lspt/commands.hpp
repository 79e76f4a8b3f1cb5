#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lspt/checkpoint.hpp"
#include "lspt/config.hpp"
#include "lspt/cost.hpp"
#include "lspt/csvio.hpp"
#include "lspt/dataset.hpp"
#include "lspt/nn.hpp"
#include "lspt/pgm.hpp"
#include "lspt/train.hpp"
#include "lspt/tune.hpp"

namespace lspt {

// The working float width of the shipped pipeline.
using Real = float;

namespace cmd_detail {

// Pilot runs for the axis table draw from a salted stream so they never
// alias the per-sample streams (which use seed + i).
constexpr uint64_t kAxisSeedSalt = 0x9e3779b97f4a7c15ull;

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw ConfigError("write to '" + path + "' failed");
}

inline void make_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw ConfigError("cannot create output dir '" + path + "'");
}

// Creates the output directory and drops the resolved config copy into it.
inline void prepare_output(const ExperimentConfig& cfg) {
    make_dir(cfg.output_dir);
    write_text(cfg.output_dir + "/config.json", resolved_config_json(cfg).dump(2) + "\n");
}

inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw ConfigError("percentile of empty set");
    const size_t k = static_cast<size_t>(q * static_cast<double>(v.size() - 1));
    std::nth_element(v.begin(), v.begin() + static_cast<long>(k), v.end());
    return v[k];
}

inline void require_same_axes(const AxisTable& a, const AxisTable& b, const std::string& what) {
    bool same = a.station_ids == b.station_ids && a.station_axes.size() == b.station_axes.size();
    if (same)
        for (size_t s = 0; s < a.station_axes.size() && same; ++s)
            for (int k = 0; k < 6 && same; ++k)
                same = a.station_axes[s][static_cast<size_t>(k)].lo ==
                           b.station_axes[s][static_cast<size_t>(k)].lo &&
                       a.station_axes[s][static_cast<size_t>(k)].hi ==
                           b.station_axes[s][static_cast<size_t>(k)].hi;
    if (same)
        for (int k = 0; k < 2 && same; ++k)
            same = a.input_axes[static_cast<size_t>(k)].lo ==
                       b.input_axes[static_cast<size_t>(k)].lo &&
                   a.input_axes[static_cast<size_t>(k)].hi ==
                       b.input_axes[static_cast<size_t>(k)].hi;
    if (!same) throw ConfigError(what + ": axis tables do not match");
}

// Writes per-sample per-channel L1 errors, a histogram, and returns the
// distribution summary. Shared by the eval command and training sweeps.
template <typename T>
json eval_artifacts(const ModelBundle<T>& model, const Dataset& d,
                    const std::vector<BatchSample<T>>& samples, const std::string& split,
                    size_t sample_offset, const std::string& out_dir) {
    const size_t elems = d.image_elems();
    const size_t n_channels = static_cast<size_t>(d.target_channels());
    CsvWriter csv(out_dir + "/errors.csv",
                  {"sample", "channel", "station", "coord_i", "coord_j", "l1"});
    std::vector<double> all;
    std::vector<double> per_sample;
    all.reserve(samples.size() * n_channels);
    for (size_t i = 0; i < samples.size(); ++i) {
        const std::vector<T> pred = forward(model.net, samples[i].image, samples[i].scalars);
        double sample_acc = 0.0;
        for (size_t c = 0; c < n_channels; ++c) {
            const double l1 =
                l1_distance(std::span<const T>(pred).subspan(c * elems, elems),
                            samples[i].target.subspan(c * elems, elems));
            const int station = d.axes.station_ids[c / kNumProjections];
            const auto [pi, pj] = kProjectionPairs[c % kNumProjections];
            csv.row({static_cast<double>(sample_offset + i), static_cast<double>(c),
                     static_cast<double>(station), static_cast<double>(pi),
                     static_cast<double>(pj), l1});
            all.push_back(l1);
            sample_acc += l1;
        }
        per_sample.push_back(sample_acc / static_cast<double>(n_channels));
    }

    const double median = percentile(all, 0.5);
    const double p90 = percentile(all, 0.9);
    double mean = 0.0;
    for (double v : all) mean += v;
    mean /= static_cast<double>(all.size());

    // Histogram of the per-channel error distribution for plotting.
    const int n_bins = 40;
    const double hi_edge = std::max(1e-12, p90 * 2.0);
    std::vector<double> counts(n_bins, 0.0);
    for (double v : all) {
        int b = static_cast<int>(v / hi_edge * n_bins);
        b = std::clamp(b, 0, n_bins - 1);
        counts[static_cast<size_t>(b)] += 1.0;
    }
    CsvWriter hist_csv(out_dir + "/histogram.csv", {"bin_lo", "bin_hi", "count"});
    for (int b = 0; b < n_bins; ++b)
        hist_csv.row(
            {hi_edge * b / n_bins, hi_edge * (b + 1) / n_bins, counts[static_cast<size_t>(b)]});

    json summary;
    summary["split"] = split;
    summary["n_samples"] = samples.size();
    summary["n_channels"] = n_channels;
    summary["latent_dim"] = model.net.arch.latent_dim;
    summary["median_l1"] = median;
    summary["p90_l1"] = p90;
    summary["mean_l1"] = mean;
    summary["median_sample_l1"] = percentile(per_sample, 0.5);
    return summary;
}

// One supervised fit: init, train, latent statistics, checkpoint + history.
struct TrainedModel {
    ModelBundle<Real> bundle;
    TrainHistory history;
};

inline TrainedModel train_one(const Dataset& d, const SampleViews<Real>& views,
                              NetworkArch arch, TrainConfig tc, uint64_t seed,
                              const std::string& out_dir) {
    tc.seed = seed;
    Network<Real> net = init_network<Real>(arch, seed);
    TrainHistory hist = train(net, std::span<const BatchSample<Real>>(views.train),
                              std::span<const BatchSample<Real>>(views.test), tc);

    // Train-split latent statistics: the tuner's starting point and bounds.
    std::vector<double> mean(static_cast<size_t>(arch.latent_dim), 0.0);
    std::vector<double> sq(static_cast<size_t>(arch.latent_dim), 0.0);
    for (const BatchSample<Real>& s : views.train) {
        const std::vector<Real> latent = encode(net, s.image, s.scalars);
        for (int i = 0; i < arch.latent_dim; ++i) {
            const double v = static_cast<double>(latent[static_cast<size_t>(i)]);
            mean[static_cast<size_t>(i)] += v;
            sq[static_cast<size_t>(i)] += v * v;
        }
    }
    const double n = static_cast<double>(views.train.size());
    std::vector<double> stdev(static_cast<size_t>(arch.latent_dim), 0.0);
    for (int i = 0; i < arch.latent_dim; ++i) {
        const size_t k = static_cast<size_t>(i);
        mean[k] /= n;
        stdev[k] = std::sqrt(std::max(0.0, sq[k] / n - mean[k] * mean[k]));
    }

    TrainedModel tm{ModelBundle<Real>{std::move(net), scalar_stats_from(d), d.axes,
                                      std::move(mean), std::move(stdev)},
                    std::move(hist)};
    save_model(tm.bundle, out_dir + "/checkpoint.lspt");
    CsvWriter csv(out_dir + "/history.csv", {"epoch", "train_loss", "test_loss"});
    for (size_t e = 0; e < tm.history.train_loss.size(); ++e)
        csv.row({static_cast<double>(e), tm.history.train_loss[e], tm.history.test_loss[e]});
    return tm;
}

}  // namespace cmd_detail

// ---------------------------------------------------------------------------
// datagen: sample machine settings, track beams, histogram projections.

inline void cmd_datagen(const ExperimentConfig& cfg) {
    cfg.sampling.validate();
    cfg.generator.validate();
    validate_lattice(cfg.lattice);
    if (cfg.datagen.n_train + cfg.datagen.n_test == 0)
        throw ConfigError("datagen: n_train + n_test must be positive");
    cmd_detail::prepare_output(cfg);

    const AxisTable axes =
        compute_axis_table(cfg.lattice, cfg.generator, cfg.sampling, cfg.datagen.pilot_runs,
                           cfg.datagen.axis_padding, cfg.seed ^ cmd_detail::kAxisSeedSalt);
    const Dataset d =
        generate_dataset(cfg.lattice, cfg.generator, cfg.sampling, axes, cfg.datagen.n_train,
                         cfg.datagen.n_test, cfg.arch.grid, cfg.seed);
    const std::string path = cfg.output_dir + "/dataset.lspt";
    save_dataset(d, path);

    std::printf("datagen: %zu samples (%zu train, %zu test), grid %d, %d stations -> %s\n",
                d.n_samples, d.n_train, d.n_samples - d.n_train, d.grid, d.n_stations,
                path.c_str());
    const size_t elems = d.image_elems();
    for (int s = 0; s < d.n_stations; ++s) {
        double peak = 0.0;
        const size_t off = (static_cast<size_t>(s) * kNumProjections + kChannelZE) * elems;
        for (size_t i = 0; i < d.n_samples; ++i) {
            const auto t = d.target(i);
            for (size_t p = 0; p < elems; ++p)
                peak = std::max(peak, static_cast<double>(t[off + p]));
        }
        std::printf("datagen: station %d peak (z,E) bin mass %.4f\n", d.axes.station_ids[s],
                    peak);
    }
}

// ---------------------------------------------------------------------------
// train: supervised fit(s) of the encoder-decoder on a generated dataset.
// With a sweep section, trains latent_dims x seeds and evaluates each model
// on the test split so a dimension-accuracy comparison is one invocation.

inline void cmd_train(const ExperimentConfig& cfg) {
    if (cfg.paths.dataset.empty()) throw ConfigError("train: paths.dataset is required");
    cmd_detail::prepare_output(cfg);

    const Dataset d = load_dataset(cfg.paths.dataset);
    NetworkArch arch = cfg.arch;
    arch.n_scalars = MachineParams::kCount;
    arch.output_channels = d.target_channels();
    if (arch.grid != d.grid)
        throw ConfigError("train: architecture grid " + std::to_string(arch.grid) +
                          " does not match dataset grid " + std::to_string(d.grid));
    arch.validate();
    if (d.n_train == 0 || d.n_train == d.n_samples)
        throw ConfigError("train: dataset needs non-empty train and test splits");

    const NormStats stats = scalar_stats_from(d);
    const SampleViews<Real> views = make_sample_views<Real>(d, stats);

    if (!cfg.train_sweep.enabled()) {
        const cmd_detail::TrainedModel tm =
            cmd_detail::train_one(d, views, arch, cfg.train, cfg.seed, cfg.output_dir);
        std::printf(
            "train: %d epochs on %zu/%zu samples, final train loss %.6f, test loss %.6f\n",
            cfg.train.epochs, d.n_train, d.n_samples - d.n_train,
            tm.history.train_loss.back(), tm.history.final_test_loss());
        std::printf("train: checkpoint -> %s/checkpoint.lspt\n", cfg.output_dir.c_str());
        return;
    }

    // Sweep: cross product of latent dimensions and seeds, each run a full
    // train + test-split evaluation in its own subdirectory.
    struct SweepRun {
        int latent_dim;
        uint64_t seed;
        std::string dir;
        json summary;
    };
    std::vector<SweepRun> runs;
    for (int dim : cfg.train_sweep.latent_dims)
        for (uint64_t s : cfg.train_sweep.seeds)
            runs.push_back(SweepRun{
                dim, s,
                cfg.output_dir + "/nl" + std::to_string(dim) + "_seed" + std::to_string(s),
                {}});

    parallel_for(runs.size(), [&](size_t i) {
        SweepRun& run = runs[i];
        cmd_detail::make_dir(run.dir);
        NetworkArch a = arch;
        a.latent_dim = run.latent_dim;
        a.validate();
        const cmd_detail::TrainedModel tm =
            cmd_detail::train_one(d, views, a, cfg.train, run.seed, run.dir);
        json summary =
            cmd_detail::eval_artifacts(tm.bundle, d, views.test, "test", d.n_train, run.dir);
        summary["seed"] = run.seed;
        summary["final_train_loss"] = tm.history.train_loss.back();
        summary["final_test_loss"] = tm.history.final_test_loss();
        cmd_detail::write_text(run.dir + "/summary.json", summary.dump(2) + "\n");
        run.summary = std::move(summary);
    });

    json by_dim = json::array();
    for (int dim : cfg.train_sweep.latent_dims) {
        std::vector<double> medians;
        for (const SweepRun& run : runs)
            if (run.latent_dim == dim)
                medians.push_back(run.summary.at("median_l1").get<double>());
        by_dim.push_back({{"latent_dim", dim},
                          {"n_seeds", medians.size()},
                          {"median_l1", cmd_detail::percentile(medians, 0.5)}});
    }
    for (const SweepRun& run : runs)
        std::printf("train: latent_dim=%d seed=%llu: median test L1 %.6f\n", run.latent_dim,
                    static_cast<unsigned long long>(run.seed),
                    run.summary.at("median_l1").get<double>());

    json top;
    json run_list = json::array();
    for (SweepRun& run : runs) run_list.push_back(std::move(run.summary));
    top["runs"] = std::move(run_list);
    top["by_latent_dim"] = std::move(by_dim);
    cmd_detail::write_text(cfg.output_dir + "/summary.json", top.dump(2) + "\n");
    std::printf("train: sweep of %zu runs -> %s/summary.json\n", runs.size(),
                cfg.output_dir.c_str());
}

// ---------------------------------------------------------------------------
// tune: latent-space feedback runs against hidden or manufactured targets.

namespace cmd_detail {

struct ResolvedVariant {
    std::string name;  // empty = no variants declared, run at the output root
    std::string checkpoint;
    CostSpec cost;
    std::string mode, init;
    double noise_level = 0.0;
    DriftSection drift;
    int n_runs = 1, n_frames = 0;
};

inline ResolvedVariant resolve_variant(const ExperimentConfig& cfg, const TuneVariant* v) {
    ResolvedVariant r;
    r.checkpoint = cfg.paths.checkpoint;
    r.cost = cfg.cost;
    r.mode = cfg.tune.mode;
    r.init = cfg.tune.init;
    r.noise_level = cfg.tune.noise_level;
    r.drift = cfg.tune.drift;
    r.n_runs = cfg.tune.n_runs;
    r.n_frames = cfg.tune.n_frames;
    if (v) {
        r.name = v->name;
        if (v->checkpoint) r.checkpoint = *v->checkpoint;
        if (v->cost) r.cost = *v->cost;
        if (v->mode) r.mode = *v->mode;
        if (v->init) r.init = *v->init;
        if (v->noise_level) r.noise_level = *v->noise_level;
        if (v->drift) r.drift = *v->drift;
        if (v->n_runs) r.n_runs = *v->n_runs;
        if (v->n_frames) r.n_frames = *v->n_frames;
    }
    if (r.checkpoint.empty())
        throw ConfigError("tune: no checkpoint for variant '" +
                          (r.name.empty() ? std::string("<base>") : r.name) +
                          "' (paths.checkpoint or variant checkpoint required)");
    r.cost.validate();
    return r;
}

struct RunOutcome {
    uint64_t seed = 0;
    TuneResult result;
    double cost_initial = 0.0;
    double cost_final_windowed = 0.0;
    double measured_init = 0.0, measured_final = 0.0;
    double unseen_init = 0.0, unseen_final = 0.0;
    std::vector<double> init_latent;
    std::vector<double> target_latent;  // manufactured mode only
    double target_distance = -1.0;      // |final - target|
    double box_diameter = 0.0;
};

inline json run_summary_json(const RunOutcome& o, const TuneConfig& es) {
    json j;
    j["seed"] = o.seed;
    j["steps"] = o.result.steps();
    j["steps_to_threshold"] = o.result.steps_to_threshold;
    j["reached_threshold"] = o.result.steps_to_threshold >= 0;
    j["stuck"] = o.result.stuck;
    j["success_threshold"] = es.success_threshold;
    j["cost_initial"] = o.cost_initial;
    j["cost_final"] = o.result.costs.back();
    j["cost_final_windowed"] = o.cost_final_windowed;
    j["measured_l1_init"] = o.measured_init;
    j["measured_l1_final"] = o.measured_final;
    j["unseen_l1_init"] = o.unseen_init;
    j["unseen_l1_final"] = o.unseen_final;
    j["unseen_improved"] = o.unseen_final < o.unseen_init;
    j["init_latent"] = o.init_latent;
    j["final_latent"] = o.result.final_latent;
    if (!o.target_latent.empty()) {
        j["target_latent"] = o.target_latent;
        j["target_distance"] = o.target_distance;
        j["box_diameter"] = o.box_diameter;
    }
    return j;
}

// Runs one resolved variant's batch of seeded tuning runs; returns the
// aggregate summary (also written to out_dir/summary.json).
inline json tune_one_variant(const ExperimentConfig& cfg, const ResolvedVariant& rv,
                             const ModelBundle<Real>& model, const std::string& out_dir) {
    const auto [lo, hi] = latent_bounds(model, cfg.es.bound_sigma);
    const double diameter = latent_box_diameter(lo, hi);
    const int grid = model.net.arch.grid;
    const std::vector<int>& stations = model.axes.station_ids;
    for (int id : rv.cost.stations()) model.axes.station_index(id);  // must exist
    const std::vector<int> measured = measured_channel_indices(rv.cost, stations);
    const int frame_station = !rv.cost.tcav_terms.empty()
                                  ? rv.cost.tcav_terms.front().station_id
                                  : rv.cost.spectrum_terms.front().station_id;

    std::vector<RunOutcome> outcomes(static_cast<size_t>(rv.n_runs));
    parallel_for(outcomes.size(), [&](size_t r) {
        RunOutcome& o = outcomes[r];
        o.seed = cfg.seed + r;
        o.box_diameter = diameter;
        Rng rng(o.seed);

        std::unique_ptr<MeasurementProvider> provider;
        if (rv.mode == "manufactured") {
            o.target_latent.resize(lo.size());
            for (size_t i = 0; i < lo.size(); ++i)
                o.target_latent[i] = rng.uniform(lo[i], hi[i]);
            provider = std::make_unique<DecoderTargetProvider<Real>>(
                model, std::span<const double>(o.target_latent));
        } else {
            const MachineParams hidden = cfg.sampling.sample(rng);
            const uint64_t beam_seed = rng.next_u64();
            SimulatorOptions opt;
            opt.noise_level = rv.noise_level;
            opt.noise_seed = rng.next_u64();
            if (rv.drift.enabled) {
                int pi = 0;
                for (int k = 0; k < MachineParams::kCount; ++k)
                    if (MachineParams::names()[static_cast<size_t>(k)] == rv.drift.parameter)
                        pi = k;
                const double amp = rv.drift.amplitude;
                const double period = static_cast<double>(rv.drift.period_steps);
                opt.drift = [pi, amp, period](int step, const MachineParams& base) {
                    auto a = base.to_array();
                    a[static_cast<size_t>(pi)] +=
                        amp * std::sin(6.283185307179586 * static_cast<double>(step) / period);
                    return MachineParams::from_array(a);
                };
            }
            provider = std::make_unique<SimulatorProvider>(cfg.lattice, cfg.generator, hidden,
                                                           beam_seed, model.axes, grid,
                                                           std::move(opt));
        }

        o.init_latent.resize(lo.size());
        if (rv.init == "centroid") {
            o.init_latent = model.latent_mean;
        } else if (rv.init == "corner") {
            for (size_t i = 0; i < lo.size(); ++i)
                o.init_latent[i] = (rng.next_u64() & 1u) ? hi[i] : lo[i];
        } else {  // uniform
            for (size_t i = 0; i < lo.size(); ++i) o.init_latent[i] = rng.uniform(lo[i], hi[i]);
        }

        o.result = tune(model, *provider, rv.cost, cfg.es, o.init_latent);
        o.cost_initial = o.result.costs.front();
        const size_t win =
            std::min<size_t>(static_cast<size_t>(cfg.es.stuck_window), o.result.steps());
        double acc = 0.0;
        for (size_t s = o.result.steps() - win; s < o.result.steps(); ++s)
            acc += o.result.costs[s];
        o.cost_final_windowed = acc / static_cast<double>(win);

        // Paired unseen-channel comparison at the end-of-run truth.
        const std::vector<double>& truth = provider->truth_stack(cfg.es.n_steps - 1);
        const std::vector<Real> init_stack =
            decode_latent(model.net, std::span<const double>(o.init_latent));
        const std::vector<Real> final_stack =
            decode_latent(model.net, std::span<const double>(o.result.final_latent));
        const ErrorReport rep_init =
            evaluate_unseen(std::span<const Real>(init_stack), std::span<const double>(truth),
                            measured, grid, stations.size());
        const ErrorReport rep_final =
            evaluate_unseen(std::span<const Real>(final_stack), std::span<const double>(truth),
                            measured, grid, stations.size());
        o.measured_init = rep_init.measured_mean;
        o.measured_final = rep_final.measured_mean;
        o.unseen_init = rep_init.unseen_mean;
        o.unseen_final = rep_final.unseen_mean;
        if (!o.target_latent.empty()) {
            double d2 = 0.0;
            for (size_t i = 0; i < lo.size(); ++i) {
                const double dd = o.result.final_latent[i] - o.target_latent[i];
                d2 += dd * dd;
            }
            o.target_distance = std::sqrt(d2);
        }

        const std::string run_dir =
            out_dir + "/run_" + (r < 10 ? "00" : r < 100 ? "0" : "") + std::to_string(r);
        make_dir(run_dir);
        export_cost_csv(o.result, run_dir + "/cost.csv");
        export_latent_csv(o.result, run_dir + "/latent.csv");
        if (rv.n_frames > 0) {
            std::vector<size_t> steps;
            const size_t last = o.result.steps() - 1;
            if (rv.n_frames == 1) {
                steps.push_back(last);
            } else {
                for (int f = 0; f < rv.n_frames; ++f)
                    steps.push_back(static_cast<size_t>(
                        std::llround(static_cast<double>(f) * static_cast<double>(last) /
                                     static_cast<double>(rv.n_frames - 1))));
                steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
            }
            export_tune_frames(model, *provider, o.result, frame_station,
                               std::span<const size_t>(steps), run_dir + "/lps");
        }
        write_text(run_dir + "/summary.json", run_summary_json(o, cfg.es).dump(2) + "\n");
    });

    int stuck_count = 0, reached = 0, improved = 0;
    std::vector<double> steps_censored;
    json runs = json::array();
    for (const auto& o : outcomes) {
        stuck_count += o.result.stuck ? 1 : 0;
        reached += o.result.steps_to_threshold >= 0 ? 1 : 0;
        improved += o.unseen_final < o.unseen_init ? 1 : 0;
        steps_censored.push_back(o.result.steps_to_threshold >= 0
                                     ? static_cast<double>(o.result.steps_to_threshold)
                                     : static_cast<double>(cfg.es.n_steps));
        runs.push_back(run_summary_json(o, cfg.es));
    }
    const int n_runs = rv.n_runs;
    json agg;
    if (!rv.name.empty()) agg["name"] = rv.name;
    agg["checkpoint"] = rv.checkpoint;
    agg["mode"] = rv.mode;
    agg["latent_dim"] = model.net.arch.latent_dim;
    agg["n_runs"] = n_runs;
    agg["stuck_count"] = stuck_count;
    agg["stuck_fraction"] = static_cast<double>(stuck_count) / static_cast<double>(n_runs);
    agg["reached_threshold_count"] = reached;
    // Runs that never reach the threshold are counted at n_steps.
    agg["median_steps_to_threshold"] = percentile(steps_censored, 0.5);
    agg["unseen_improved_count"] = improved;
    agg["unseen_improved_fraction"] =
        static_cast<double>(improved) / static_cast<double>(n_runs);
    agg["runs"] = std::move(runs);
    write_text(out_dir + "/summary.json", agg.dump(2) + "\n");
    return agg;
}

}  // namespace cmd_detail

inline void cmd_tune(const ExperimentConfig& cfg) {
    // Resolve all variants up front so config errors surface before any run.
    std::vector<cmd_detail::ResolvedVariant> variants;
    if (cfg.tune.variants.empty()) {
        variants.push_back(cmd_detail::resolve_variant(cfg, nullptr));
    } else {
        for (const TuneVariant& v : cfg.tune.variants)
            variants.push_back(cmd_detail::resolve_variant(cfg, &v));
    }

    std::map<std::string, std::unique_ptr<const ModelBundle<Real>>> models;
    for (const auto& rv : variants) {
        if (models.count(rv.checkpoint)) continue;
        auto model =
            std::make_unique<const ModelBundle<Real>>(load_model<Real>(rv.checkpoint));
        if (cfg.arch_specified && cfg.arch.latent_dim != model->net.arch.latent_dim)
            throw ConfigError("tune: config latent_dim " + std::to_string(cfg.arch.latent_dim) +
                              " does not match checkpoint latent_dim " +
                              std::to_string(model->net.arch.latent_dim) + " ('" +
                              rv.checkpoint + "')");
        models.emplace(rv.checkpoint, std::move(model));
    }
    cmd_detail::prepare_output(cfg);

    json per_variant = json::array();
    for (const auto& rv : variants) {
        const std::string out_dir =
            rv.name.empty() ? cfg.output_dir : cfg.output_dir + "/" + rv.name;
        cmd_detail::make_dir(out_dir);
        json agg = cmd_detail::tune_one_variant(cfg, rv, *models.at(rv.checkpoint), out_dir);
        agg.erase("runs");  // per-run detail lives in the variant's own summary
        per_variant.push_back(std::move(agg));
    }
    if (!cfg.tune.variants.empty())
        cmd_detail::write_text(cfg.output_dir + "/summary.json",
                               json{{"variants", per_variant}}.dump(2) + "\n");

    for (const auto& agg : per_variant)
        std::printf(
            "tune: %s: %d runs, stuck %d, reached threshold %d, median steps %.0f, "
            "unseen improved %d\n",
            agg.contains("name") ? agg["name"].get<std::string>().c_str() : "batch",
            agg["n_runs"].get<int>(), agg["stuck_count"].get<int>(),
            agg["reached_threshold_count"].get<int>(),
            agg["median_steps_to_threshold"].get<double>(),
            agg["unseen_improved_count"].get<int>());
    std::printf("tune: summary -> %s/summary.json\n", cfg.output_dir.c_str());
}

// ---------------------------------------------------------------------------
// eval: per-sample, per-channel reconstruction errors of a trained model.

inline void cmd_eval(const ExperimentConfig& cfg) {
    if (cfg.paths.checkpoint.empty()) throw ConfigError("eval: paths.checkpoint is required");
    if (cfg.paths.dataset.empty()) throw ConfigError("eval: paths.dataset is required");
    const ModelBundle<Real> model = load_model<Real>(cfg.paths.checkpoint);
    const Dataset d = load_dataset(cfg.paths.dataset);
    cmd_detail::require_same_axes(model.axes, d.axes, "eval");
    if (model.net.arch.grid != d.grid || model.net.arch.output_channels != d.target_channels())
        throw ConfigError("eval: checkpoint geometry does not match dataset");

    const bool train_split = cfg.eval.split == "train";
    if ((train_split ? d.n_train : d.n_samples - d.n_train) == 0)
        throw ConfigError("eval: selected split is empty");

    // No output is written until the inputs have validated.
    cmd_detail::prepare_output(cfg);

    const SampleViews<Real> views = make_sample_views<Real>(d, model.scalar_stats);
    const json summary = cmd_detail::eval_artifacts(
        model, d, train_split ? views.train : views.test, cfg.eval.split,
        train_split ? 0 : d.n_train, cfg.output_dir);
    cmd_detail::write_text(cfg.output_dir + "/summary.json", summary.dump(2) + "\n");

    std::printf("eval: %zu %s samples x %zu channels: median L1 %.6f, p90 %.6f, mean %.6f\n",
                summary["n_samples"].get<size_t>(), cfg.eval.split.c_str(),
                summary["n_channels"].get<size_t>(), summary["median_l1"].get<double>(),
                summary["p90_l1"].get<double>(), summary["mean_l1"].get<double>());
}

}  // namespace lspt
