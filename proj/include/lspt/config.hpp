#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lspt/beam.hpp"
#include "lspt/cost.hpp"
#include "lspt/dataset.hpp"
#include "lspt/errors.hpp"
#include "lspt/lattice.hpp"
#include "lspt/nn.hpp"
#include "lspt/train.hpp"
#include "lspt/tune.hpp"

namespace lspt {

using json = nlohmann::json;

namespace cfg_detail {

inline std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

inline void require_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError("config: " + path + " must be an object");
}

inline void reject_unknown(const json& j, const std::string& path,
                           std::initializer_list<std::string_view> allowed) {
    require_object(j, path.empty() ? "document" : path);
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (std::string_view a : allowed)
            if (it.key() == a) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("config: unknown key '" + join(path, it.key()) + "'");
    }
}

inline double num_req(const json& j, const std::string& path, const std::string& key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number())
        throw ConfigError("config: " + join(path, key) + " must be a number");
    return it->get<double>();
}

inline double num_or(const json& j, const std::string& path, const std::string& key, double def) {
    auto it = j.find(key);
    if (it == j.end()) return def;
    if (!it->is_number()) throw ConfigError("config: " + join(path, key) + " must be a number");
    return it->get<double>();
}

inline int int_or(const json& j, const std::string& path, const std::string& key, int def) {
    auto it = j.find(key);
    if (it == j.end()) return def;
    if (!it->is_number_integer())
        throw ConfigError("config: " + join(path, key) + " must be an integer");
    return it->get<int>();
}

inline int int_req(const json& j, const std::string& path, const std::string& key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number_integer())
        throw ConfigError("config: " + join(path, key) + " must be an integer");
    return it->get<int>();
}

inline uint64_t seed_or(const json& j, const std::string& path, const std::string& key,
                        uint64_t def) {
    auto it = j.find(key);
    if (it == j.end()) return def;
    if (!it->is_number_integer() || it->get<int64_t>() < 0)
        throw ConfigError("config: " + join(path, key) + " must be a non-negative integer");
    return it->get<uint64_t>();
}

inline bool bool_or(const json& j, const std::string& path, const std::string& key, bool def) {
    auto it = j.find(key);
    if (it == j.end()) return def;
    if (!it->is_boolean()) throw ConfigError("config: " + join(path, key) + " must be a boolean");
    return it->get<bool>();
}

inline std::string str_or(const json& j, const std::string& path, const std::string& key,
                          const std::string& def) {
    auto it = j.find(key);
    if (it == j.end()) return def;
    if (!it->is_string()) throw ConfigError("config: " + join(path, key) + " must be a string");
    return it->get<std::string>();
}

inline std::vector<int> int_list_or(const json& j, const std::string& path, const std::string& key,
                                    std::vector<int> def) {
    auto it = j.find(key);
    if (it == j.end()) return def;
    if (!it->is_array()) throw ConfigError("config: " + join(path, key) + " must be an array");
    std::vector<int> out;
    for (const auto& v : *it) {
        if (!v.is_number_integer())
            throw ConfigError("config: " + join(path, key) + " must hold integers");
        out.push_back(v.get<int>());
    }
    return out;
}

}  // namespace cfg_detail

// ---------------------------------------------------------------------------
// Sections beyond the library structs they map onto.

struct DatagenSection {
    size_t n_train = 3000;
    size_t n_test = 300;
    int pilot_runs = 40;
    double axis_padding = 2.0;
};

struct DriftSection {
    bool enabled = false;
    std::string parameter = "l1_phase";
    double amplitude = 0.0;
    int period_steps = 1000;
};

// A named partial override of the tuning setup, so one config file can
// encode an experiment that compares cost specs, checkpoints, or drift
// settings side by side. Unset fields inherit the base sections.
struct TuneVariant {
    std::string name;
    std::optional<std::string> checkpoint;
    std::optional<CostSpec> cost;
    std::optional<std::string> mode;
    std::optional<std::string> init;
    std::optional<double> noise_level;
    std::optional<DriftSection> drift;  // JSON null = explicitly disabled
    std::optional<int> n_runs;
    std::optional<int> n_frames;
};

struct TuneSection {
    std::string mode = "simulator";  // or "manufactured"
    int n_runs = 1;
    std::string init = "centroid";   // "centroid" | "corner" | "uniform"
    double noise_level = 0.0;
    DriftSection drift;
    int n_frames = 0;                // PGM frames per run, 0 = none
    std::vector<TuneVariant> variants;
};

// Trains the cross product latent_dims x seeds in one command, evaluating
// each model on the test split, so a dimension-accuracy comparison is a
// single config file.
struct TrainSweep {
    std::vector<int> latent_dims;
    std::vector<uint64_t> seeds;
    bool enabled() const { return !latent_dims.empty(); }
};

struct EvalSection {
    std::string split = "test";  // or "train"
};

struct PathsSection {
    std::string dataset;
    std::string checkpoint;
};

// One fully-resolved experiment description: every knob of every stage,
// with defaults materialized, reproducible from (this, seeds) alone.
struct ExperimentConfig {
    std::string output_dir = "out";
    uint64_t seed = 1;
    PathsSection paths;
    Lattice lattice;
    GeneratorConfig generator;
    SamplingRanges sampling;
    NetworkArch arch;      // n_scalars/output_channels are derived, not configured
    bool arch_specified = false;  // whether the document carried an arch section
    DatagenSection datagen;
    TrainConfig train;     // train.seed is derived from the top-level seed
    TrainSweep train_sweep;
    TuneConfig es;
    CostSpec cost;
    TuneSection tune;
    EvalSection eval;
};

// The reference machine: two RF-chirp + chicane compression stages with a
// current-dependent wake between them, measurement stations after each
// stage and at the exit, and enough transverse optics that the injection
// offsets matter downstream.
inline Lattice default_lattice() {
    // Stage 1 rides at -pi/2 (zero mean energy gain, maximum chirp):
    // chirp h = v * wavenumber = 20.1 /m, so the first chicane removes
    // r56 * h = -0.75 of the bunch length, a ~4x compression on top of the
    // uncorrelated energy spread. The wake ramp between the stages makes the
    // downstream energy profile charge-dependent. Stage 2 rides off-crest so
    // its amplitude shifts the mean energy as well as the chirp, and a fixed
    // linearizer + trim chicane after station 2 keeps station 3
    // longitudinally distinct.
    constexpr double kQuarter = -1.5707963267948966;  // -pi/2
    return {
        Quad{0.3, 2.0},
        Drift{1.2},
        Quad{0.3, -2.0},
        Drift{1.2},
        Rf{0.067, kQuarter, 300.0, 1},
        Chicane{-0.0373, 0.056},
        Marker{1},
        Drift{1.0},
        WakeSurrogate{8.0e6},
        Rf{0.050, kQuarter + 0.6, 300.0, 2},
        Chicane{-0.008, 0.012},
        Marker{2},
        Quad{0.3, 1.5},
        Rf{0.020, kQuarter, 300.0, 0},
        Chicane{-0.005, 0.0075},
        Drift{2.0},
        Marker{3},
    };
}

inline SamplingRanges default_sampling() {
    SamplingRanges r;
    const std::array<double, MachineParams::kCount> lo = {-5e-4, -5e-4, 0.5e-9, 0.90,
                                                          -0.03, 0.90,  -0.10};
    const std::array<double, MachineParams::kCount> hi = {5e-4, 5e-4, 1.5e-9, 1.10,
                                                          0.03, 1.10, 0.10};
    r.lo = lo;
    r.hi = hi;
    return r;
}

// ---------------------------------------------------------------------------
// Parsing

namespace cfg_detail {

inline Lattice parse_lattice(const json& j) {
    if (!j.is_array()) throw ConfigError("config: lattice must be an array of elements");
    Lattice out;
    int idx = 0;
    for (const auto& e : j) {
        const std::string path = "lattice[" + std::to_string(idx++) + "]";
        require_object(e, path);
        const std::string type = str_or(e, path, "type", "");
        if (type == "drift") {
            reject_unknown(e, path, {"type", "length"});
            out.push_back(Drift{num_req(e, path, "length")});
        } else if (type == "quad") {
            reject_unknown(e, path, {"type", "length", "k1"});
            out.push_back(Quad{num_req(e, path, "length"), num_req(e, path, "k1")});
        } else if (type == "rf") {
            reject_unknown(e, path, {"type", "v", "phase", "wavenumber", "section"});
            Rf rf{num_req(e, path, "v"), num_req(e, path, "phase"),
                  num_req(e, path, "wavenumber"), int_or(e, path, "section", 0)};
            if (rf.section < 0 || rf.section > 2)
                throw ConfigError("config: " + path + ".section must be 0, 1 or 2");
            out.push_back(rf);
        } else if (type == "chicane") {
            reject_unknown(e, path, {"type", "r56", "t566"});
            out.push_back(Chicane{num_req(e, path, "r56"), num_req(e, path, "t566")});
        } else if (type == "wake") {
            reject_unknown(e, path, {"type", "kappa"});
            out.push_back(WakeSurrogate{num_req(e, path, "kappa")});
        } else if (type == "station") {
            reject_unknown(e, path, {"type", "id"});
            out.push_back(Marker{int_req(e, path, "id")});
        } else {
            throw ConfigError("config: " + path + ".type must be one of "
                              "drift|quad|rf|chicane|wake|station");
        }
    }
    validate_lattice(out);
    return out;
}

inline GeneratorConfig parse_generator(const json& j) {
    const std::string p = "generator";
    reject_unknown(j, p,
                   {"n_particles", "sigma_x", "sigma_xp", "sigma_y", "sigma_yp", "sigma_z",
                    "sigma_delta", "n_blobs", "sep_z_lo", "sep_z_hi", "weight_lo", "weight_hi",
                    "scale_lo", "scale_hi", "xz_coupling", "sep_y_jitter"});
    GeneratorConfig g;
    g.n_particles = int_or(j, p, "n_particles", g.n_particles);
    g.sigma_x = num_or(j, p, "sigma_x", g.sigma_x);
    g.sigma_xp = num_or(j, p, "sigma_xp", g.sigma_xp);
    g.sigma_y = num_or(j, p, "sigma_y", g.sigma_y);
    g.sigma_yp = num_or(j, p, "sigma_yp", g.sigma_yp);
    g.sigma_z = num_or(j, p, "sigma_z", g.sigma_z);
    g.sigma_delta = num_or(j, p, "sigma_delta", g.sigma_delta);
    g.n_blobs = int_or(j, p, "n_blobs", g.n_blobs);
    g.sep_z_lo = num_or(j, p, "sep_z_lo", g.sep_z_lo);
    g.sep_z_hi = num_or(j, p, "sep_z_hi", g.sep_z_hi);
    g.weight_lo = num_or(j, p, "weight_lo", g.weight_lo);
    g.weight_hi = num_or(j, p, "weight_hi", g.weight_hi);
    g.scale_lo = num_or(j, p, "scale_lo", g.scale_lo);
    g.scale_hi = num_or(j, p, "scale_hi", g.scale_hi);
    g.xz_coupling = num_or(j, p, "xz_coupling", g.xz_coupling);
    g.sep_y_jitter = num_or(j, p, "sep_y_jitter", g.sep_y_jitter);
    g.validate();
    return g;
}

inline SamplingRanges parse_sampling(const json& j) {
    const std::string p = "sampling";
    require_object(j, p);
    const auto& names = MachineParams::names();
    reject_unknown(j, p,
                   {names[0], names[1], names[2], names[3], names[4], names[5], names[6]});
    SamplingRanges r = default_sampling();
    for (int i = 0; i < MachineParams::kCount; ++i) {
        auto it = j.find(names[static_cast<size_t>(i)]);
        if (it == j.end()) continue;
        const std::string key = join(p, names[static_cast<size_t>(i)]);
        if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
            throw ConfigError("config: " + key + " must be [lo, hi]");
        r.lo[static_cast<size_t>(i)] = (*it)[0].get<double>();
        r.hi[static_cast<size_t>(i)] = (*it)[1].get<double>();
    }
    r.validate();
    return r;
}

inline NetworkArch parse_arch(const json& j) {
    const std::string p = "arch";
    reject_unknown(j, p,
                   {"grid", "latent_dim", "encoder_conv", "encoder_dense", "decoder_dense",
                    "base_size", "base_channels", "decoder_conv", "leak"});
    NetworkArch a;
    a.grid = int_or(j, p, "grid", a.grid);
    a.latent_dim = int_or(j, p, "latent_dim", a.latent_dim);
    a.encoder_conv = int_list_or(j, p, "encoder_conv", a.encoder_conv);
    a.encoder_dense = int_list_or(j, p, "encoder_dense", a.encoder_dense);
    a.decoder_dense = int_list_or(j, p, "decoder_dense", a.decoder_dense);
    a.base_size = int_or(j, p, "base_size", a.base_size);
    a.base_channels = int_or(j, p, "base_channels", a.base_channels);
    a.decoder_conv = int_list_or(j, p, "decoder_conv", a.decoder_conv);
    a.leak = num_or(j, p, "leak", a.leak);
    return a;  // full validation happens once output_channels is known
}

inline DatagenSection parse_datagen(const json& j) {
    const std::string p = "datagen";
    reject_unknown(j, p, {"n_train", "n_test", "pilot_runs", "axis_padding"});
    DatagenSection d;
    const int n_train = int_or(j, p, "n_train", static_cast<int>(d.n_train));
    const int n_test = int_or(j, p, "n_test", static_cast<int>(d.n_test));
    if (n_train < 0 || n_test < 0)
        throw ConfigError("config: datagen sample counts must be non-negative");
    d.n_train = static_cast<size_t>(n_train);
    d.n_test = static_cast<size_t>(n_test);
    d.pilot_runs = int_or(j, p, "pilot_runs", d.pilot_runs);
    d.axis_padding = num_or(j, p, "axis_padding", d.axis_padding);
    return d;
}

inline TrainConfig parse_train(const json& j) {
    const std::string p = "train";
    reject_unknown(j, p,
                   {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "eps", "sweep"});
    TrainConfig t;
    t.epochs = int_or(j, p, "epochs", t.epochs);
    t.batch_size = int_or(j, p, "batch_size", t.batch_size);
    t.learning_rate = num_or(j, p, "learning_rate", t.learning_rate);
    t.beta1 = num_or(j, p, "beta1", t.beta1);
    t.beta2 = num_or(j, p, "beta2", t.beta2);
    t.eps = num_or(j, p, "eps", t.eps);
    t.validate();
    return t;
}

inline TrainSweep parse_train_sweep(const json& train_section) {
    TrainSweep s;
    auto it = train_section.find("sweep");
    if (it == train_section.end() || it->is_null()) return s;
    const std::string p = "train.sweep";
    require_object(*it, p);
    reject_unknown(*it, p, {"latent_dims", "seeds"});
    auto dims = it->find("latent_dims");
    auto seeds = it->find("seeds");
    if (dims == it->end() || !dims->is_array() || dims->empty())
        throw ConfigError("config: " + p + ".latent_dims must be a non-empty array");
    if (seeds == it->end() || !seeds->is_array() || seeds->empty())
        throw ConfigError("config: " + p + ".seeds must be a non-empty array");
    for (const auto& d : *dims) {
        if (!d.is_number_integer() || d.get<int64_t>() < 1)
            throw ConfigError("config: " + p + ".latent_dims entries must be integers >= 1");
        s.latent_dims.push_back(d.get<int>());
    }
    for (const auto& sd : *seeds) {
        if (!sd.is_number_unsigned() && !(sd.is_number_integer() && sd.get<int64_t>() >= 0))
            throw ConfigError("config: " + p + ".seeds entries must be non-negative integers");
        s.seeds.push_back(sd.get<uint64_t>());
    }
    return s;
}

inline TuneConfig parse_es(const json& j) {
    const std::string p = "es";
    reject_unknown(j, p,
                   {"n_steps", "omega", "dt", "gain", "amplitude_frac", "bound_sigma",
                    "normalize_cost", "dither", "success_threshold", "stuck_window",
                    "stuck_rel_tol", "stuck_consecutive"});
    TuneConfig t;
    t.n_steps = int_or(j, p, "n_steps", t.n_steps);
    t.omega = num_or(j, p, "omega", t.omega);
    t.dt = num_or(j, p, "dt", t.dt);
    t.gain = num_or(j, p, "gain", t.gain);
    t.amplitude_frac = num_or(j, p, "amplitude_frac", t.amplitude_frac);
    t.bound_sigma = num_or(j, p, "bound_sigma", t.bound_sigma);
    t.normalize_cost = bool_or(j, p, "normalize_cost", t.normalize_cost);
    const std::string kind = str_or(j, p, "dither", "cosine");
    if (kind == "cosine")
        t.kind = DitherKind::cosine;
    else if (kind == "square")
        t.kind = DitherKind::square;
    else
        throw ConfigError("config: es.dither must be 'cosine' or 'square'");
    t.success_threshold = num_or(j, p, "success_threshold", t.success_threshold);
    t.stuck_window = int_or(j, p, "stuck_window", t.stuck_window);
    t.stuck_rel_tol = num_or(j, p, "stuck_rel_tol", t.stuck_rel_tol);
    t.stuck_consecutive = int_or(j, p, "stuck_consecutive", t.stuck_consecutive);
    t.validate();
    return t;
}

inline CostSpec parse_cost(const json& j, const std::string& p = "cost") {
    reject_unknown(j, p, {"tcav", "spectrum"});
    CostSpec spec;
    auto parse_terms = [&](const char* key, std::vector<CostTerm>& out) {
        auto it = j.find(key);
        if (it == j.end()) return;
        const std::string kp = join(p, key);
        if (!it->is_array()) throw ConfigError("config: " + kp + " must be an array");
        int idx = 0;
        for (const auto& term : *it) {
            const std::string tp = kp + "[" + std::to_string(idx++) + "]";
            reject_unknown(term, tp, {"station", "weight"});
            out.push_back(CostTerm{int_req(term, tp, "station"),
                                   num_or(term, tp, "weight", 1.0)});
        }
    };
    parse_terms("tcav", spec.tcav_terms);
    parse_terms("spectrum", spec.spectrum_terms);
    spec.validate();
    return spec;
}

inline void check_tune_mode(const std::string& mode, const std::string& path) {
    if (mode != "simulator" && mode != "manufactured")
        throw ConfigError("config: " + path + " must be 'simulator' or 'manufactured'");
}

inline void check_tune_init(const std::string& init, const std::string& path) {
    if (init != "centroid" && init != "corner" && init != "uniform")
        throw ConfigError("config: " + path + " must be 'centroid', 'corner' or 'uniform'");
}

inline DriftSection parse_drift(const json& j, const std::string& dp) {
    reject_unknown(j, dp, {"parameter", "amplitude", "period_steps"});
    DriftSection d;
    d.enabled = true;
    d.parameter = str_or(j, dp, "parameter", d.parameter);
    bool known = false;
    for (const auto& n : MachineParams::names())
        if (n == d.parameter) known = true;
    if (!known)
        throw ConfigError("config: " + dp + ".parameter must name a machine parameter");
    d.amplitude = num_req(j, dp, "amplitude");
    d.period_steps = int_or(j, dp, "period_steps", d.period_steps);
    if (d.period_steps < 2)
        throw ConfigError("config: " + dp + ".period_steps must be >= 2");
    return d;
}

inline TuneSection parse_tune(const json& j) {
    const std::string p = "tune";
    reject_unknown(j, p,
                   {"mode", "n_runs", "init", "noise_level", "drift", "n_frames", "variants"});
    TuneSection t;
    t.mode = str_or(j, p, "mode", t.mode);
    check_tune_mode(t.mode, "tune.mode");
    t.n_runs = int_or(j, p, "n_runs", t.n_runs);
    if (t.n_runs < 1) throw ConfigError("config: tune.n_runs must be >= 1");
    t.init = str_or(j, p, "init", t.init);
    check_tune_init(t.init, "tune.init");
    t.noise_level = num_or(j, p, "noise_level", t.noise_level);
    if (!(t.noise_level >= 0.0)) throw ConfigError("config: tune.noise_level must be >= 0");
    t.n_frames = int_or(j, p, "n_frames", t.n_frames);
    if (t.n_frames < 0) throw ConfigError("config: tune.n_frames must be >= 0");
    if (auto it = j.find("drift"); it != j.end() && !it->is_null())
        t.drift = parse_drift(*it, join(p, "drift"));
    if (auto it = j.find("variants"); it != j.end() && !it->is_null()) {
        if (!it->is_array() || it->empty())
            throw ConfigError("config: tune.variants must be a non-empty array");
        int idx = 0;
        for (const auto& vj : *it) {
            const std::string vp = "tune.variants[" + std::to_string(idx++) + "]";
            require_object(vj, vp);
            reject_unknown(vj, vp,
                           {"name", "checkpoint", "cost", "mode", "init", "noise_level",
                            "drift", "n_runs", "n_frames"});
            TuneVariant v;
            v.name = str_or(vj, vp, "name", "");
            if (v.name.empty())
                throw ConfigError("config: " + vp + ".name is required");
            for (char ch : v.name)
                if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-')
                    throw ConfigError("config: " + vp +
                                      ".name must use [A-Za-z0-9_-] characters");
            for (const TuneVariant& prev : t.variants)
                if (prev.name == v.name)
                    throw ConfigError("config: duplicate tune variant name '" + v.name + "'");
            if (vj.contains("checkpoint")) v.checkpoint = str_or(vj, vp, "checkpoint", "");
            if (vj.contains("cost")) v.cost = parse_cost(vj.at("cost"), vp + ".cost");
            if (vj.contains("mode")) {
                v.mode = str_or(vj, vp, "mode", "");
                check_tune_mode(*v.mode, vp + ".mode");
            }
            if (vj.contains("init")) {
                v.init = str_or(vj, vp, "init", "");
                check_tune_init(*v.init, vp + ".init");
            }
            if (vj.contains("noise_level")) {
                v.noise_level = num_req(vj, vp, "noise_level");
                if (!(*v.noise_level >= 0.0))
                    throw ConfigError("config: " + vp + ".noise_level must be >= 0");
            }
            if (auto dit = vj.find("drift"); dit != vj.end())
                v.drift = dit->is_null() ? DriftSection{}
                                         : parse_drift(*dit, vp + ".drift");
            if (vj.contains("n_runs")) {
                v.n_runs = int_req(vj, vp, "n_runs");
                if (*v.n_runs < 1)
                    throw ConfigError("config: " + vp + ".n_runs must be >= 1");
            }
            if (vj.contains("n_frames")) {
                v.n_frames = int_req(vj, vp, "n_frames");
                if (*v.n_frames < 0)
                    throw ConfigError("config: " + vp + ".n_frames must be >= 0");
            }
            t.variants.push_back(std::move(v));
        }
    }
    return t;
}

inline EvalSection parse_eval(const json& j) {
    reject_unknown(j, "eval", {"split"});
    EvalSection e;
    e.split = str_or(j, "eval", "split", e.split);
    if (e.split != "test" && e.split != "train")
        throw ConfigError("config: eval.split must be 'test' or 'train'");
    return e;
}

inline PathsSection parse_paths(const json& j) {
    reject_unknown(j, "paths", {"dataset", "checkpoint"});
    PathsSection p;
    p.dataset = str_or(j, "paths", "dataset", "");
    p.checkpoint = str_or(j, "paths", "checkpoint", "");
    return p;
}

}  // namespace cfg_detail

inline ExperimentConfig parse_config(const json& doc) {
    using namespace cfg_detail;
    reject_unknown(doc, "",
                   {"output_dir", "seed", "paths", "lattice", "generator", "sampling", "arch",
                    "datagen", "train", "es", "cost", "tune", "eval"});
    ExperimentConfig c;
    c.output_dir = str_or(doc, "", "output_dir", c.output_dir);
    c.seed = seed_or(doc, "", "seed", c.seed);
    c.lattice = default_lattice();
    c.sampling = default_sampling();
    c.cost.tcav_terms = {CostTerm{1, 1.0}};
    if (auto it = doc.find("paths"); it != doc.end()) c.paths = parse_paths(*it);
    if (auto it = doc.find("lattice"); it != doc.end()) c.lattice = parse_lattice(*it);
    if (auto it = doc.find("generator"); it != doc.end()) c.generator = parse_generator(*it);
    if (auto it = doc.find("sampling"); it != doc.end()) c.sampling = parse_sampling(*it);
    if (auto it = doc.find("arch"); it != doc.end()) {
        c.arch = parse_arch(*it);
        c.arch_specified = true;
    }
    if (auto it = doc.find("datagen"); it != doc.end()) c.datagen = parse_datagen(*it);
    if (auto it = doc.find("train"); it != doc.end()) {
        c.train = parse_train(*it);
        c.train_sweep = parse_train_sweep(*it);
    }
    if (auto it = doc.find("es"); it != doc.end()) c.es = parse_es(*it);
    if (auto it = doc.find("cost"); it != doc.end()) c.cost = parse_cost(*it);
    if (auto it = doc.find("tune"); it != doc.end()) c.tune = parse_tune(*it);
    if (auto it = doc.find("eval"); it != doc.end()) c.eval = parse_eval(*it);
    c.train.seed = c.seed;
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Emission: the fully resolved document, byte-stable across reruns.

inline json lattice_to_json(const Lattice& lattice) {
    json arr = json::array();
    for (const LatticeElement& elem : lattice) {
        json e;
        if (const Drift* d = std::get_if<Drift>(&elem)) {
            e = {{"type", "drift"}, {"length", d->length}};
        } else if (const Quad* q = std::get_if<Quad>(&elem)) {
            e = {{"type", "quad"}, {"length", q->length}, {"k1", q->k1}};
        } else if (const Rf* r = std::get_if<Rf>(&elem)) {
            e = {{"type", "rf"},
                 {"v", r->v},
                 {"phase", r->phase},
                 {"wavenumber", r->wavenumber},
                 {"section", r->section}};
        } else if (const Chicane* ch = std::get_if<Chicane>(&elem)) {
            e = {{"type", "chicane"}, {"r56", ch->r56}, {"t566", ch->t566}};
        } else if (const WakeSurrogate* w = std::get_if<WakeSurrogate>(&elem)) {
            e = {{"type", "wake"}, {"kappa", w->kappa}};
        } else if (const Marker* m = std::get_if<Marker>(&elem)) {
            e = {{"type", "station"}, {"id", m->station_id}};
        }
        arr.push_back(std::move(e));
    }
    return arr;
}

inline json resolved_config_json(const ExperimentConfig& c) {
    json doc;
    doc["output_dir"] = c.output_dir;
    doc["seed"] = c.seed;
    doc["paths"] = {{"dataset", c.paths.dataset}, {"checkpoint", c.paths.checkpoint}};
    doc["lattice"] = lattice_to_json(c.lattice);
    const GeneratorConfig& g = c.generator;
    doc["generator"] = {{"n_particles", g.n_particles},
                        {"sigma_x", g.sigma_x},
                        {"sigma_xp", g.sigma_xp},
                        {"sigma_y", g.sigma_y},
                        {"sigma_yp", g.sigma_yp},
                        {"sigma_z", g.sigma_z},
                        {"sigma_delta", g.sigma_delta},
                        {"n_blobs", g.n_blobs},
                        {"sep_z_lo", g.sep_z_lo},
                        {"sep_z_hi", g.sep_z_hi},
                        {"weight_lo", g.weight_lo},
                        {"weight_hi", g.weight_hi},
                        {"scale_lo", g.scale_lo},
                        {"scale_hi", g.scale_hi},
                        {"xz_coupling", g.xz_coupling},
                        {"sep_y_jitter", g.sep_y_jitter}};
    json sampling;
    for (int i = 0; i < MachineParams::kCount; ++i)
        sampling[MachineParams::names()[static_cast<size_t>(i)]] = {
            c.sampling.lo[static_cast<size_t>(i)], c.sampling.hi[static_cast<size_t>(i)]};
    doc["sampling"] = std::move(sampling);
    doc["arch"] = {{"grid", c.arch.grid},
                   {"latent_dim", c.arch.latent_dim},
                   {"encoder_conv", c.arch.encoder_conv},
                   {"encoder_dense", c.arch.encoder_dense},
                   {"decoder_dense", c.arch.decoder_dense},
                   {"base_size", c.arch.base_size},
                   {"base_channels", c.arch.base_channels},
                   {"decoder_conv", c.arch.decoder_conv},
                   {"leak", c.arch.leak}};
    doc["datagen"] = {{"n_train", c.datagen.n_train},
                      {"n_test", c.datagen.n_test},
                      {"pilot_runs", c.datagen.pilot_runs},
                      {"axis_padding", c.datagen.axis_padding}};
    doc["train"] = {{"epochs", c.train.epochs},
                    {"batch_size", c.train.batch_size},
                    {"learning_rate", c.train.learning_rate},
                    {"beta1", c.train.beta1},
                    {"beta2", c.train.beta2},
                    {"eps", c.train.eps}};
    if (c.train_sweep.enabled())
        doc["train"]["sweep"] = {{"latent_dims", c.train_sweep.latent_dims},
                                 {"seeds", c.train_sweep.seeds}};
    doc["es"] = {{"n_steps", c.es.n_steps},
                 {"omega", c.es.omega},
                 {"dt", c.es.dt},
                 {"gain", c.es.gain},
                 {"amplitude_frac", c.es.amplitude_frac},
                 {"bound_sigma", c.es.bound_sigma},
                 {"normalize_cost", c.es.normalize_cost},
                 {"dither", c.es.kind == DitherKind::cosine ? "cosine" : "square"},
                 {"success_threshold", c.es.success_threshold},
                 {"stuck_window", c.es.stuck_window},
                 {"stuck_rel_tol", c.es.stuck_rel_tol},
                 {"stuck_consecutive", c.es.stuck_consecutive}};
    auto cost_to_json = [](const CostSpec& spec) {
        json tcav = json::array(), spectrum = json::array();
        for (const CostTerm& t : spec.tcav_terms)
            tcav.push_back({{"station", t.station_id}, {"weight", t.weight}});
        for (const CostTerm& t : spec.spectrum_terms)
            spectrum.push_back({{"station", t.station_id}, {"weight", t.weight}});
        return json{{"tcav", std::move(tcav)}, {"spectrum", std::move(spectrum)}};
    };
    auto drift_to_json = [](const DriftSection& d) -> json {
        if (!d.enabled) return nullptr;
        return json{{"parameter", d.parameter},
                    {"amplitude", d.amplitude},
                    {"period_steps", d.period_steps}};
    };
    doc["cost"] = cost_to_json(c.cost);
    json tune = {{"mode", c.tune.mode},
                 {"n_runs", c.tune.n_runs},
                 {"init", c.tune.init},
                 {"noise_level", c.tune.noise_level},
                 {"n_frames", c.tune.n_frames},
                 {"drift", drift_to_json(c.tune.drift)}};
    if (!c.tune.variants.empty()) {
        json variants = json::array();
        for (const TuneVariant& v : c.tune.variants) {
            json vj{{"name", v.name}};
            if (v.checkpoint) vj["checkpoint"] = *v.checkpoint;
            if (v.cost) vj["cost"] = cost_to_json(*v.cost);
            if (v.mode) vj["mode"] = *v.mode;
            if (v.init) vj["init"] = *v.init;
            if (v.noise_level) vj["noise_level"] = *v.noise_level;
            if (v.drift) vj["drift"] = drift_to_json(*v.drift);
            if (v.n_runs) vj["n_runs"] = *v.n_runs;
            if (v.n_frames) vj["n_frames"] = *v.n_frames;
            variants.push_back(std::move(vj));
        }
        tune["variants"] = std::move(variants);
    }
    doc["tune"] = std::move(tune);
    doc["eval"] = {{"split", c.eval.split}};
    return doc;
}

}  // namespace lspt
