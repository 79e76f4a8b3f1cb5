#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lspt/errors.hpp"

namespace lspt {

enum class DitherKind { cosine, square };

// Bounded extremum-seeking configuration. Parameter j is driven at
//   dp_j/dt = sqrt(alpha_j * omega_j) * psi(omega_j t + k * y_hat),
// with omega_j = omega * ratios_j and psi either cos or sign(cos). The
// update rate is bounded by sqrt(alpha_j * omega_j) no matter what the
// measured cost does, and on average the parameters descend the gradient
// of the cost at rate (k * alpha_j / 2).
struct ESConfig {
    size_t n_params = 1;
    double omega = 50.0;             // base dither frequency, rad/s
    std::vector<double> ratios;      // distinct per-parameter frequency ratios
    double gain = 1.0;               // feedback gain k
    std::vector<double> alpha;       // per-parameter dither amplitude
    double dt = 1e-3;                // integration step, s
    DitherKind kind = DitherKind::cosine;
    std::vector<double> lo;          // optional clamps; empty = unbounded
    std::vector<double> hi;
    // When set, the measured cost is affinely rescaled to roughly [0, 1]
    // using the first `normalizer_window` observations, making the gain k
    // dimensionless. Leave off when the cost scale is already known.
    bool normalize_cost = false;
    int normalizer_window = 10;

    void validate() const {
        if (n_params == 0) throw ConfigError("es: n_params must be >= 1");
        if (ratios.size() != n_params) throw ConfigError("es: ratios size != n_params");
        if (alpha.size() != n_params) throw ConfigError("es: alpha size != n_params");
        for (size_t i = 0; i < n_params; ++i) {
            if (!(alpha[i] >= 0.0)) throw ConfigError("es: alpha must be >= 0");
            if (!(ratios[i] > 0.0)) throw ConfigError("es: ratios must be positive");
            for (size_t j = i + 1; j < n_params; ++j)
                if (ratios[i] == ratios[j])
                    throw ConfigError("es: dither ratios must be pairwise distinct");
            if (!(omega * ratios[i] * dt < 0.5))
                throw ConfigError("es: omega * r_i * dt must stay below 0.5");
        }
        if (!(gain >= 0.0)) throw ConfigError("es: gain must be >= 0");
        if (!(dt > 0.0)) throw ConfigError("es: dt must be positive");
        if (!lo.empty() || !hi.empty()) {
            if (lo.size() != n_params || hi.size() != n_params)
                throw ConfigError("es: bounds must cover all parameters");
            for (size_t i = 0; i < n_params; ++i)
                if (!(lo[i] < hi[i])) throw ConfigError("es: bounds need lo < hi");
        }
        if (normalizer_window < 1) throw ConfigError("es: normalizer window must be >= 1");
    }
};

// Default frequency ratios sqrt(prime_i / 2): 1, sqrt(3/2), sqrt(5/2), ...
// Pairwise irrational ratios approximate dither orthogonality at finite
// omega.
inline std::vector<double> es_default_ratios(size_t n) {
    std::vector<double> out;
    out.reserve(n);
    int candidate = 2;
    auto is_prime = [](int v) {
        for (int d = 2; d * d <= v; ++d)
            if (v % d == 0) return false;
        return v > 1;
    };
    while (out.size() < n) {
        if (is_prime(candidate)) out.push_back(std::sqrt(candidate / 2.0));
        ++candidate;
    }
    return out;
}

// Affine cost rescaling frozen after the first `window` observations.
class CostNormalizer {
public:
    double apply(double y, int window) {
        if (!frozen_) {
            lo_ = std::min(lo_, y);
            hi_ = std::max(hi_, y);
            if (++count_ >= window) {
                offset_ = lo_;
                scale_ = (hi_ > lo_) ? 1.0 / (hi_ - lo_) : 1.0;
                frozen_ = true;
            }
        }
        if (!frozen_) {
            const double span = hi_ - lo_;
            return span > 0.0 ? (y - lo_) / span : 0.0;
        }
        return (y - offset_) * scale_;
    }

    bool frozen() const { return frozen_; }

private:
    int count_ = 0;
    double lo_ = std::numeric_limits<double>::infinity();
    double hi_ = -std::numeric_limits<double>::infinity();
    double offset_ = 0.0;
    double scale_ = 1.0;
    bool frozen_ = false;
};

struct ESState {
    std::vector<double> p;
    double t = 0.0;
    uint64_t steps = 0;
    CostNormalizer normalizer;
};

inline ESState make_es_state(const ESConfig& cfg, std::span<const double> init_p) {
    cfg.validate();
    if (init_p.size() != cfg.n_params) throw ConfigError("es: init size != n_params");
    ESState s;
    s.p.assign(init_p.begin(), init_p.end());
    if (!cfg.lo.empty())
        for (size_t i = 0; i < cfg.n_params; ++i)
            s.p[i] = std::clamp(s.p[i], cfg.lo[i], cfg.hi[i]);
    return s;
}

// Hard analytic bound on |dp_j/dt|.
inline double dither_bound(const ESConfig& cfg, size_t j) {
    return std::sqrt(cfg.alpha[j] * cfg.omega * cfg.ratios[j]);
}

// Instantaneous update rate for parameter j. |rate| <= dither_bound(cfg, j)
// holds exactly for any finite t and y_hat.
inline double dither_rate(size_t j, double t, double y_hat, const ESConfig& cfg) {
    if (j >= cfg.n_params) throw ConfigError("es: parameter index out of range");
    const double bound = dither_bound(cfg, j);
    const double c = std::cos(cfg.omega * cfg.ratios[j] * t + cfg.gain * y_hat);
    switch (cfg.kind) {
        case DitherKind::cosine: return bound * c;
        case DitherKind::square: return c > 0.0 ? bound : (c < 0.0 ? -bound : 0.0);
    }
    return 0.0;
}

// One forward-Euler step. Throws on a non-finite measurement, leaving the
// state untouched.
inline void es_step(ESState& state, double y_hat, const ESConfig& cfg) {
    if (!std::isfinite(y_hat)) throw NumericError("es: non-finite cost measurement");
    const double yn =
        cfg.normalize_cost ? state.normalizer.apply(y_hat, cfg.normalizer_window) : y_hat;
    for (size_t i = 0; i < cfg.n_params; ++i) {
        state.p[i] += cfg.dt * dither_rate(i, state.t, yn, cfg);
        if (!cfg.lo.empty()) state.p[i] = std::clamp(state.p[i], cfg.lo[i], cfg.hi[i]);
    }
    state.t += cfg.dt;
    state.steps += 1;
}

using CostEvaluator = std::function<double(std::span<const double>)>;

// Flat (t, p, y_hat) record of an ES run; n_steps + 1 points, final state
// included.
struct Trajectory {
    size_t n_params = 0;
    std::vector<double> t;
    std::vector<double> y;
    std::vector<double> p;  // row-major [step][param]

    size_t size() const { return t.size(); }
    std::span<const double> params_at(size_t step) const {
        return {p.data() + step * n_params, n_params};
    }
};

inline Trajectory es_run(const CostEvaluator& evaluator, const ESConfig& cfg,
                         std::span<const double> init_p, size_t n_steps) {
    if (n_steps < 1) throw ConfigError("es: n_steps must be >= 1");
    ESState state = make_es_state(cfg, init_p);
    Trajectory traj;
    traj.n_params = cfg.n_params;
    traj.t.reserve(n_steps + 1);
    traj.y.reserve(n_steps + 1);
    traj.p.reserve((n_steps + 1) * cfg.n_params);
    for (size_t step = 0; step <= n_steps; ++step) {
        const double y_hat = evaluator(state.p);
        if (!std::isfinite(y_hat)) throw NumericError("es: evaluator returned non-finite cost");
        traj.t.push_back(state.t);
        traj.y.push_back(y_hat);
        traj.p.insert(traj.p.end(), state.p.begin(), state.p.end());
        if (step < n_steps) es_step(state, y_hat, cfg);
    }
    return traj;
}

// Number of steps in one period of the slowest dither.
inline size_t slowest_dither_period_steps(const ESConfig& cfg) {
    double r_min = cfg.ratios[0];
    for (double r : cfg.ratios) r_min = std::min(r_min, r);
    return static_cast<size_t>(std::llround(2.0 * std::numbers::pi / (cfg.omega * r_min * cfg.dt)));
}

// Centered moving average of one trajectory column over `window` samples.
inline std::vector<double> windowed_mean(std::span<const double> series, size_t window) {
    if (window < 1 || series.size() < window) return {};
    std::vector<double> out;
    out.reserve(series.size() - window + 1);
    double acc = 0.0;
    for (size_t i = 0; i < window; ++i) acc += series[i];
    out.push_back(acc / static_cast<double>(window));
    for (size_t i = window; i < series.size(); ++i) {
        acc += series[i] - series[i - window];
        out.push_back(acc / static_cast<double>(window));
    }
    return out;
}

// Dither sample psi(omega * r * t) used by the orthogonality check.
inline double dither_wave(DitherKind kind, double arg) {
    const double c = std::cos(arg);
    if (kind == DitherKind::cosine) return c;
    return c > 0.0 ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
}

// (1/T) * integral_0^T psi_i(w r_i tau) psi_j(w r_j tau) dtau by composite
// Simpson quadrature, resolving the fastest oscillation. For i != j the
// residual decays as omega grows; for i = j it approaches the mean of
// psi^2 (1/2 for cosine, 1 for square).
inline double orthogonality_residual(DitherKind kind, double r_i, double r_j, double omega,
                                     double T, size_t min_samples = 0) {
    if (!(T > 0.0)) throw ConfigError("es: orthogonality horizon must be positive");
    const double fastest = omega * std::max(r_i, r_j);
    size_t n = static_cast<size_t>(200.0 * fastest * T / (2.0 * std::numbers::pi)) + 64;
    n = std::max(n, min_samples);
    if (n % 2 == 1) ++n;
    const double h = T / static_cast<double>(n);
    auto f = [&](double tau) {
        return dither_wave(kind, omega * r_i * tau) * dither_wave(kind, omega * r_j * tau);
    };
    double acc = f(0.0) + f(T);
    for (size_t s = 1; s < n; ++s) acc += f(h * static_cast<double>(s)) * (s % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0 / T;
}

}  // namespace lspt
