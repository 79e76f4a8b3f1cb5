#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "lspt/errors.hpp"
#include "lspt/es.hpp"
#include "lspt/rng.hpp"

namespace lspt {

// Scalar plant x' = a x + b u with the textbook adaptive controller
//   u = theta x,  theta' = -k x^2.
// Stabilizes any a when b > 0; with b < 0 the gain adapts in the wrong
// direction and |x| grows, which is the failure mode motivating the
// model-independent dither schemes below.
struct AdaptiveGainPlant {
    double a = 1.0;
    double b = 2.0;
    double k = 1.0;

    struct Trace {
        std::vector<double> t, x, theta;
    };

    Trace simulate(double x0, double theta0, double t_end, double dt) const {
        if (!(dt > 0.0) || !(t_end > 0.0)) throw ConfigError("plant: dt and t_end must be positive");
        Trace tr;
        const size_t n = static_cast<size_t>(std::ceil(t_end / dt));
        tr.t.reserve(n + 1);
        tr.x.reserve(n + 1);
        tr.theta.reserve(n + 1);
        double x = x0, theta = theta0, t = 0.0;
        auto fx = [&](double xv, double th) { return a * xv + b * th * xv; };
        auto fth = [&](double xv) { return -k * xv * xv; };
        for (size_t s = 0; s <= n; ++s) {
            tr.t.push_back(t);
            tr.x.push_back(x);
            tr.theta.push_back(theta);
            if (s == n) break;
            const double k1x = fx(x, theta), k1t = fth(x);
            const double k2x = fx(x + 0.5 * dt * k1x, theta + 0.5 * dt * k1t);
            const double k2t = fth(x + 0.5 * dt * k1x);
            const double k3x = fx(x + 0.5 * dt * k2x, theta + 0.5 * dt * k2t);
            const double k3t = fth(x + 0.5 * dt * k2x);
            const double k4x = fx(x + dt * k3x, theta + dt * k3t);
            const double k4t = fth(x + dt * k3x);
            x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            theta += dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
            t += dt;
            if (!std::isfinite(x) || std::abs(x) > 1e12) break;
        }
        return tr;
    }

    // Regulation cost of a frozen feedback gain: integral of x^2 over a
    // fixed horizon. Lets a dither loop tune theta directly.
    CostEvaluator evaluator(double x0 = 1.0, double horizon = 5.0, double dt = 1e-3) const {
        return [*this, x0, horizon, dt](std::span<const double> p) {
            double x = x0, t = 0.0, acc = 0.0;
            const double theta = p[0];
            auto fx = [&](double xv) { return a * xv + b * theta * xv; };
            while (t < horizon) {
                acc += x * x * dt;
                const double k1 = fx(x);
                const double k2 = fx(x + 0.5 * dt * k1);
                const double k3 = fx(x + 0.5 * dt * k2);
                const double k4 = fx(x + dt * k3);
                x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                t += dt;
                if (!std::isfinite(x) || std::abs(x) > 1e6) return 1e12;
            }
            return acc;
        };
    }
};

// Same plant with a control gain that flips sign, b(t) = cos(2 pi f t).
// No fixed-sign feedback law can stabilize it; the dither input
//   u = sqrt(alpha omega) cos(omega t + k x^2)
// acts directly on the plant and keeps |x| bounded once
// k * alpha * mean(b^2) exceeds a.
struct SignVaryingPlant {
    double a = 1.0;
    double f = 2.0;       // Hz, gain sign flip rate
    double omega = 500.0; // dither, rad/s
    double alpha = 2.0;
    double k = 2.0;

    struct Trace {
        std::vector<double> t, x, u;
    };

    double gain_at(double t) const { return std::cos(2.0 * std::numbers::pi * f * t); }

    double dither_input(double t, double x) const {
        return std::sqrt(alpha * omega) * std::cos(omega * t + k * x * x);
    }

    Trace simulate(double x0, double t_end, double dt) const {
        if (!(dt > 0.0) || !(t_end > 0.0)) throw ConfigError("plant: dt and t_end must be positive");
        if (!(omega * dt < 0.5)) throw ConfigError("plant: omega * dt must stay below 0.5");
        Trace tr;
        const size_t n = static_cast<size_t>(std::ceil(t_end / dt));
        tr.t.reserve(n + 1);
        tr.x.reserve(n + 1);
        tr.u.reserve(n + 1);
        double x = x0, t = 0.0;
        auto fx = [&](double tv, double xv) { return a * xv + gain_at(tv) * dither_input(tv, xv); };
        for (size_t s = 0; s <= n; ++s) {
            tr.t.push_back(t);
            tr.x.push_back(x);
            tr.u.push_back(dither_input(t, x));
            if (s == n) break;
            const double k1 = fx(t, x);
            const double k2 = fx(t + 0.5 * dt, x + 0.5 * dt * k1);
            const double k3 = fx(t + 0.5 * dt, x + 0.5 * dt * k2);
            const double k4 = fx(t + dt, x + dt * k3);
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += dt;
            if (!std::isfinite(x) || std::abs(x) > 1e12) break;
        }
        return tr;
    }
};

// Vector plant with a noisy nonlinear cost: SPD quadratic bowl around
// `center` plus a quartic lip, measured with additive uniform noise.
struct NoisyBowlPlant {
    std::vector<double> center{0.6, -0.4, 0.2};
    double coupling = 0.3;       // off-diagonal quadratic coupling
    double quartic = 0.1;        // nonlinearity strength
    double noise_amplitude = 0.0;
    uint64_t noise_seed = 17;

    double true_cost(std::span<const double> p) const {
        const size_t n = center.size();
        if (p.size() != n) throw ConfigError("plant: parameter count mismatch");
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double qi = p[i] - center[i];
            acc += qi * qi + quartic * qi * qi * qi * qi;
            if (i + 1 < n) acc += coupling * qi * (p[i + 1] - center[i + 1]);
        }
        return acc;
    }

    // Stateful: successive calls draw fresh noise deterministically.
    CostEvaluator evaluator() const {
        auto rng = std::make_shared<Rng>(noise_seed);
        return [*this, rng](std::span<const double> p) {
            double y = true_cost(p);
            if (noise_amplitude > 0.0) y += rng->uniform(-noise_amplitude, noise_amplitude);
            return y;
        };
    }
};

struct BenchmarkSuite {
    AdaptiveGainPlant adaptive;
    SignVaryingPlant sign_varying;
    NoisyBowlPlant bowl;
};

inline BenchmarkSuite benchmark_plants() {
    return BenchmarkSuite{};
}

}  // namespace lspt
