#pragma once

// Independent reference implementations used as oracles by the test suites.
// Everything here is deliberately written against the math, not against the
// library code under test: separate integrators, closed forms, and naive
// recounts.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace oracle {

using Field = std::function<std::vector<double>(double, const std::vector<double>&)>;

struct OdePath {
    std::vector<double> t;
    std::vector<std::vector<double>> y;
};

// Classic RK4 on a small vector ODE y' = f(t, y).
inline OdePath rk4_path(const Field& f, std::vector<double> y0, double t0, double t_end,
                        double dt) {
    OdePath path;
    double t = t0;
    std::vector<double> y = std::move(y0);
    const size_t dim = y.size();
    auto axpy = [&](const std::vector<double>& base, double s, const std::vector<double>& d) {
        std::vector<double> out(dim);
        for (size_t i = 0; i < dim; ++i) out[i] = base[i] + s * d[i];
        return out;
    };
    while (true) {
        path.t.push_back(t);
        path.y.push_back(y);
        if (t >= t_end - 1e-12) break;
        const auto k1 = f(t, y);
        const auto k2 = f(t + 0.5 * dt, axpy(y, 0.5 * dt, k1));
        const auto k3 = f(t + 0.5 * dt, axpy(y, 0.5 * dt, k2));
        const auto k4 = f(t + dt, axpy(y, dt, k3));
        for (size_t i = 0; i < dim; ++i)
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        t += dt;
    }
    return path;
}

// Plain forward Euler at a much finer step; second independent integrator
// for cross-checking simulated plants.
inline std::vector<double> euler_final(const Field& f, std::vector<double> y0, double t0,
                                       double t_end, double dt) {
    double t = t0;
    std::vector<double> y = std::move(y0);
    while (t < t_end - 1e-12) {
        const auto d = f(t, y);
        for (size_t i = 0; i < y.size(); ++i) y[i] += dt * d[i];
        t += dt;
    }
    return y;
}

// Linear interpolation into an OdePath sampled on a uniform-ish grid.
inline double path_value(const OdePath& path, double t, size_t dim_index) {
    if (t <= path.t.front()) return path.y.front()[dim_index];
    if (t >= path.t.back()) return path.y.back()[dim_index];
    size_t lo = 0, hi = path.t.size() - 1;
    while (hi - lo > 1) {
        const size_t mid = (lo + hi) / 2;
        (path.t[mid] <= t ? lo : hi) = mid;
    }
    const double w = (t - path.t[lo]) / (path.t[hi] - path.t[lo]);
    return (1.0 - w) * path.y[lo][dim_index] + w * path.y[hi][dim_index];
}

// Mass of N(mu, sigma) on [lo, hi].
inline double gaussian_mass(double mu, double sigma, double lo, double hi) {
    const double s = sigma * std::sqrt(2.0);
    return 0.5 * (std::erf((hi - mu) / s) - std::erf((lo - mu) / s));
}

// Per-bin masses of N(mu, sigma) over `grid` bins spanning [lo, hi], with
// the two edge bins absorbing the tails (mirrors clamped binning).
inline std::vector<double> gaussian_bin_masses(double mu, double sigma, double lo, double hi,
                                               int grid) {
    std::vector<double> m(static_cast<size_t>(grid));
    const double w = (hi - lo) / grid;
    for (int a = 0; a < grid; ++a) {
        const double bl = (a == 0) ? -1e30 : lo + a * w;
        const double bh = (a == grid - 1) ? 1e30 : lo + (a + 1) * w;
        m[static_cast<size_t>(a)] = gaussian_mass(mu, sigma, bl, bh);
    }
    return m;
}

// Closed form of (1/T) * integral_0^T cos(a t) cos(b t) dt.
inline double cos_product_mean(double a, double b, double T) {
    auto sinc_term = [&](double w) {
        if (w == 0.0) return 1.0;
        return std::sin(w * T) / (w * T);
    };
    return 0.5 * (sinc_term(a - b) + sinc_term(a + b));
}

// Naive clamped 2D recount, arithmetic deliberately ordered differently
// from the library binning.
inline std::vector<double> naive_pair_histogram(std::span<const double> u,
                                                std::span<const double> v, double ulo, double uhi,
                                                double vlo, double vhi, int grid) {
    std::vector<double> h(static_cast<size_t>(grid) * grid, 0.0);
    const double su = grid / (uhi - ulo);
    const double sv = grid / (vhi - vlo);
    for (size_t n = 0; n < u.size(); ++n) {
        int a = static_cast<int>(std::floor((u[n] - ulo) * su));
        int b = static_cast<int>(std::floor((v[n] - vlo) * sv));
        if (a < 0) a = 0;
        if (a > grid - 1) a = grid - 1;
        if (b < 0) b = 0;
        if (b > grid - 1) b = grid - 1;
        h[static_cast<size_t>(a) * grid + b] += 1.0;
    }
    for (double& x : h) x /= static_cast<double>(u.size());
    return h;
}

// Central finite-difference gradient of a scalar function.
inline std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                            std::span<const double> p, double h) {
    std::vector<double> grad(p.size());
    std::vector<double> q(p.begin(), p.end());
    for (size_t i = 0; i < p.size(); ++i) {
        const double keep = q[i];
        q[i] = keep + h;
        const double fp = f(q);
        q[i] = keep - h;
        const double fm = f(q);
        q[i] = keep;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

inline double mean(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

inline double variance(std::span<const double> v) {
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return acc / static_cast<double>(v.size());
}

}  // namespace oracle
