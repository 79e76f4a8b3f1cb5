#pragma once

#include <string>
#include <vector>

#include "lspt/container.hpp"
#include "lspt/errors.hpp"
#include "lspt/nn.hpp"
#include "lspt/projection.hpp"

namespace lspt {

// Per-scalar standardization statistics, computed on the train split and
// stored with the model so inference standardizes identically.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stdev;

    void validate() const {
        if (mean.size() != stdev.size()) throw ConfigError("norm stats: size mismatch");
        for (double s : stdev)
            if (!(s > 0.0)) throw ConfigError("norm stats: stdev must be positive");
    }

    double standardize(size_t i, double raw) const { return (raw - mean[i]) / stdev[i]; }
};

inline void put_axis_table(TensorContainer& c, const AxisTable& axes) {
    const size_t s = axes.station_ids.size();
    if (axes.station_axes.size() != s) throw ConfigError("axis table: inconsistent sizes");
    std::vector<double> ids(s);
    std::vector<double> lo(s * 6), hi(s * 6);
    for (size_t i = 0; i < s; ++i) {
        ids[i] = static_cast<double>(axes.station_ids[i]);
        for (int k = 0; k < 6; ++k) {
            lo[i * 6 + static_cast<size_t>(k)] = axes.station_axes[i][static_cast<size_t>(k)].lo;
            hi[i * 6 + static_cast<size_t>(k)] = axes.station_axes[i][static_cast<size_t>(k)].hi;
        }
    }
    c.put_f64("axes/station_ids", {s}, std::move(ids));
    c.put_f64("axes/station_lo", {s, 6}, std::move(lo));
    c.put_f64("axes/station_hi", {s, 6}, std::move(hi));
    c.put_f64("axes/input_lo", {2}, {axes.input_axes[0].lo, axes.input_axes[1].lo});
    c.put_f64("axes/input_hi", {2}, {axes.input_axes[0].hi, axes.input_axes[1].hi});
}

inline AxisTable get_axis_table(const TensorContainer& c) {
    AxisTable axes;
    const auto& ids = c.at("axes/station_ids");
    const auto& lo = c.at("axes/station_lo");
    const auto& hi = c.at("axes/station_hi");
    const size_t s = ids.f64.size();
    if (lo.f64.size() != s * 6 || hi.f64.size() != s * 6)
        throw ConfigError("axis table: malformed container entries");
    axes.station_ids.resize(s);
    axes.station_axes.resize(s);
    for (size_t i = 0; i < s; ++i) {
        axes.station_ids[i] = static_cast<int>(ids.f64[i]);
        for (int k = 0; k < 6; ++k)
            axes.station_axes[i][static_cast<size_t>(k)] =
                AxisRange{lo.f64[i * 6 + static_cast<size_t>(k)],
                          hi.f64[i * 6 + static_cast<size_t>(k)]};
    }
    const auto& ilo = c.at("axes/input_lo");
    const auto& ihi = c.at("axes/input_hi");
    axes.input_axes[0] = AxisRange{ilo.f64.at(0), ihi.f64.at(0)};
    axes.input_axes[1] = AxisRange{ilo.f64.at(1), ihi.f64.at(1)};
    return axes;
}

// A trained model plus everything inference needs: standardization
// statistics, the frozen histogram axes, and the train-split latent
// spread used to size tuning bounds.
template <typename T>
struct ModelBundle {
    Network<T> net;
    NormStats scalar_stats;
    AxisTable axes;
    std::vector<double> latent_mean;
    std::vector<double> latent_std;
};

namespace detail {

inline std::vector<double> widen(const std::vector<int>& v) {
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
    return out;
}

inline std::vector<int> narrow(const std::vector<double>& v) {
    std::vector<int> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<int>(v[i]);
    return out;
}

}  // namespace detail

template <typename T>
void save_model(const ModelBundle<T>& m, const std::string& path) {
    TensorContainer c;
    const NetworkArch& a = m.net.arch;
    c.put_scalar("arch/grid", a.grid);
    c.put_scalar("arch/n_scalars", a.n_scalars);
    c.put_scalar("arch/latent_dim", a.latent_dim);
    c.put_scalar("arch/base_size", a.base_size);
    c.put_scalar("arch/base_channels", a.base_channels);
    c.put_scalar("arch/output_channels", a.output_channels);
    c.put_scalar("arch/leak", a.leak);
    c.put_scalar("arch/seed", static_cast<double>(m.net.seed));
    c.put_f64("arch/encoder_conv", {a.encoder_conv.size()}, detail::widen(a.encoder_conv));
    c.put_f64("arch/encoder_dense", {a.encoder_dense.size()}, detail::widen(a.encoder_dense));
    c.put_f64("arch/decoder_dense", {a.decoder_dense.size()}, detail::widen(a.decoder_dense));
    c.put_f64("arch/decoder_conv", {a.decoder_conv.size()}, detail::widen(a.decoder_conv));
    const size_t n_params = m.net.params.size();
    std::vector<double> params(n_params);
    for (size_t i = 0; i < n_params; ++i) params[i] = static_cast<double>(m.net.params[i]);
    c.put_f64("params", {n_params}, std::move(params));
    m.scalar_stats.validate();
    c.put_f64("scalars/mean", {m.scalar_stats.mean.size()}, m.scalar_stats.mean);
    c.put_f64("scalars/std", {m.scalar_stats.stdev.size()}, m.scalar_stats.stdev);
    put_axis_table(c, m.axes);
    if (!m.latent_mean.empty()) {
        c.put_f64("latent/mean", {m.latent_mean.size()}, m.latent_mean);
        c.put_f64("latent/std", {m.latent_std.size()}, m.latent_std);
    }
    c.write(path);
}

template <typename T>
ModelBundle<T> load_model(const std::string& path) {
    const TensorContainer c = TensorContainer::read(path);
    NetworkArch a;
    a.grid = static_cast<int>(c.scalar("arch/grid"));
    a.n_scalars = static_cast<int>(c.scalar("arch/n_scalars"));
    a.latent_dim = static_cast<int>(c.scalar("arch/latent_dim"));
    a.base_size = static_cast<int>(c.scalar("arch/base_size"));
    a.base_channels = static_cast<int>(c.scalar("arch/base_channels"));
    a.output_channels = static_cast<int>(c.scalar("arch/output_channels"));
    a.leak = c.scalar("arch/leak");
    a.encoder_conv = detail::narrow(c.at("arch/encoder_conv").f64);
    a.encoder_dense = detail::narrow(c.at("arch/encoder_dense").f64);
    a.decoder_dense = detail::narrow(c.at("arch/decoder_dense").f64);
    a.decoder_conv = detail::narrow(c.at("arch/decoder_conv").f64);

    ModelBundle<T> m;
    m.net = init_network<T>(a, static_cast<uint64_t>(c.scalar("arch/seed")));
    const auto& params = c.at("params").f64;
    if (params.size() != m.net.params.size())
        throw ConfigError("checkpoint: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) m.net.params[i] = static_cast<T>(params[i]);
    m.scalar_stats.mean = c.at("scalars/mean").f64;
    m.scalar_stats.stdev = c.at("scalars/std").f64;
    m.scalar_stats.validate();
    m.axes = get_axis_table(c);
    if (c.contains("latent/mean")) {
        m.latent_mean = c.at("latent/mean").f64;
        m.latent_std = c.at("latent/std").f64;
    }
    return m;
}

}  // namespace lspt
