#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lspt/errors.hpp"
#include "lspt/rng.hpp"

namespace lspt {

// Encoder-decoder architecture description. The encoder downsamples the
// G x G input image with stride-2 convolutions, flattens, concatenates the
// standardized scalars and maps through dense layers to a latent vector of
// latent_dim. The decoder maps the latent through dense layers to a
// base_size x base_size x base_channels map, then alternates 2x nearest
// upsampling with 3x3 convolutions until the grid size is reached, and a
// final 1x1 head produces output_channels maps, each normalized to unit
// sum by a per-channel softmax over pixels.
struct NetworkArch {
    int grid = 32;
    int n_scalars = 7;
    int latent_dim = 4;
    std::vector<int> encoder_conv{8, 16, 16};  // stride-2 3x3 stages
    std::vector<int> encoder_dense{48};        // hidden widths before the latent
    std::vector<int> decoder_dense{48};        // hidden widths after the latent
    int base_size = 4;
    int base_channels = 24;
    std::vector<int> decoder_conv{16, 12, 12};  // channels per upsample stage
    int output_channels = 75;
    double leak = 0.1;  // negative-side slope of the hidden activation

    void validate() const {
        if (grid < 4) throw ConfigError("arch: grid must be >= 4");
        if (n_scalars < 0) throw ConfigError("arch: n_scalars must be >= 0");
        if (latent_dim < 1) throw ConfigError("arch: latent_dim must be >= 1");
        if (output_channels < 1) throw ConfigError("arch: output_channels must be >= 1");
        if (base_size < 1 || base_channels < 1)
            throw ConfigError("arch: decoder base map must be non-empty");
        if (encoder_conv.empty() || decoder_conv.empty())
            throw ConfigError("arch: need at least one conv stage on each side");
        for (int c : encoder_conv)
            if (c < 1) throw ConfigError("arch: encoder channels must be >= 1");
        for (int c : decoder_conv)
            if (c < 1) throw ConfigError("arch: decoder channels must be >= 1");
        for (int w : encoder_dense)
            if (w < 1) throw ConfigError("arch: dense widths must be >= 1");
        for (int w : decoder_dense)
            if (w < 1) throw ConfigError("arch: dense widths must be >= 1");
        if (!(leak > 0.0) || leak >= 1.0) throw ConfigError("arch: leak must be in (0, 1)");
        int h = grid;
        for (size_t i = 0; i < encoder_conv.size(); ++i) {
            if (h % 2 != 0) throw ConfigError("arch: encoder stage input size must be even");
            h /= 2;
        }
        if (h < 1) throw ConfigError("arch: too many encoder stages for the grid");
        int d = base_size;
        for (size_t i = 0; i < decoder_conv.size(); ++i) d *= 2;
        if (d != grid)
            throw ConfigError("arch: base_size * 2^stages must equal grid");
    }
};

namespace nn {

struct ConvSpec {
    int in_h, in_w, cin, cout, stride;  // 3x3 kernel, pad 1
    size_t w_off, b_off;
    int out_h() const { return (in_h + 2 - 3) / stride + 1; }
    int out_w() const { return (in_w + 2 - 3) / stride + 1; }
};

struct DenseSpec {
    int in, out;
    size_t w_off, b_off;
};

// Fixed forward plan derived from an arch: parameter offsets and shapes.
struct LayerPlan {
    std::vector<ConvSpec> enc_conv;
    std::vector<DenseSpec> enc_dense;  // last entry outputs the latent
    std::vector<DenseSpec> dec_dense;  // last entry outputs the base map
    std::vector<ConvSpec> dec_conv;    // stride 1, input upsampled 2x first
    DenseSpec head;                    // 1x1 conv as per-pixel dense
    int flat_enc = 0;                  // flattened encoder output length
    size_t n_params = 0;

    static LayerPlan build(const NetworkArch& a) {
        a.validate();
        LayerPlan p;
        size_t off = 0;
        auto add_conv = [&off](std::vector<ConvSpec>& v, int h, int w, int cin, int cout,
                               int stride) {
            ConvSpec c{h, w, cin, cout, stride, off, 0};
            off += static_cast<size_t>(9) * cin * cout;
            c.b_off = off;
            off += static_cast<size_t>(cout);
            v.push_back(c);
        };
        auto add_dense = [&off](std::vector<DenseSpec>& v, int in, int out) {
            DenseSpec d{in, out, off, 0};
            off += static_cast<size_t>(in) * out;
            d.b_off = off;
            off += static_cast<size_t>(out);
            v.push_back(d);
        };

        int h = a.grid, cin = 1;
        for (int cout : a.encoder_conv) {
            add_conv(p.enc_conv, h, h, cin, cout, 2);
            h = p.enc_conv.back().out_h();
            cin = cout;
        }
        p.flat_enc = h * h * cin;
        int in = p.flat_enc + a.n_scalars;
        for (int w : a.encoder_dense) {
            add_dense(p.enc_dense, in, w);
            in = w;
        }
        add_dense(p.enc_dense, in, a.latent_dim);

        in = a.latent_dim;
        for (int w : a.decoder_dense) {
            add_dense(p.dec_dense, in, w);
            in = w;
        }
        add_dense(p.dec_dense, in, a.base_size * a.base_size * a.base_channels);

        h = a.base_size;
        cin = a.base_channels;
        for (int cout : a.decoder_conv) {
            h *= 2;
            add_conv(p.dec_conv, h, h, cin, cout, 1);
            cin = cout;
        }
        std::vector<DenseSpec> head_holder;
        add_dense(head_holder, cin, a.output_channels);
        p.head = head_holder[0];
        p.n_params = off;
        return p;
    }
};

}  // namespace nn

template <typename T>
struct Network {
    NetworkArch arch;
    nn::LayerPlan plan;
    std::vector<T> params;
    uint64_t seed = 0;

    size_t n_params() const { return plan.n_params; }
};

// Deterministic fan-in-scaled uniform initialization; biases start at zero.
template <typename T>
Network<T> init_network(const NetworkArch& arch, uint64_t seed) {
    Network<T> net;
    net.arch = arch;
    net.plan = nn::LayerPlan::build(arch);
    net.seed = seed;
    net.params.assign(net.plan.n_params, T(0));
    Rng rng(seed);
    auto fill = [&](size_t w_off, size_t count, int fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (size_t i = 0; i < count; ++i)
            net.params[w_off + i] = static_cast<T>(rng.uniform(-bound, bound));
    };
    for (const auto& c : net.plan.enc_conv)
        fill(c.w_off, static_cast<size_t>(9) * c.cin * c.cout, 9 * c.cin);
    for (const auto& d : net.plan.enc_dense) fill(d.w_off, static_cast<size_t>(d.in) * d.out, d.in);
    for (const auto& d : net.plan.dec_dense) fill(d.w_off, static_cast<size_t>(d.in) * d.out, d.in);
    for (const auto& c : net.plan.dec_conv)
        fill(c.w_off, static_cast<size_t>(9) * c.cin * c.cout, 9 * c.cin);
    fill(net.plan.head.w_off, static_cast<size_t>(net.plan.head.in) * net.plan.head.out,
         net.plan.head.in);
    return net;
}

namespace nn {

template <typename T>
inline T leaky(T v, T slope) {
    return v > T(0) ? v : slope * v;
}

// Derivative of the activation from its output value (valid because the
// map is strictly monotone through zero).
template <typename T>
inline T leaky_grad_from_out(T out, T slope) {
    return out > T(0) ? T(1) : slope;
}

// HWC 3x3 convolution, pad 1.
template <typename T>
void conv3x3_forward(const ConvSpec& c, std::span<const T> params, std::span<const T> in,
                     std::span<T> out) {
    const int oh = c.out_h(), ow = c.out_w();
    const T* w = params.data() + c.w_off;
    const T* b = params.data() + c.b_off;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            T* o = out.data() + (static_cast<size_t>(oy) * ow + ox) * c.cout;
            for (int co = 0; co < c.cout; ++co) o[co] = b[co];
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * c.stride - 1 + ky;
                if (iy < 0 || iy >= c.in_h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * c.stride - 1 + kx;
                    if (ix < 0 || ix >= c.in_w) continue;
                    const T* ip = in.data() + (static_cast<size_t>(iy) * c.in_w + ix) * c.cin;
                    const T* wp = w + (static_cast<size_t>(ky) * 3 + kx) * c.cin * c.cout;
                    for (int ci = 0; ci < c.cin; ++ci) {
                        const T a = ip[ci];
                        const T* wr = wp + static_cast<size_t>(ci) * c.cout;
                        for (int co = 0; co < c.cout; ++co) o[co] += a * wr[co];
                    }
                }
            }
        }
}

// Backward pass for conv3x3_forward. Accumulates into grad (same layout as
// params) and fills d_in (zeroed here).
template <typename T>
void conv3x3_backward(const ConvSpec& c, std::span<const T> params, std::span<const T> in,
                      std::span<const T> d_out, std::span<T> d_in, std::span<T> grad) {
    const int oh = c.out_h(), ow = c.out_w();
    const T* w = params.data() + c.w_off;
    T* gw = grad.data() + c.w_off;
    T* gb = grad.data() + c.b_off;
    std::fill(d_in.begin(), d_in.end(), T(0));
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const T* go = d_out.data() + (static_cast<size_t>(oy) * ow + ox) * c.cout;
            for (int co = 0; co < c.cout; ++co) gb[co] += go[co];
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * c.stride - 1 + ky;
                if (iy < 0 || iy >= c.in_h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * c.stride - 1 + kx;
                    if (ix < 0 || ix >= c.in_w) continue;
                    const size_t ibase = (static_cast<size_t>(iy) * c.in_w + ix) * c.cin;
                    const size_t wbase = (static_cast<size_t>(ky) * 3 + kx) * c.cin * c.cout;
                    for (int ci = 0; ci < c.cin; ++ci) {
                        const T a = in[ibase + ci];
                        const T* wr = w + wbase + static_cast<size_t>(ci) * c.cout;
                        T* gwr = gw + wbase + static_cast<size_t>(ci) * c.cout;
                        T acc = T(0);
                        for (int co = 0; co < c.cout; ++co) acc += go[co] * wr[co];
                        for (int co = 0; co < c.cout; ++co) gwr[co] += a * go[co];
                        d_in[ibase + ci] += acc;
                    }
                }
            }
        }
}

template <typename T>
void dense_forward(const DenseSpec& d, std::span<const T> params, std::span<const T> in,
                   std::span<T> out) {
    const T* w = params.data() + d.w_off;
    const T* b = params.data() + d.b_off;
    for (int o = 0; o < d.out; ++o) out[o] = b[o];
    for (int i = 0; i < d.in; ++i) {
        const T a = in[i];
        const T* wr = w + static_cast<size_t>(i) * d.out;
        for (int o = 0; o < d.out; ++o) out[o] += a * wr[o];
    }
}

template <typename T>
void dense_backward(const DenseSpec& d, std::span<const T> params, std::span<const T> in,
                    std::span<const T> d_out, std::span<T> d_in, std::span<T> grad) {
    const T* w = params.data() + d.w_off;
    T* gw = grad.data() + d.w_off;
    T* gb = grad.data() + d.b_off;
    for (int o = 0; o < d.out; ++o) gb[o] += d_out[o];
    for (int i = 0; i < d.in; ++i) {
        const T a = in[i];
        const T* wr = w + static_cast<size_t>(i) * d.out;
        T* gwr = gw + static_cast<size_t>(i) * d.out;
        T acc = T(0);
        for (int o = 0; o < d.out; ++o) {
            acc += d_out[o] * wr[o];
            gwr[o] += a * d_out[o];
        }
        d_in[i] = acc;
    }
}

template <typename T>
void upsample2x(std::span<const T> in, int h, int w, int c, std::span<T> out) {
    for (int y = 0; y < 2 * h; ++y) {
        const T* row = in.data() + (static_cast<size_t>(y / 2) * w) * c;
        T* orow = out.data() + (static_cast<size_t>(y) * 2 * w) * c;
        for (int x = 0; x < 2 * w; ++x)
            for (int k = 0; k < c; ++k) orow[static_cast<size_t>(x) * c + k] =
                row[static_cast<size_t>(x / 2) * c + k];
    }
}

template <typename T>
void upsample2x_backward(std::span<const T> d_out, int h, int w, int c, std::span<T> d_in) {
    std::fill(d_in.begin(), d_in.end(), T(0));
    for (int y = 0; y < 2 * h; ++y) {
        T* row = d_in.data() + (static_cast<size_t>(y / 2) * w) * c;
        const T* orow = d_out.data() + (static_cast<size_t>(y) * 2 * w) * c;
        for (int x = 0; x < 2 * w; ++x)
            for (int k = 0; k < c; ++k)
                row[static_cast<size_t>(x / 2) * c + k] += orow[static_cast<size_t>(x) * c + k];
    }
}

// Per-channel softmax over pixels, channel-major input [C][P].
template <typename T>
void channel_softmax(std::span<const T> logits, int channels, int pixels, std::span<T> out) {
    for (int c = 0; c < channels; ++c) {
        const T* in = logits.data() + static_cast<size_t>(c) * pixels;
        T* o = out.data() + static_cast<size_t>(c) * pixels;
        T peak = in[0];
        for (int p = 1; p < pixels; ++p) peak = std::max(peak, in[p]);
        // Wide accumulator: the per-channel sum must hold to ~1e-7 so that
        // normalized channels sum to 1 within 1e-6 even at float precision.
        double total = 0.0;
        for (int p = 0; p < pixels; ++p) {
            o[p] = std::exp(in[p] - peak);
            total += static_cast<double>(o[p]);
        }
        const T inv = static_cast<T>(1.0 / total);
        for (int p = 0; p < pixels; ++p) o[p] *= inv;
    }
}

// d_logits = s * (d_out - <d_out, s>) per channel.
template <typename T>
void channel_softmax_backward(std::span<const T> softmax_out, std::span<const T> d_out,
                              int channels, int pixels, std::span<T> d_logits) {
    for (int c = 0; c < channels; ++c) {
        const T* s = softmax_out.data() + static_cast<size_t>(c) * pixels;
        const T* g = d_out.data() + static_cast<size_t>(c) * pixels;
        T* dl = d_logits.data() + static_cast<size_t>(c) * pixels;
        T dot = T(0);
        for (int p = 0; p < pixels; ++p) dot += g[p] * s[p];
        for (int p = 0; p < pixels; ++p) dl[p] = s[p] * (g[p] - dot);
    }
}

// All intermediate activations of one forward pass, kept for backprop.
// Activation buffers hold post-activation values.
template <typename T>
struct Workspace {
    std::vector<std::vector<T>> enc_conv_out;  // per stage, HWC, post-activation
    std::vector<T> flat;                       // flattened conv output + scalars
    std::vector<std::vector<T>> enc_dense_out; // last = latent (linear)
    std::vector<std::vector<T>> dec_dense_out; // post-activation, last = base map
    std::vector<std::vector<T>> dec_up;        // upsampled inputs, per stage
    std::vector<std::vector<T>> dec_conv_out;  // post-activation, per stage
    std::vector<T> head_hwc;                   // logits, HWC
    std::vector<T> logits_chw;                 // logits, channel-major
    std::vector<T> out_chw;                    // softmax output, channel-major

    void resize(const NetworkArch& a, const LayerPlan& p) {
        enc_conv_out.resize(p.enc_conv.size());
        for (size_t i = 0; i < p.enc_conv.size(); ++i)
            enc_conv_out[i].resize(static_cast<size_t>(p.enc_conv[i].out_h()) *
                                   p.enc_conv[i].out_w() * p.enc_conv[i].cout);
        flat.resize(static_cast<size_t>(p.flat_enc) + a.n_scalars);
        enc_dense_out.resize(p.enc_dense.size());
        for (size_t i = 0; i < p.enc_dense.size(); ++i)
            enc_dense_out[i].resize(static_cast<size_t>(p.enc_dense[i].out));
        dec_dense_out.resize(p.dec_dense.size());
        for (size_t i = 0; i < p.dec_dense.size(); ++i)
            dec_dense_out[i].resize(static_cast<size_t>(p.dec_dense[i].out));
        dec_up.resize(p.dec_conv.size());
        dec_conv_out.resize(p.dec_conv.size());
        for (size_t i = 0; i < p.dec_conv.size(); ++i) {
            const auto& c = p.dec_conv[i];
            dec_up[i].resize(static_cast<size_t>(c.in_h) * c.in_w * c.cin);
            dec_conv_out[i].resize(static_cast<size_t>(c.out_h()) * c.out_w() * c.cout);
        }
        const size_t out_sz = static_cast<size_t>(a.output_channels) * a.grid * a.grid;
        head_hwc.resize(out_sz);
        logits_chw.resize(out_sz);
        out_chw.resize(out_sz);
    }
};

template <typename T>
void encode_into(const Network<T>& net, std::span<const T> image, std::span<const T> scalars,
                 Workspace<T>& ws) {
    const auto& p = net.plan;
    const auto& a = net.arch;
    if (image.size() != static_cast<size_t>(a.grid) * a.grid)
        throw ConfigError("network: image size mismatch");
    if (scalars.size() != static_cast<size_t>(a.n_scalars))
        throw ConfigError("network: scalar count mismatch");
    const T slope = static_cast<T>(a.leak);
    std::span<const T> cur = image;
    for (size_t i = 0; i < p.enc_conv.size(); ++i) {
        conv3x3_forward(p.enc_conv[i], std::span<const T>(net.params), cur,
                        std::span<T>(ws.enc_conv_out[i]));
        for (T& v : ws.enc_conv_out[i]) v = leaky(v, slope);
        cur = ws.enc_conv_out[i];
    }
    std::copy(cur.begin(), cur.end(), ws.flat.begin());
    std::copy(scalars.begin(), scalars.end(), ws.flat.begin() + p.flat_enc);
    std::span<const T> dcur = ws.flat;
    for (size_t i = 0; i < p.enc_dense.size(); ++i) {
        dense_forward(p.enc_dense[i], std::span<const T>(net.params), dcur,
                      std::span<T>(ws.enc_dense_out[i]));
        if (i + 1 < p.enc_dense.size())  // latent layer stays linear
            for (T& v : ws.enc_dense_out[i]) v = leaky(v, slope);
        dcur = ws.enc_dense_out[i];
    }
}

template <typename T>
void decode_into(const Network<T>& net, std::span<const T> latent, Workspace<T>& ws) {
    const auto& p = net.plan;
    const auto& a = net.arch;
    if (latent.size() != static_cast<size_t>(a.latent_dim))
        throw ConfigError("network: latent size mismatch");
    const T slope = static_cast<T>(a.leak);
    std::span<const T> cur = latent;
    for (size_t i = 0; i < p.dec_dense.size(); ++i) {
        dense_forward(p.dec_dense[i], std::span<const T>(net.params), cur,
                      std::span<T>(ws.dec_dense_out[i]));
        for (T& v : ws.dec_dense_out[i]) v = leaky(v, slope);
        cur = ws.dec_dense_out[i];
    }
    int h = a.base_size, c = a.base_channels;
    for (size_t i = 0; i < p.dec_conv.size(); ++i) {
        upsample2x(cur, h, h, c, std::span<T>(ws.dec_up[i]));
        conv3x3_forward(p.dec_conv[i], std::span<const T>(net.params),
                        std::span<const T>(ws.dec_up[i]), std::span<T>(ws.dec_conv_out[i]));
        for (T& v : ws.dec_conv_out[i]) v = leaky(v, slope);
        cur = ws.dec_conv_out[i];
        h *= 2;
        c = p.dec_conv[i].cout;
    }
    // 1x1 head applied per pixel
    const int pixels = a.grid * a.grid;
    for (int px = 0; px < pixels; ++px)
        dense_forward(p.head, std::span<const T>(net.params),
                      cur.subspan(static_cast<size_t>(px) * p.head.in, p.head.in),
                      std::span<T>(ws.head_hwc).subspan(static_cast<size_t>(px) * p.head.out,
                                                        p.head.out));
    // HWC -> CHW, then normalize each channel
    for (int px = 0; px < pixels; ++px)
        for (int ch = 0; ch < a.output_channels; ++ch)
            ws.logits_chw[static_cast<size_t>(ch) * pixels + px] =
                ws.head_hwc[static_cast<size_t>(px) * a.output_channels + ch];
    channel_softmax(std::span<const T>(ws.logits_chw), a.output_channels, pixels,
                    std::span<T>(ws.out_chw));
}

}  // namespace nn

// Latent vector for one (image, scalars) input. Scalars must already be
// standardized with the statistics stored alongside the trained model.
template <typename T>
std::vector<T> encode(const Network<T>& net, std::span<const T> image,
                      std::span<const T> scalars) {
    nn::Workspace<T> ws;
    ws.resize(net.arch, net.plan);
    nn::encode_into(net, image, scalars, ws);
    return ws.enc_dense_out.back();
}

// Normalized channel-major [output_channels][grid][grid] stack for a latent.
template <typename T>
std::vector<T> decode(const Network<T>& net, std::span<const T> latent) {
    nn::Workspace<T> ws;
    ws.resize(net.arch, net.plan);
    nn::decode_into(net, latent, ws);
    return ws.out_chw;
}

template <typename T>
std::vector<T> forward(const Network<T>& net, std::span<const T> image,
                       std::span<const T> scalars) {
    nn::Workspace<T> ws;
    ws.resize(net.arch, net.plan);
    nn::encode_into(net, image, scalars, ws);
    nn::decode_into(net, std::span<const T>(ws.enc_dense_out.back()), ws);
    return ws.out_chw;
}

// Mean absolute difference summed over pixels, averaged over channels.
// Accumulated in double regardless of T.
template <typename T>
double loss(std::span<const T> pred, std::span<const T> target, int channels) {
    if (pred.size() != target.size() || channels < 1 ||
        pred.size() % static_cast<size_t>(channels) != 0)
        throw ConfigError("loss: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i)
        acc += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
    return acc / static_cast<double>(channels);
}

template <typename T>
struct BatchSample {
    std::span<const T> image;
    std::span<const T> scalars;
    std::span<const T> target;  // channel-major normalized stack
};

namespace nn {

// Gradient buffers mirroring Workspace.
template <typename T>
struct GradWorkspace {
    std::vector<std::vector<T>> enc_conv_d;
    std::vector<T> flat_d;
    std::vector<std::vector<T>> enc_dense_d;
    std::vector<std::vector<T>> dec_dense_d;
    std::vector<std::vector<T>> dec_up_d;
    std::vector<std::vector<T>> dec_conv_d;
    std::vector<T> image_d;
    std::vector<T> latent_d;
    std::vector<T> head_hwc_d;
    std::vector<T> logits_chw_d;
    std::vector<T> out_chw_d;

    void resize(const NetworkArch& a, const LayerPlan& p) {
        enc_conv_d.resize(p.enc_conv.size());
        for (size_t i = 0; i < p.enc_conv.size(); ++i)
            enc_conv_d[i].resize(static_cast<size_t>(p.enc_conv[i].out_h()) *
                                 p.enc_conv[i].out_w() * p.enc_conv[i].cout);
        flat_d.resize(static_cast<size_t>(p.flat_enc) + a.n_scalars);
        enc_dense_d.resize(p.enc_dense.size());
        for (size_t i = 0; i < p.enc_dense.size(); ++i)
            enc_dense_d[i].resize(static_cast<size_t>(p.enc_dense[i].out));
        dec_dense_d.resize(p.dec_dense.size());
        for (size_t i = 0; i < p.dec_dense.size(); ++i)
            dec_dense_d[i].resize(static_cast<size_t>(p.dec_dense[i].out));
        dec_up_d.resize(p.dec_conv.size());
        dec_conv_d.resize(p.dec_conv.size());
        for (size_t i = 0; i < p.dec_conv.size(); ++i) {
            const auto& c = p.dec_conv[i];
            dec_up_d[i].resize(static_cast<size_t>(c.in_h) * c.in_w * c.cin);
            dec_conv_d[i].resize(static_cast<size_t>(c.out_h()) * c.out_w() * c.cout);
        }
        image_d.resize(static_cast<size_t>(a.grid) * a.grid);
        latent_d.resize(static_cast<size_t>(a.latent_dim));
        const size_t out_sz = static_cast<size_t>(a.output_channels) * a.grid * a.grid;
        head_hwc_d.resize(out_sz);
        logits_chw_d.resize(out_sz);
        out_chw_d.resize(out_sz);
    }
};

// Backpropagates d(loss)/d(out_chw) already stored in gw.out_chw_d through
// the whole network, accumulating parameter gradients into grad.
template <typename T>
void backward_into(const Network<T>& net, std::span<const T> image, const Workspace<T>& ws,
                   GradWorkspace<T>& gw, std::span<T> grad) {
    const auto& p = net.plan;
    const auto& a = net.arch;
    const T slope = static_cast<T>(a.leak);
    const int pixels = a.grid * a.grid;
    const std::span<const T> params(net.params);

    channel_softmax_backward(std::span<const T>(ws.out_chw), std::span<const T>(gw.out_chw_d),
                             a.output_channels, pixels, std::span<T>(gw.logits_chw_d));
    for (int px = 0; px < pixels; ++px)
        for (int ch = 0; ch < a.output_channels; ++ch)
            gw.head_hwc_d[static_cast<size_t>(px) * a.output_channels + ch] =
                gw.logits_chw_d[static_cast<size_t>(ch) * pixels + px];

    // head backward per pixel; input is the last decoder conv activation
    const std::vector<T>& head_in = ws.dec_conv_out.back();
    std::vector<T>& head_in_d = gw.dec_conv_d.back();
    std::fill(head_in_d.begin(), head_in_d.end(), T(0));
    {
        std::vector<T> din(static_cast<size_t>(p.head.in));
        for (int px = 0; px < pixels; ++px) {
            dense_backward(p.head, params,
                           std::span<const T>(head_in).subspan(
                               static_cast<size_t>(px) * p.head.in, p.head.in),
                           std::span<const T>(gw.head_hwc_d)
                               .subspan(static_cast<size_t>(px) * p.head.out, p.head.out),
                           std::span<T>(din), grad);
            for (int i = 0; i < p.head.in; ++i)
                head_in_d[static_cast<size_t>(px) * p.head.in + i] += din[i];
        }
    }

    // decoder conv chain in reverse
    for (size_t i = p.dec_conv.size(); i-- > 0;) {
        std::vector<T>& dout = gw.dec_conv_d[i];
        const std::vector<T>& aout = ws.dec_conv_out[i];
        for (size_t k = 0; k < dout.size(); ++k)
            dout[k] *= leaky_grad_from_out(aout[k], slope);
        conv3x3_backward(p.dec_conv[i], params, std::span<const T>(ws.dec_up[i]),
                         std::span<const T>(dout), std::span<T>(gw.dec_up_d[i]), grad);
        const int h = p.dec_conv[i].in_h / 2;
        std::span<T> dprev = i > 0 ? std::span<T>(gw.dec_conv_d[i - 1])
                                   : std::span<T>(gw.dec_dense_d.back());
        upsample2x_backward(std::span<const T>(gw.dec_up_d[i]), h, h, p.dec_conv[i].cin, dprev);
    }

    // decoder dense chain in reverse
    for (size_t i = p.dec_dense.size(); i-- > 0;) {
        std::vector<T>& dout = gw.dec_dense_d[i];
        const std::vector<T>& aout = ws.dec_dense_out[i];
        for (size_t k = 0; k < dout.size(); ++k)
            dout[k] *= leaky_grad_from_out(aout[k], slope);
        std::span<const T> in = i > 0 ? std::span<const T>(ws.dec_dense_out[i - 1])
                                      : std::span<const T>(ws.enc_dense_out.back());
        std::span<T> din = i > 0 ? std::span<T>(gw.dec_dense_d[i - 1])
                                 : std::span<T>(gw.latent_d);
        dense_backward(p.dec_dense[i], params, in, std::span<const T>(dout), din, grad);
    }

    // encoder dense chain in reverse; latent layer is linear
    for (size_t i = p.enc_dense.size(); i-- > 0;) {
        std::vector<T>& dout = gw.enc_dense_d[i];
        if (i + 1 == p.enc_dense.size()) {
            std::copy(gw.latent_d.begin(), gw.latent_d.end(), dout.begin());
        } else {
            const std::vector<T>& aout = ws.enc_dense_out[i];
            for (size_t k = 0; k < dout.size(); ++k)
                dout[k] *= leaky_grad_from_out(aout[k], slope);
        }
        std::span<const T> in = i > 0 ? std::span<const T>(ws.enc_dense_out[i - 1])
                                      : std::span<const T>(ws.flat);
        std::span<T> din = i > 0 ? std::span<T>(gw.enc_dense_d[i - 1])
                                 : std::span<T>(gw.flat_d);
        dense_backward(p.enc_dense[i], params, in, std::span<const T>(dout), din, grad);
    }

    // split flat gradient back to the conv stack (scalar inputs get no grad)
    std::copy(gw.flat_d.begin(), gw.flat_d.begin() + p.flat_enc, gw.enc_conv_d.back().begin());

    for (size_t i = p.enc_conv.size(); i-- > 0;) {
        std::vector<T>& dout = gw.enc_conv_d[i];
        const std::vector<T>& aout = ws.enc_conv_out[i];
        for (size_t k = 0; k < dout.size(); ++k)
            dout[k] *= leaky_grad_from_out(aout[k], slope);
        std::span<const T> in =
            i > 0 ? std::span<const T>(ws.enc_conv_out[i - 1]) : std::span<const T>(image);
        std::span<T> din = i > 0 ? std::span<T>(gw.enc_conv_d[i - 1]) : std::span<T>(gw.image_d);
        conv3x3_backward(p.enc_conv[i], params, in, std::span<const T>(dout), din, grad);
    }
}

}  // namespace nn

// Mean gradient of the loss over a batch. Returns the mean loss. Throws
// NumericError if any per-sample loss is non-finite.
template <typename T>
double gradients(const Network<T>& net, std::span<const BatchSample<T>> batch,
                 std::vector<T>& grad) {
    if (batch.empty()) throw ConfigError("gradients: empty batch");
    grad.assign(net.n_params(), T(0));
    nn::Workspace<T> ws;
    nn::GradWorkspace<T> gw;
    ws.resize(net.arch, net.plan);
    gw.resize(net.arch, net.plan);
    const int channels = net.arch.output_channels;
    const size_t out_sz = ws.out_chw.size();
    double total_loss = 0.0;
    const T wsample = T(1) / static_cast<T>(batch.size());
    for (const BatchSample<T>& s : batch) {
        if (s.target.size() != out_sz) throw ConfigError("gradients: target size mismatch");
        nn::encode_into(net, s.image, s.scalars, ws);
        nn::decode_into(net, std::span<const T>(ws.enc_dense_out.back()), ws);
        const double sample_loss = loss(std::span<const T>(ws.out_chw), s.target, channels);
        if (!std::isfinite(sample_loss)) throw NumericError("gradients: non-finite loss");
        total_loss += sample_loss;
        const T unit = wsample / static_cast<T>(channels);
        for (size_t i = 0; i < out_sz; ++i) {
            const T diff = ws.out_chw[i] - s.target[i];
            gw.out_chw_d[i] = diff > T(0) ? unit : (diff < T(0) ? -unit : T(0));
        }
        nn::backward_into(net, s.image, ws, gw, std::span<T>(grad));
    }
    return total_loss / static_cast<double>(batch.size());
}

}  // namespace lspt
