#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lspt/errors.hpp"
#include "lspt/nn.hpp"
#include "lspt/rng.hpp"

namespace lspt {

struct TrainConfig {
    int batch_size = 16;
    int epochs = 20;
    double learning_rate = 1e-3;
    double beta1 = 0.9;   // first-moment decay
    double beta2 = 0.999; // second-moment decay
    double eps = 1e-8;
    uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("train: moment coefficients must be in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
    }
};

struct TrainHistory {
    std::vector<double> train_loss;  // mean per epoch
    std::vector<double> test_loss;   // after each epoch

    double final_test_loss() const {
        if (test_loss.empty()) throw NumericError("history: no epochs recorded");
        return test_loss.back();
    }
};

// Thrown when the loss stops being finite; carries the parameters from the
// end of the last completed epoch plus the history up to the failure.
class TrainDivergedError : public NumericError {
public:
    TrainDivergedError(const std::string& msg, std::vector<double> params, TrainHistory hist)
        : NumericError(msg), last_good_params(std::move(params)), history(std::move(hist)) {}

    std::vector<double> last_good_params;
    TrainHistory history;
};

// First/second-moment adaptive step (the standard exponential-moving-average
// scheme with bias correction).
template <typename T>
class AdamOptimizer {
public:
    AdamOptimizer(size_t n, const TrainConfig& cfg)
        : m_(n, T(0)), v_(n, T(0)), cfg_(cfg) {}

    void step(std::vector<T>& params, const std::vector<T>& grad) {
        ++t_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        const double lr = cfg_.learning_rate;
        for (size_t i = 0; i < params.size(); ++i) {
            const double g = static_cast<double>(grad[i]);
            const double m = b1 * static_cast<double>(m_[i]) + (1.0 - b1) * g;
            const double v = b2 * static_cast<double>(v_[i]) + (1.0 - b2) * g * g;
            m_[i] = static_cast<T>(m);
            v_[i] = static_cast<T>(v);
            params[i] -= static_cast<T>(lr * (m / corr1) /
                                        (std::sqrt(v / corr2) + cfg_.eps));
        }
    }

private:
    std::vector<T> m_, v_;
    const TrainConfig cfg_;
    uint64_t t_ = 0;
};

template <typename T>
double evaluate_loss(const Network<T>& net, std::span<const BatchSample<T>> samples) {
    if (samples.empty()) throw ConfigError("evaluate: empty sample set");
    nn::Workspace<T> ws;
    ws.resize(net.arch, net.plan);
    double acc = 0.0;
    for (const BatchSample<T>& s : samples) {
        nn::encode_into(net, s.image, s.scalars, ws);
        nn::decode_into(net, std::span<const T>(ws.enc_dense_out.back()), ws);
        acc += loss(std::span<const T>(ws.out_chw), s.target, net.arch.output_channels);
    }
    return acc / static_cast<double>(samples.size());
}

// Supervised training loop: deterministic shuffling, fixed batch order,
// single-threaded by contract so a fixed seed reproduces the history
// bit-for-bit.
template <typename T>
TrainHistory train(Network<T>& net, std::span<const BatchSample<T>> train_set,
                   std::span<const BatchSample<T>> test_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty() || test_set.empty())
        throw ConfigError("train: both dataset splits must be non-empty");

    TrainHistory history;
    AdamOptimizer<T> opt(net.n_params(), cfg);
    Rng shuffle_rng(cfg.seed);
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<T> grad;
    std::vector<BatchSample<T>> batch;
    std::vector<T> last_good = net.params;

    auto snapshot_params = [&]() {
        std::vector<double> out(last_good.size());
        for (size_t i = 0; i < last_good.size(); ++i) out[i] = static_cast<double>(last_good[i]);
        return out;
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

        double epoch_loss = 0.0;
        size_t n_batches = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t stop = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);
            double batch_loss;
            try {
                batch_loss = gradients(net, std::span<const BatchSample<T>>(batch), grad);
            } catch (const NumericError& e) {
                throw TrainDivergedError(std::string("train: diverged: ") + e.what(),
                                         snapshot_params(), history);
            }
            opt.step(net.params, grad);
            epoch_loss += batch_loss;
            ++n_batches;
        }
        for (const T& v : net.params)
            if (!std::isfinite(static_cast<double>(v)))
                throw TrainDivergedError("train: non-finite parameter after update",
                                         snapshot_params(), history);

        history.train_loss.push_back(epoch_loss / static_cast<double>(n_batches));
        history.test_loss.push_back(evaluate_loss(net, test_set));
        last_good = net.params;
    }
    return history;
}

}  // namespace lspt
