#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "synlm/error.hpp"
#include "synlm/model.hpp"
#include "synlm/rng.hpp"
#include "synlm/tensor.hpp"

namespace synlm {

enum class LossNormalization { PerToken, PerSequence };

struct TrainConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t batch_size = 5;
    std::size_t max_epochs = 10;
    std::size_t patience = 3;
    std::size_t max_steps = 0;  // 0 = no cap
    std::uint64_t seed = 0;
    LossNormalization normalization = LossNormalization::PerToken;
    double grad_clip = 0.0;  // global-norm clip; 0 = off

    void validate() const {
        if (!(lr > 0.0)) throw Error(Errc::BadConfig, "lr must be positive");
        if (batch_size == 0) throw Error(Errc::BadConfig, "batch_size must be >= 1");
        if (patience == 0) throw Error(Errc::BadConfig, "patience must be >= 1");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw Error(Errc::BadConfig, "betas must be in [0, 1)");
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"max_steps", c.max_steps},
            {"seed", c.seed},
            {"normalization", c.normalization == LossNormalization::PerToken ? "per-token" : "per-sequence"},
            {"grad_clip", c.grad_clip}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.lr = j.value("lr", c.lr);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps = j.value("eps", c.eps);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.seed = j.value("seed", c.seed);
        const std::string norm = j.value("normalization", std::string("per-token"));
        if (norm == "per-token") {
            c.normalization = LossNormalization::PerToken;
        } else if (norm == "per-sequence") {
            c.normalization = LossNormalization::PerSequence;
        } else {
            throw Error(Errc::BadConfig, "unknown normalization " + norm);
        }
        c.grad_clip = j.value("grad_clip", c.grad_clip);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::BadConfig, std::string("train config: ") + e.what());
    }
    return c;
}

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    std::size_t t = 0;
};

/// One AdamW update with bias-corrected moments and decoupled weight decay:
/// p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p), wd applied only to
/// parameters flagged for decay.
template <typename T>
void adamw_step(std::vector<Parameter<T>>& params, AdamState<T>& state, const TrainConfig& cfg) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value.rows(), p.value.cols());
            state.v.emplace_back(p.value.rows(), p.value.cols());
        }
    }
    if (state.m.size() != params.size()) throw Error(Errc::ShapeMismatch, "optimizer state does not match parameters");
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps), wd = static_cast<T>(cfg.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<T>& p = params[i];
        if (!p.grad.same_shape(p.value) || !state.m[i].same_shape(p.value)) {
            throw Error(Errc::ShapeMismatch, "gradient/state shape mismatch for " + p.name);
        }
        T* w = p.value.data();
        const T* g = p.grad.data();
        T* m = state.m[i].data();
        T* v = state.v[i].data();
        const T decay = p.decay ? wd : T(0);
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            m[k] = b1 * m[k] + (T(1) - b1) * g[k];
            v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
            const T mhat = m[k] / static_cast<T>(bc1);
            const T vhat = v[k] / static_cast<T>(bc2);
            w[k] -= lr * (mhat / (std::sqrt(vhat) + eps) + decay * w[k]);
        }
    }
}

struct EpochRecord {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;  // nats per prediction
    std::size_t tokens = 0;
    double wallclock = 0.0;  // seconds since training started
};

inline nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}, {"tokens", r.tokens}, {"wallclock", r.wallclock}};
}

struct TrainSummary {
    std::size_t steps = 0;
    std::size_t epochs = 0;
    std::size_t best_epoch = 0;
    double best_dev_loss = std::numeric_limits<double>::infinity();
    bool early_stopped = false;
    std::vector<EpochRecord> records;
};

/// Summed loss over a set of examples in inference mode.
template <typename T>
std::pair<double, std::size_t> evaluate_loss(Transformer<T>& model, const std::vector<Example>& examples) {
    double total = 0.0;
    std::size_t tokens = 0;
    for (const Example& ex : examples) {
        Tape<T> tape;
        total += static_cast<double>(tape.value(example_loss(tape, model, ex).total)[0]);
        tokens += ex.predictions;
    }
    return {total, tokens};
}

template <typename T>
class Trainer {
   public:
    Trainer(Transformer<T>& model, TrainConfig cfg) : model_(model), cfg_(cfg) { cfg_.validate(); }

    /// Forward/backward over a minibatch and one optimizer step. Returns the
    /// summed loss and prediction count of the batch.
    std::pair<double, std::size_t> step(const std::vector<const Example*>& batch) {
        model_.zero_grad();
        std::size_t tokens = 0;
        for (const Example* ex : batch) tokens += ex->predictions;
        const double norm = cfg_.normalization == LossNormalization::PerToken ? static_cast<double>(tokens)
                                                                              : static_cast<double>(batch.size());
        double total = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            ForwardOptions opts;
            opts.train = true;
            opts.dropout_key = splitmix64(cfg_.seed ^ splitmix64(steps_ * 7919 + i));
            Tape<T> tape;
            Var<T> loss = example_loss(tape, model_, *batch[i], opts).total;
            const double l = static_cast<double>(tape.value(loss)[0]);
            if (!std::isfinite(l)) throw Error(Errc::NumericFailure, "non-finite loss at step " + std::to_string(steps_));
            total += l;
            tape.backward(loss, static_cast<T>(1.0 / norm));
        }
        if (cfg_.grad_clip > 0.0) clip_gradients();
        adamw_step(model_.params(), state_, cfg_);
        ++steps_;
        return {total, tokens};
    }

    std::size_t steps() const { return steps_; }
    const AdamState<T>& optimizer_state() const { return state_; }

    /// Epoch loop with seeded shuffling, dev-loss early stopping and
    /// best-checkpoint restore. `on_record` receives each metrics record.
    TrainSummary fit(const std::vector<Example>& train, const std::vector<Example>& dev,
                     const std::function<void(const EpochRecord&)>& on_record = {}) {
        if (train.empty()) throw Error(Errc::EmptyCorpus, "no training examples");
        const auto start = std::chrono::steady_clock::now();
        auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
        auto emit = [&](TrainSummary& s, EpochRecord r) {
            s.records.push_back(r);
            if (on_record) on_record(r);
        };

        TrainSummary summary;
        Rng rng(cfg_.seed);
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::vector<Tensor<T>> best;
        std::size_t bad_epochs = 0;
        bool done = false;
        for (std::size_t epoch = 1; epoch <= cfg_.max_epochs && !done; ++epoch) {
            rng.shuffle(order);
            double loss = 0.0;
            std::size_t tokens = 0;
            for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
                std::vector<const Example*> batch;
                for (std::size_t i = b; i < std::min(order.size(), b + cfg_.batch_size); ++i) batch.push_back(&train[order[i]]);
                auto [l, n] = step(batch);
                loss += l;
                tokens += n;
                if (cfg_.max_steps != 0 && steps_ >= cfg_.max_steps) {
                    done = true;
                    break;
                }
            }
            summary.epochs = epoch;
            emit(summary, {epoch, "train", loss / static_cast<double>(tokens), tokens, elapsed()});
            if (dev.empty()) continue;
            auto [dl, dn] = evaluate_loss(model_, dev);
            const double dev_loss = dl / static_cast<double>(dn);
            emit(summary, {epoch, "dev", dev_loss, dn, elapsed()});
            if (dev_loss < summary.best_dev_loss) {
                summary.best_dev_loss = dev_loss;
                summary.best_epoch = epoch;
                best.clear();
                for (const auto& p : model_.params()) best.push_back(p.value);
                bad_epochs = 0;
            } else if (++bad_epochs >= cfg_.patience) {
                summary.early_stopped = true;
                done = true;
            }
        }
        if (!best.empty()) {
            for (std::size_t i = 0; i < best.size(); ++i) model_.params()[i].value = best[i];
        } else {
            summary.best_epoch = summary.epochs;
        }
        summary.steps = steps_;
        return summary;
    }

   private:
    void clip_gradients() {
        double sq = 0.0;
        for (const auto& p : model_.params()) {
            for (T g : p.grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
        }
        const double norm = std::sqrt(sq);
        if (norm <= cfg_.grad_clip) return;
        const T s = static_cast<T>(cfg_.grad_clip / norm);
        for (auto& p : model_.params()) p.grad.map() *= s;
    }

    Transformer<T>& model_;
    TrainConfig cfg_;
    AdamState<T> state_;
    std::size_t steps_ = 0;
};

}  // namespace synlm
