#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "goconv/datasets.hpp"
#include "goconv/network.hpp"
#include "goconv/optim.hpp"

namespace goconv {

struct HistoryRow {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;

    bool operator==(const HistoryRow&) const = default;
};

using History = std::vector<HistoryRow>;

/// Flush-to-zero and denormals-are-zero on this thread while alive; the
/// previous control word is restored on destruction. No-op without SSE.
class FlushDenormals {
public:
#if defined(__SSE__)
    FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
    ~FlushDenormals() { _mm_setcsr(saved_); }
#else
    FlushDenormals() = default;
#endif
    FlushDenormals(const FlushDenormals&) = delete;
    FlushDenormals& operator=(const FlushDenormals&) = delete;

private:
#if defined(__SSE__)
    unsigned saved_;
#endif
};

inline void write_history_csv(const History& h, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write history to '" + path + "'");
    }
    out.precision(17);
    out << "epoch,split,loss,accuracy\n";
    for (const auto& r : h) {
        out << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.accuracy << '\n';
    }
}

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::vector<double> per_class_recall;
    std::size_t count = 0;
};

/// Copies the listed samples into one batch tensor.
template <typename T>
Tensor<T> gather_batch(const TensorDataset<T>& ds, std::span<const std::size_t> indices, std::vector<int>& labels) {
    const auto& s = ds.images.shape();
    const std::size_t per = s[1] * s[2] * s[3];
    Tensor<T> batch(Shape{indices.size(), s[1], s[2], s[3]});
    labels.resize(indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) {
        std::copy_n(ds.images.data() + indices[b] * per, per, batch.data() + b * per);
        labels[b] = ds.labels[indices[b]];
    }
    return batch;
}

/// Loss of the model output against integer labels, per the network's loss.
template <typename T>
LossResult<T> compute_loss(LossKind kind, const Tensor<T>& output, std::span<const int> labels) {
    if (kind == LossKind::CrossEntropy) {
        return softmax_cross_entropy(output, labels);
    }
    Tensor<T> target(output.shape());
    if (output.size() == labels.size()) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            target[i] = static_cast<T>(labels[i]);
        }
    } else {
        const std::size_t k = output.size() / labels.size();
        for (std::size_t i = 0; i < labels.size(); ++i) {
            target[i * k + static_cast<std::size_t>(labels[i])] = T(1);
        }
    }
    return mse_loss(output, target);
}

/// Predicted class per row: argmax, or a 0.5 threshold for single outputs.
template <typename T>
std::vector<int> predict_classes(const Tensor<T>& output) {
    const std::size_t n = output.dim(0), k = output.size() / n;
    std::vector<int> pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = output.data() + i * k;
        if (k == 1) {
            pred[i] = row[0] > T(0.5) ? 1 : 0;
        } else {
            pred[i] = static_cast<int>(std::max_element(row, row + k) - row);
        }
    }
    return pred;
}

/// Accuracy, mean loss and per-class recall. Parameters are not modified.
template <typename T>
EvalResult evaluate(Model<T>& model, const TensorDataset<T>& ds, std::size_t batch_size = 256) {
    if (ds.size() == 0) {
        throw std::invalid_argument("evaluate: empty dataset");
    }
    EvalResult r;
    r.count = ds.size();
    std::vector<std::size_t> hits(ds.classes, 0), totals(ds.classes, 0);
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    std::vector<int> labels;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        const std::size_t end = std::min(ds.size(), start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        auto batch = gather_batch(ds, idx, labels);
        const auto out = model.forward(batch);
        r.mean_loss += compute_loss(model.config().loss, out, labels).value * static_cast<double>(idx.size());
        const auto pred = predict_classes(out);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto y = static_cast<std::size_t>(labels[b]);
            ++totals[y];
            if (pred[b] == labels[b]) {
                ++hits[y];
                ++correct;
            }
        }
    }
    r.mean_loss /= static_cast<double>(ds.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    r.per_class_recall.resize(ds.classes);
    for (std::size_t k = 0; k < ds.classes; ++k) {
        r.per_class_recall[k] = totals[k] ? static_cast<double>(hits[k]) / static_cast<double>(totals[k]) : 0.0;
    }
    return r;
}

template <typename T>
struct TrainHooks {
    /// In-place batch transform (augmentation), given the loop RNG.
    std::function<void(Tensor<T>&, std::mt19937_64&)> augment;
    /// Called after each epoch; may append rows (e.g. a validation split).
    std::function<void(std::size_t epoch, Model<T>&, History&)> on_epoch_end;
    std::function<void(std::size_t iteration, double loss)> on_iteration;
};

/// Mutable state of a training run; checkpointed together with the model.
template <typename T>
struct TrainState {
    OptState<T> opt;
    std::mt19937_64 rng;
    std::size_t epoch = 0;
};

/// Minibatch training with seeded shuffling. With the same config, seed and
/// dtype the run is reproducible bit for bit.
template <typename T>
History train(Model<T>& model, const TensorDataset<T>& ds, const TrainConfig& cfg, TrainState<T>& state,
              const TrainHooks<T>& hooks = {}) {
    cfg.validate();
    if (ds.size() == 0) {
        throw std::invalid_argument("train: empty dataset");
    }
    History history;
    auto params = model.params();
    std::vector<std::size_t> order(ds.size());
    std::vector<int> labels;
    const std::size_t epochs = cfg.epochs ? cfg.epochs : std::numeric_limits<std::size_t>::max();
    bool done = false;
    for (std::size_t e = 0; e < epochs && !done; ++e) {
        const std::size_t epoch = state.epoch;
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), state.rng);
        double loss_sum = 0.0;
        std::size_t seen = 0, correct = 0;
        for (std::size_t start = 0; start < ds.size(); start += cfg.batch_size) {
            if (cfg.max_iterations && state.opt.step >= cfg.max_iterations) {
                done = true;
                break;
            }
            const std::size_t end = std::min(ds.size(), start + cfg.batch_size);
            auto batch = gather_batch(ds, std::span<const std::size_t>(order).subspan(start, end - start), labels);
            if (hooks.augment) {
                hooks.augment(batch, state.rng);
            }
            const auto out = model.forward(batch);
            const auto loss = compute_loss(model.config().loss, out, labels);
            model.backward(loss.grad);
            if (cfg.clip_norm > 0.0) {
                clip_global_norm(params, cfg.clip_norm);
            }
            const std::size_t when = cfg.schedule_per_iteration ? static_cast<std::size_t>(state.opt.step) : epoch;
            optimizer_step(params, state.opt, cfg, lr_at(cfg.lr, cfg.schedule, when));
            const auto pred = predict_classes(out);
            for (std::size_t b = 0; b < labels.size(); ++b) {
                correct += pred[b] == labels[b];
            }
            loss_sum += loss.value * static_cast<double>(labels.size());
            seen += labels.size();
            if (hooks.on_iteration) {
                hooks.on_iteration(static_cast<std::size_t>(state.opt.step), loss.value);
            }
        }
        if (seen > 0) {
            history.push_back({epoch, "train", loss_sum / static_cast<double>(seen),
                               static_cast<double>(correct) / static_cast<double>(seen)});
            ++state.epoch;
            if (hooks.on_epoch_end) {
                hooks.on_epoch_end(epoch, model, history);
            }
        }
    }
    return history;
}

template <typename T>
History train(Model<T>& model, const TensorDataset<T>& ds, const TrainConfig& cfg, const TrainHooks<T>& hooks = {}) {
    TrainState<T> state{{}, std::mt19937_64(cfg.seed), 0};
    return train(model, ds, cfg, state, hooks);
}

}  // namespace goconv
