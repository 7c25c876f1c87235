#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "goconv/network.hpp"
#include "json.hpp"

namespace goconv {

enum class OptimizerKind { SgdMomentum, Adam };

/// Multiply the learning rate by `multiplier` once `at` is reached.
struct ScheduleStep {
    std::size_t at = 0;
    double multiplier = 1.0;
};

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double lr = 1e-3;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 5e-4;  // applied to every trainable tensor, biases included
    std::size_t batch_size = 32;
    std::vector<ScheduleStep> schedule;
    bool schedule_per_iteration = false;
    std::size_t epochs = 1;
    std::size_t max_iterations = 0;  // 0: run all epochs
    double clip_norm = 0.0;          // global-norm clip, 0 disables
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr > 0.0)) {
            throw std::invalid_argument("train.lr must be positive");
        }
        if (batch_size == 0) {
            throw std::invalid_argument("train.batch_size must be >= 1");
        }
        if (epochs == 0 && max_iterations == 0) {
            throw std::invalid_argument("train needs epochs >= 1 or max_iterations >= 1");
        }
        for (std::size_t i = 1; i < schedule.size(); ++i) {
            if (schedule[i].at <= schedule[i - 1].at) {
                throw std::invalid_argument("train.schedule points must be strictly increasing");
            }
        }
    }
};

/// Piecewise-constant schedule: base times every multiplier already reached.
inline double lr_at(double base, const std::vector<ScheduleStep>& schedule, std::size_t when) {
    double lr = base;
    for (const auto& s : schedule) {
        if (when >= s.at) {
            lr *= s.multiplier;
        }
    }
    return lr;
}

/// Optimizer buffers keyed by parameter name. SGD uses `first` as velocity.
template <typename T>
struct OptState {
    std::uint64_t step = 0;
    std::map<std::string, std::vector<T>> first;
    std::map<std::string, std::vector<T>> second;
};

namespace detail {
template <typename T>
std::vector<T>& buffer(std::map<std::string, std::vector<T>>& m, const ParamRef<T>& p) {
    auto& b = m[p.name];
    if (b.empty()) {
        b.assign(p.value.size(), T(0));
    } else if (b.size() != p.value.size()) {
        throw ShapeError("optimizer buffer for '" + p.name + "' has " + std::to_string(b.size()) +
                         " entries, parameter has " + std::to_string(p.value.size()));
    }
    return b;
}
}  // namespace detail

/// Classic momentum: g' = g + wd·p; v = μv + g'; p -= lr·v.
template <typename T>
void sgd_momentum_step(std::vector<ParamRef<T>>& params, OptState<T>& state, const TrainConfig& cfg, double lr) {
    const T mu = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay), rate = static_cast<T>(lr);
    for (auto& p : params) {
        auto& v = detail::buffer(state.first, p);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const T g = p.grad[i] + wd * p.value[i];
            v[i] = mu * v[i] + g;
            p.value[i] -= rate * v[i];
        }
    }
    ++state.step;
}

/// Adam with bias correction; weight decay is added to the gradient first.
template <typename T>
void adam_step(std::vector<ParamRef<T>>& params, OptState<T>& state, const TrainConfig& cfg, double lr) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T wd = static_cast<T>(cfg.weight_decay), eps = static_cast<T>(cfg.epsilon);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
    const T rate = static_cast<T>(lr);
    for (auto& p : params) {
        auto& m = detail::buffer(state.first, p);
        auto& v = detail::buffer(state.second, p);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const T g = p.grad[i] + wd * p.value[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            const T mhat = m[i] / c1;
            const T vhat = v[i] / c2;
            p.value[i] -= rate * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename T>
void optimizer_step(std::vector<ParamRef<T>>& params, OptState<T>& state, const TrainConfig& cfg, double lr) {
    if (cfg.optimizer == OptimizerKind::Adam) {
        adam_step(params, state, cfg, lr);
    } else {
        sgd_momentum_step(params, state, cfg, lr);
    }
}

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_global_norm(std::vector<ParamRef<T>>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (auto g : p.grad) {
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto& p : params) {
            for (auto& g : p.grad) {
                g *= scale;
            }
        }
    }
    return norm;
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    auto sched = nlohmann::json::array();
    for (const auto& s : c.schedule) {
        sched.push_back({{"at", s.at}, {"multiplier", s.multiplier}});
    }
    j = nlohmann::json{{"optimizer", c.optimizer == OptimizerKind::Adam ? "adam" : "sgd_momentum"},
                       {"lr", c.lr},
                       {"momentum", c.momentum},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"epsilon", c.epsilon},
                       {"weight_decay", c.weight_decay},
                       {"batch_size", c.batch_size},
                       {"schedule", sched},
                       {"schedule_unit", c.schedule_per_iteration ? "iteration" : "epoch"},
                       {"epochs", c.epochs},
                       {"max_iterations", c.max_iterations},
                       {"clip_norm", c.clip_norm},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    const auto opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") {
        c.optimizer = OptimizerKind::Adam;
    } else if (opt == "sgd_momentum" || opt == "sgd") {
        c.optimizer = OptimizerKind::SgdMomentum;
    } else {
        throw std::invalid_argument("train.optimizer must be 'adam' or 'sgd_momentum', got '" + opt + "'");
    }
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("schedule")) {
        for (const auto& s : j.at("schedule")) {
            c.schedule.push_back({s.at("at").get<std::size_t>(), s.at("multiplier").get<double>()});
        }
    }
    const auto unit = j.value("schedule_unit", std::string("epoch"));
    if (unit != "epoch" && unit != "iteration") {
        throw std::invalid_argument("train.schedule_unit must be 'epoch' or 'iteration'");
    }
    c.schedule_per_iteration = unit == "iteration";
    c.epochs = j.value("epochs", c.epochs);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
    c.validate();
}

}  // namespace goconv
