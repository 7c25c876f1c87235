#pragma once

// Feed-forward CNN composition: layer descriptors, model building with a
// named parameter registry, presets, and the GO-variant transform.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "goconv/generators.hpp"
#include "goconv/go_conv.hpp"
#include "goconv/ops.hpp"
#include "goconv/tensor.hpp"
#include "json.hpp"

namespace goconv {

enum class LayerType { Conv, GoConv, MaxPool, Relu, Sigmoid, Fc };
enum class LossKind { CrossEntropy, Mse };

inline std::string_view to_string(LayerType t) {
    switch (t) {
        case LayerType::Conv: return "conv";
        case LayerType::GoConv: return "go_conv";
        case LayerType::MaxPool: return "maxpool";
        case LayerType::Relu: return "relu";
        case LayerType::Sigmoid: return "sigmoid";
        case LayerType::Fc: return "fc";
    }
    return "unknown";
}

inline LayerType layer_type_from_string(std::string_view s) {
    for (auto t : {LayerType::Conv, LayerType::GoConv, LayerType::MaxPool, LayerType::Relu, LayerType::Sigmoid,
                   LayerType::Fc}) {
        if (to_string(t) == s) {
            return t;
        }
    }
    throw std::invalid_argument("unknown layer type '" + std::string(s) + "'");
}

/// Fractions of out channels assigned to each generator. Gabor channels come
/// first, then Schmid, then Free.
struct GeneratorMix {
    double gabor = 0.5;
    double schmid = 0.5;
    double free = 0.0;

    static GeneratorMix half() { return {}; }
    static GeneratorMix all(GeneratorKind k) {
        return {k == GeneratorKind::Gabor ? 1.0 : 0.0, k == GeneratorKind::Schmid ? 1.0 : 0.0,
                k == GeneratorKind::Free ? 1.0 : 0.0};
    }

    std::vector<GeneratorKind> kinds_for(std::size_t out_channels) const {
        const double total = gabor + schmid + free;
        if (!(gabor >= 0 && schmid >= 0 && free >= 0) || !(total > 0)) {
            throw std::invalid_argument("generator mix fractions must be non-negative with a positive sum");
        }
        const auto od = static_cast<double>(out_channels);
        auto n_gabor = static_cast<std::size_t>(std::floor(gabor / total * od + 0.5));
        auto n_free = static_cast<std::size_t>(std::floor(free / total * od + 0.5));
        n_gabor = std::min(n_gabor, out_channels);
        n_free = std::min(n_free, out_channels - n_gabor);
        const std::size_t n_schmid = out_channels - n_gabor - n_free;
        std::vector<GeneratorKind> kinds;
        kinds.insert(kinds.end(), n_gabor, GeneratorKind::Gabor);
        kinds.insert(kinds.end(), n_schmid, GeneratorKind::Schmid);
        kinds.insert(kinds.end(), n_free, GeneratorKind::Free);
        return kinds;
    }
};

struct LayerDesc {
    LayerType type = LayerType::Relu;
    std::size_t out_channels = 0;  // conv / go_conv
    std::size_t kernel = 3;
    std::size_t padding = 0;
    std::size_t stride = 1;
    std::size_t units = 0;  // fc
    std::vector<GeneratorKind> kinds;  // go_conv, one per out channel
    bool share_across_in_channels = false;

    static LayerDesc conv(std::size_t od, std::size_t m, std::size_t pad) {
        LayerDesc d;
        d.type = LayerType::Conv;
        d.out_channels = od;
        d.kernel = m;
        d.padding = pad;
        return d;
    }
    static LayerDesc fc(std::size_t units) {
        LayerDesc d;
        d.type = LayerType::Fc;
        d.units = units;
        return d;
    }
    static LayerDesc of(LayerType t) {
        LayerDesc d;
        d.type = t;
        return d;
    }
};

struct NetworkConfig {
    std::string name = "custom";
    std::size_t channels = 1, height = 28, width = 28;
    std::size_t classes = 10;  // 1 with Mse means a single sigmoid output
    LossKind loss = LossKind::CrossEntropy;
    std::uint64_t seed = 0;
    std::vector<LayerDesc> layers;
};

// ---------------------------------------------------------------- layers

template <typename T>
struct ConvLayer {
    Tensor<T> weight;  // [OD, C, m, m]
    std::vector<T> bias;
    Tensor<T> grad_weight;
    std::vector<T> grad_bias;
    ConvGeometry geometry;
    Tensor<T> cached_input;

    Tensor<T> forward(const Tensor<T>& x) {
        cached_input = x;
        return conv2d_forward(x, weight, std::span<const T>(bias), geometry);
    }
    Tensor<T> backward(const Tensor<T>& g, bool need_input_grad) {
        auto r = conv2d_backward(cached_input, weight, g, geometry, need_input_grad);
        // copied, not moved: ParamRef spans point at the existing buffer
        std::copy(r.kernels.data(), r.kernels.data() + r.kernels.size(), grad_weight.data());
        std::copy(r.bias.begin(), r.bias.end(), grad_bias.begin());
        return std::move(r.input);
    }
};

template <typename T>
struct GoLayer {
    GoConvLayer<T> layer;

    Tensor<T> forward(const Tensor<T>& x) { return layer.forward(x); }
    Tensor<T> backward(const Tensor<T>& g, bool need_input_grad) { return layer.backward(g, need_input_grad); }
};

template <typename T>
struct PoolLayer {
    Shape input_shape;
    std::vector<std::uint32_t> argmax;

    Tensor<T> forward(const Tensor<T>& x) {
        auto r = maxpool2_forward(x);
        input_shape = x.shape();
        argmax = std::move(r.argmax);
        return std::move(r.output);
    }
    Tensor<T> backward(const Tensor<T>& g, bool) { return maxpool2_backward<T>(input_shape, argmax, g); }
};

template <typename T>
struct ReluLayer {
    Tensor<T> cached_input;
    Tensor<T> forward(const Tensor<T>& x) {
        cached_input = x;
        return relu_forward(x);
    }
    Tensor<T> backward(const Tensor<T>& g, bool) { return relu_backward(cached_input, g); }
};

template <typename T>
struct SigmoidLayer {
    Tensor<T> cached_output;
    Tensor<T> forward(const Tensor<T>& x) {
        cached_output = sigmoid_forward(x);
        return cached_output;
    }
    Tensor<T> backward(const Tensor<T>& g, bool) { return sigmoid_backward(cached_output, g); }
};

/// Fully connected; flattens rank-4 inputs to [N, C·H·W].
template <typename T>
struct FcLayer {
    Tensor<T> weight;  // [K, D]
    std::vector<T> bias;
    Tensor<T> grad_weight;
    std::vector<T> grad_bias;
    Shape input_shape;
    Tensor<T> cached_input;

    Tensor<T> forward(const Tensor<T>& x) {
        input_shape = x.shape();
        cached_input = x.reshaped(Shape{x.dim(0), x.size() / x.dim(0)});
        return fc_forward(cached_input, weight, std::span<const T>(bias));
    }
    Tensor<T> backward(const Tensor<T>& g, bool need_input_grad) {
        auto r = fc_backward(cached_input, weight, g, need_input_grad);
        std::copy(r.weight.data(), r.weight.data() + r.weight.size(), grad_weight.data());
        std::copy(r.bias.begin(), r.bias.end(), grad_bias.begin());
        if (!need_input_grad) {
            return {};
        }
        return std::move(r.input).reshaped(input_shape);
    }
};

template <typename T>
using AnyLayer = std::variant<ConvLayer<T>, GoLayer<T>, PoolLayer<T>, ReluLayer<T>, SigmoidLayer<T>, FcLayer<T>>;

/// One named trainable tensor with its gradient buffer.
template <typename T>
struct ParamRef {
    std::string name;
    Shape shape;
    std::span<T> value;
    std::span<T> grad;
};

// ---------------------------------------------------------------- model

template <typename T>
class Model {
public:
    const NetworkConfig& config() const { return config_; }
    std::size_t layer_count() const { return layers_.size(); }
    AnyLayer<T>& layer(std::size_t i) { return layers_.at(i); }
    const AnyLayer<T>& layer(std::size_t i) const { return layers_.at(i); }
    /// Activation shape after layer i (without the batch extent).
    const Shape& activation_shape(std::size_t i) const { return shapes_.at(i); }

    Tensor<T> forward(const Tensor<T>& batch) {
        if (batch.rank() != 4 || batch.dim(1) != config_.channels || batch.dim(2) != config_.height ||
            batch.dim(3) != config_.width) {
            throw ShapeError("model expects [N," + std::to_string(config_.channels) + "," +
                             std::to_string(config_.height) + "," + std::to_string(config_.width) + "], got " +
                             batch.shape().str());
        }
        return forward_range(batch, 0, layers_.size());
    }

    /// Runs layers [first, last) on x.
    Tensor<T> forward_range(Tensor<T> x, std::size_t first, std::size_t last) {
        for (std::size_t i = first; i < last; ++i) {
            x = std::visit([&](auto& l) { return l.forward(x); }, layers_[i]);
        }
        return x;
    }

    /// Input to the final fully connected layer, flattened to [N, D].
    Tensor<T> penultimate(const Tensor<T>& batch) {
        auto x = forward_range(batch, 0, layers_.size() - 1);
        const std::size_t n = x.dim(0);
        return std::move(x).reshaped(Shape{n, x.size() / n});
    }

    /// Back-propagates dL/doutput, filling every gradient buffer.
    void backward(const Tensor<T>& grad_output) {
        Tensor<T> g = grad_output;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            const bool need_input = i > 0;
            g = std::visit([&](auto& l) { return l.backward(g, need_input); }, layers_[i]);
        }
    }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const std::string prefix = "layer" + std::to_string(i) + ".";
            if (auto* c = std::get_if<ConvLayer<T>>(&layers_[i])) {
                out.push_back({prefix + "weight", c->weight.shape(), c->weight.values(), c->grad_weight.values()});
                out.push_back({prefix + "bias", Shape{c->bias.size()}, c->bias, c->grad_bias});
            } else if (auto* g = std::get_if<GoLayer<T>>(&layers_[i])) {
                auto& l = g->layer;
                out.push_back({prefix + "generator", Shape{l.raw().size()}, l.raw(), l.grad_raw_mut()});
                out.push_back({prefix + "bias", Shape{l.bias().size()}, l.bias(), l.grad_bias_mut()});
            } else if (auto* f = std::get_if<FcLayer<T>>(&layers_[i])) {
                out.push_back({prefix + "weight", f->weight.shape(), f->weight.values(), f->grad_weight.values()});
                out.push_back({prefix + "bias", Shape{f->bias.size()}, f->bias, f->grad_bias});
            }
        }
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (const auto& p : params()) {
            n += p.value.size();
        }
        return n;
    }

    /// Trainable parameters of layer i.
    std::size_t layer_param_count(std::size_t i) {
        const std::string prefix = "layer" + std::to_string(i) + ".";
        std::size_t n = 0;
        for (const auto& p : params()) {
            if (p.name.rfind(prefix, 0) == 0) {
                n += p.value.size();
            }
        }
        return n;
    }

    template <typename U>
    friend Model<U> build(const NetworkConfig& config);

private:
    NetworkConfig config_;
    std::vector<AnyLayer<T>> layers_;
    std::vector<Shape> shapes_;
};

namespace detail {

// Per-layer RNG so that changing one layer's type leaves the initial
// values of every other layer untouched.
inline std::mt19937_64 layer_rng(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), 0x60c0u};
    return std::mt19937_64(seq);
}

template <typename T, typename Rng>
void uniform_fill(std::span<T> dst, double bound, Rng& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : dst) {
        v = static_cast<T>(u(rng));
    }
}

}  // namespace detail

/// Shape-checks the whole stack and initializes parameters from config.seed.
template <typename T>
Model<T> build(const NetworkConfig& config) {
    if (config.layers.empty()) {
        throw ShapeError("network '" + config.name + "' has no layers");
    }
    Model<T> model;
    model.config_ = config;
    std::size_t C = config.channels, H = config.height, W = config.width;
    bool flat = false;
    auto where = [&](std::size_t i) {
        return "layer " + std::to_string(i) + " (" + std::string(to_string(config.layers[i].type)) + "): ";
    };
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const auto& d = config.layers[i];
        auto rng = detail::layer_rng(config.seed, i);
        switch (d.type) {
            case LayerType::Conv:
            case LayerType::GoConv: {
                if (flat) {
                    throw ShapeError(where(i) + "convolution after a fully connected layer");
                }
                if (d.out_channels == 0 || d.kernel == 0 || d.kernel % 2 == 0) {
                    throw ShapeError(where(i) + "needs out_channels >= 1 and an odd kernel size");
                }
                const ConvGeometry g{d.stride, d.padding};
                std::size_t Ho = 0, Wo = 0;
                try {
                    Ho = conv_out_extent(H, d.kernel, g);
                    Wo = conv_out_extent(W, d.kernel, g);
                } catch (const ShapeError& e) {
                    throw ShapeError(where(i) + e.what());
                }
                const std::size_t fan_in = C * d.kernel * d.kernel;
                if (d.type == LayerType::Conv) {
                    ConvLayer<T> l;
                    l.geometry = g;
                    l.weight = Tensor<T>(Shape{d.out_channels, C, d.kernel, d.kernel});
                    l.grad_weight = Tensor<T>(l.weight.shape());
                    l.bias.assign(d.out_channels, T(0));
                    l.grad_bias.assign(d.out_channels, T(0));
                    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
                    // slice-major draws, matching Free generator slices one to one
                    const std::size_t mm = d.kernel * d.kernel;
                    for (std::size_t s = 0; s < d.out_channels * C; ++s) {
                        detail::uniform_fill<T>(l.weight.values().subspan(s * mm, mm), bound, rng);
                    }
                    detail::uniform_fill<T>(std::span<T>(l.bias), bound, rng);
                    model.layers_.emplace_back(std::move(l));
                } else {
                    if (d.kinds.size() != d.out_channels) {
                        throw ShapeError(where(i) + std::to_string(d.kinds.size()) + " generator kinds for " +
                                         std::to_string(d.out_channels) + " output channels");
                    }
                    GoLayer<T> l{GoConvLayer<T>(C, d.kernel, d.kinds, g, d.share_across_in_channels)};
                    l.layer.initialize(rng);
                    model.layers_.emplace_back(std::move(l));
                }
                C = d.out_channels;
                H = Ho;
                W = Wo;
                break;
            }
            case LayerType::MaxPool:
                if (flat || H < 2 || W < 2) {
                    throw ShapeError(where(i) + "input too small for a 2x2 pool");
                }
                H /= 2;
                W /= 2;
                model.layers_.emplace_back(PoolLayer<T>{});
                break;
            case LayerType::Relu: model.layers_.emplace_back(ReluLayer<T>{}); break;
            case LayerType::Sigmoid: model.layers_.emplace_back(SigmoidLayer<T>{}); break;
            case LayerType::Fc: {
                if (d.units == 0) {
                    throw ShapeError(where(i) + "units must be >= 1");
                }
                const std::size_t D = C * H * W;
                FcLayer<T> l;
                l.weight = Tensor<T>(Shape{d.units, D});
                l.grad_weight = Tensor<T>(l.weight.shape());
                l.bias.assign(d.units, T(0));
                l.grad_bias.assign(d.units, T(0));
                const double bound = 1.0 / std::sqrt(static_cast<double>(D));
                detail::uniform_fill<T>(l.weight.values(), bound, rng);
                detail::uniform_fill<T>(std::span<T>(l.bias), bound, rng);
                model.layers_.emplace_back(std::move(l));
                C = d.units;
                H = W = 1;
                flat = true;
                break;
            }
        }
        model.shapes_.push_back(flat ? Shape{C} : Shape{C, H, W});
    }
    const auto& last = config.layers.back();
    const std::size_t out_width = model.shapes_.back().numel();
    if (config.loss == LossKind::CrossEntropy) {
        if (last.type != LayerType::Fc || out_width != config.classes) {
            throw ShapeError("network '" + config.name + "' must end in fc(" + std::to_string(config.classes) +
                             ") for cross-entropy, ends with width " + std::to_string(out_width));
        }
    } else if (out_width != (config.classes <= 2 ? 1 : config.classes)) {
        throw ShapeError("network '" + config.name + "' output width " + std::to_string(out_width) +
                         " does not match its mse target width");
    }
    return model;
}

// ---------------------------------------------------------------- presets

/// conv(32,5,p2) relu pool conv(64,5,p2) relu pool fc(512) relu fc(classes).
inline NetworkConfig lenet_config(std::size_t channels = 1, std::size_t size = 28, std::size_t classes = 10,
                                  std::uint64_t seed = 0) {
    NetworkConfig c;
    c.name = "lenet";
    c.channels = channels;
    c.height = c.width = size;
    c.classes = classes;
    c.seed = seed;
    c.layers = {LayerDesc::conv(32, 5, 2), LayerDesc::of(LayerType::Relu), LayerDesc::of(LayerType::MaxPool),
                LayerDesc::conv(64, 5, 2), LayerDesc::of(LayerType::Relu), LayerDesc::of(LayerType::MaxPool),
                LayerDesc::fc(512),        LayerDesc::of(LayerType::Relu), LayerDesc::fc(classes)};
    return c;
}

/// conv(od,m,same) σ fc(d1) σ fc(1) σ, trained with mean squared error
/// against {0,1} labels.
inline NetworkConfig theory_net_config(std::size_t d1, std::size_t od = 8, std::size_t m = 3, std::size_t size = 8,
                                       std::uint64_t seed = 0) {
    NetworkConfig c;
    c.name = "theory_net";
    c.channels = 1;
    c.height = c.width = size;
    c.classes = 2;
    c.loss = LossKind::Mse;
    c.seed = seed;
    c.layers = {LayerDesc::conv(od, m, (m - 1) / 2), LayerDesc::of(LayerType::Sigmoid), LayerDesc::fc(d1),
                LayerDesc::of(LayerType::Sigmoid), LayerDesc::fc(1), LayerDesc::of(LayerType::Sigmoid)};
    return c;
}

/// Small three-block CNN for directional CIFAR-subset runs. Not a ResNet.
inline NetworkConfig cifar_small_config(std::size_t classes = 10, std::uint64_t seed = 0) {
    NetworkConfig c;
    c.name = "cifar_small";
    c.channels = 3;
    c.height = c.width = 32;
    c.classes = classes;
    c.seed = seed;
    c.layers = {LayerDesc::conv(32, 3, 1),  LayerDesc::of(LayerType::Relu), LayerDesc::of(LayerType::MaxPool),
                LayerDesc::conv(64, 3, 1),  LayerDesc::of(LayerType::Relu), LayerDesc::of(LayerType::MaxPool),
                LayerDesc::conv(128, 3, 1), LayerDesc::of(LayerType::Relu), LayerDesc::of(LayerType::MaxPool),
                LayerDesc::fc(classes)};
    return c;
}

/// Replaces the first (conv) layer with a generator layer; everything else,
/// including the seed, is unchanged.
inline NetworkConfig to_go_variant(const NetworkConfig& config, const GeneratorMix& mix = GeneratorMix::half(),
                                   bool share_across_in_channels = false) {
    if (config.layers.empty() || config.layers.front().type != LayerType::Conv) {
        throw std::invalid_argument("to_go_variant: network '" + config.name +
                                    "' does not start with a convolution layer");
    }
    NetworkConfig out = config;
    auto& first = out.layers.front();
    first.type = LayerType::GoConv;
    first.kinds = mix.kinds_for(first.out_channels);
    first.share_across_in_channels = share_across_in_channels;
    out.name = "go_" + config.name;
    return out;
}

struct TheoryPair {
    NetworkConfig common;
    NetworkConfig go;
};

/// Common (free first layer) and Gabor theory nets with identical widths.
inline TheoryPair theory_pair(std::size_t d1, std::uint64_t seed, std::size_t od = 8, std::size_t size = 8) {
    if (d1 == 0) {
        throw std::invalid_argument("theory_pair: d1 must be >= 1");
    }
    auto f = theory_net_config(d1, od, 3, size, seed);
    auto g = to_go_variant(f, GeneratorMix::all(GeneratorKind::Gabor));
    return {f, g};
}

// ---------------------------------------------------------------- json

inline void to_json(nlohmann::json& j, const LayerDesc& d) {
    j = nlohmann::json{{"type", to_string(d.type)}};
    switch (d.type) {
        case LayerType::GoConv: {
            auto kinds = nlohmann::json::array();
            for (auto k : d.kinds) {
                kinds.push_back(to_string(k));
            }
            j["kinds"] = kinds;
            j["share_across_in_channels"] = d.share_across_in_channels;
            [[fallthrough]];
        }
        case LayerType::Conv:
            j["out_channels"] = d.out_channels;
            j["kernel"] = d.kernel;
            j["padding"] = d.padding;
            j["stride"] = d.stride;
            break;
        case LayerType::Fc: j["units"] = d.units; break;
        default: break;
    }
}

inline void from_json(const nlohmann::json& j, LayerDesc& d) {
    d = LayerDesc{};
    d.type = layer_type_from_string(j.at("type").get<std::string>());
    if (d.type == LayerType::Conv || d.type == LayerType::GoConv) {
        d.out_channels = j.at("out_channels").get<std::size_t>();
        d.kernel = j.value("kernel", std::size_t{3});
        d.padding = j.value("padding", std::size_t{0});
        d.stride = j.value("stride", std::size_t{1});
    }
    if (d.type == LayerType::GoConv) {
        d.share_across_in_channels = j.value("share_across_in_channels", false);
        if (j.contains("kinds")) {
            for (const auto& k : j.at("kinds")) {
                d.kinds.push_back(generator_kind_from_string(k.get<std::string>()));
            }
        } else {
            GeneratorMix mix;
            if (j.contains("mix")) {
                const auto& m = j.at("mix");
                mix.gabor = m.value("gabor", 0.0);
                mix.schmid = m.value("schmid", 0.0);
                mix.free = m.value("free", 0.0);
            }
            d.kinds = mix.kinds_for(d.out_channels);
        }
    }
    if (d.type == LayerType::Fc) {
        d.units = j.at("units").get<std::size_t>();
    }
}

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = nlohmann::json{{"name", c.name},
                       {"input", {c.channels, c.height, c.width}},
                       {"classes", c.classes},
                       {"loss", c.loss == LossKind::Mse ? "mse" : "cross_entropy"},
                       {"seed", c.seed},
                       {"layers", c.layers}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
    c = NetworkConfig{};
    c.name = j.value("name", std::string("custom"));
    const auto& in = j.at("input");
    if (!in.is_array() || in.size() != 3) {
        throw std::invalid_argument("network.input must be [channels, height, width]");
    }
    c.channels = in[0].get<std::size_t>();
    c.height = in[1].get<std::size_t>();
    c.width = in[2].get<std::size_t>();
    c.classes = j.value("classes", std::size_t{10});
    const auto loss = j.value("loss", std::string("cross_entropy"));
    if (loss == "mse") {
        c.loss = LossKind::Mse;
    } else if (loss == "cross_entropy") {
        c.loss = LossKind::CrossEntropy;
    } else {
        throw std::invalid_argument("network.loss must be 'mse' or 'cross_entropy', got '" + loss + "'");
    }
    c.seed = j.value("seed", std::uint64_t{0});
    c.layers = j.at("layers").get<std::vector<LayerDesc>>();
}

}  // namespace goconv
