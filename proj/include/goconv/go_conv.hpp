#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "goconv/generators.hpp"
#include "goconv/ops.hpp"
#include "goconv/tensor.hpp"

namespace goconv {

/// Convolution layer whose kernels are regenerated from generator parameters
/// on every forward pass. Raw parameters of all slices live in one flat
/// vector; slice s occupies [offset(s), offset(s) + param_count(kind(s))).
template <typename T>
class GoConvLayer {
public:
    GoConvLayer() = default;

    /// kinds holds one entry per out channel; with share_across_in_channels
    /// unset each out channel gets an independent slice per input channel.
    GoConvLayer(std::size_t in_channels, std::size_t m, std::vector<GeneratorKind> kinds, ConvGeometry geometry,
                bool share_across_in_channels = false)
        : in_channels_(in_channels),
          m_(m),
          out_kinds_(std::move(kinds)),
          geometry_(geometry),
          shared_(share_across_in_channels) {
        if (m_ % 2 == 0 || m_ == 0) {
            throw std::invalid_argument("GoConvLayer: kernel size must be odd, got " + std::to_string(m_));
        }
        if (out_kinds_.empty() || in_channels_ == 0) {
            throw std::invalid_argument("GoConvLayer: needs at least one input and one output channel");
        }
        std::size_t off = 0;
        for (std::size_t s = 0; s < slice_count(); ++s) {
            offsets_.push_back(off);
            off += goconv::param_count(slice_kind(s), m_);
        }
        raw_.assign(off, T(0));
        bias_.assign(out_channels(), T(0));
        grad_raw_.assign(off, T(0));
        grad_bias_.assign(out_channels(), T(0));
    }

    std::size_t in_channels() const { return in_channels_; }
    std::size_t out_channels() const { return out_kinds_.size(); }
    std::size_t kernel_size() const { return m_; }
    const ConvGeometry& geometry() const { return geometry_; }
    bool shares_across_in_channels() const { return shared_; }
    const std::vector<GeneratorKind>& out_kinds() const { return out_kinds_; }

    std::size_t slice_count() const { return shared_ ? out_channels() : out_channels() * in_channels_; }
    GeneratorKind slice_kind(std::size_t s) const { return out_kinds_[shared_ ? s : s / in_channels_]; }
    std::size_t slice_offset(std::size_t s) const { return offsets_[s]; }

    std::span<T> raw() { return raw_; }
    std::span<const T> raw() const { return raw_; }
    std::span<T> bias() { return bias_; }
    std::span<const T> bias() const { return bias_; }
    std::span<const T> grad_raw() const { return grad_raw_; }
    std::span<const T> grad_bias() const { return grad_bias_; }
    std::span<T> grad_raw_mut() { return grad_raw_; }
    std::span<T> grad_bias_mut() { return grad_bias_; }

    std::span<T> slice_raw(std::size_t s) {
        return std::span<T>(raw_).subspan(offsets_[s], goconv::param_count(slice_kind(s), m_));
    }

    /// Generator parameters plus bias.
    std::size_t param_count() const { return raw_.size() + bias_.size(); }

    /// Draws default raw parameters for every slice and a uniform bias.
    template <typename Rng>
    void initialize(Rng& rng) {
        const std::size_t fan_in = in_channels_ * m_ * m_;
        for (std::size_t s = 0; s < slice_count(); ++s) {
            const auto r = init_raw(slice_kind(s), m_, fan_in, rng);
            auto dst = slice_raw(s);
            for (std::size_t t = 0; t < r.size(); ++t) {
                dst[t] = static_cast<T>(r[t]);
            }
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& b : bias_) {
            b = static_cast<T>(u(rng));
        }
    }

    std::vector<GeneratorSpec> specs() const {
        std::vector<GeneratorSpec> out;
        out.reserve(out_channels() * in_channels_);
        for (std::size_t o = 0; o < out_channels(); ++o) {
            for (std::size_t c = 0; c < in_channels_; ++c) {
                const std::size_t s = shared_ ? o : o * in_channels_ + c;
                const std::size_t n = goconv::param_count(slice_kind(s), m_);
                std::vector<double> r(n);
                for (std::size_t t = 0; t < n; ++t) {
                    r[t] = static_cast<double>(raw_[offsets_[s] + t]);
                }
                out.push_back(GeneratorSpec{slice_kind(s), m_, std::move(r)});
            }
        }
        return out;
    }

    KernelBank<T> materialize() const { return build_bank<T>(specs(), out_channels(), in_channels_); }

    Tensor<T> forward(const Tensor<T>& input) {
        if (input.rank() != 4 || input.dim(1) != in_channels_) {
            throw ShapeError("GoConvLayer: expected input [N," + std::to_string(in_channels_) + ",H,W], got " +
                             input.shape().str());
        }
        bank_ = materialize();
        input_ = input;
        return conv2d_forward(input, bank_->kernels, std::span<const T>(bias_), geometry_);
    }

    /// Chains dL/dkernel through each slice's raw Jacobian. Overwrites the
    /// stored parameter gradients and returns dL/dinput (empty if not requested).
    Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad = true) {
        if (!bank_ || !input_) {
            throw std::logic_error("GoConvLayer::backward called before forward");
        }
        auto g = conv2d_backward(*input_, bank_->kernels, grad_out, geometry_, need_input_grad);
        std::copy(g.bias.begin(), g.bias.end(), grad_bias_.begin());
        std::fill(grad_raw_.begin(), grad_raw_.end(), T(0));
        std::vector<double> acc;
        const std::size_t mm = m_ * m_;
        for (std::size_t o = 0; o < out_channels(); ++o) {
            for (std::size_t c = 0; c < in_channels_; ++c) {
                const std::size_t slot = o * in_channels_ + c;
                const std::size_t s = shared_ ? o : slot;
                const T* gk = g.kernels.data() + slot * mm;
                T* dst = grad_raw_.data() + offsets_[s];
                if (slice_kind(s) == GeneratorKind::Free) {
                    for (std::size_t e = 0; e < mm; ++e) {
                        dst[e] += gk[e];
                    }
                    continue;
                }
                const auto& jac = bank_->jacobians[slot];
                acc.assign(jac.n, 0.0);
                for (std::size_t e = 0; e < mm; ++e) {
                    const double ge = static_cast<double>(gk[e]);
                    for (std::size_t t = 0; t < jac.n; ++t) {
                        acc[t] += ge * jac.v[e * jac.n + t];
                    }
                }
                for (std::size_t t = 0; t < jac.n; ++t) {
                    dst[t] += static_cast<T>(acc[t]);
                }
            }
        }
        return std::move(g.input);
    }

    const std::optional<KernelBank<T>>& cached_bank() const { return bank_; }
    void clear_cache() {
        bank_.reset();
        input_.reset();
    }

private:
    std::size_t in_channels_ = 0;
    std::size_t m_ = 0;
    std::vector<GeneratorKind> out_kinds_;
    ConvGeometry geometry_;
    bool shared_ = false;
    std::vector<std::size_t> offsets_;
    std::vector<T> raw_;
    std::vector<T> bias_;
    std::vector<T> grad_raw_;
    std::vector<T> grad_bias_;
    std::optional<KernelBank<T>> bank_;
    std::optional<Tensor<T>> input_;
};

inline std::size_t param_count_common(std::size_t out_channels, std::size_t in_channels, std::size_t m) {
    return out_channels * in_channels * m * m + out_channels;
}

}  // namespace goconv
