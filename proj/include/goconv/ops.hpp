#pragma once

// Forward/backward numeric kernels shared by every layer type.
// Convolution follows the cross-correlation convention (no kernel flip)
// with zero padding only.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "goconv/tensor.hpp"

namespace goconv {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
    const std::size_t padded = in + 2 * g.padding;
    if (kernel > padded) {
        throw ShapeError("conv2d: kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                         std::to_string(padded));
    }
    if (g.stride == 0) {
        throw ShapeError("conv2d: stride must be positive");
    }
    return (padded - kernel) / g.stride + 1;
}

namespace detail {

// Unfolds one C×H×W image into a (C·m·m)×(H'·W') column matrix.
template <typename T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, std::size_t m, const ConvGeometry& g,
            std::size_t Ho, std::size_t Wo, T* col) {
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    const std::size_t P = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < m; ++ki) {
            for (std::size_t kj = 0; kj < m; ++kj) {
                T* row = col + ((c * m + ki) * m + kj) * P;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
                    T* dst = row + oy * Wo;
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill(dst, dst + Wo, T(0));
                        continue;
                    }
                    const T* src = img + (c * H + static_cast<std::size_t>(y)) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
                        dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(W)) ? T(0) : src[x];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t m, const ConvGeometry& g,
                std::size_t Ho, std::size_t Wo, T* img) {
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    const std::size_t P = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < m; ++ki) {
            for (std::size_t kj = 0; kj < m; ++kj) {
                const T* row = col + ((c * m + ki) * m + kj) * P;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) {
                        continue;
                    }
                    T* dst = img + (c * H + static_cast<std::size_t>(y)) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
                        if (x >= 0 && x < static_cast<std::ptrdiff_t>(W)) {
                            dst[x] += row[oy * Wo + ox];
                        }
                    }
                }
            }
        }
    }
}

inline void check_conv_operands(const Shape& in, const Shape& k, std::size_t bias_len) {
    require_rank(in, 4, "conv2d input");
    require_rank(k, 4, "conv2d kernels");
    if (k[1] != in[1]) {
        throw ShapeError("conv2d: kernel channels " + std::to_string(k[1]) + " != input channels " +
                         std::to_string(in[1]));
    }
    if (k[2] != k[3]) {
        throw ShapeError("conv2d: kernels must be square, got " + k.str());
    }
    if (bias_len != k[0]) {
        throw ShapeError("conv2d: bias length " + std::to_string(bias_len) + " != output channels " +
                         std::to_string(k[0]));
    }
}

}  // namespace detail

/// input [N,C,H,W] ⋆ kernels [OD,C,m,m] + bias -> [N,OD,H',W'].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels, std::span<const T> bias,
                         const ConvGeometry& g) {
    detail::check_conv_operands(input.shape(), kernels.shape(), bias.size());
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t OD = kernels.dim(0), m = kernels.dim(2);
    const std::size_t Ho = conv_out_extent(H, m, g), Wo = conv_out_extent(W, m, g);
    const std::size_t K = C * m * m, P = Ho * Wo;

    Tensor<T> out(Shape{N, OD, Ho, Wo});
    std::vector<T> col(K * P);
    ConstMatrixMap<T> kmat(kernels.data(), static_cast<Eigen::Index>(OD), static_cast<Eigen::Index>(K));
    for (std::size_t n = 0; n < N; ++n) {
        detail::im2col(input.data() + n * C * H * W, C, H, W, m, g, Ho, Wo, col.data());
        ConstMatrixMap<T> cmat(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        MatrixMap<T> omat(out.data() + n * OD * P, static_cast<Eigen::Index>(OD), static_cast<Eigen::Index>(P));
        omat.noalias() = kmat * cmat;
        for (std::size_t o = 0; o < OD; ++o) {
            omat.row(static_cast<Eigen::Index>(o)).array() += bias[o];
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;  // empty when not requested
    Tensor<T> kernels;
    std::vector<T> bias;
};

/// Exact adjoint of conv2d_forward. Skipping grad_input saves the col2im pass
/// for first layers.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_out,
                             const ConvGeometry& g, bool need_input_grad = true) {
    detail::check_conv_operands(input.shape(), kernels.shape(), kernels.dim(0));
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t OD = kernels.dim(0), m = kernels.dim(2);
    const std::size_t Ho = conv_out_extent(H, m, g), Wo = conv_out_extent(W, m, g);
    if (!(grad_out.shape() == Shape{N, OD, Ho, Wo})) {
        throw ShapeError("conv2d_backward: grad_out shape " + grad_out.shape().str() + " != forward output " +
                         Shape{N, OD, Ho, Wo}.str());
    }
    const std::size_t K = C * m * m, P = Ho * Wo;
    const auto eOD = static_cast<Eigen::Index>(OD), eK = static_cast<Eigen::Index>(K),
               eP = static_cast<Eigen::Index>(P);

    ConvGrads<T> grads;
    grads.kernels = Tensor<T>(kernels.shape());
    grads.bias.assign(OD, T(0));
    if (need_input_grad) {
        grads.input = Tensor<T>(input.shape());
    }
    std::vector<T> col(K * P), gcol;
    if (need_input_grad) {
        gcol.resize(K * P);
    }
    ConstMatrixMap<T> kmat(kernels.data(), eOD, eK);
    MatrixMap<T> gk(grads.kernels.data(), eOD, eK);
    for (std::size_t n = 0; n < N; ++n) {
        ConstMatrixMap<T> gout(grad_out.data() + n * OD * P, eOD, eP);
        for (std::size_t o = 0; o < OD; ++o) {
            T s = T(0);
            const T* row = grad_out.data() + (n * OD + o) * P;
            for (std::size_t p = 0; p < P; ++p) {
                s += row[p];
            }
            grads.bias[o] += s;
        }
        detail::im2col(input.data() + n * C * H * W, C, H, W, m, g, Ho, Wo, col.data());
        ConstMatrixMap<T> cmat(col.data(), eK, eP);
        gk.noalias() += gout * cmat.transpose();
        if (need_input_grad) {
            MatrixMap<T> gc(gcol.data(), eK, eP);
            gc.noalias() = kmat.transpose() * gout;
            detail::col2im_add(gcol.data(), C, H, W, m, g, Ho, Wo, grads.input.data() + n * C * H * W);
        }
    }
    return grads;
}

/// input [N,D] · weightᵀ [D,K] + bias -> [N,K].
template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias) {
    require_rank(input.shape(), 2, "fc input");
    require_rank(weight.shape(), 2, "fc weight");
    const std::size_t N = input.dim(0), D = input.dim(1), K = weight.dim(0);
    if (weight.dim(1) != D) {
        throw ShapeError("fc: weight inner extent " + std::to_string(weight.dim(1)) + " != input width " +
                         std::to_string(D));
    }
    if (bias.size() != K) {
        throw ShapeError("fc: bias length " + std::to_string(bias.size()) + " != output width " + std::to_string(K));
    }
    Tensor<T> out(Shape{N, K});
    ConstMatrixMap<T> x(input.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(D));
    ConstMatrixMap<T> w(weight.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
    MatrixMap<T> y(out.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(K));
    y.noalias() = x * w.transpose();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
            y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) += bias[k];
        }
    }
    return out;
}

template <typename T>
struct FcGrads {
    Tensor<T> input;
    Tensor<T> weight;
    std::vector<T> bias;
};

template <typename T>
FcGrads<T> fc_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                       bool need_input_grad = true) {
    require_rank(input.shape(), 2, "fc input");
    const std::size_t N = input.dim(0), D = input.dim(1), K = weight.dim(0);
    if (!(grad_out.shape() == Shape{N, K})) {
        throw ShapeError("fc_backward: grad_out shape " + grad_out.shape().str() + " != " + Shape{N, K}.str());
    }
    const auto eN = static_cast<Eigen::Index>(N), eD = static_cast<Eigen::Index>(D),
               eK = static_cast<Eigen::Index>(K);
    FcGrads<T> grads;
    grads.weight = Tensor<T>(weight.shape());
    grads.bias.assign(K, T(0));
    ConstMatrixMap<T> x(input.data(), eN, eD);
    ConstMatrixMap<T> w(weight.data(), eK, eD);
    ConstMatrixMap<T> gy(grad_out.data(), eN, eK);
    MatrixMap<T> gw(grads.weight.data(), eK, eD);
    gw.noalias() = gy.transpose() * x;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
            grads.bias[k] += grad_out[n * K + k];
        }
    }
    if (need_input_grad) {
        grads.input = Tensor<T>(input.shape());
        MatrixMap<T> gx(grads.input.data(), eN, eD);
        gx.noalias() = gy * w;
    }
    return grads;
}

template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = sigmoid(x[i]);
    }
    return y;
}

/// Uses the forward output: dσ = σ(1-σ).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
    require(y.shape() == grad_out.shape(), "sigmoid_backward: shape mismatch");
    Tensor<T> g(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        g[i] = grad_out[i] * y[i] * (T(1) - y[i]);
    }
    return g;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] > T(0) ? x[i] : T(0);
    }
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
    require(x.shape() == grad_out.shape(), "relu_backward: shape mismatch");
    Tensor<T> g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        g[i] = x[i] > T(0) ? grad_out[i] : T(0);
    }
    return g;
}

template <typename T>
struct PoolResult {
    Tensor<T> output;
    std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2×2 window, stride 2, floor semantics. Ties go to the first maximum in
/// row-major window order.
template <typename T>
PoolResult<T> maxpool2_forward(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "maxpool input");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2) {
        throw ShapeError("maxpool: input " + x.shape().str() + " smaller than the 2x2 window");
    }
    const std::size_t Ho = H / 2, Wo = W / 2;
    PoolResult<T> r{Tensor<T>(Shape{N, C, Ho, Wo}), std::vector<std::uint32_t>(N * C * Ho * Wo)};
    std::size_t k = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const std::size_t base = nc * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox, ++k) {
                std::size_t best = base + (2 * oy) * W + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = base + (2 * oy + dy) * W + 2 * ox + dx;
                        if (x[idx] > x[best]) {
                            best = idx;
                        }
                    }
                }
                r.output[k] = x[best];
                r.argmax[k] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                            const Tensor<T>& grad_out) {
    require(grad_out.size() == argmax.size(), "maxpool_backward: grad_out does not match recorded argmax");
    Tensor<T> g(input_shape);
    for (std::size_t k = 0; k < argmax.size(); ++k) {
        g[argmax[k]] += grad_out[k];
    }
    return g;
}

template <typename T>
struct LossResult {
    double value = 0.0;
    Tensor<T> grad;
};

/// Mean of squared differences over all elements.
template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require(pred.shape() == target.shape(), "mse_loss: pred " + pred.shape().str() + " vs target " +
                                                target.shape().str());
    LossResult<T> r{0.0, Tensor<T>(pred.shape())};
    const double inv = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        r.value += d * d;
        r.grad[i] = static_cast<T>(2.0 * d * inv);
    }
    r.value *= inv;
    return r;
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    require(labels.size() == N, "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                                    std::to_string(N));
    LossResult<T> r{0.0, Tensor<T>(logits.shape())};
    const double inv = 1.0 / static_cast<double>(N);
    std::vector<double> p(K);
    for (std::size_t n = 0; n < N; ++n) {
        if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= K) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[n]) +
                                    " outside [0, " + std::to_string(K) + ")");
        }
        const T* z = logits.data() + n * K;
        double zmax = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < K; ++k) {
            zmax = std::max(zmax, static_cast<double>(z[k]));
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            p[k] = std::exp(static_cast<double>(z[k]) - zmax);
            sum += p[k];
        }
        const auto y = static_cast<std::size_t>(labels[n]);
        r.value += -(static_cast<double>(z[y]) - zmax - std::log(sum));
        for (std::size_t k = 0; k < K; ++k) {
            const double pk = p[k] / sum;
            r.grad[n * K + k] = static_cast<T>((pk - (k == y ? 1.0 : 0.0)) * inv);
        }
    }
    r.value *= inv;
    return r;
}

}  // namespace goconv
