#pragma once

// Numeric certification that a first-layer convolution is an injective
// linear map. Two matrices are checked: the patch matrix (one receptive
// field, OD × C·m²) and the full operator matrix on an H×W input
// (OD·H'·W' × C·H·W). Both are ranked by SVD in double precision.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <optional>
#include <sstream>
#include <iomanip>
#include <stdexcept>
#include <string>
#include <vector>

#include "goconv/generators.hpp"
#include "goconv/go_conv.hpp"
#include "goconv/ops.hpp"
#include "json.hpp"

namespace goconv {

using DenseMatrix = Eigen::MatrixXd;

inline constexpr double kDefaultRankTol = 1e-10;
inline constexpr std::size_t kOperatorMaxExtent = 16;

/// Number of singular values above rel_tol · σ_max.
inline std::size_t rank(const DenseMatrix& a, double rel_tol = kDefaultRankTol) {
    if (!a.allFinite()) {
        throw std::invalid_argument("rank: matrix has non-finite entries");
    }
    if (a.size() == 0) {
        return 0;
    }
    Eigen::BDCSVD<DenseMatrix> svd(a);
    if (svd.info() != Eigen::Success) {
        throw std::runtime_error("rank: SVD did not converge");
    }
    const auto& s = svd.singularValues();
    const double smax = s.size() ? s(0) : 0.0;
    if (smax == 0.0) {
        return 0;
    }
    std::size_t r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        r += s(i) > rel_tol * smax;
    }
    return r;
}

/// Row o is kernels[o, ·, ·, ·] flattened.
template <typename T>
DenseMatrix patch_matrix(const KernelBank<T>& bank) {
    const std::size_t cols = bank.in_channels * bank.m * bank.m;
    DenseMatrix p(static_cast<Eigen::Index>(bank.out_channels), static_cast<Eigen::Index>(cols));
    for (std::size_t o = 0; o < bank.out_channels; ++o) {
        for (std::size_t k = 0; k < cols; ++k) {
            p(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(k)) =
                static_cast<double>(bank.kernels[o * cols + k]);
        }
    }
    return p;
}

/// Matrix of the convolution (zero bias) as a map from C·H·W inputs to
/// OD·H'·W' outputs, both flattened row-major. Column k is the response to
/// the k-th standard-basis image.
template <typename T>
DenseMatrix operator_matrix(const KernelBank<T>& bank, std::size_t height, std::size_t width, std::size_t padding,
                            std::size_t stride = 1) {
    if (height > kOperatorMaxExtent || width > kOperatorMaxExtent) {
        throw std::invalid_argument("operator_matrix: " + std::to_string(height) + "x" + std::to_string(width) +
                                    " exceeds the dense-size guard of " + std::to_string(kOperatorMaxExtent) + "x" +
                                    std::to_string(kOperatorMaxExtent));
    }
    const ConvGeometry g{stride, padding};
    const std::size_t m = bank.m, C = bank.in_channels, OD = bank.out_channels;
    const std::size_t oh = conv_out_extent(height, m, g), ow = conv_out_extent(width, m, g);
    DenseMatrix a = DenseMatrix::Zero(static_cast<Eigen::Index>(OD * oh * ow), static_cast<Eigen::Index>(C * height * width));
    for (std::size_t o = 0; o < OD; ++o) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const auto row = static_cast<Eigen::Index>((o * oh + y) * ow + x);
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const auto iy = static_cast<std::ptrdiff_t>(y * stride + i) - static_cast<std::ptrdiff_t>(padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                            continue;
                        }
                        for (std::size_t j = 0; j < m; ++j) {
                            const auto ix =
                                static_cast<std::ptrdiff_t>(x * stride + j) - static_cast<std::ptrdiff_t>(padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) {
                                continue;
                            }
                            const auto col = static_cast<Eigen::Index>((c * height + static_cast<std::size_t>(iy)) * width +
                                                                       static_cast<std::size_t>(ix));
                            a(row, col) = static_cast<double>(bank.kernels[((o * C + c) * m + i) * m + j]);
                        }
                    }
                }
            }
        }
    }
    return a;
}

template <typename T>
bool operator_injective(const KernelBank<T>& bank, std::size_t height, std::size_t width, std::size_t padding,
                        double rel_tol = kDefaultRankTol) {
    return rank(operator_matrix(bank, height, width, padding), rel_tol) == bank.in_channels * height * width;
}

/// One Gabor parameter set per construction situation, before σ and γ are
/// attached: (θ, λ, ψ).
struct Prop2Situation {
    const char* label;
    double theta;
    double lambda;
    double psi;
};

inline std::vector<Prop2Situation> prop2_situations() {
    using std::numbers::pi;
    return {{"I", 0.0, 1.0, 0.0},         {"II", 0.0, 3.0, pi / 3},        {"III", 0.0, 3.0, -pi / 3},
            {"IV+", pi / 2, 3.0, pi / 3}, {"IV-", pi / 2, 3.0, -pi / 3},   {"V", pi / 4, 2.0, std::numbers::sqrt2 * pi}};
}

/// 3×3 Gabor specs for every (situation × σ × γ), situation-major.
inline std::vector<GeneratorSpec> prop2_specs(const std::vector<double>& sigmas, const std::vector<double>& gammas,
                                              const std::vector<Prop2Situation>& situations = prop2_situations()) {
    if (sigmas.size() < 2 || gammas.size() < 2) {
        throw std::invalid_argument("prop2_bank needs at least two sigma and two gamma values");
    }
    std::vector<GeneratorSpec> specs;
    for (const auto& s : situations) {
        for (double sigma : sigmas) {
            for (double gamma : gammas) {
                const auto raw = gabor_to_raw(GaborParams{s.theta, s.psi, sigma, gamma, s.lambda});
                specs.push_back(GeneratorSpec{GeneratorKind::Gabor, 3, {raw.begin(), raw.end()}});
            }
        }
    }
    return specs;
}

inline KernelBank<double> prop2_bank(const std::vector<double>& sigmas, const std::vector<double>& gammas,
                                     const std::vector<Prop2Situation>& situations = prop2_situations()) {
    auto specs = prop2_specs(sigmas, gammas, situations);
    const std::size_t od = specs.size();
    return build_bank<double>(std::move(specs), od, 1);
}

/// Single-channel GO layer whose slices are the given Gabor specs, zero bias.
template <typename T>
GoConvLayer<T> layer_from_specs(const std::vector<GeneratorSpec>& specs, std::size_t padding = 1) {
    if (specs.empty()) {
        throw std::invalid_argument("layer_from_specs: no specs");
    }
    std::vector<GeneratorKind> kinds;
    for (const auto& s : specs) {
        kinds.push_back(s.kind);
    }
    GoConvLayer<T> layer(1, specs.front().m, kinds, ConvGeometry{1, padding});
    for (std::size_t s = 0; s < specs.size(); ++s) {
        auto dst = layer.slice_raw(s);
        if (dst.size() != specs[s].raw.size()) {
            throw std::invalid_argument("layer_from_specs: spec " + std::to_string(s) + " has wrong raw length");
        }
        for (std::size_t t = 0; t < dst.size(); ++t) {
            dst[t] = static_cast<T>(specs[s].raw[t]);
        }
    }
    return layer;
}

struct CertificationReport {
    std::size_t patch_rank = 0;
    std::size_t required = 0;  // C·m²
    std::size_t operator_rank = 0;
    std::size_t operator_required = 0;  // C·H·W
    std::size_t height = 0, width = 0, padding = 0;
    bool injective = false;
    /// Patch rank full while the operator is not injective.
    bool boundary_effect = false;
    double rel_tol = kDefaultRankTol;
    std::string params_digest;
};

/// FNV-1a over the raw parameter bytes (as f64) and bias, hex encoded.
template <typename T>
std::string params_digest(const GoConvLayer<T>& layer) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](double v) {
        unsigned char b[sizeof(double)];
        std::memcpy(b, &v, sizeof v);
        for (unsigned char c : b) {
            h = (h ^ c) * 0x100000001b3ULL;
        }
    };
    for (auto v : layer.raw()) {
        mix(static_cast<double>(v));
    }
    for (auto v : layer.bias()) {
        mix(static_cast<double>(v));
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

template <typename T>
CertificationReport certify_well_defined(const GoConvLayer<T>& layer, std::size_t height, std::size_t width,
                                         std::optional<std::size_t> padding = std::nullopt,
                                         double rel_tol = kDefaultRankTol) {
    const auto bank = layer.materialize();
    CertificationReport r;
    r.height = height;
    r.width = width;
    r.padding = padding.value_or(layer.geometry().padding);
    r.rel_tol = rel_tol;
    r.required = bank.in_channels * bank.m * bank.m;
    r.operator_required = bank.in_channels * height * width;
    r.patch_rank = rank(patch_matrix(bank), rel_tol);
    r.operator_rank = rank(operator_matrix(bank, height, width, r.padding, layer.geometry().stride), rel_tol);
    r.injective = r.operator_rank == r.operator_required;
    r.boundary_effect = r.patch_rank == r.required && !r.injective;
    r.params_digest = params_digest(layer);
    return r;
}

inline void to_json(nlohmann::json& j, const CertificationReport& r) {
    j = nlohmann::json{{"patch_rank", r.patch_rank},
                       {"required", r.required},
                       {"operator_rank", r.operator_rank},
                       {"operator_required", r.operator_required},
                       {"input", {r.height, r.width}},
                       {"padding", r.padding},
                       {"rel_tol", r.rel_tol},
                       {"verdict", r.injective ? "injective" : "not_injective"},
                       {"boundary_effect", r.boundary_effect},
                       {"params_digest", r.params_digest}};
}

}  // namespace goconv
