#pragma once

// Kernel generator functions: small parameter vectors -> m×m kernels, with
// closed-form Jacobians for routing loss gradients back to the parameters.

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "goconv/tensor.hpp"

namespace goconv {

/// Smallest admissible Gabor wavelength. The raw parameterization keeps
/// lambda strictly above it.
inline constexpr double kLambdaMin = 0.1;

struct GaborParams {
    double theta = 0.0;  // orientation (rad)
    double psi = 0.0;    // phase offset (rad)
    double sigma = 1.0;  // gaussian envelope scale, > 0
    double gamma = 1.0;  // spatial aspect ratio, > 0
    double lambda = 1.0; // wavelength, >= kLambdaMin

    bool valid() const { return sigma > 0.0 && gamma > 0.0 && std::abs(lambda) >= kLambdaMin; }
};

struct SchmidParams {
    double sigma = 1.0;  // > 0
    double tau = 1.0;    // number of cycles of the harmonic within the envelope

    bool valid() const { return sigma > 0.0; }
};

/// Free is the identity generator of an ordinary convolution (n = m²).
/// New operator families extend this enum together with param_count,
/// constrain/unconstrain and materialize.
enum class GeneratorKind { Gabor, Schmid, Free };

inline std::string_view to_string(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::Gabor: return "gabor";
        case GeneratorKind::Schmid: return "schmid";
        case GeneratorKind::Free: return "free";
    }
    return "unknown";
}

inline GeneratorKind generator_kind_from_string(std::string_view s) {
    if (s == "gabor") return GeneratorKind::Gabor;
    if (s == "schmid") return GeneratorKind::Schmid;
    if (s == "free") return GeneratorKind::Free;
    throw std::invalid_argument("unknown generator kind '" + std::string(s) + "'");
}

inline std::size_t param_count(GeneratorKind kind, std::size_t m) {
    switch (kind) {
        case GeneratorKind::Gabor: return 5;
        case GeneratorKind::Schmid: return 2;
        case GeneratorKind::Free: return m * m;
    }
    return 0;
}

struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::Gabor;
    std::size_t m = 3;
    std::vector<double> raw;  // unconstrained parameters, length param_count(kind, m)

    void validate() const {
        if (m % 2 == 0) {
            throw std::invalid_argument("generator kernel size must be odd, got " + std::to_string(m));
        }
        if (raw.size() != param_count(kind, m)) {
            throw std::invalid_argument(std::string(to_string(kind)) + " generator expects " +
                                        std::to_string(param_count(kind, m)) + " raw parameters, got " +
                                        std::to_string(raw.size()));
        }
    }
};

/// Kernel entry (i, j) sits at x = i - (m-1)/2 (row offset), y = j - (m-1)/2
/// (column offset). Every generator uses this convention.
inline std::pair<double, double> grid_coords(std::size_t m, std::size_t i, std::size_t j) {
    const double c = (static_cast<double>(m) - 1.0) / 2.0;
    return {static_cast<double>(i) - c, static_cast<double>(j) - c};
}

/// Row-major m×m kernel in double precision.
struct KernelMatrix {
    std::size_t m = 0;
    std::vector<double> v;

    explicit KernelMatrix(std::size_t size = 0) : m(size), v(size * size, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return v[i * m + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v[i * m + j]; }
};

/// ∂kernel[i,j]/∂p_t stored as [i][j][t].
struct KernelJacobian {
    std::size_t m = 0;
    std::size_t n = 0;
    std::vector<double> v;

    KernelJacobian() = default;
    KernelJacobian(std::size_t size, std::size_t params) : m(size), n(params), v(size * size * params, 0.0) {}
    double& operator()(std::size_t i, std::size_t j, std::size_t t) { return v[(i * m + j) * n + t]; }
    double operator()(std::size_t i, std::size_t j, std::size_t t) const { return v[(i * m + j) * n + t]; }
};

// Gabor: exp(-(x'² + γ²y'²)/(2σ²)) · cos(2πx'/λ + ψ),
//   x' = x cosθ + y sinθ,  y' = -x sinθ + y cosθ.

inline KernelMatrix gabor_kernel(const GaborParams& p, std::size_t m) {
    KernelMatrix k(m);
    const double ct = std::cos(p.theta), st = std::sin(p.theta);
    const double two_s2 = 2.0 * p.sigma * p.sigma;
    const double g2 = p.gamma * p.gamma;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const auto [x, y] = grid_coords(m, i, j);
            const double xr = x * ct + y * st;
            const double yr = -x * st + y * ct;
            k(i, j) = std::exp(-(xr * xr + g2 * yr * yr) / two_s2) *
                      std::cos(2.0 * std::numbers::pi * xr / p.lambda + p.psi);
        }
    }
    return k;
}

/// Partials with respect to (θ, ψ, σ, γ, λ).
inline KernelJacobian gabor_jacobian(const GaborParams& p, std::size_t m) {
    KernelJacobian jac(m, 5);
    const double ct = std::cos(p.theta), st = std::sin(p.theta);
    const double s2 = p.sigma * p.sigma;
    const double g2 = p.gamma * p.gamma;
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const auto [x, y] = grid_coords(m, i, j);
            const double xr = x * ct + y * st;
            const double yr = -x * st + y * ct;
            const double q = xr * xr + g2 * yr * yr;
            const double env = std::exp(-q / (2.0 * s2));
            const double phase = two_pi * xr / p.lambda + p.psi;
            const double ec = env * std::cos(phase);
            const double es = env * std::sin(phase);
            // dx'/dθ = y', dy'/dθ = -x'
            jac(i, j, 0) = -ec * xr * yr * (1.0 - g2) / s2 - es * two_pi * yr / p.lambda;
            jac(i, j, 1) = -es;
            jac(i, j, 2) = ec * q / (s2 * p.sigma);
            jac(i, j, 3) = -ec * p.gamma * yr * yr / s2;
            jac(i, j, 4) = es * two_pi * xr / (p.lambda * p.lambda);
        }
    }
    return jac;
}

// Schmid: exp(-r²/(2σ²)) · cos(2πτr/σ),  r = sqrt(x² + y²).

inline KernelMatrix schmid_kernel(const SchmidParams& p, std::size_t m) {
    KernelMatrix k(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const auto [x, y] = grid_coords(m, i, j);
            const double r2 = x * x + y * y;
            const double r = std::sqrt(r2);
            k(i, j) = std::exp(-r2 / (2.0 * p.sigma * p.sigma)) *
                      std::cos(2.0 * std::numbers::pi * p.tau * r / p.sigma);
        }
    }
    return k;
}

/// Partials with respect to (σ, τ).
inline KernelJacobian schmid_jacobian(const SchmidParams& p, std::size_t m) {
    KernelJacobian jac(m, 2);
    const double s = p.sigma, s2 = s * s;
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const auto [x, y] = grid_coords(m, i, j);
            const double r2 = x * x + y * y;
            const double r = std::sqrt(r2);
            const double env = std::exp(-r2 / (2.0 * s2));
            const double phase = two_pi * p.tau * r / s;
            const double ec = env * std::cos(phase);
            const double es = env * std::sin(phase);
            jac(i, j, 0) = ec * r2 / (s2 * s) + es * two_pi * p.tau * r / s2;
            jac(i, j, 1) = -es * two_pi * r / s;
        }
    }
    return jac;
}

// Raw <-> constrained parameters. Angles and tau pass through; positive
// quantities go through exp so unconstrained descent stays in the domain.
//   Gabor raw:  (θ, ψ, log σ, log γ, log(λ - λmin))
//   Schmid raw: (log σ, τ)

inline GaborParams gabor_from_raw(std::span<const double> raw) {
    if (raw.size() != 5) {
        throw std::invalid_argument("gabor_from_raw: expected 5 values, got " + std::to_string(raw.size()));
    }
    return GaborParams{raw[0], raw[1], std::exp(raw[2]), std::exp(raw[3]), kLambdaMin + std::exp(raw[4])};
}

inline std::array<double, 5> gabor_to_raw(const GaborParams& p) {
    if (!(p.sigma > 0.0 && p.gamma > 0.0 && p.lambda > kLambdaMin)) {
        throw std::invalid_argument("gabor_to_raw: parameters outside the representable domain");
    }
    return {p.theta, p.psi, std::log(p.sigma), std::log(p.gamma), std::log(p.lambda - kLambdaMin)};
}

inline SchmidParams schmid_from_raw(std::span<const double> raw) {
    if (raw.size() != 2) {
        throw std::invalid_argument("schmid_from_raw: expected 2 values, got " + std::to_string(raw.size()));
    }
    return SchmidParams{std::exp(raw[0]), raw[1]};
}

inline std::array<double, 2> schmid_to_raw(const SchmidParams& p) {
    if (!(p.sigma > 0.0)) {
        throw std::invalid_argument("schmid_to_raw: sigma must be positive");
    }
    return {std::log(p.sigma), p.tau};
}

/// Constrained parameter vector in the generator's natural order
/// (Gabor: θ,ψ,σ,γ,λ; Schmid: σ,τ; Free: kernel entries).
inline std::vector<double> constrain(std::span<const double> raw, GeneratorKind kind) {
    switch (kind) {
        case GeneratorKind::Gabor: {
            const auto p = gabor_from_raw(raw);
            return {p.theta, p.psi, p.sigma, p.gamma, p.lambda};
        }
        case GeneratorKind::Schmid: {
            const auto p = schmid_from_raw(raw);
            return {p.sigma, p.tau};
        }
        case GeneratorKind::Free: return {raw.begin(), raw.end()};
    }
    return {};
}

inline std::vector<double> unconstrain(std::span<const double> params, GeneratorKind kind) {
    switch (kind) {
        case GeneratorKind::Gabor: {
            if (params.size() != 5) {
                throw std::invalid_argument("unconstrain: gabor expects 5 values");
            }
            const auto r = gabor_to_raw({params[0], params[1], params[2], params[3], params[4]});
            return {r.begin(), r.end()};
        }
        case GeneratorKind::Schmid: {
            if (params.size() != 2) {
                throw std::invalid_argument("unconstrain: schmid expects 2 values");
            }
            const auto r = schmid_to_raw({params[0], params[1]});
            return {r.begin(), r.end()};
        }
        case GeneratorKind::Free: return {params.begin(), params.end()};
    }
    return {};
}

/// Kernel and its Jacobian with respect to the raw parameters of one slice.
struct MaterializedSlice {
    KernelMatrix kernel;
    KernelJacobian raw_jacobian;
};

inline MaterializedSlice materialize(const GeneratorSpec& spec) {
    spec.validate();
    const std::size_t m = spec.m;
    switch (spec.kind) {
        case GeneratorKind::Gabor: {
            const auto p = gabor_from_raw(spec.raw);
            MaterializedSlice s{gabor_kernel(p, m), gabor_jacobian(p, m)};
            // chain through exp: dσ/draw = σ, dγ/draw = γ, dλ/draw = λ - λmin
            const std::array<double, 5> scale{1.0, 1.0, p.sigma, p.gamma, p.lambda - kLambdaMin};
            for (std::size_t e = 0; e < m * m; ++e) {
                for (std::size_t t = 0; t < 5; ++t) {
                    s.raw_jacobian.v[e * 5 + t] *= scale[t];
                }
            }
            return s;
        }
        case GeneratorKind::Schmid: {
            const auto p = schmid_from_raw(spec.raw);
            MaterializedSlice s{schmid_kernel(p, m), schmid_jacobian(p, m)};
            for (std::size_t e = 0; e < m * m; ++e) {
                s.raw_jacobian.v[e * 2] *= p.sigma;
            }
            return s;
        }
        case GeneratorKind::Free: {
            MaterializedSlice s{KernelMatrix(m), KernelJacobian(m, m * m)};
            for (std::size_t e = 0; e < m * m; ++e) {
                s.kernel.v[e] = spec.raw[e];
                s.raw_jacobian.v[e * m * m + e] = 1.0;
            }
            return s;
        }
    }
    throw std::logic_error("materialize: unhandled generator kind");
}

/// Concatenation of generated kernels, [OD, C, m, m], plus per-slice raw
/// Jacobians. Slices are ordered row-major in (o, c).
template <typename T>
struct KernelBank {
    std::size_t out_channels = 0;
    std::size_t in_channels = 0;
    std::size_t m = 0;
    Tensor<T> kernels;
    std::vector<KernelJacobian> jacobians;
    std::vector<GeneratorSpec> specs;

    std::size_t trainable_params() const {
        std::size_t n = 0;
        for (const auto& s : specs) {
            n += param_count(s.kind, s.m);
        }
        return n;
    }
};

template <typename T>
KernelBank<T> build_bank(std::vector<GeneratorSpec> specs, std::size_t out_channels, std::size_t in_channels) {
    if (specs.size() != out_channels * in_channels) {
        throw std::invalid_argument("build_bank: " + std::to_string(specs.size()) + " specs for " +
                                    std::to_string(out_channels) + "x" + std::to_string(in_channels) + " slices");
    }
    if (specs.empty()) {
        throw std::invalid_argument("build_bank: empty bank");
    }
    const std::size_t m = specs.front().m;
    for (const auto& s : specs) {
        if (s.m != m) {
            throw std::invalid_argument("build_bank: inconsistent kernel sizes " + std::to_string(m) + " and " +
                                        std::to_string(s.m));
        }
    }
    KernelBank<T> bank;
    bank.out_channels = out_channels;
    bank.in_channels = in_channels;
    bank.m = m;
    bank.kernels = Tensor<T>(Shape{out_channels, in_channels, m, m});
    bank.jacobians.reserve(specs.size());
    for (std::size_t s = 0; s < specs.size(); ++s) {
        auto slice = materialize(specs[s]);
        for (std::size_t e = 0; e < m * m; ++e) {
            bank.kernels[s * m * m + e] = static_cast<T>(slice.kernel.v[e]);
        }
        bank.jacobians.push_back(std::move(slice.raw_jacobian));
    }
    bank.specs = std::move(specs);
    return bank;
}

/// Default random raw parameters for a slice. fan_in is only used by Free.
template <typename Rng>
std::vector<double> init_raw(GeneratorKind kind, std::size_t m, std::size_t fan_in, Rng& rng) {
    using U = std::uniform_real_distribution<double>;
    switch (kind) {
        case GeneratorKind::Gabor: {
            const double theta = U(0.0, std::numbers::pi)(rng);
            const double psi = U(0.0, 2.0 * std::numbers::pi)(rng);
            const double raw_sigma = U(-0.5, 0.5)(rng);
            const double raw_gamma = U(-0.5, 0.5)(rng);
            const double lambda = U(2.0, 2.0 * static_cast<double>(m))(rng);
            return {theta, psi, raw_sigma, raw_gamma, std::log(lambda - kLambdaMin)};
        }
        case GeneratorKind::Schmid: {
            const double raw_sigma = U(-0.5, 1.0)(rng);
            const double tau = U(0.5, 2.0)(rng);
            return {raw_sigma, tau};
        }
        case GeneratorKind::Free: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::vector<double> raw(m * m);
            U dist(-bound, bound);
            for (auto& v : raw) {
                v = dist(rng);
            }
            return raw;
        }
    }
    return {};
}

}  // namespace goconv
