#pragma once

// Dataset ingestion (MNIST IDX, CIFAR-10 binary), normalization, seeded
// augmentation and perturbations, and subset/swap protocols.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "goconv/tensor.hpp"

namespace goconv {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raw 8-bit images, N×C×H×W, with one label per image.
struct ImageDataset {
    std::string name;
    std::size_t channels = 1, height = 0, width = 0;
    std::size_t classes = 10;
    std::vector<std::uint8_t> images;
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_bytes() const { return channels * height * width; }

    void validate() const {
        if (images.size() != size() * image_bytes()) {
            throw DatasetError(name + ": " + std::to_string(images.size()) + " pixel bytes for " +
                               std::to_string(size()) + " labels");
        }
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= classes) {
                throw DatasetError(name + ": label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                   " outside [0, " + std::to_string(classes) + ")");
            }
        }
    }
};

/// Images already scaled to [0,1] in the working precision.
template <typename T>
struct TensorDataset {
    Tensor<T> images;  // [N, C, H, W]
    std::vector<int> labels;
    std::size_t classes = 10;

    std::size_t size() const { return labels.size(); }
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DatasetError("cannot open '" + path.string() + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Big-endian IDX pair: images (magic 0x803, n, rows, cols, u8 pixels) and
/// labels (magic 0x801, n, u8 labels).
inline ImageDataset load_mnist_idx(const std::filesystem::path& images_path,
                                   const std::filesystem::path& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);
    if (img.size() < 16) {
        throw DatasetError(images_path.string() + ": truncated IDX header (" + std::to_string(img.size()) + " bytes)");
    }
    if (lab.size() < 8) {
        throw DatasetError(labels_path.string() + ": truncated IDX header (" + std::to_string(lab.size()) + " bytes)");
    }
    if (const auto magic = detail::read_be32(img, 0); magic != kIdxImageMagic) {
        throw DatasetError(images_path.string() + ": bad image magic " + std::to_string(magic) + ", expected 2051");
    }
    if (const auto magic = detail::read_be32(lab, 0); magic != kIdxLabelMagic) {
        throw DatasetError(labels_path.string() + ": bad label magic " + std::to_string(magic) + ", expected 2049");
    }
    const std::size_t n = detail::read_be32(img, 4);
    const std::size_t rows = detail::read_be32(img, 8);
    const std::size_t cols = detail::read_be32(img, 12);
    const std::size_t nl = detail::read_be32(lab, 4);
    if (n != nl) {
        throw DatasetError("image count " + std::to_string(n) + " != label count " + std::to_string(nl));
    }
    if (rows == 0 || cols == 0) {
        throw DatasetError(images_path.string() + ": zero image extent");
    }
    const std::size_t expected = 16 + n * rows * cols;
    if (img.size() != expected) {
        throw DatasetError(images_path.string() + ": expected " + std::to_string(expected) + " bytes, got " +
                           std::to_string(img.size()));
    }
    if (lab.size() != 8 + n) {
        throw DatasetError(labels_path.string() + ": expected " + std::to_string(8 + n) + " bytes, got " +
                           std::to_string(lab.size()));
    }
    ImageDataset ds;
    ds.name = "mnist";
    ds.channels = 1;
    ds.height = rows;
    ds.width = cols;
    ds.classes = 10;
    ds.images.assign(img.begin() + 16, img.end());
    ds.labels.assign(lab.begin() + 8, lab.end());
    ds.validate();
    return ds;
}

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Concatenates CIFAR-10 binary batch files: records of one label byte and
/// 3×1024 channel-planar pixels.
inline ImageDataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
    ImageDataset ds;
    ds.name = "cifar10";
    ds.channels = 3;
    ds.height = ds.width = 32;
    ds.classes = 10;
    for (const auto& p : paths) {
        const auto bytes = detail::read_file(p);
        if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
            throw DatasetError(p.string() + ": length " + std::to_string(bytes.size()) +
                               " is not a positive multiple of 3073");
        }
        for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
            ds.labels.push_back(bytes[off]);
            ds.images.insert(ds.images.end(), bytes.begin() + static_cast<std::ptrdiff_t>(off + 1),
                             bytes.begin() + static_cast<std::ptrdiff_t>(off + kCifarRecordBytes));
        }
    }
    if (ds.labels.empty()) {
        throw DatasetError("load_cifar10_bin: no input files");
    }
    ds.validate();
    return ds;
}

/// Pixel value / 255.
template <typename T>
TensorDataset<T> normalize01(const ImageDataset& ds) {
    TensorDataset<T> out;
    out.classes = ds.classes;
    out.images = Tensor<T>(Shape{ds.size(), ds.channels, ds.height, ds.width});
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        out.images[i] = static_cast<T>(static_cast<double>(ds.images[i]) / 255.0);
    }
    out.labels.assign(ds.labels.begin(), ds.labels.end());
    return out;
}

inline ImageDataset select(const ImageDataset& ds, const std::vector<std::size_t>& indices) {
    ImageDataset out;
    out.name = ds.name;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.classes = ds.classes;
    out.images.reserve(indices.size() * ds.image_bytes());
    out.labels.reserve(indices.size());
    const std::size_t b = ds.image_bytes();
    for (auto i : indices) {
        if (i >= ds.size()) {
            throw DatasetError("select: index " + std::to_string(i) + " out of range");
        }
        out.images.insert(out.images.end(), ds.images.begin() + static_cast<std::ptrdiff_t>(i * b),
                          ds.images.begin() + static_cast<std::ptrdiff_t>((i + 1) * b));
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

/// Seeded subset of `count` images, returned in original order. The
/// stratified variant allocates per-class quotas by largest remainder, so
/// each class is within one image of its proportional share.
inline std::vector<std::size_t> subsample_indices(const ImageDataset& ds, std::size_t count, std::uint64_t seed,
                                                  bool stratified) {
    const std::size_t n = ds.size();
    if (count == 0 || count > n) {
        throw DatasetError("subsample: count " + std::to_string(count) + " outside [1, " + std::to_string(n) + "]");
    }
    std::vector<std::size_t> picked;
    if (count == n) {
        picked.resize(n);
        std::iota(picked.begin(), picked.end(), 0);
        return picked;
    }
    std::mt19937_64 rng(seed);
    if (!stratified) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        std::shuffle(all.begin(), all.end(), rng);
        picked.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
    } else {
        std::vector<std::vector<std::size_t>> by_class(ds.classes);
        for (std::size_t i = 0; i < n; ++i) {
            by_class[ds.labels[i]].push_back(i);
        }
        std::vector<std::size_t> quota(ds.classes);
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t assigned = 0;
        for (std::size_t k = 0; k < ds.classes; ++k) {
            const double exact = static_cast<double>(count) * static_cast<double>(by_class[k].size()) /
                                 static_cast<double>(n);
            quota[k] = static_cast<std::size_t>(std::floor(exact));
            assigned += quota[k];
            remainders.emplace_back(exact - std::floor(exact), k);
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t r = 0; assigned < count; ++r) {
            ++quota[remainders[r % remainders.size()].second];
            ++assigned;
        }
        for (std::size_t k = 0; k < ds.classes; ++k) {
            auto& idx = by_class[k];
            std::shuffle(idx.begin(), idx.end(), rng);
            picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[k]));
        }
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

inline ImageDataset subsample(const ImageDataset& ds, std::size_t count, std::uint64_t seed, bool stratified) {
    auto out = select(ds, subsample_indices(ds, count, seed, stratified));
    return out;
}

inline ImageDataset subsample_fraction(const ImageDataset& ds, double fraction, std::uint64_t seed,
                                       bool stratified) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw DatasetError("subsample: fraction must lie in (0, 1]");
    }
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size()))));
    return subsample(ds, count, seed, stratified);
}

struct DatasetPair {
    ImageDataset train;
    ImageDataset test;
};

/// Train on the former test split, evaluate on the former train split.
inline DatasetPair swap_train_test(DatasetPair pair) {
    std::swap(pair.train, pair.test);
    return pair;
}

// ---------------------------------------------------------------- transforms

/// Crops image n of the zero-padded batch at offset (dy, dx) in [0, 2·pad]
/// and optionally mirrors it left-right. (pad, pad) without flip is identity.
template <typename T>
void crop_flip_image(Tensor<T>& batch, std::size_t n, std::size_t pad, std::size_t dy, std::size_t dx, bool flip) {
    const std::size_t C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    std::vector<T> src(batch.data() + n * C * H * W, batch.data() + (n + 1) * C * H * W);
    T* dst = batch.data() + n * C * H * W;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const auto sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
                const std::size_t xx = flip ? W - 1 - x : x;
                const auto sx = static_cast<std::ptrdiff_t>(xx + dx) - static_cast<std::ptrdiff_t>(pad);
                const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(H) && sx >= 0 &&
                                    sx < static_cast<std::ptrdiff_t>(W);
                dst[(c * H + y) * W + x] =
                    inside ? src[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)] : T(0);
            }
        }
    }
}

struct CropFlipDraw {
    std::size_t dy = 0, dx = 0;
    bool flip = false;
};

template <typename Rng>
CropFlipDraw draw_crop_flip(std::size_t pad, Rng& rng) {
    std::uniform_int_distribution<std::size_t> off(0, 2 * pad);
    std::bernoulli_distribution coin(0.5);
    CropFlipDraw d;
    d.dy = off(rng);
    d.dx = off(rng);
    d.flip = coin(rng);
    return d;
}

/// Zero-pad by `pad`, random crop back to size, 50% horizontal flip.
template <typename T>
Tensor<T> augment_pad_crop_flip(Tensor<T> batch, std::size_t pad, std::uint64_t seed) {
    require_rank(batch.shape(), 4, "augment_pad_crop_flip");
    if (batch.dim(2) != batch.dim(3)) {
        throw ShapeError("augment_pad_crop_flip: square images required, got " + batch.shape().str());
    }
    std::mt19937_64 rng(seed);
    for (std::size_t n = 0; n < batch.dim(0); ++n) {
        const auto d = draw_crop_flip(pad, rng);
        crop_flip_image(batch, n, pad, d.dy, d.dx, d.flip);
    }
    return batch;
}

namespace detail {

// out(r, c) samples in(sy, sx) with, relative to the image center,
//   sy = cos(a)·dy + sin(a)·dx,  sx = cos(a)·dx − sin(a)·dy,
// i.e. positive angles rotate the picture counter-clockwise on screen.
template <typename T>
void rotate_plane(const T* in, T* out, std::size_t H, std::size_t W, double degrees) {
    const double q = degrees / 90.0;
    if (H == W && std::nearbyint(q) == q) {
        const std::size_t n = H;
        const auto turns = static_cast<int>(((static_cast<long long>(q) % 4) + 4) % 4);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                std::size_t sr = r, sc = c;
                switch (turns) {
                    case 1: sr = c; sc = n - 1 - r; break;
                    case 2: sr = n - 1 - r; sc = n - 1 - c; break;
                    case 3: sr = n - 1 - c; sc = r; break;
                    default: break;
                }
                out[r * n + c] = in[sr * n + sc];
            }
        }
        return;
    }
    const double a = degrees * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cy = (static_cast<double>(H) - 1.0) / 2.0, cx = (static_cast<double>(W) - 1.0) / 2.0;
    auto pixel = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> double {
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(H) || x >= static_cast<std::ptrdiff_t>(W)) {
            return 0.0;
        }
        return static_cast<double>(in[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)]);
    };
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
            const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
            const double sy = ca * dy + sa * dx + cy;
            const double sx = ca * dx - sa * dy + cx;
            const double fy = std::floor(sy), fx = std::floor(sx);
            const double ty = sy - fy, tx = sx - fx;
            const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
            const double v = (1 - ty) * ((1 - tx) * pixel(y0, x0) + tx * pixel(y0, x0 + 1)) +
                             ty * ((1 - tx) * pixel(y0 + 1, x0) + tx * pixel(y0 + 1, x0 + 1));
            out[r * W + c] = static_cast<T>(v);
        }
    }
}

}  // namespace detail

/// Rotates every image about its center; bilinear, zero fill. Multiples of
/// 90° on square images are exact index permutations.
template <typename T>
Tensor<T> rotate(const Tensor<T>& batch, double degrees) {
    require_rank(batch.shape(), 4, "rotate");
    if (!std::isfinite(degrees)) {
        throw std::invalid_argument("rotate: angle must be finite");
    }
    Tensor<T> out(batch.shape());
    const std::size_t H = batch.dim(2), W = batch.dim(3);
    for (std::size_t p = 0; p < batch.dim(0) * batch.dim(1); ++p) {
        detail::rotate_plane(batch.data() + p * H * W, out.data() + p * H * W, H, W, degrees);
    }
    return out;
}

/// Each image gets its own angle ~ uniform[-max_abs, max_abs].
template <typename T>
Tensor<T> random_rotate(const Tensor<T>& batch, double max_abs_degrees, std::uint64_t seed) {
    require_rank(batch.shape(), 4, "random_rotate");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(-max_abs_degrees, max_abs_degrees);
    Tensor<T> out(batch.shape());
    const std::size_t C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    for (std::size_t n = 0; n < batch.dim(0); ++n) {
        const double a = angle(rng);
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * H * W;
            detail::rotate_plane(batch.data() + off, out.data() + off, H, W, a);
        }
    }
    return out;
}

/// The pre-clamp noise stream used by gaussian_perturb for a given seed.
inline std::vector<double> gaussian_noise(std::size_t count, double mean, double stddev, std::uint64_t seed) {
    if (stddev < 0.0) {
        throw std::invalid_argument("gaussian_noise: stddev must be non-negative");
    }
    std::vector<double> e(count, mean);
    if (stddev > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(mean, stddev);
        for (auto& v : e) {
            v = noise(rng);
        }
    }
    return e;
}

/// Adds i.i.d. N(mean, std²) noise, then clamps to [0, 1].
template <typename T>
Tensor<T> gaussian_perturb(const Tensor<T>& batch, double mean, double stddev, std::uint64_t seed) {
    const auto e = gaussian_noise(batch.size(), mean, stddev, seed);
    Tensor<T> out(batch.shape());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out[i] = static_cast<T>(std::clamp(static_cast<double>(batch[i]) + e[i], 0.0, 1.0));
    }
    return out;
}

}  // namespace goconv
