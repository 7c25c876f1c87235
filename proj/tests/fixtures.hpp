#pragma once

// Synthetic dataset files written in the on-disk formats the loaders read.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fixture {

namespace fs = std::filesystem;

inline void put_be32(std::string& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(char((v >> s) & 0xFF));
}

inline void write_bytes(const fs::path& p, const std::string& bytes) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

inline std::string idx_images(const std::vector<std::uint8_t>& pixels, std::uint32_t n, std::uint32_t rows,
                              std::uint32_t cols) {
    std::string b;
    put_be32(b, 0x00000803);
    put_be32(b, n);
    put_be32(b, rows);
    put_be32(b, cols);
    b.append(pixels.begin(), pixels.end());
    return b;
}

inline std::string idx_labels(const std::vector<std::uint8_t>& labels) {
    std::string b;
    put_be32(b, 0x00000801);
    put_be32(b, std::uint32_t(labels.size()));
    b.append(labels.begin(), labels.end());
    return b;
}

/// Learnable toy digits: class k lights a horizontal bar at row 2k+4 plus
/// uniform speckle noise.
struct ToyMnist {
    std::vector<std::uint8_t> pixels, labels;
};

inline ToyMnist toy_mnist(std::size_t n, std::uint64_t seed, std::size_t size = 28) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> speckle(0, 60);
    ToyMnist t;
    t.pixels.resize(n * size * size);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = std::uint8_t(i % 10);
        t.labels.push_back(k);
        for (std::size_t p = 0; p < size * size; ++p) t.pixels[i * size * size + p] = std::uint8_t(speckle(rng));
        const std::size_t row = (2 * k + 4) % size;
        for (std::size_t c = 4; c + 4 < size; ++c) t.pixels[i * size * size + row * size + c] = 255;
    }
    return t;
}

/// Writes train/test IDX pairs into dir with the standard file names.
inline void write_toy_mnist(const fs::path& dir, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
    const auto tr = toy_mnist(n_train, seed), te = toy_mnist(n_test, seed + 1);
    write_bytes(dir / "train-images-idx3-ubyte", idx_images(tr.pixels, std::uint32_t(n_train), 28, 28));
    write_bytes(dir / "train-labels-idx1-ubyte", idx_labels(tr.labels));
    write_bytes(dir / "t10k-images-idx3-ubyte", idx_images(te.pixels, std::uint32_t(n_test), 28, 28));
    write_bytes(dir / "t10k-labels-idx1-ubyte", idx_labels(te.labels));
}

inline fs::path scratch_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("goconv_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace fixture
