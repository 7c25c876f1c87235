#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "goconv/generators.hpp"

namespace goconv {

/// One row per kernel entry: o,c,i,j,value (17 significant digits).
template <typename T>
void write_kernels_csv(const KernelBank<T>& bank, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    out.precision(17);
    out << "o,c,i,j,value\n";
    const std::size_t m = bank.m;
    for (std::size_t o = 0; o < bank.out_channels; ++o) {
        for (std::size_t c = 0; c < bank.in_channels; ++c) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    out << o << ',' << c << ',' << i << ',' << j << ','
                        << static_cast<double>(bank.kernels[((o * bank.in_channels + c) * m + i) * m + j]) << '\n';
                }
            }
        }
    }
}

/// Min-max scales one m×m kernel to 0..255. A constant kernel maps to 0.
template <typename T>
std::vector<unsigned char> kernel_to_gray(const KernelBank<T>& bank, std::size_t o, std::size_t c) {
    const std::size_t mm = bank.m * bank.m;
    const T* k = bank.kernels.data() + (o * bank.in_channels + c) * mm;
    const auto [lo, hi] = std::minmax_element(k, k + mm);
    const double span = static_cast<double>(*hi) - static_cast<double>(*lo);
    std::vector<unsigned char> px(mm, 0);
    if (span > 0.0) {
        for (std::size_t e = 0; e < mm; ++e) {
            px[e] = static_cast<unsigned char>(std::lround(255.0 * (static_cast<double>(k[e]) - *lo) / span));
        }
    }
    return px;
}

/// Binary 8-bit PGM (P5).
inline void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::vector<unsigned char>& pixels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

/// Writes kernels.csv and kernel_o<O>_c<C>.pgm for every slice into dir.
template <typename T>
void dump_kernels(const KernelBank<T>& bank, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_kernels_csv(bank, dir / "kernels.csv");
    for (std::size_t o = 0; o < bank.out_channels; ++o) {
        for (std::size_t c = 0; c < bank.in_channels; ++c) {
            write_pgm(dir / ("kernel_o" + std::to_string(o) + "_c" + std::to_string(c) + ".pgm"), bank.m, bank.m,
                      kernel_to_gray(bank, o, c));
        }
    }
}

}  // namespace goconv
