#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "goconv/datasets.hpp"
#include "oracles.hpp"

using namespace goconv;
namespace fs = std::filesystem;

namespace {

ImageDataset balanced(std::size_t per_class, std::size_t classes = 10) {
    ImageDataset ds;
    ds.name = "synthetic";
    ds.height = ds.width = 2;
    ds.classes = classes;
    for (std::size_t i = 0; i < per_class * classes; ++i) {
        ds.labels.push_back(std::uint8_t(i % classes));
        for (int p = 0; p < 4; ++p) ds.images.push_back(std::uint8_t((i * 4 + std::size_t(p)) % 256));
    }
    return ds;
}

/// Independent bilinear resampler in Cartesian coordinates (y axis up):
/// output point q samples the input at R(−a)·q.
double bilinear_oracle(const Tensor<double>& img, double degrees, std::size_t r, std::size_t c) {
    const auto H = double(img.dim(2)), W = double(img.dim(3));
    const double a = degrees * std::numbers::pi / 180.0;
    const double u = double(c) - (W - 1) / 2, v = (H - 1) / 2 - double(r);
    const double su = u * std::cos(a) + v * std::sin(a), sv = -u * std::sin(a) + v * std::cos(a);
    const double row = (H - 1) / 2 - sv, col = su + (W - 1) / 2;
    double acc = 0.0;
    for (int dr = 0; dr <= 1; ++dr)
        for (int dc = 0; dc <= 1; ++dc) {
            const double rr = std::floor(row) + dr, cc = std::floor(col) + dc;
            const double w = (1 - std::abs(row - rr)) * (1 - std::abs(col - cc));
            if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
            acc += w * img.at(0, 0, std::size_t(rr), std::size_t(cc));
        }
    return acc;
}

}  // namespace

TEST(Idx, SyntheticRoundTrip) {
    const auto dir = fixture::scratch_dir("idx");
    const auto toy = fixture::toy_mnist(12, 1);
    fixture::write_bytes(dir / "img", fixture::idx_images(toy.pixels, 12, 28, 28));
    fixture::write_bytes(dir / "lab", fixture::idx_labels(toy.labels));
    const auto ds = load_mnist_idx(dir / "img", dir / "lab");
    EXPECT_EQ(ds.size(), 12u);
    EXPECT_EQ(ds.height, 28u);
    EXPECT_EQ(ds.width, 28u);
    EXPECT_EQ(ds.channels, 1u);
    EXPECT_EQ(ds.images, toy.pixels);
    EXPECT_EQ(ds.labels, toy.labels);
}

TEST(Idx, Errors) {
    const auto dir = fixture::scratch_dir("idx_err");
    const auto toy = fixture::toy_mnist(5, 2);
    const auto img = fixture::idx_images(toy.pixels, 5, 28, 28);
    const auto lab = fixture::idx_labels(toy.labels);
    fixture::write_bytes(dir / "img", img);
    fixture::write_bytes(dir / "lab", lab);
    EXPECT_THROW(load_mnist_idx(dir / "img", dir / "img"), DatasetError);  // image magic as labels
    EXPECT_THROW(load_mnist_idx(dir / "missing", dir / "lab"), DatasetError);

    fixture::write_bytes(dir / "short", img.substr(0, img.size() - 10));
    try {
        load_mnist_idx(dir / "short", dir / "lab");
        FAIL() << "truncated payload accepted";
    } catch (const DatasetError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find(std::to_string(img.size())), std::string::npos) << msg;
        EXPECT_NE(msg.find(std::to_string(img.size() - 10)), std::string::npos) << msg;
    }
    fixture::write_bytes(dir / "lab4", fixture::idx_labels({1, 2, 3, 4}));
    EXPECT_THROW(load_mnist_idx(dir / "img", dir / "lab4"), DatasetError);
    fixture::write_bytes(dir / "badlab", fixture::idx_labels({1, 2, 3, 4, 10}));
    EXPECT_THROW(load_mnist_idx(dir / "img", dir / "badlab"), DatasetError);
    fixture::write_bytes(dir / "hdr", img.substr(0, 9));
    EXPECT_THROW(load_mnist_idx(dir / "hdr", dir / "lab"), DatasetError);
}

TEST(Idx, RealMnistCounts) {
    const fs::path dir = GOCONV_MNIST_DIR;
    if (!fs::exists(dir / "train-images-idx3-ubyte")) GTEST_SKIP() << "MNIST not present in " << dir;
    const auto train = load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    const auto test = load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    EXPECT_EQ(train.size(), 60000u);
    EXPECT_EQ(test.size(), 10000u);
    EXPECT_EQ(train.height, 28u);
    // published per-class counts
    const std::array<std::size_t, 10> train_counts{5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949};
    const std::array<std::size_t, 10> test_counts{980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009};
    std::array<std::size_t, 10> tr{}, te{};
    for (auto y : train.labels) ++tr[y];
    for (auto y : test.labels) ++te[y];
    EXPECT_EQ(tr, train_counts);
    EXPECT_EQ(te, test_counts);

    // stratified 10% keeps every class within one image of its share
    const auto sub = subsample_fraction(test, 0.1, 3, true);
    EXPECT_EQ(sub.size(), 1000u);
    std::array<std::size_t, 10> sc{};
    for (auto y : sub.labels) ++sc[y];
    for (std::size_t k = 0; k < 10; ++k) EXPECT_LE(std::abs(double(sc[k]) - double(test_counts[k]) / 10.0), 1.0);

    const auto swapped = swap_train_test({train, test});
    EXPECT_EQ(swapped.train.size(), 10000u);
    EXPECT_EQ(swapped.test.size(), 60000u);
}

TEST(Cifar, RecordsAndErrors) {
    const auto dir = fixture::scratch_dir("cifar");
    std::string one(3073, '\0');
    one[0] = 7;
    for (std::size_t i = 1; i < 3073; ++i) one[i] = char(i % 251);
    fixture::write_bytes(dir / "one.bin", one);
    fixture::write_bytes(dir / "two.bin", one + one);
    const auto ds = load_cifar10_bin({dir / "one.bin"});
    EXPECT_EQ(ds.size(), 1u);
    EXPECT_EQ(ds.channels, 3u);
    EXPECT_EQ(ds.labels[0], 7);
    EXPECT_EQ(ds.images[1024], std::uint8_t(1025 % 251));  // first green byte
    EXPECT_EQ(load_cifar10_bin({dir / "one.bin", dir / "two.bin"}).size(), 3u);
    fixture::write_bytes(dir / "short.bin", one.substr(0, 3072));
    EXPECT_THROW(load_cifar10_bin({dir / "short.bin"}), DatasetError);
    auto bad_label = one;
    bad_label[0] = 11;
    fixture::write_bytes(dir / "bad.bin", bad_label);
    EXPECT_THROW(load_cifar10_bin({dir / "bad.bin"}), DatasetError);
    EXPECT_THROW(load_cifar10_bin({}), DatasetError);
}

TEST(Normalize, ByteScaling) {
    ImageDataset ds;
    ds.height = 1;
    ds.width = 3;
    ds.images = {0, 128, 255};
    ds.labels = {4};
    const auto t = normalize01<double>(ds);
    EXPECT_EQ(t.images[0], 0.0);
    EXPECT_NEAR(t.images[1], 0.501961, 1e-6);
    EXPECT_EQ(t.images[2], 1.0);
    EXPECT_EQ(t.labels[0], 4);
}

TEST(Subsample, CountsOrderAndErrors) {
    const auto ds = balanced(100);
    const auto idx = subsample_indices(ds, 100, 5, true);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    std::map<int, int> per;
    for (auto i : idx) ++per[ds.labels[i]];
    for (const auto& [k, c] : per) EXPECT_EQ(c, 10) << "class " << k;
    const auto full = subsample_fraction(ds, 1.0, 9, true);
    EXPECT_EQ(full.images, ds.images);
    EXPECT_EQ(full.labels, ds.labels);
    EXPECT_EQ(subsample_indices(ds, 100, 5, true), idx);
    EXPECT_NE(subsample_indices(ds, 100, 6, true), idx);
    EXPECT_EQ(subsample(ds, 37, 1, false).size(), 37u);
    EXPECT_THROW(subsample(ds, 1001, 1, false), DatasetError);
    EXPECT_THROW(subsample_fraction(ds, 0.0, 1, false), DatasetError);
    EXPECT_THROW(subsample_fraction(ds, 1.5, 1, false), DatasetError);
}

TEST(Subsample, StratifiedWithinOneOfShare) {
    std::mt19937_64 rng(4);
    ImageDataset ds;
    ds.height = ds.width = 1;
    std::discrete_distribution<int> skew({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    for (int i = 0; i < 5000; ++i) {
        ds.labels.push_back(std::uint8_t(skew(rng)));
        ds.images.push_back(0);
    }
    std::array<double, 10> total{};
    for (auto y : ds.labels) ++total[y];
    for (std::size_t count : {1u, 17u, 500u, 4999u}) {
        std::array<double, 10> got{};
        for (auto i : subsample_indices(ds, count, 2, true)) ++got[ds.labels[i]];
        for (std::size_t k = 0; k < 10; ++k) EXPECT_LE(std::abs(got[k] - total[k] * double(count) / 5000.0), 1.0);
    }
}

TEST(Swap, ExchangesRoles) {
    const auto a = balanced(6), b = balanced(1);
    const auto s = swap_train_test({a, b});
    EXPECT_EQ(s.train.size(), b.size());
    EXPECT_EQ(s.test.size(), a.size());
}

TEST(Augment, CenterCropIsIdentityAndFlipIsInvolution) {
    std::mt19937_64 rng(5);
    const auto orig = oracle::random_tensor(Shape{2, 3, 8, 8}, rng);
    auto t = orig;
    crop_flip_image(t, 1, 4, 4, 4, false);
    EXPECT_EQ(t.values().size(), orig.values().size());
    EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), orig.values().begin()));
    crop_flip_image(t, 0, 4, 4, 4, true);
    crop_flip_image(t, 0, 4, 4, 4, true);
    EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), orig.values().begin()));
    // an offset shifts content and fills with zeros
    auto s = orig;
    crop_flip_image(s, 0, 4, 5, 4, false);
    EXPECT_EQ(s.at(0, 0, 0, 0), orig.at(0, 0, 1, 0));
    EXPECT_EQ(s.at(0, 0, 7, 0), 0.0);
    Tensor<double> rect(Shape{1, 1, 4, 6});
    EXPECT_THROW(augment_pad_crop_flip(rect, 4, 1), ShapeError);
}

TEST(Augment, OffsetsUniformByChiSquare) {
    std::mt19937_64 rng(6);
    std::array<std::size_t, 81> cells{};
    std::size_t flips = 0;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) {
        const auto d = draw_crop_flip(4, rng);
        ASSERT_LE(d.dy, 8u);
        ASSERT_LE(d.dx, 8u);
        ++cells[d.dy * 9 + d.dx];
        flips += d.flip;
    }
    const double expect = double(n) / 81.0;
    double chi2 = 0.0;
    for (auto c : cells) chi2 += (double(c) - expect) * (double(c) - expect) / expect;
    EXPECT_LT(chi2, 112.33);  // 99th percentile of chi-square with 80 degrees of freedom
    EXPECT_NEAR(double(flips) / double(n), 0.5, 0.01);
}

TEST(Augment, SeededAndLabelPreserving) {
    std::mt19937_64 rng(7);
    const auto b = oracle::random_tensor(Shape{4, 3, 8, 8}, rng);
    const auto x = augment_pad_crop_flip(b, 4, 11), y = augment_pad_crop_flip(b, 4, 11);
    EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
    EXPECT_EQ(x.shape(), b.shape());
}

TEST(Rotate, ZeroAndQuarterTurns) {
    std::mt19937_64 rng(8);
    const auto img = oracle::random_tensor(Shape{2, 1, 7, 7}, rng);
    const auto same = rotate(img, 0.0);
    EXPECT_TRUE(std::equal(same.values().begin(), same.values().end(), img.values().begin()));
    Tensor<double> delta(Shape{1, 1, 5, 5});
    delta.at(0, 0, 0, 3) = 1.0;
    const auto r = rotate(delta, 90.0);
    // counter-clockwise: top row moves to the left column
    EXPECT_EQ(r.at(0, 0, 1, 0), 1.0);
    EXPECT_EQ(std::accumulate(r.values().begin(), r.values().end(), 0.0), 1.0);
    for (double k : {90.0, 180.0, 270.0, -90.0, 450.0}) {
        const auto back = rotate(rotate(img, k), -k);
        EXPECT_TRUE(std::equal(back.values().begin(), back.values().end(), img.values().begin())) << k;
    }
    EXPECT_THROW(rotate(img, std::nan("")), std::invalid_argument);
}

TEST(Rotate, MatchesIndependentBilinearOracle) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> angle(-180.0, 180.0);
    for (int t = 0; t < 30; ++t) {
        const auto img = oracle::random_tensor(Shape{1, 1, t % 2 ? 9u : 10u, 10}, rng, 0, 1);
        const double a = t == 0 ? 90.0 : angle(rng);
        const auto out = rotate(img, a);
        for (std::size_t r = 0; r < img.dim(2); ++r)
            for (std::size_t c = 0; c < img.dim(3); ++c)
                ASSERT_NEAR(out.at(0, 0, r, c), bilinear_oracle(img, a, r, c), 1e-6) << "angle " << a;
    }
}

TEST(Rotate, RandomAnglesAreSeededAndBounded) {
    std::mt19937_64 rng(10);
    const auto b = oracle::random_tensor(Shape{5, 1, 9, 9}, rng, 0, 1);
    const auto x = random_rotate(b, 90.0, 3), y = random_rotate(b, 90.0, 3);
    EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
    const auto id = random_rotate(b, 0.0, 3);
    EXPECT_TRUE(std::equal(id.values().begin(), id.values().end(), b.values().begin()));
}

TEST(Gaussian, NoiseStatistics) {
    const auto e = gaussian_noise(1000000, 0.0, 0.3, 12);
    double mean = 0.0;
    for (double v : e) mean += v;
    mean /= double(e.size());
    double var = 0.0;
    for (double v : e) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / double(e.size() - 1));
    EXPECT_LT(std::abs(mean), 0.001);
    EXPECT_LT(std::abs(sd - 0.3), 0.005);
    EXPECT_THROW(gaussian_noise(3, 0.0, -1.0, 1), std::invalid_argument);
}

TEST(Gaussian, ClampedIdentityAtZeroStd) {
    std::mt19937_64 rng(13);
    const auto b = oracle::random_tensor(Shape{3, 1, 8, 8}, rng, 0, 1);
    const auto same = gaussian_perturb(b, 0.0, 0.0, 4);
    EXPECT_TRUE(std::equal(same.values().begin(), same.values().end(), b.values().begin()));
    const auto noisy = gaussian_perturb(b, 0.0, 0.3, 4);
    for (auto v : noisy.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    const auto again = gaussian_perturb(b, 0.0, 0.3, 4);
    EXPECT_TRUE(std::equal(noisy.values().begin(), noisy.values().end(), again.values().begin()));
}
