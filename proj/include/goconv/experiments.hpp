#pragma once

// Experiment harness behind the CLI. Every command reads an
// ExperimentConfig, writes into a staging directory, and only moves the
// results into the requested output directory once the command finished.
// Exit codes: 0 success, 1 gate failure, 2 config or I/O error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "goconv/checkpoint.hpp"
#include "goconv/datasets.hpp"
#include "goconv/injectivity.hpp"
#include "goconv/kernel_dump.hpp"
#include "goconv/network.hpp"
#include "goconv/optim.hpp"
#include "goconv/train.hpp"
#include "json.hpp"

namespace goconv {

inline constexpr int kReportFormatVersion = 1;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- config

struct DataSpec {
    std::string format = "none";  // mnist | cifar10 | toy | none
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    std::vector<std::filesystem::path> cifar_train, cifar_test;
    std::size_t train_subset = 0;  // 0 keeps every sample
    std::size_t test_subset = 0;
    bool stratified = true;
    std::uint64_t subset_seed = 0;
    bool swap = false;
    bool augment = false;  // pad-4 crop and horizontal flip per batch
    std::size_t toy_samples = 64;
    std::size_t toy_size = 8;
};

struct AdversarialSpec {
    double rotation_max_degrees = 90.0;
    double noise_mean = 0.0;
    double noise_std = 0.3;
};

struct WidthSweepSpec {
    std::vector<std::size_t> widths{4, 16, 64, 256};
    std::size_t od = 8;
    bool free_control = true;
};

struct CertifySpec {
    std::string source = "prop2";  // prop2 | checkpoint | model
    std::vector<double> sigmas{1.0, 2.0};
    std::vector<double> gammas{1.0, 2.0};
    std::size_t height = 8, width = 8, padding = 1;
    double rel_tol = kDefaultRankTol;
};

struct ExperimentConfig {
    std::string kind;
    std::string dtype = "f32";
    std::string mode = "quick";  // quick | paper
    NetworkConfig network;
    GeneratorMix mix;
    bool share_across_in_channels = false;
    std::vector<std::string> variants{"common", "go"};
    TrainConfig train;
    DataSpec data;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::filesystem::path output_dir = "out";
    AdversarialSpec adversarial;
    WidthSweepSpec sweep;
    CertifySpec certify;
    std::vector<std::filesystem::path> checkpoints;
    bool include_large_train = false;  // generalization: also run the standard split
    bool gates_enabled = true;
    nlohmann::json gates = nlohmann::json::object();

    double gate(const std::string& key, double fallback) const { return gates.value(key, fallback); }
};

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> k{"train",         "eval",    "generalization", "adversarial", "width-sweep",
                                            "inspect-kernels", "certify", "export-features"};
    return k;
}

namespace detail {

template <typename F>
void field(const std::string& path, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline NetworkConfig network_from_json(const nlohmann::json& j) {
    if (j.contains("layers")) {
        return j.get<NetworkConfig>();
    }
    const auto preset = j.at("preset").get<std::string>();
    const auto seed = j.value("seed", std::uint64_t{0});
    if (preset == "lenet") {
        return lenet_config(j.value("channels", std::size_t{1}), j.value("size", std::size_t{28}),
                            j.value("classes", std::size_t{10}), seed);
    }
    if (preset == "cifar_small") {
        return cifar_small_config(j.value("classes", std::size_t{10}), seed);
    }
    if (preset == "theory") {
        return theory_net_config(j.value("d1", std::size_t{16}), j.value("od", std::size_t{8}), 3,
                                 j.value("size", std::size_t{8}), seed);
    }
    throw std::invalid_argument("unknown preset '" + preset + "' (lenet, cifar_small, theory)");
}

inline std::vector<std::filesystem::path> paths_from_json(const nlohmann::json& j) {
    std::vector<std::filesystem::path> out;
    for (const auto& p : j) {
        out.emplace_back(p.get<std::string>());
    }
    return out;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    using detail::field;
    if (!j.is_object()) {
        throw ConfigError("config: top level must be a JSON object");
    }
    ExperimentConfig c;
    field("kind", [&] { c.kind = j.value("kind", std::string{}); });
    field("dtype", [&] { c.dtype = j.value("dtype", c.dtype); });
    field("mode", [&] { c.mode = j.value("mode", c.mode); });
    field("data", [&] {
        if (!j.contains("data")) {
            return;
        }
        const auto& d = j.at("data");
        c.data.format = d.value("format", c.data.format);
        auto path = [&d](const char* key, std::filesystem::path& dst) {
            if (d.contains(key)) {
                dst = d.at(key).get<std::string>();
            }
        };
        path("train_images", c.data.train_images);
        path("train_labels", c.data.train_labels);
        path("test_images", c.data.test_images);
        path("test_labels", c.data.test_labels);
        if (d.contains("cifar_train")) {
            c.data.cifar_train = detail::paths_from_json(d.at("cifar_train"));
        }
        if (d.contains("cifar_test")) {
            c.data.cifar_test = detail::paths_from_json(d.at("cifar_test"));
        }
        c.data.train_subset = d.value("train_subset", c.data.train_subset);
        c.data.test_subset = d.value("test_subset", c.data.test_subset);
        c.data.stratified = d.value("stratified", c.data.stratified);
        c.data.subset_seed = d.value("subset_seed", c.data.subset_seed);
        c.data.swap = d.value("swap", c.data.swap);
        c.data.augment = d.value("augment", c.data.augment);
        c.data.toy_samples = d.value("toy_samples", c.data.toy_samples);
        c.data.toy_size = d.value("toy_size", c.data.toy_size);
    });
    field("network", [&] {
        if (j.contains("network")) {
            c.network = detail::network_from_json(j.at("network"));
        } else if (c.data.format == "cifar10") {
            c.network = cifar_small_config();
        } else {
            c.network = lenet_config();
        }
    });
    field("go_mix", [&] {
        if (j.contains("go_mix")) {
            const auto& m = j.at("go_mix");
            c.mix = GeneratorMix{m.value("gabor", 0.0), m.value("schmid", 0.0), m.value("free", 0.0)};
            c.mix.kinds_for(1);
        }
    });
    field("share_across_in_channels",
          [&] { c.share_across_in_channels = j.value("share_across_in_channels", c.share_across_in_channels); });
    field("variants", [&] {
        if (j.contains("variants")) {
            c.variants = j.at("variants").get<std::vector<std::string>>();
        }
    });
    field("train", [&] {
        if (j.contains("train")) {
            c.train = j.at("train").get<TrainConfig>();
        }
    });
    field("seeds", [&] {
        if (j.contains("seeds")) {
            c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        }
    });
    field("output_dir", [&] { c.output_dir = j.value("output_dir", std::string("out")); });
    field("adversarial", [&] {
        if (j.contains("adversarial")) {
            const auto& a = j.at("adversarial");
            c.adversarial.rotation_max_degrees = a.value("rotation_max_degrees", c.adversarial.rotation_max_degrees);
            c.adversarial.noise_mean = a.value("noise_mean", c.adversarial.noise_mean);
            c.adversarial.noise_std = a.value("noise_std", c.adversarial.noise_std);
            if (c.adversarial.noise_std < 0.0) {
                throw std::invalid_argument("noise_std must be >= 0");
            }
        }
    });
    field("width_sweep", [&] {
        if (j.contains("width_sweep")) {
            const auto& w = j.at("width_sweep");
            c.sweep.widths = w.value("widths", c.sweep.widths);
            c.sweep.od = w.value("od", c.sweep.od);
            c.sweep.free_control = w.value("free_control", c.sweep.free_control);
            if (c.sweep.widths.empty() || std::find(c.sweep.widths.begin(), c.sweep.widths.end(), 0) != c.sweep.widths.end()) {
                throw std::invalid_argument("widths must be a nonempty list of positive integers");
            }
        }
    });
    field("certify", [&] {
        if (j.contains("certify")) {
            const auto& q = j.at("certify");
            c.certify.source = q.value("source", c.certify.source);
            c.certify.sigmas = q.value("sigmas", c.certify.sigmas);
            c.certify.gammas = q.value("gammas", c.certify.gammas);
            c.certify.height = q.value("height", c.certify.height);
            c.certify.width = q.value("width", c.certify.width);
            c.certify.padding = q.value("padding", c.certify.padding);
            c.certify.rel_tol = q.value("rel_tol", c.certify.rel_tol);
            if (c.certify.source != "prop2" && c.certify.source != "checkpoint" && c.certify.source != "model") {
                throw std::invalid_argument("source must be prop2, checkpoint or model");
            }
        }
    });
    field("checkpoints", [&] {
        if (j.contains("checkpoints")) {
            c.checkpoints = detail::paths_from_json(j.at("checkpoints"));
        }
    });
    field("include_large_train", [&] { c.include_large_train = j.value("include_large_train", c.include_large_train); });
    field("gates", [&] {
        if (!j.contains("gates")) {
            return;
        }
        const auto& g = j.at("gates");
        if (g.is_boolean()) {
            c.gates_enabled = g.get<bool>();
        } else {
            c.gates = g;
            c.gates_enabled = g.value("enabled", true);
        }
    });
    return c;
}

/// Checks cross-field requirements once the command and overrides are known.
inline void validate_experiment_config(const ExperimentConfig& c) {
    const auto& kinds = experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) {
        throw ConfigError("kind: unknown experiment '" + c.kind + "'");
    }
    if (c.seeds.empty()) {
        throw ConfigError("seeds: must be nonempty");
    }
    if (c.dtype != "f32" && c.dtype != "f64") {
        throw ConfigError("dtype: must be f32 or f64, got '" + c.dtype + "'");
    }
    if (c.mode != "quick" && c.mode != "paper") {
        throw ConfigError("mode: must be quick or paper, got '" + c.mode + "'");
    }
    for (const auto& v : c.variants) {
        if (v != "common" && v != "go") {
            throw ConfigError("variants: unknown variant '" + v + "' (common, go)");
        }
    }
    if (c.variants.empty()) {
        throw ConfigError("variants: must be nonempty");
    }
    const bool needs_images = c.kind == "train" || c.kind == "eval" || c.kind == "generalization" ||
                              c.kind == "adversarial" || c.kind == "export-features";
    if (needs_images) {
        if (c.data.format == "mnist") {
            for (const auto& [key, p] : {std::pair{"data.train_images", &c.data.train_images},
                                         std::pair{"data.train_labels", &c.data.train_labels},
                                         std::pair{"data.test_images", &c.data.test_images},
                                         std::pair{"data.test_labels", &c.data.test_labels}}) {
                if (p->empty()) {
                    throw ConfigError(std::string(key) + ": required for mnist data");
                }
                if (!std::filesystem::exists(*p)) {
                    throw ConfigError(std::string(key) + ": file not found: " + p->string());
                }
            }
        } else if (c.data.format == "cifar10") {
            if (c.data.cifar_train.empty() || c.data.cifar_test.empty()) {
                throw ConfigError("data.cifar_train/data.cifar_test: required for cifar10 data");
            }
            for (const auto& p : c.data.cifar_train) {
                if (!std::filesystem::exists(p)) {
                    throw ConfigError("data.cifar_train: file not found: " + p.string());
                }
            }
            for (const auto& p : c.data.cifar_test) {
                if (!std::filesystem::exists(p)) {
                    throw ConfigError("data.cifar_test: file not found: " + p.string());
                }
            }
        } else if (c.data.format != "toy") {
            throw ConfigError("data.format: '" + c.kind + "' needs mnist, cifar10 or toy data, got '" + c.data.format + "'");
        }
    }
    const bool needs_checkpoints = c.kind == "eval" || c.kind == "export-features" ||
                                   (c.kind == "certify" && c.certify.source == "checkpoint");
    if (needs_checkpoints && c.checkpoints.empty()) {
        throw ConfigError("checkpoints: '" + c.kind + "' needs at least one checkpoint path");
    }
    for (const auto& p : c.checkpoints) {
        if (!std::filesystem::exists(p)) {
            throw ConfigError("checkpoints: file not found: " + p.string());
        }
    }
    if (std::find(c.variants.begin(), c.variants.end(), "go") != c.variants.end() &&
        (c.network.layers.empty() || c.network.layers.front().type != LayerType::Conv)) {
        throw ConfigError("network: the go variant needs a network whose first layer is conv");
    }
}

/// Quick mode: 10k stratified training subset, 2 epochs. Paper mode: full
/// training split, 20k iterations.
inline void apply_mode(ExperimentConfig& c, bool force_quick) {
    if (force_quick) {
        c.mode = "quick";
        c.data.train_subset = 10000;
        c.data.stratified = true;
        c.train.epochs = 2;
        c.train.max_iterations = 0;
    } else if (c.mode == "paper") {
        c.data.train_subset = 0;
        c.train.epochs = 0;
        c.train.max_iterations = 20000;
    }
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    auto paths = [](const std::vector<std::filesystem::path>& ps) {
        auto a = nlohmann::json::array();
        for (const auto& p : ps) {
            a.push_back(p.string());
        }
        return a;
    };
    j = nlohmann::json{
        {"kind", c.kind},
        {"dtype", c.dtype},
        {"mode", c.mode},
        {"network", c.network},
        {"go_mix", {{"gabor", c.mix.gabor}, {"schmid", c.mix.schmid}, {"free", c.mix.free}}},
        {"share_across_in_channels", c.share_across_in_channels},
        {"variants", c.variants},
        {"train", c.train},
        {"data",
         {{"format", c.data.format},
          {"train_images", c.data.train_images.string()},
          {"train_labels", c.data.train_labels.string()},
          {"test_images", c.data.test_images.string()},
          {"test_labels", c.data.test_labels.string()},
          {"cifar_train", paths(c.data.cifar_train)},
          {"cifar_test", paths(c.data.cifar_test)},
          {"train_subset", c.data.train_subset},
          {"test_subset", c.data.test_subset},
          {"stratified", c.data.stratified},
          {"subset_seed", c.data.subset_seed},
          {"swap", c.data.swap},
          {"augment", c.data.augment},
          {"toy_samples", c.data.toy_samples},
          {"toy_size", c.data.toy_size}}},
        {"seeds", c.seeds},
        {"output_dir", c.output_dir.string()},
        {"adversarial",
         {{"rotation_max_degrees", c.adversarial.rotation_max_degrees},
          {"noise_mean", c.adversarial.noise_mean},
          {"noise_std", c.adversarial.noise_std}}},
        {"width_sweep", {{"widths", c.sweep.widths}, {"od", c.sweep.od}, {"free_control", c.sweep.free_control}}},
        {"certify",
         {{"source", c.certify.source},
          {"sigmas", c.certify.sigmas},
          {"gammas", c.certify.gammas},
          {"height", c.certify.height},
          {"width", c.certify.width},
          {"padding", c.certify.padding},
          {"rel_tol", c.certify.rel_tol}}},
        {"checkpoints", paths(c.checkpoints)},
        {"include_large_train", c.include_large_train},
        {"gates", c.gates_enabled ? c.gates : nlohmann::json(false)}};
}

// ---------------------------------------------------------------- report

inline double median(std::vector<double> v) {
    if (v.empty()) {
        throw std::invalid_argument("median of an empty list");
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) {
        throw std::invalid_argument("mean of an empty list");
    }
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct SeedRecord {
    std::uint64_t seed = 0;
    std::map<std::string, double> metrics;
    nlohmann::json extra = nlohmann::json::object();
};

struct VariantSummary {
    std::string name;  // common | go | a checkpoint's network name
    std::string network;
    std::size_t param_count = 0;
    std::size_t first_layer_param_count = 0;
    std::vector<SeedRecord> runs;

    std::vector<double> values(const std::string& metric) const {
        std::vector<double> v;
        for (const auto& r : runs) {
            v.push_back(r.metrics.at(metric));
        }
        return v;
    }
    double median_of(const std::string& metric) const { return median(values(metric)); }
};

struct Gate {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ExperimentReport {
    std::string command;
    std::string dtype;
    nlohmann::json config = nlohmann::json::object();
    std::vector<std::uint64_t> seeds;
    std::vector<VariantSummary> variants;
    nlohmann::json reference = nlohmann::json::object();
    nlohmann::json extra = nlohmann::json::object();
    std::vector<Gate> gates;
    double wall_clock_seconds = 0.0;

    bool insufficient_replication() const { return seeds.size() < 5; }
    bool passed() const {
        return std::all_of(gates.begin(), gates.end(), [](const Gate& g) { return g.passed; });
    }
    const VariantSummary* find(const std::string& name) const {
        for (const auto& v : variants) {
            if (v.name == name) {
                return &v;
            }
        }
        return nullptr;
    }
    VariantSummary& variant(const std::string& name) {
        for (auto& v : variants) {
            if (v.name == name) {
                return v;
            }
        }
        variants.push_back(VariantSummary{name, {}, 0, 0, {}});
        return variants.back();
    }

    /// Paired go − common differences per seed for every metric both share.
    nlohmann::json differences() const {
        auto out = nlohmann::json::object();
        const auto* c = find("common");
        const auto* g = find("go");
        if (!c || !g || c->runs.size() != g->runs.size() || c->runs.empty()) {
            return out;
        }
        for (const auto& [metric, _] : g->runs.front().metrics) {
            if (!c->runs.front().metrics.count(metric)) {
                continue;
            }
            std::vector<double> d;
            for (std::size_t i = 0; i < g->runs.size(); ++i) {
                d.push_back(g->runs[i].metrics.at(metric) - c->runs[i].metrics.at(metric));
            }
            out[metric] = {{"per_seed", d}, {"median", median(d)}, {"mean", mean(d)}};
        }
        return out;
    }

    nlohmann::json to_json() const {
        auto vs = nlohmann::json::object();
        for (const auto& v : variants) {
            auto runs = nlohmann::json::array();
            std::map<std::string, std::vector<double>> cols;
            for (const auto& r : v.runs) {
                runs.push_back({{"seed", r.seed}, {"metrics", r.metrics}, {"extra", r.extra}});
                for (const auto& [k, x] : r.metrics) {
                    cols[k].push_back(x);
                }
            }
            auto med = nlohmann::json::object(), avg = nlohmann::json::object();
            for (const auto& [k, xs] : cols) {
                med[k] = median(xs);
                avg[k] = mean(xs);
            }
            vs[v.name] = {{"network", v.network},
                          {"param_count", v.param_count},
                          {"first_layer_param_count", v.first_layer_param_count},
                          {"per_seed", runs},
                          {"median", med},
                          {"mean", avg}};
        }
        auto gs = nlohmann::json::array();
        for (const auto& g : gates) {
            gs.push_back({{"name", g.name}, {"passed", g.passed}, {"detail", g.detail}});
        }
        return {{"format_version", kReportFormatVersion},
                {"command", command},
                {"dtype", dtype},
                {"seeds", seeds},
                {"insufficient_replication", insufficient_replication()},
                {"variants", vs},
                {"differences", differences()},
                {"reference", reference},
                {"extra", extra},
                {"gates", gs},
                {"passed", passed()},
                {"timing", {{"wall_clock_seconds", wall_clock_seconds}}},
                {"config", config}};
    }
};

/// Published MNIST figures, carried as annotations next to the measured values.
inline nlohmann::json mnist_reference(const std::string& command) {
    if (command == "generalization") {
        return {{"source", "published MNIST swap-protocol accuracies (small-train, large-train)"},
                {"common", {{"small_train_accuracy", 0.9775}, {"large_train_accuracy", 0.9922}}},
                {"go", {{"small_train_accuracy", 0.9797}, {"large_train_accuracy", 0.9924}}}};
    }
    if (command == "adversarial") {
        return {{"source", "published MNIST adversarial-stability means over five runs"},
                {"common",
                 {{"clean", 0.9922}, {"rotated", 0.5897}, {"rotation_difference", 0.4025}, {"gaussian", 0.9569},
                  {"gaussian_difference", 0.0353}}},
                {"go",
                 {{"clean", 0.9924}, {"rotated", 0.6020}, {"rotation_difference", 0.3904}, {"gaussian", 0.9631},
                  {"gaussian_difference", 0.0293}}}};
    }
    if (command == "train") {
        return {{"source", "published MNIST test accuracies, full training"},
                {"common", {{"accuracy", 0.9922}}},
                {"go", {{"accuracy", 0.9924}}}};
    }
    return nlohmann::json::object();
}

// ---------------------------------------------------------------- outputs

/// Results are written to a sibling staging directory and moved into place
/// by commit(); an uncommitted stage is deleted.
class StagedOutput {
public:
    explicit StagedOutput(const std::filesystem::path& final_dir) {
        if (final_dir.empty()) {
            throw ConfigError("output_dir: empty path");
        }
        final_ = std::filesystem::absolute(final_dir).lexically_normal();
        if (!final_.has_filename()) {
            final_ = final_.parent_path();
        }
        stage_ = final_.parent_path() / ("." + final_.filename().string() + ".staging");
        std::filesystem::remove_all(stage_);
        std::filesystem::create_directories(stage_);
    }
    StagedOutput(const StagedOutput&) = delete;
    StagedOutput& operator=(const StagedOutput&) = delete;
    ~StagedOutput() {
        if (!committed_) {
            std::error_code ec;
            std::filesystem::remove_all(stage_, ec);
        }
    }

    const std::filesystem::path& dir() const { return stage_; }

    void commit() {
        std::filesystem::create_directories(final_);
        for (const auto& entry : std::filesystem::directory_iterator(stage_)) {
            const auto target = final_ / entry.path().filename();
            std::filesystem::remove_all(target);
            std::filesystem::rename(entry.path(), target);
        }
        std::filesystem::remove_all(stage_);
        committed_ = true;
    }

private:
    std::filesystem::path final_;
    std::filesystem::path stage_;
    bool committed_ = false;
};

// ---------------------------------------------------------------- data

struct LoadedData {
    ImageDataset train;
    ImageDataset test;
};

/// Balanced random-label toy set of uniform [0,1] images for the width
/// sweep. Labels alternate 0/1 before a seeded shuffle.
template <typename T>
TensorDataset<T> make_toy_dataset(std::size_t samples, std::size_t size, std::uint64_t seed) {
    if (samples == 0 || size == 0) {
        throw ConfigError("data.toy_samples/data.toy_size: must be positive");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    TensorDataset<T> ds;
    ds.classes = 2;
    ds.images = Tensor<T>(Shape{samples, 1, size, size});
    for (auto& v : ds.images.values()) {
        v = static_cast<T>(u(rng));
    }
    ds.labels.resize(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        ds.labels[i] = static_cast<int>(i % 2);
    }
    std::shuffle(ds.labels.begin(), ds.labels.end(), rng);
    return ds;
}

inline LoadedData load_data(const DataSpec& d) {
    LoadedData out;
    if (d.format == "mnist") {
        out.train = load_mnist_idx(d.train_images, d.train_labels);
        out.test = load_mnist_idx(d.test_images, d.test_labels);
    } else if (d.format == "cifar10") {
        out.train = load_cifar10_bin(d.cifar_train);
        out.test = load_cifar10_bin(d.cifar_test);
    } else {
        throw ConfigError("data.format: cannot load '" + d.format + "'");
    }
    if (d.swap) {
        auto p = swap_train_test(DatasetPair{std::move(out.train), std::move(out.test)});
        out.train = std::move(p.train);
        out.test = std::move(p.test);
    }
    if (d.train_subset && d.train_subset < out.train.size()) {
        out.train = subsample(out.train, d.train_subset, d.subset_seed, d.stratified);
    }
    if (d.test_subset && d.test_subset < out.test.size()) {
        out.test = subsample(out.test, d.test_subset, d.subset_seed + 1, d.stratified);
    }
    return out;
}

inline void check_input_shape(const NetworkConfig& n, const ImageDataset& ds) {
    if (n.channels != ds.channels || n.height != ds.height || n.width != ds.width) {
        throw ConfigError("network '" + n.name + "' expects " + std::to_string(n.channels) + "x" +
                          std::to_string(n.height) + "x" + std::to_string(n.width) + " images, dataset '" + ds.name +
                          "' has " + std::to_string(ds.channels) + "x" + std::to_string(ds.height) + "x" +
                          std::to_string(ds.width));
    }
    if (n.loss == LossKind::CrossEntropy && n.classes != ds.classes) {
        throw ConfigError("network '" + n.name + "' has " + std::to_string(n.classes) + " classes, dataset has " +
                          std::to_string(ds.classes));
    }
}

// ---------------------------------------------------------------- runs

inline NetworkConfig variant_network(const ExperimentConfig& c, const std::string& variant, std::uint64_t seed) {
    NetworkConfig n = variant == "go" ? to_go_variant(c.network, c.mix, c.share_across_in_channels) : c.network;
    n.seed = seed;
    return n;
}

template <typename T>
struct TrainedRun {
    Model<T> model;
    History history;
    TrainState<T> state;
};

/// Builds and trains one network. Network init and batch order both derive
/// from seed, so paired variants see the same batches.
template <typename T>
TrainedRun<T> train_run(NetworkConfig net, std::uint64_t seed, TrainConfig tc, const TensorDataset<T>& train_set,
                        bool augment) {
    net.seed = seed;
    tc.seed = seed;
    TrainedRun<T> r{build<T>(net), {}, TrainState<T>{{}, std::mt19937_64(seed), 0}};
    TrainHooks<T> hooks;
    if (augment) {
        hooks.augment = [](Tensor<T>& b, std::mt19937_64& rng) { b = augment_pad_crop_flip(std::move(b), 4, rng()); };
    }
    r.history = train(r.model, train_set, tc, r.state, hooks);
    return r;
}

template <typename T>
void describe_variant(VariantSummary& v, Model<T>& model) {
    v.network = model.config().name;
    v.param_count = model.param_count();
    v.first_layer_param_count = model.layer_param_count(0);
}

inline std::map<std::string, double> eval_metrics(const EvalResult& e, const std::string& prefix = "") {
    return {{prefix + "accuracy", e.accuracy}, {prefix + "mean_loss", e.mean_loss}};
}

inline std::string run_tag(const std::string& variant, std::uint64_t seed) {
    return variant + "_seed" + std::to_string(seed);
}

/// First-layer kernels as a bank; a plain conv layer becomes Free slices.
template <typename T>
KernelBank<T> first_layer_bank(Model<T>& model) {
    if (auto* g = std::get_if<GoLayer<T>>(&model.layer(0))) {
        return g->layer.materialize();
    }
    if (auto* c = std::get_if<ConvLayer<T>>(&model.layer(0))) {
        const auto& w = c->weight;
        const std::size_t od = w.dim(0), ch = w.dim(1), m = w.dim(2);
        std::vector<GeneratorSpec> specs;
        for (std::size_t s = 0; s < od * ch; ++s) {
            std::vector<double> raw(m * m);
            for (std::size_t e = 0; e < m * m; ++e) {
                raw[e] = static_cast<double>(w[s * m * m + e]);
            }
            specs.push_back({GeneratorKind::Free, m, std::move(raw)});
        }
        return build_bank<T>(std::move(specs), od, ch);
    }
    throw ConfigError("network '" + model.config().name + "' does not start with a convolution layer");
}

/// Copies parameters by name; a source "weight" fills a target "generator"
/// of the same length (Free slices share the weight layout).
template <typename T>
void copy_matching_params(Model<T>& from, Model<T>& to) {
    auto src = from.params();
    std::map<std::string, std::span<T>> by_name;
    for (auto& p : src) {
        by_name[p.name] = p.value;
    }
    for (auto& p : to.params()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end() && p.name.size() > 10 && p.name.ends_with(".generator")) {
            it = by_name.find(p.name.substr(0, p.name.size() - 10) + ".weight");
        }
        if (it == by_name.end() || it->second.size() != p.value.size()) {
            throw std::invalid_argument("copy_matching_params: no source for '" + p.name + "'");
        }
        std::copy(it->second.begin(), it->second.end(), p.value.begin());
    }
}

// ---------------------------------------------------------------- commands

struct CommandContext {
    ExperimentConfig config;
    std::filesystem::path dir;  // staging directory
    std::ostream* log = nullptr;

    std::ostream& out() const { return *log; }
};

namespace detail {

template <typename T>
void write_run_outputs(const CommandContext& ctx, const std::string& tag, TrainedRun<T>& run) {
    write_history_csv(run.history, (ctx.dir / ("history_" + tag + ".csv")).string());
    std::filesystem::create_directories(ctx.dir / "checkpoints");
    save_checkpoint(run.model, &run.state, ctx.dir / "checkpoints" / (tag + ".gock"));
}

inline void gate_pair_accuracy(ExperimentReport& rep, const ExperimentConfig& c, const std::string& metric,
                               double min_default, double tol_default) {
    if (!c.gates_enabled) {
        return;
    }
    const double min_acc = c.gate("min_accuracy", min_default);
    if (const auto* g = rep.find("go")) {
        const double m = g->median_of(metric);
        rep.gates.push_back({"go_min_" + metric, m >= min_acc,
                             "median go " + metric + " " + std::to_string(m) + " >= " + std::to_string(min_acc)});
    }
    const auto* g = rep.find("go");
    const auto* cm = rep.find("common");
    if (g && cm) {
        const double tol = c.gate("pair_tolerance", tol_default);
        const double d = std::abs(g->median_of(metric) - cm->median_of(metric));
        rep.gates.push_back({"common_within_tolerance_of_go", d <= tol,
                             "|go - common| median " + metric + " " + std::to_string(d) + " <= " + std::to_string(tol)});
    }
}

}  // namespace detail

template <typename T>
ExperimentReport cmd_train(const CommandContext& ctx) {
    const auto& c = ctx.config;
    ExperimentReport rep;
    const auto data = load_data(c.data);
    check_input_shape(c.network, data.train);
    const auto train_set = normalize01<T>(data.train);
    const auto test_set = normalize01<T>(data.test);
    for (const auto seed : c.seeds) {
        for (const auto& variant : c.variants) {
            ctx.out() << "[train] " << variant << " seed " << seed << " on " << train_set.size() << " samples\n";
            auto run = train_run(variant_network(c, variant, seed), seed, c.train, train_set, c.data.augment);
            const auto ev = evaluate(run.model, test_set);
            auto& v = rep.variant(variant);
            describe_variant(v, run.model);
            SeedRecord r{seed, eval_metrics(ev), {{"per_class_recall", ev.per_class_recall}}};
            if (!run.history.empty()) {
                r.metrics["final_train_loss"] = run.history.back().loss;
                r.metrics["final_train_accuracy"] = run.history.back().accuracy;
            }
            v.runs.push_back(std::move(r));
            detail::write_run_outputs(ctx, run_tag(variant, seed), run);
        }
    }
    if (c.data.format == "mnist") {
        rep.reference = mnist_reference("train");
    }
    detail::gate_pair_accuracy(rep, c, "accuracy", 0.95, 0.015);
    return rep;
}

template <typename T>
ExperimentReport cmd_eval(const CommandContext& ctx) {
    const auto& c = ctx.config;
    ExperimentReport rep;
    const auto data = load_data(c.data);
    const auto test_set = normalize01<T>(data.test);
    for (const auto& path : c.checkpoints) {
        auto ck = load_checkpoint<T>(path);
        check_input_shape(ck.model.config(), data.test);
        const auto ev = evaluate(ck.model, test_set);
        auto& v = rep.variant(ck.model.config().name);
        describe_variant(v, ck.model);
        v.runs.push_back({ck.model.config().seed, eval_metrics(ev),
                          {{"per_class_recall", ev.per_class_recall}, {"checkpoint", path.string()}}});
    }
    return rep;
}

/// Trains on the former test split and evaluates on the former training
/// split. With include_large_train the standard split is run as well.
template <typename T>
ExperimentReport cmd_generalization(const CommandContext& ctx) {
    auto c = ctx.config;
    ExperimentReport rep;
    DataSpec swapped = c.data;
    swapped.swap = true;
    swapped.train_subset = 0;
    const auto small = load_data(swapped);
    check_input_shape(c.network, small.train);
    const auto small_train = normalize01<T>(small.train);
    const auto large_eval = normalize01<T>(small.test);
    std::optional<TensorDataset<T>> std_train, std_test;
    if (c.include_large_train) {
        DataSpec plain = c.data;
        plain.swap = false;
        const auto d = load_data(plain);
        std_train = normalize01<T>(d.train);
        std_test = normalize01<T>(d.test);
    }
    for (const auto seed : c.seeds) {
        for (const auto& variant : c.variants) {
            ctx.out() << "[generalization] " << variant << " seed " << seed << " on " << small_train.size()
                      << " samples\n";
            auto run = train_run(variant_network(c, variant, seed), seed, c.train, small_train, c.data.augment);
            const auto ev = evaluate(run.model, large_eval);
            auto& v = rep.variant(variant);
            describe_variant(v, run.model);
            SeedRecord r{seed,
                         {{"small_train_accuracy", ev.accuracy}, {"small_train_mean_loss", ev.mean_loss}},
                         {{"per_class_recall", ev.per_class_recall}}};
            detail::write_run_outputs(ctx, "small_" + run_tag(variant, seed), run);
            if (std_train) {
                auto big = train_run(variant_network(c, variant, seed), seed, c.train, *std_train, c.data.augment);
                r.metrics["large_train_accuracy"] = evaluate(big.model, *std_test).accuracy;
            }
            v.runs.push_back(std::move(r));
        }
    }
    if (c.data.format == "mnist") {
        rep.reference = mnist_reference("generalization");
    }
    if (c.gates_enabled) {
        const double min_acc = c.gate("min_accuracy", 0.96);
        for (const auto& v : rep.variants) {
            const double m = v.median_of("small_train_accuracy");
            rep.gates.push_back({v.name + "_min_accuracy", m >= min_acc,
                                 "median small-train accuracy " + std::to_string(m) + " >= " + std::to_string(min_acc)});
        }
        const auto* g = rep.find("go");
        const auto* cm = rep.find("common");
        if (g && cm) {
            const double margin = c.gate("margin", 0.003);
            const double gm = g->median_of("small_train_accuracy"), cmm = cm->median_of("small_train_accuracy");
            rep.gates.push_back({"go_not_worse_than_common", gm >= cmm - margin,
                                 "go median " + std::to_string(gm) + " >= common median " + std::to_string(cmm) +
                                     " - " + std::to_string(margin)});
        }
    }
    return rep;
}

/// Clean, randomly rotated and Gaussian-perturbed test accuracy. Models come
/// from the listed checkpoints or are trained per seed as in cmd_train.
/// Both variants of a seed see the same perturbed images.
template <typename T>
ExperimentReport cmd_adversarial(const CommandContext& ctx) {
    const auto& c = ctx.config;
    ExperimentReport rep;
    const auto data = load_data(c.data);
    const auto test_set = normalize01<T>(data.test);
    auto perturbed = [&](std::uint64_t seed) {
        std::pair<TensorDataset<T>, TensorDataset<T>> p{test_set, test_set};
        p.first.images = random_rotate(test_set.images, c.adversarial.rotation_max_degrees, 1000003ULL + seed);
        p.second.images =
            gaussian_perturb(test_set.images, c.adversarial.noise_mean, c.adversarial.noise_std, 2000003ULL + seed);
        return p;
    };
    auto record = [&](const std::string& variant, std::uint64_t seed, Model<T>& model, nlohmann::json extra) {
        const auto [rotated, noisy] = perturbed(seed);
        const auto clean = evaluate(model, test_set);
        const auto rot = evaluate(model, rotated);
        const auto gau = evaluate(model, noisy);
        auto& v = rep.variant(variant);
        describe_variant(v, model);
        v.runs.push_back({seed,
                          {{"clean", clean.accuracy},
                           {"rotated", rot.accuracy},
                           {"rotation_difference", clean.accuracy - rot.accuracy},
                           {"gaussian", gau.accuracy},
                           {"gaussian_difference", clean.accuracy - gau.accuracy}},
                          std::move(extra)});
    };
    if (!c.checkpoints.empty()) {
        for (const auto& path : c.checkpoints) {
            auto ck = load_checkpoint<T>(path);
            check_input_shape(ck.model.config(), data.test);
            const auto& first = ck.model.config().layers.front();
            const std::string variant = first.type == LayerType::GoConv ? "go" : "common";
            record(variant, ck.model.config().seed, ck.model, {{"checkpoint", path.string()}});
        }
    } else {
        check_input_shape(c.network, data.train);
        const auto train_set = normalize01<T>(data.train);
        for (const auto seed : c.seeds) {
            for (const auto& variant : c.variants) {
                ctx.out() << "[adversarial] training " << variant << " seed " << seed << " on " << train_set.size()
                          << " samples\n";
                auto run = train_run(variant_network(c, variant, seed), seed, c.train, train_set, c.data.augment);
                detail::write_run_outputs(ctx, run_tag(variant, seed), run);
                record(variant, seed, run.model, nlohmann::json::object());
            }
        }
    }
    if (c.data.format == "mnist") {
        rep.reference = mnist_reference("adversarial");
    }
    const auto* g = rep.find("go");
    const auto* cm = rep.find("common");
    if (c.gates_enabled && g && cm) {
        for (const auto& [metric, key, tol] : {std::tuple{"gaussian_difference", "gaussian_tolerance", 0.005},
                                               std::tuple{"rotation_difference", "rotation_tolerance", 0.01}}) {
            const double t = c.gate(key, tol);
            const double gm = g->median_of(metric), cmm = cm->median_of(metric);
            rep.gates.push_back({std::string("go_") + metric + "_within_tolerance", gm <= cmm + t,
                                 "go median " + std::to_string(gm) + " <= common median " + std::to_string(cmm) +
                                     " + " + std::to_string(t)});
        }
    }
    return rep;
}

/// For each width d1: train the common theory net F, train the Gabor net G
/// with identical widths, and record |E_S[G] - E_S[F]| on the toy set. The
/// control copies F into a Free-generator net, whose gap must be exactly 0.
template <typename T>
ExperimentReport cmd_width_sweep(const CommandContext& ctx) {
    const auto& c = ctx.config;
    ExperimentReport rep;
    const auto toy = make_toy_dataset<T>(c.data.toy_samples, c.data.toy_size, c.data.subset_seed);
    const auto& widths = c.sweep.widths;
    std::ofstream csv(ctx.dir / "width_sweep.csv");
    csv.precision(17);
    csv << "seed,d1,e_f,e_g,gap,control_gap\n";
    auto& v = rep.variant("sweep");
    v.network = "theory_net";
    for (const auto seed : c.seeds) {
        SeedRecord rec{seed, {}, nlohmann::json::object()};
        for (const auto d1 : widths) {
            ctx.out() << "[width-sweep] seed " << seed << " d1 " << d1 << "\n";
            const auto pair = theory_pair(d1, seed, c.sweep.od, c.data.toy_size);
            auto f = train_run(pair.common, seed, c.train, toy, false);
            const double ef = evaluate(f.model, toy).mean_loss;
            auto g = train_run(pair.go, seed, c.train, toy, false);
            const double eg = evaluate(g.model, toy).mean_loss;
            double control = 0.0;
            if (c.sweep.free_control) {
                auto ctrl = build<T>(to_go_variant(pair.common, GeneratorMix::all(GeneratorKind::Free)));
                copy_matching_params(f.model, ctrl);
                control = std::abs(evaluate(ctrl, toy).mean_loss - ef);
            }
            const std::string k = std::to_string(d1);
            rec.metrics["e_f_d" + k] = ef;
            rec.metrics["e_g_d" + k] = eg;
            rec.metrics["gap_d" + k] = std::abs(eg - ef);
            rec.metrics["control_gap_d" + k] = control;
            csv << seed << ',' << d1 << ',' << ef << ',' << eg << ',' << std::abs(eg - ef) << ',' << control << '\n';
            if (seed == c.seeds.front()) {
                v.param_count = g.model.param_count();
                v.first_layer_param_count = g.model.layer_param_count(0);
            }
        }
        v.runs.push_back(std::move(rec));
    }
    std::vector<double> gaps, efs;
    for (const auto d1 : widths) {
        gaps.push_back(v.median_of("gap_d" + std::to_string(d1)));
        efs.push_back(v.median_of("e_f_d" + std::to_string(d1)));
    }
    rep.extra = {{"widths", widths}, {"median_gap", gaps}, {"median_e_f", efs}, {"baseline", "E_S[F] per width"}};
    if (c.gates_enabled) {
        const double slack = c.gate("slack", 0.05);
        bool mono = true;
        std::string detail;
        for (std::size_t i = 1; i < gaps.size(); ++i) {
            const bool ok = gaps[i] <= gaps[i - 1] * (1.0 + slack);
            mono = mono && ok;
            detail += "gap(" + std::to_string(widths[i]) + ")=" + std::to_string(gaps[i]) + (ok ? " <= " : " > ") +
                      "(1+slack)*gap(" + std::to_string(widths[i - 1]) + ")=" + std::to_string(gaps[i - 1] * (1 + slack)) +
                      "; ";
        }
        rep.gates.push_back({"median_gap_non_increasing", mono, detail});
        if (c.sweep.free_control) {
            bool zero = true;
            for (const auto d1 : widths) {
                for (const double x : v.values("control_gap_d" + std::to_string(d1))) {
                    zero = zero && x == 0.0;
                }
            }
            rep.gates.push_back({"free_control_gap_zero", zero, "every control gap is exactly 0"});
        }
    }
    return rep;
}

template <typename T>
ExperimentReport cmd_inspect_kernels(const CommandContext& ctx) {
    const auto& c = ctx.config;
    ExperimentReport rep;
    auto dump = [&](Model<T>& model, const std::string& variant, std::uint64_t seed) {
        const auto bank = first_layer_bank(model);
        const auto sub = std::filesystem::path("kernels") / run_tag(variant, seed);
        dump_kernels(bank, ctx.dir / sub);
        std::ofstream params(ctx.dir / sub / "generators.csv");
        params.precision(17);
        params << "o,c,kind,params\n";
        for (std::size_t s = 0; s < bank.specs.size(); ++s) {
            const auto& spec = bank.specs[s];
            params << s / bank.in_channels << ',' << s % bank.in_channels << ',' << to_string(spec.kind) << ',';
            const auto p = spec.kind == GeneratorKind::Free ? spec.raw : constrain(spec.raw, spec.kind);
            for (std::size_t t = 0; t < p.size(); ++t) {
                params << (t ? " " : "") << p[t];
            }
            params << '\n';
        }
        auto& v = rep.variant(variant);
        describe_variant(v, model);
        v.runs.push_back({seed, {{"kernels", static_cast<double>(bank.out_channels * bank.in_channels)}},
                          {{"directory", sub.string()}}});
    };
    if (!c.checkpoints.empty()) {
        for (const auto& path : c.checkpoints) {
            auto ck = load_checkpoint<T>(path);
            dump(ck.model, ck.model.config().name, ck.model.config().seed);
        }
    } else {
        for (const auto seed : c.seeds) {
            for (const auto& variant : c.variants) {
                auto model = build<T>(variant_network(c, variant, seed));
                dump(model, variant, seed);
            }
        }
    }
    return rep;
}

template <typename T>
ExperimentReport cmd_certify(const CommandContext& ctx) {
    const auto& c = ctx.config;
    const auto& q = c.certify;
    ExperimentReport rep;
    auto results = nlohmann::json::array();
    auto certify_layer = [&](const GoConvLayer<T>& layer, const std::string& variant, std::uint64_t seed,
                             nlohmann::json extra) {
        const auto r = certify_well_defined(layer, q.height, q.width, q.padding, q.rel_tol);
        nlohmann::json j = r;
        for (auto& [k, x] : extra.items()) {
            j[k] = x;
        }
        results.push_back(j);
        auto& v = rep.variant(variant);
        v.first_layer_param_count = layer.param_count();
        v.runs.push_back({seed,
                          {{"patch_rank", static_cast<double>(r.patch_rank)},
                           {"operator_rank", static_cast<double>(r.operator_rank)},
                           {"injective", r.injective ? 1.0 : 0.0}},
                          j});
        if (c.gates_enabled && c.gates.value("require_injective", true)) {
            rep.gates.push_back({variant + "_seed" + std::to_string(seed) + "_injective", r.injective,
                                 "operator rank " + std::to_string(r.operator_rank) + " of " +
                                     std::to_string(r.operator_required)});
        }
    };
    auto as_go_layer = [](Model<T>& model) {
        if (auto* g = std::get_if<GoLayer<T>>(&model.layer(0))) {
            return g->layer;
        }
        const auto bank = first_layer_bank(model);
        std::vector<GeneratorKind> kinds(bank.out_channels, GeneratorKind::Free);
        auto* conv = std::get_if<ConvLayer<T>>(&model.layer(0));
        GoConvLayer<T> layer(bank.in_channels, bank.m, kinds, conv->geometry);
        std::copy(conv->weight.values().begin(), conv->weight.values().end(), layer.raw().begin());
        return layer;
    };
    if (q.source == "prop2") {
        certify_layer(layer_from_specs<T>(prop2_specs(q.sigmas, q.gammas), q.padding), "prop2", 0,
                      {{"sigmas", q.sigmas}, {"gammas", q.gammas}});
    } else if (q.source == "checkpoint") {
        for (const auto& path : c.checkpoints) {
            auto ck = load_checkpoint<T>(path);
            certify_layer(as_go_layer(ck.model), ck.model.config().name, ck.model.config().seed,
                          {{"checkpoint", path.string()}});
        }
    } else {
        for (const auto seed : c.seeds) {
            for (const auto& variant : c.variants) {
                auto model = build<T>(variant_network(c, variant, seed));
                certify_layer(as_go_layer(model), variant, seed, nlohmann::json::object());
            }
        }
    }
    std::ofstream(ctx.dir / "certificate.json") << results.dump(2) << '\n';
    rep.extra = {{"certificates", results}};
    return rep;
}

/// Writes id,label,f0..f{d-1} with the input of the final fc layer for each
/// test sample.
template <typename T>
ExperimentReport cmd_export_features(const CommandContext& ctx) {
    const auto& c = ctx.config;
    ExperimentReport rep;
    const auto data = load_data(c.data);
    const auto test_set = normalize01<T>(data.test);
    for (std::size_t k = 0; k < c.checkpoints.size(); ++k) {
        auto ck = load_checkpoint<T>(c.checkpoints[k]);
        check_input_shape(ck.model.config(), data.test);
        const std::string file = c.checkpoints.size() == 1
                                     ? "features.csv"
                                     : "features_" + run_tag(ck.model.config().name, ck.model.config().seed) + ".csv";
        std::ofstream out(ctx.dir / file);
        out.precision(9);
        std::size_t width = 0;
        std::vector<int> labels;
        for (std::size_t start = 0; start < test_set.size(); start += 256) {
            const std::size_t end = std::min(test_set.size(), start + 256);
            std::vector<std::size_t> idx(end - start);
            std::iota(idx.begin(), idx.end(), start);
            const auto feats = ck.model.penultimate(gather_batch(test_set, idx, labels));
            width = feats.dim(1);
            if (start == 0) {
                out << "id,label";
                for (std::size_t f = 0; f < width; ++f) {
                    out << ",f" << f;
                }
                out << '\n';
            }
            for (std::size_t b = 0; b < idx.size(); ++b) {
                out << idx[b] << ',' << labels[b];
                for (std::size_t f = 0; f < width; ++f) {
                    out << ',' << static_cast<double>(feats[b * width + f]);
                }
                out << '\n';
            }
        }
        auto& v = rep.variant(ck.model.config().name);
        describe_variant(v, ck.model);
        v.runs.push_back({ck.model.config().seed,
                          {{"rows", static_cast<double>(test_set.size())}, {"feature_width", static_cast<double>(width)}},
                          {{"file", file}, {"checkpoint", c.checkpoints[k].string()}}});
    }
    return rep;
}

template <typename T>
ExperimentReport dispatch_command(const CommandContext& ctx) {
    const auto& k = ctx.config.kind;
    if (k == "train") return cmd_train<T>(ctx);
    if (k == "eval") return cmd_eval<T>(ctx);
    if (k == "generalization") return cmd_generalization<T>(ctx);
    if (k == "adversarial") return cmd_adversarial<T>(ctx);
    if (k == "width-sweep") return cmd_width_sweep<T>(ctx);
    if (k == "inspect-kernels") return cmd_inspect_kernels<T>(ctx);
    if (k == "certify") return cmd_certify<T>(ctx);
    if (k == "export-features") return cmd_export_features<T>(ctx);
    throw ConfigError("kind: unknown experiment '" + k + "'");
}

// ---------------------------------------------------------------- entry

struct CommandOptions {
    std::filesystem::path config_path;
    std::optional<std::filesystem::path> out;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<std::string> dtype;
    bool quick = false;
};

struct CommandOutcome {
    int exit_code = 0;
    std::optional<ExperimentReport> report;
};

inline ExperimentConfig load_experiment_config(const std::string& command, const CommandOptions& opt) {
    std::ifstream in(opt.config_path);
    if (!in) {
        throw ConfigError("--config: cannot read '" + opt.config_path.string() + "'");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("--config: invalid JSON: " + std::string(e.what()));
    }
    auto c = parse_experiment_config(j);
    if (!c.kind.empty() && c.kind != command) {
        throw ConfigError("kind: config is for '" + c.kind + "' but the command is '" + command + "'");
    }
    c.kind = command;
    if (opt.out) c.output_dir = *opt.out;
    if (opt.seeds) c.seeds = *opt.seeds;
    if (opt.dtype) c.dtype = *opt.dtype;
    apply_mode(c, opt.quick);
    validate_experiment_config(c);
    return c;
}

/// Runs one command end to end. Nothing is written to the output directory
/// unless the command completes. Subnormals are flushed to zero throughout.
inline CommandOutcome run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
    const FlushDenormals ftz;
    try {
        const auto t0 = std::chrono::steady_clock::now();
        StagedOutput stage(cfg.output_dir);
        CommandContext ctx{cfg, stage.dir(), &log};
        auto rep = cfg.dtype == "f64" ? dispatch_command<double>(ctx) : dispatch_command<float>(ctx);
        rep.command = cfg.kind;
        rep.dtype = cfg.dtype;
        rep.seeds = cfg.seeds;
        rep.config = cfg;
        rep.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ofstream(stage.dir() / "report.json") << rep.to_json().dump(2) << '\n';
        stage.commit();
        for (const auto& g : rep.gates) {
            log << (g.passed ? "[gate PASS] " : "[gate FAIL] ") << g.name << ": " << g.detail << '\n';
        }
        if (rep.insufficient_replication()) {
            log << "[note] fewer than 5 seeds: insufficient replication\n";
        }
        const int code = rep.passed() ? 0 : 1;
        return {code, std::move(rep)};
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return {2, std::nullopt};
    }
}

inline CommandOutcome run_command(const std::string& command, const CommandOptions& opt, std::ostream& log) {
    ExperimentConfig cfg;
    try {
        cfg = load_experiment_config(command, opt);
    } catch (const std::exception& e) {
        log << "config error: " << e.what() << '\n';
        return {2, std::nullopt};
    }
    return run_experiment(cfg, log);
}

}  // namespace goconv
