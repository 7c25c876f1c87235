// Acceptance gate: one PASS/FAIL/SKIP line per criterion, nonzero exit if
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "exact_rank.hpp"
#include "goconv/checkpoint.hpp"
#include "goconv/experiments.hpp"
#include "goconv/generators.hpp"
#include "goconv/injectivity.hpp"
#include "goconv/network.hpp"
#include "goconv/ops.hpp"
#include "oracles.hpp"

using namespace goconv;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Status { Pass, Fail, Skip, Declared };

struct Outcome {
    Status status;
    std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::Pass : Status::Fail, std::move(detail)}; }

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

std::string pct(double v) { return fmt(100.0 * v, 5) + "%"; }

struct Options {
    fs::path mnist_dir;
    fs::path work_dir = "acceptance_out";
    std::set<int> only;
};

// ---------------------------------------------------------------- 1

Outcome golden_kernels() {
    double worst = 0.0;
    for (double s : {0.5, 1.0, 2.0}) {
        for (double g : {0.5, 1.0, 2.0}) {
            const auto k = gabor_kernel(GaborParams{0.0, 0.0, s, g, 1.0}, 3);
            const double h1 = std::exp(-(1 + g * g) / (2 * s * s));
            const double h2 = std::exp(-1 / (2 * s * s));
            const double h3 = std::exp(-g * g / (2 * s * s));
            const double expect[3][3] = {{h1, h2, h1}, {h3, 1.0, h3}, {h1, h2, h1}};
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) worst = std::max(worst, std::abs(k(i, j) - expect[i][j]));
        }
    }
    bool schmid_ok = true;
    std::mt19937_64 rng(11);
    for (int t = 0; t < 50; ++t) {
        const std::size_t m = 3 + 2 * std::size_t(t % 3);
        const auto sp = schmid_from_raw(init_raw(GeneratorKind::Schmid, m, 1, rng));
        const auto k = schmid_kernel(sp, m);
        const std::size_t c = (m - 1) / 2;
        schmid_ok = schmid_ok && k(c, c) == 1.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const std::size_t ri = m - 1 - i, rj = m - 1 - j;
                for (double w : {k(j, i), k(ri, j), k(i, rj), k(ri, rj)}) schmid_ok = schmid_ok && w == k(i, j);
            }
    }
    return verdict(worst <= 1e-12 && schmid_ok, "Gabor max |k - closed form| = " + fmt(worst, 3) +
                                                    " over sigma,gamma in {0.5,1,2}; Schmid center 1 and symmetry " +
                                                    (schmid_ok ? "exact" : "violated") + " on 50 draws");
}

// ---------------------------------------------------------------- 2

Outcome jacobians() {
    std::mt19937_64 rng(12);
    double worst_g = 0.0, worst_s = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const std::size_t m = draw % 2 ? 5 : 3;
        const auto gp = gabor_from_raw(init_raw(GeneratorKind::Gabor, m, 1, rng));
        std::vector<double> p{gp.theta, gp.psi, gp.sigma, gp.gamma, gp.lambda};
        const auto jac = gabor_jacobian(gp, m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t t = 0; t < 5; ++t) {
                    const double fd = oracle::central_diff(
                        [&] { return gabor_kernel(GaborParams{p[0], p[1], p[2], p[3], p[4]}, m)(i, j); }, p[t]);
                    worst_g = std::max(worst_g, oracle::rel_err(jac(i, j, t), fd));
                }
        const auto sp = schmid_from_raw(init_raw(GeneratorKind::Schmid, m, 1, rng));
        std::vector<double> q{sp.sigma, sp.tau};
        const auto sj = schmid_jacobian(sp, m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t t = 0; t < 2; ++t) {
                    const double fd =
                        oracle::central_diff([&] { return schmid_kernel(SchmidParams{q[0], q[1]}, m)(i, j); }, q[t]);
                    worst_s = std::max(worst_s, oracle::rel_err(sj(i, j, t), fd));
                }
    }
    return verdict(worst_g < 1e-6 && worst_s < 1e-6, "max rel err Gabor " + fmt(worst_g, 3) + ", Schmid " +
                                                          fmt(worst_s, 3) + " over 100 draws each (m = 3, 5)");
}

// ---------------------------------------------------------------- 3

/// ReLU signs and max-pool winners of the last forward pass.
std::vector<std::uint32_t> branch_pattern(Model<double>& model) {
    std::vector<std::uint32_t> pat;
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
        if (const auto* r = std::get_if<ReluLayer<double>>(&model.layer(i))) {
            for (double v : r->cached_input.values()) pat.push_back(v > 0.0);
        } else if (const auto* p = std::get_if<PoolLayer<double>>(&model.layer(i))) {
            pat.insert(pat.end(), p->argmax.begin(), p->argmax.end());
        }
    }
    return pat;
}

struct KinkAwareDiff {
    double value = 0.0;
    bool reduced = false;  // step shrunk below 1e-5·max(1,|θ|)
    bool smooth = false;   // both probes kept the base branch pattern
};

/// Central difference that only accepts a step whose two probes stay on the
/// base point's ReLU/max-pool branches; otherwise the step shrinks tenfold,
/// at most three times.
KinkAwareDiff kink_aware_diff(Model<double>& model, const std::function<double()>& loss, double& theta,
                              const std::vector<std::uint32_t>& base) {
    const double saved = theta;
    KinkAwareDiff r;
    double h = 1e-5 * std::max(1.0, std::abs(saved));
    for (int attempt = 0; attempt < 4; ++attempt, h /= 10.0) {
        theta = saved + h;
        const double fp = loss();
        const bool same_p = branch_pattern(model) == base;
        theta = saved - h;
        const double fm = loss();
        const bool same_m = branch_pattern(model) == base;
        theta = saved;
        r.value = (fp - fm) / (2.0 * h);
        r.reduced = attempt > 0;
        r.smooth = same_p && same_m;
        if (r.smooth) break;
    }
    return r;
}

/// Every generator parameter and bias entry is checked individually. Weight
/// tensors get 64 sampled entries plus three random directions, each of
/// which perturbs every entry of the tensor at once.
Outcome end_to_end_gradient() {
    auto model = build<double>(to_go_variant(lenet_config(1, 28, 10, 3), GeneratorMix::half()));
    std::mt19937_64 rng(13);
    const auto x = oracle::random_tensor(Shape{4, 1, 28, 28}, rng, 0.0, 1.0);
    const std::vector<int> labels{0, 3, 7, 9};
    auto loss = [&] { return softmax_cross_entropy(model.forward(x), std::span<const int>(labels)).value; };
    const auto out = model.forward(x);
    const auto base = branch_pattern(model);
    model.backward(softmax_cross_entropy(out, std::span<const int>(labels)).grad);
    auto params = model.params();
    std::vector<std::vector<double>> grads;
    for (const auto& p : params) grads.emplace_back(p.grad.begin(), p.grad.end());

    double worst = 0.0;
    std::string worst_at;
    std::size_t checks = 0, reduced = 0, unresolved = 0;
    auto record = [&](double a, const KinkAwareDiff& n, const std::string& where) {
        const double e = oracle::rel_err(a, n.value);
        ++checks;
        reduced += n.reduced && n.smooth;
        unresolved += !n.smooth;
        if (e > worst) {
            worst = e;
            worst_at = where;
        }
    };
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        const bool exhaustive = p.name.ends_with(".generator") || p.name.ends_with(".bias");
        std::vector<std::size_t> idx;
        if (exhaustive) {
            idx.resize(p.value.size());
            std::iota(idx.begin(), idx.end(), 0);
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, p.value.size() - 1);
            for (int s = 0; s < 64; ++s) idx.push_back(pick(rng));
        }
        for (auto i : idx) {
            record(grads[k][i], kink_aware_diff(model, loss, p.value[i], base), p.name + "[" + std::to_string(i) + "]");
        }
        if (exhaustive) continue;
        std::normal_distribution<double> nd;
        for (int d = 0; d < 3; ++d) {
            std::vector<double> dir(p.value.size());
            double norm = 0.0;
            for (auto& v : dir) {
                v = nd(rng);
                norm += v * v;
            }
            norm = std::sqrt(norm);
            double analytic = 0.0;
            for (std::size_t i = 0; i < dir.size(); ++i) {
                dir[i] /= norm;
                analytic += grads[k][i] * dir[i];
            }
            const std::vector<double> start(p.value.begin(), p.value.end());
            double t = 0.0;
            auto along = [&] {
                for (std::size_t i = 0; i < dir.size(); ++i) p.value[i] = start[i] + t * dir[i];
                return loss();
            };
            const auto numeric = kink_aware_diff(model, along, t, base);
            std::copy(start.begin(), start.end(), p.value.begin());
            record(analytic, numeric, p.name + " direction " + std::to_string(d));
        }
    }
    return verdict(worst < 1e-4 && unresolved == 0,
                   std::to_string(checks) + " checks over " + std::to_string(params.size()) + " parameter tensors (" +
                       std::to_string(model.param_count()) + " parameters, f64, batch 4); max rel err " + fmt(worst, 3) +
                       " at " + worst_at + "; " + std::to_string(reduced) +
                       " steps shrunk to stay off ReLU/max-pool switch points, " + std::to_string(unresolved) +
                       " unresolved");
}

// ---------------------------------------------------------------- 4

Outcome conv_oracle() {
    std::mt19937_64 rng(14);
    std::uniform_int_distribution<int> small(1, 3), ext(1, 9), ksz(0, 2), pad(0, 2), st(1, 2);
    double worst = 0.0;
    int checked = 0;
    while (checked < 200) {
        const std::size_t m = 2 * std::size_t(ksz(rng)) + 1, p = std::size_t(pad(rng)), s = std::size_t(st(rng));
        const std::size_t H = std::size_t(ext(rng)), W = std::size_t(ext(rng));
        if (m > H + 2 * p || m > W + 2 * p) continue;
        const std::size_t N = std::size_t(small(rng)), C = std::size_t(small(rng)), OD = std::size_t(small(rng));
        const auto in = oracle::random_tensor(Shape{N, C, H, W}, rng);
        const auto k = oracle::random_tensor(Shape{OD, C, m, m}, rng);
        std::vector<double> b(OD);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (auto& v : b) v = u(rng);
        const auto out = conv2d_forward(in, k, std::span<const double>(b), ConvGeometry{s, p});
        const auto ref = oracle::conv_loops(in, k, b, s, p);
        if (out.shape() != ref.shape()) return verdict(false, "shape mismatch on instance " + std::to_string(checked));
        for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, std::abs(out[i] - ref[i]));
        ++checked;
    }
    return verdict(worst <= 1e-12, "200 random instances, max |im2col - loops| = " + fmt(worst, 3));
}

// ---------------------------------------------------------------- 5

Outcome injectivity() {
    const auto bank = prop2_bank({1.0, 2.0}, {1.0, 2.0});
    const auto P = patch_matrix(bank);
    const auto A = operator_matrix(bank, 8, 8, 1);
    const std::size_t patch_svd = rank(P), patch_exact = oracle::exact_rank(P);
    const std::size_t op_svd = rank(A), op_exact = oracle::exact_rank(A);
    std::vector<GeneratorSpec> zeros(4, GeneratorSpec{GeneratorKind::Free, 3, std::vector<double>(9, 0.0)});
    const auto zero_bank = build_bank<double>(zeros, 4, 1);
    const std::size_t zero_rank = rank(patch_matrix(zero_bank));
    const bool zero_fails = zero_rank == 0 && !operator_injective(zero_bank, 8, 8, 1);
    int full = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<GeneratorSpec> specs;
        for (int s = 0; s < 16; ++s) specs.push_back({GeneratorKind::Gabor, 3, init_raw(GeneratorKind::Gabor, 3, 9, rng)});
        full += rank(patch_matrix(build_bank<double>(specs, 16, 1))) == 9;
    }
    const bool ok = patch_svd == 9 && patch_exact == 9 && op_svd == 64 && op_exact == 64 && zero_fails && full == 100;
    return verdict(ok, "situation bank (" + std::to_string(bank.out_channels) + " kernels): patch rank SVD " +
                           std::to_string(patch_svd) + " / exact " + std::to_string(patch_exact) +
                           ", operator rank SVD " + std::to_string(op_svd) + " / exact " + std::to_string(op_exact) +
                           " of 64; zero bank rank " + std::to_string(zero_rank) + (zero_fails ? " (fails)" : "") +
                           "; random Gabor OD=16 full rank on " + std::to_string(full) + "/100 seeds");
}

// ---------------------------------------------------------------- 6

Outcome parameter_counts() {
    auto common = build<float>(lenet_config());
    auto go = build<float>(to_go_variant(lenet_config(), GeneratorMix::all(GeneratorKind::Gabor)));
    const std::size_t c = common.layer_param_count(0), g = go.layer_param_count(0);
    return verdict(c == 832 && g == 192,
                   "first layer: common " + std::to_string(c) + ", all-Gabor GO " + std::to_string(g) +
                       " (OD=32, C=1, m=5); totals " + std::to_string(common.param_count()) + " vs " +
                       std::to_string(go.param_count()));
}

// ---------------------------------------------------------------- 7-9

fs::path mnist_file(const Options& o, const char* name) { return o.mnist_dir / name; }

bool mnist_available(const Options& o) {
    for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                          "t10k-labels-idx1-ubyte"}) {
        if (!fs::exists(mnist_file(o, f))) return false;
    }
    return true;
}

ExperimentConfig load_config(const Options& o, const std::string& file, const fs::path& out) {
    std::ifstream in(fs::path(GOCONV_SOURCE_DIR) / "configs" / file);
    auto j = json::parse(in);
    if (j.contains("data") && j["data"].value("format", "") == "mnist") {
        j["data"]["train_images"] = mnist_file(o, "train-images-idx3-ubyte").string();
        j["data"]["train_labels"] = mnist_file(o, "train-labels-idx1-ubyte").string();
        j["data"]["test_images"] = mnist_file(o, "t10k-images-idx3-ubyte").string();
        j["data"]["test_labels"] = mnist_file(o, "t10k-labels-idx1-ubyte").string();
    }
    auto c = parse_experiment_config(j);
    c.output_dir = out;
    apply_mode(c, false);
    validate_experiment_config(c);
    return c;
}

std::optional<ExperimentReport> run_logged(const ExperimentConfig& c, std::string& error) {
    std::ostringstream log;
    auto r = run_experiment(c, log);
    if (r.exit_code == 2 || !r.report) {
        error = log.str();
        return std::nullopt;
    }
    return r.report;
}

Outcome mnist_quick(const Options& o, std::optional<ExperimentReport>& rep) {
    std::string err;
    rep = run_logged(load_config(o, "mnist_quick.json", o.work_dir / "mnist_quick"), err);
    if (!rep) return verdict(false, "run failed: " + err);
    const double g = rep->find("go")->median_of("accuracy"), c = rep->find("common")->median_of("accuracy");
    return verdict(g >= 0.95 && std::abs(c - g) <= 0.015,
                   "5-seed medians on the 10k test set after 2 epochs on a 10k stratified subset: GO " + pct(g) +
                       " (>= 95%), common " + pct(c) + " (|diff| " + pct(std::abs(c - g)) +
                       " <= 1.5%); published full-training reference 99.24% / 99.22%");
}

Outcome generalization(const Options& o) {
    std::string err;
    const auto rep = run_logged(load_config(o, "mnist_generalization.json", o.work_dir / "mnist_generalization"), err);
    if (!rep) return verdict(false, "run failed: " + err);
    const double g = rep->find("go")->median_of("small_train_accuracy");
    const double c = rep->find("common")->median_of("small_train_accuracy");
    return verdict(g >= c - 0.003 && g >= 0.96 && c >= 0.96,
                   "train on 10k former test, evaluate on 60k former train, 5-seed medians: GO " + pct(g) + ", common " +
                       pct(c) + " (GO >= common - 0.3%, both >= 96%); published 97.97% vs 97.75%");
}

Outcome adversarial(const Options& o, const ExperimentReport& trained) {
    auto c = load_config(o, "mnist_adversarial.json", o.work_dir / "mnist_adversarial");
    for (const auto& v : trained.variants) {
        for (const auto& r : v.runs) {
            c.checkpoints.push_back(o.work_dir / "mnist_quick" / "checkpoints" / (run_tag(v.name, r.seed) + ".gock"));
        }
    }
    validate_experiment_config(c);
    std::string err;
    const auto rep = run_logged(c, err);
    if (!rep) return verdict(false, "run failed: " + err);
    const auto* g = rep->find("go");
    const auto* cm = rep->find("common");
    const double gg = g->median_of("gaussian_difference"), cg = cm->median_of("gaussian_difference");
    const double gr = g->median_of("rotation_difference"), cr = cm->median_of("rotation_difference");
    return verdict(gg <= cg + 0.005 && gr <= cr + 0.01,
                   "5-seed median differences: Gaussian(0,0.3) GO " + pct(gg) + " vs common " + pct(cg) +
                       " (+0.5% allowed; published 2.93% vs 3.53%), rotation within 90 deg GO " + pct(gr) +
                       " vs common " + pct(cr) + " (+1.0% allowed; published 39.04% vs 40.25%)");
}

// ---------------------------------------------------------------- 10

Outcome width_sweep(const Options& o) {
    std::string err;
    const auto rep = run_logged(load_config(o, "width_sweep.json", o.work_dir / "width_sweep"), err);
    if (!rep) return verdict(false, "run failed: " + err);
    const auto& v = *rep->find("sweep");
    std::vector<double> gaps;
    bool mono = true, control_zero = true;
    std::string detail = "median gap";
    for (const std::size_t d1 : {4u, 16u, 64u, 256u}) {
        gaps.push_back(v.median_of("gap_d" + std::to_string(d1)));
        detail += " d1=" + std::to_string(d1) + ":" + fmt(gaps.back(), 3);
        if (gaps.size() > 1) mono = mono && gaps.back() <= gaps[gaps.size() - 2] * 1.05;
        for (double x : v.values("control_gap_d" + std::to_string(d1))) control_zero = control_zero && x == 0.0;
    }
    return verdict(mono && control_zero, detail + (mono ? " (non-increasing within 5%)" : " (trend violated)") +
                                             "; Free-mix control gap " + (control_zero ? "exactly 0" : "nonzero"));
}

// ---------------------------------------------------------------- 12

template <typename T>
bool same_bytes(std::span<const T> a, std::span<const T> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

template <typename T>
bool round_trip(const fs::path& path) {
    auto model = build<T>(to_go_variant(lenet_config(1, 28, 10, 5), GeneratorMix::half()));
    std::mt19937_64 rng(15);
    TensorDataset<T> ds;
    ds.classes = 10;
    ds.images = oracle::random_tensor(Shape{64, 1, 28, 28}, rng, 0.0, 1.0).template cast<T>();
    for (int i = 0; i < 64; ++i) ds.labels.push_back(i % 10);
    TrainConfig tc;
    tc.batch_size = 16;
    tc.max_iterations = 3;
    TrainState<T> st{{}, std::mt19937_64(5), 0};
    train(model, ds, tc, st, {});
    save_checkpoint(model, &st, path);
    auto ck = load_checkpoint<T>(path);
    bool ok = ck.state && ck.state->opt.step == st.opt.step && ck.state->rng == st.rng;
    auto a = model.params(), b = ck.model.params();
    ok = ok && a.size() == b.size();
    for (std::size_t i = 0; ok && i < a.size(); ++i) {
        ok = a[i].name == b[i].name && same_bytes<T>(a[i].value, b[i].value) &&
             same_bytes<T>(st.opt.first.at(a[i].name), ck.state->opt.first.at(a[i].name)) &&
             same_bytes<T>(st.opt.second.at(a[i].name), ck.state->opt.second.at(a[i].name));
    }
    const auto probe = oracle::random_tensor(Shape{3, 1, 28, 28}, rng, 0.0, 1.0).template cast<T>();
    const auto ya = model.forward(probe), yb = ck.model.forward(probe);
    return ok && same_bytes<T>(ya.values(), yb.values());
}

Outcome reproducibility(const Options& o) {
    fs::create_directories(o.work_dir);
    const bool f32 = round_trip<float>(o.work_dir / "round_trip_f32.gock");
    const bool f64 = round_trip<double>(o.work_dir / "round_trip_f64.gock");
    auto sweep = [&](const std::string& name) {
        ExperimentConfig c;
        c.kind = "width-sweep";
        c.dtype = "f64";
        c.seeds = {0, 1};
        c.data.format = "toy";
        c.data.toy_samples = 32;
        c.sweep.widths = {4, 16};
        c.train.batch_size = 8;
        c.train.epochs = 20;
        c.train.lr = 1e-2;
        c.gates_enabled = false;
        c.output_dir = o.work_dir / name;
        std::ostringstream log;
        const auto r = run_experiment(c, log);
        std::ifstream in(c.output_dir / "width_sweep.csv");
        std::string csv{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        auto j = r.report ? r.report->to_json() : json();
        j.erase("timing");
        j["config"].erase("output_dir");
        return std::pair{csv, j.dump()};
    };
    const auto a = sweep("rerun_a"), b = sweep("rerun_b");
    const bool rerun = !a.first.empty() && a == b;
    return verdict(f32 && f64 && rerun, std::string("checkpoint round trip (params, optimizer moments, rng, outputs) f32 ") +
                                            (f32 ? "bit-exact" : "MISMATCH") + ", f64 " + (f64 ? "bit-exact" : "MISMATCH") +
                                            "; same-seed f64 rerun " + (rerun ? "bit-identical" : "DIFFERS"));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    Options o;
    std::vector<int> only;
    app.add_option("--mnist-dir", o.mnist_dir, "directory with the four MNIST IDX files");
    app.add_option("--work-dir", o.work_dir, "where experiment outputs are written");
    app.add_option("--only", only, "run only these criteria");
    CLI11_PARSE(app, argc, argv);
    o.only = {only.begin(), only.end()};

    int failed = 0;
    auto run = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
        if (!o.only.empty() && !o.only.count(id)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = f();
        } catch (const std::exception& e) {
            r = {Status::Fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        static const char* tags[] = {"PASS", "FAIL", "SKIP", "DECLARED"};
        std::cout << "[" << tags[int(r.status)] << "] " << id << ". " << name << ": " << r.detail << " ("
                  << fmt(secs, 3) << " s)" << std::endl;
        failed += r.status == Status::Fail;
    };

    const bool have_mnist = !o.mnist_dir.empty() && mnist_available(o);
    const Outcome no_mnist{Status::Skip, "MNIST IDX files not found in '" + o.mnist_dir.string() + "'"};
    std::optional<ExperimentReport> quick;

    run(1, "golden kernel values", golden_kernels);
    run(2, "generator Jacobians", jacobians);
    run(3, "end-to-end gradient", end_to_end_gradient);
    run(4, "convolution oracle", conv_oracle);
    run(5, "injectivity", injectivity);
    run(6, "parameter counts", parameter_counts);
    run(7, "MNIST quick run", [&] { return have_mnist ? mnist_quick(o, quick) : no_mnist; });
    run(8, "generalization swap", [&] { return have_mnist ? generalization(o) : no_mnist; });
    run(9, "adversarial stability", [&] {
        if (!have_mnist) return no_mnist;
        if (!quick) return Outcome{Status::Skip, "needs the criterion 7 checkpoints (run criterion 7 first)"};
        return adversarial(o, *quick);
    });
    run(10, "width sweep", [&] { return width_sweep(o); });
    run(11, "not reproducible at desk scale", [] {
        return Outcome{Status::Declared,
                       "ResNet CIFAR-10/100 accuracies and the fracture-diagnosis results are out of scope; "
                       "substituted by criteria 1-6, 10, 12 and the ungated cifar_small_directional config"};
    });
    run(12, "reproducibility", [&] { return reproducibility(o); });

    std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all criteria met")) << std::endl;
    return failed ? 1 : 0;
}
