// Command-line front end for the experiment harness.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "goconv/experiments.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        const auto v = std::stoull(item, &used);
        if (used != item.size()) {
            throw std::invalid_argument("bad seed '" + item + "'");
        }
        seeds.push_back(v);
    }
    if (seeds.empty()) {
        throw std::invalid_argument("--seeds is empty");
    }
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Geometric-operator convolution experiments"};
    app.require_subcommand(1);

    std::string config, out, seeds, dtype;
    bool quick = false;
    for (const auto& name : goconv::experiment_kinds()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory (overrides output_dir)");
        sub->add_option("--seeds", seeds, "comma-separated seed list (overrides seeds)");
        sub->add_option("--dtype", dtype, "element type")->check(CLI::IsMember({"f32", "f64"}));
        sub->add_flag("--quick", quick, "10k stratified training subset, 2 epochs");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    goconv::CommandOptions opt;
    opt.config_path = config;
    opt.quick = quick;
    if (!out.empty()) opt.out = out;
    if (!dtype.empty()) opt.dtype = dtype;
    if (!seeds.empty()) {
        try {
            opt.seeds = parse_seeds(seeds);
        } catch (const std::exception& e) {
            std::cerr << "config error: --seeds: " << e.what() << '\n';
            return 2;
        }
    }
    const auto outcome = goconv::run_command(app.get_subcommands().front()->get_name(), opt, std::cerr);
    return outcome.exit_code;
}
