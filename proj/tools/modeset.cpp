// Experiment CLI: builds seed-varied model sets, trains mode-connectivity
// curves, and runs the perturbation-ablation, strategy-comparison, and
// two-moons heatmap pipelines. All outputs land under --out with a
// manifest.json describing the run.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "modeset/harness.hpp"

namespace {

// Seed lists: "0..31" (inclusive range) or "1,5,9".
std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
    std::vector<std::uint64_t> seeds;
    auto range_pos = spec.find("..");
    if (range_pos != std::string::npos) {
        std::uint64_t lo = std::stoull(spec.substr(0, range_pos));
        std::uint64_t hi = std::stoull(spec.substr(range_pos + 2));
        if (hi < lo) throw modeset::ConfigError("descending seed range: " + spec);
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::size_t start = 0;
    while (start <= spec.size()) {
        auto comma = spec.find(',', start);
        std::string tok = spec.substr(start, comma - start);
        if (!tok.empty()) seeds.push_back(std::stoull(tok));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (seeds.empty()) throw modeset::ConfigError("empty seed list: " + spec);
    return seeds;
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::int64_t seed = -1;  // overrides config master_seed when >= 0
    std::size_t workers = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file (JSON)");
    cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_option("--seed", args.seed, "master seed override");
    cmd->add_option("--workers", args.workers, "parallel workers");
}

modeset::ExperimentConfig resolve_config(const CommonArgs& args) {
    modeset::ExperimentConfig cfg = args.config_path.empty()
                                        ? modeset::parse_config(nlohmann::json::object())
                                        : modeset::load_config(args.config_path);
    if (args.seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(args.seed);
    return cfg;
}

// Loads a previously trained set when --set is given, otherwise trains
// one into the output directory.
modeset::UnderspecSet obtain_set(const modeset::ExperimentConfig& cfg,
                                 const modeset::Dataset& data, modeset::RunManifest& manifest,
                                 const std::string& set_path, std::size_t workers) {
    if (!set_path.empty()) return modeset::load_set(set_path);
    return modeset::run_train_set(cfg, data, manifest, workers);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"underspecification-set ensembling experiments"};
    app.require_subcommand(1);

    CommonArgs train_args, connect_args, ablate_args, compare_args, toy_args;
    std::string seeds_spec, pairs_manifest, connect_set, ablate_set, compare_set, toy_set;

    CLI::App* train_cmd = app.add_subcommand("train-set", "train the seed-varied model set");
    add_common(train_cmd, train_args);
    train_cmd->add_option("--seeds", seeds_spec, "seed list, e.g. 0..31 or 1,5,9");

    CLI::App* connect_cmd =
        app.add_subcommand("connect", "train mode-connectivity curves between set members");
    add_common(connect_cmd, connect_args);
    connect_cmd->add_option("--pairs", pairs_manifest,
                            "set_manifest.json of the trained set to pair up");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "sigma/layer perturbation ablation");
    add_common(ablate_cmd, ablate_args);
    ablate_cmd->add_option("--set", ablate_set, "reuse a trained set_manifest.json");

    CLI::App* compare_cmd = app.add_subcommand("compare", "ensemble strategy comparison");
    add_common(compare_cmd, compare_args);
    compare_cmd->add_option("--set", compare_set, "reuse a trained set_manifest.json");

    CLI::App* toy_cmd = app.add_subcommand("toy", "angular-difference heatmap grid");
    add_common(toy_cmd, toy_args);
    toy_cmd->add_option("--set", toy_set, "reuse a trained set_manifest.json");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            auto cfg = resolve_config(train_args);
            modeset::Dataset data = modeset::make_dataset(cfg);
            modeset::RunManifest manifest(cfg, train_args.out_dir);
            if (seeds_spec.empty()) {
                modeset::run_train_set(cfg, data, manifest, train_args.workers);
            } else {
                modeset::run_train_set(cfg, data, manifest, parse_seeds(seeds_spec),
                                       train_args.workers);
            }
            manifest.write();
        } else if (connect_cmd->parsed()) {
            auto cfg = resolve_config(connect_args);
            modeset::Dataset data = modeset::make_dataset(cfg);
            modeset::RunManifest manifest(cfg, connect_args.out_dir);
            modeset::UnderspecSet set =
                obtain_set(cfg, data, manifest, pairs_manifest, connect_args.workers);
            modeset::run_connect(cfg, data, set, manifest);
            manifest.write();
        } else if (ablate_cmd->parsed()) {
            auto cfg = resolve_config(ablate_args);
            modeset::Dataset data = modeset::make_dataset(cfg);
            modeset::RunManifest manifest(cfg, ablate_args.out_dir);
            modeset::UnderspecSet set =
                obtain_set(cfg, data, manifest, ablate_set, ablate_args.workers);
            modeset::run_ablation(cfg, data, set, manifest);
            manifest.write();
        } else if (compare_cmd->parsed()) {
            auto cfg = resolve_config(compare_args);
            modeset::Dataset data = modeset::make_dataset(cfg);
            modeset::RunManifest manifest(cfg, compare_args.out_dir);
            modeset::UnderspecSet set =
                obtain_set(cfg, data, manifest, compare_set, compare_args.workers);
            modeset::run_comparison(cfg, data, set, manifest);
            manifest.write();
        } else if (toy_cmd->parsed()) {
            auto cfg = resolve_config(toy_args);
            modeset::Dataset data = modeset::make_dataset(cfg);
            modeset::RunManifest manifest(cfg, toy_args.out_dir);
            modeset::UnderspecSet set =
                obtain_set(cfg, data, manifest, toy_set, toy_args.workers);
            modeset::run_toy(cfg, data, set, manifest);
            manifest.write();
        }
    } catch (const modeset::Error& e) {
        nlohmann::json err = {{"error", e.kind()}, {"message", e.what()}};
        std::cerr << err.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json err = {{"error", "internal"}, {"message", e.what()}};
        std::cerr << err.dump() << '\n';
        return 1;
    }
    return 0;
}
