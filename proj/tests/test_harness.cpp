#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "modeset/harness.hpp"

using namespace modeset;
namespace fs = std::filesystem;

namespace {

// Small but complete configuration used by the end-to-end cases.
ExperimentConfig tiny_config() {
    nlohmann::json j = {
        {"dataset", {{"kind", "two_moons"}, {"name", "two_moons"}, {"n", 160}, {"noise", 0.1},
                     {"seed", 3}}},
        {"train", {{"epochs", 4}, {"learning_rate", 0.05}, {"batch_size", 16}}},
        {"hidden_dims", {8, 4}},
        {"set_size", 8},
        {"filter_threshold", 0.5},
        {"ensemble_sizes", {1, 2}},
        {"strategies", {"vanilla-average", "vanilla-majority", "perturb", "connect", "combine"}},
        {"perturb", {{"layer", 1}, {"target", "weights"}, {"sigma", 0.05}, {"count", 3}}},
        {"curve", {{"samples", 3}, {"mode", "grid"}}},
        {"k_values", {2}},
        {"n_ensemble_sets", 2},
        {"eval_input_count", 10},
        {"master_seed", 7},
        {"ablation",
         {{"members", 3}, {"sigmas", {0.0, 0.1}}, {"counts", {2}}, {"k", 2}}},
        {"toy", {{"grid", 4}, {"ensemble_size", 2},
                 {"strategies", {"vanilla-average", "perturb"}}}},
    };
    return parse_config(j);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(name) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("default config carries the documented values") {
    ExperimentConfig cfg = parse_config(nlohmann::json::object());
    REQUIRE(cfg.dataset.kind == "two_moons");
    REQUIRE(cfg.hidden_dims == std::vector<std::size_t>{128, 64, 16});
    REQUIRE(cfg.set_size == 32);
    REQUIRE(cfg.filter_threshold == 0.01);
    REQUIRE(cfg.train.epochs == 40);
    REQUIRE(cfg.train.learning_rate == 0.01);
    REQUIRE(cfg.train.batch_size == 32);
    REQUIRE_FALSE(cfg.train.shuffle_each_epoch);
    REQUIRE(cfg.perturb.sigma == 0.1);
    REQUIRE(cfg.perturb.count == 50);
    REQUIRE(cfg.k_values == std::vector<std::size_t>{5});
    REQUIRE(cfg.n_ensemble_sets == 10);
    REQUIRE(cfg.layer_dims(2) == std::vector<std::size_t>{2, 128, 64, 16, 2});
}

TEST_CASE("dataset presets pin training hyperparameters") {
    nlohmann::json j = {{"dataset", {{"kind", "csv"}, {"name", "heloc"}}}};
    ExperimentConfig cfg = parse_config(j);
    REQUIRE(cfg.train.epochs == 20);
    REQUIRE(cfg.train.learning_rate == 0.0004);
    REQUIRE(cfg.train.batch_size == 32);
    REQUIRE(cfg.perturb.sigma == 0.2);
    REQUIRE(cfg.perturb.count == 100);

    nlohmann::json j2 = {{"dataset", {{"kind", "csv"}, {"name", "gmsc"}}}};
    ExperimentConfig cfg2 = parse_config(j2);
    REQUIRE(cfg2.perturb.target == PerturbTarget::biases);
    REQUIRE(cfg2.perturb.sigma == 0.05);

    // Explicit train keys still override a preset.
    nlohmann::json j3 = {{"dataset", {{"kind", "csv"}, {"name", "heloc"}}},
                         {"train", {{"epochs", 3}}}};
    REQUIRE(parse_config(j3).train.epochs == 3);
}

TEST_CASE("bad config values are rejected") {
    REQUIRE_THROWS_AS(parse_config({{"strategies", {"nope"}}}), ConfigError);
    REQUIRE_THROWS_AS(parse_config({{"curve", {{"mode", "spiral"}}}}), ConfigError);
    REQUIRE_THROWS_AS(parse_config({{"explanation", {{"method", "shap"}}}}), ConfigError);
    REQUIRE_THROWS_AS(parse_config({{"metrics", {"rmse"}}}), MetricError);
    REQUIRE_THROWS_AS(parse_config({{"perturb", {{"target", "everything"}}}}), ConfigError);
}

TEST_CASE("config hash is stable and sensitive") {
    ExperimentConfig a = tiny_config();
    ExperimentConfig b = tiny_config();
    REQUIRE(config_hash(a) == config_hash(b));
    b.master_seed += 1;
    REQUIRE(config_hash(a) != config_hash(b));
    REQUIRE(config_hash(a).size() == 16);
}

TEST_CASE("train-set stage writes models and a set manifest") {
    ExperimentConfig cfg = tiny_config();
    Dataset data = make_dataset(cfg);
    TempDir dir("harness_out_train");
    RunManifest manifest(cfg, dir.path.string());
    UnderspecSet set = run_train_set(cfg, data, manifest);
    manifest.write();

    REQUIRE(set.members.size() == 8);
    REQUIRE(fs::exists(dir.path / "set_manifest.json"));
    REQUIRE(fs::exists(dir.path / "manifest.json"));
    for (const auto& m : set.members)
        REQUIRE(fs::exists(dir.path / "models" / ("model_" + std::to_string(m.seed) + ".json")));

    // Roundtrip through load_set.
    UnderspecSet loaded = load_set((dir.path / "set_manifest.json").string());
    REQUIRE(loaded.members.size() == set.members.size());
    for (std::size_t i = 0; i < set.members.size(); ++i) {
        REQUIRE(loaded.members[i].seed == set.members[i].seed);
        REQUIRE(loaded.members[i].model.weights == set.members[i].model.weights);
        REQUIRE(loaded.members[i].retained == set.members[i].retained);
        REQUIRE(loaded.members[i].test_acc == set.members[i].test_acc);
    }

    nlohmann::json mj;
    std::ifstream(dir.path / "manifest.json") >> mj;
    REQUIRE(mj.at("tool_version") == kToolVersion);
    REQUIRE(mj.at("config_hash") == config_hash(cfg));
    REQUIRE(mj.at("stages").size() == 1);
}

TEST_CASE("connect stage writes curve files with 21-point profiles") {
    ExperimentConfig cfg = tiny_config();
    Dataset data = make_dataset(cfg);
    TempDir dir("harness_out_connect");
    RunManifest manifest(cfg, dir.path.string());
    UnderspecSet set = run_train_set(cfg, data, manifest);
    run_connect(cfg, data, set, manifest);
    manifest.write();

    std::size_t n_curves = 0;
    for (const auto& entry : fs::directory_iterator(dir.path / "curves")) {
        std::string name = entry.path().filename().string();
        if (name.ends_with("_profile.csv")) {
            std::string text = slurp(entry.path());
            std::size_t lines = std::count(text.begin(), text.end(), '\n');
            REQUIRE(lines == 22);  // header plus 21 grid points
            REQUIRE(text.rfind("t,loss,accuracy", 0) == 0);
        } else {
            CurveParams curve = load_curve(entry.path().string());
            REQUIRE_FALSE(curve.endpoints_trainable);
            ++n_curves;
        }
    }
    REQUIRE(n_curves == set.retained_count() / 2);
}

TEST_CASE("comparison stage emits aligned results and summary tables") {
    ExperimentConfig cfg = tiny_config();
    Dataset data = make_dataset(cfg);
    TempDir dir("harness_out_compare");
    RunManifest manifest(cfg, dir.path.string());
    UnderspecSet set = run_train_set(cfg, data, manifest);
    ComparisonResult result = run_comparison(cfg, data, set, manifest);
    manifest.write();

    std::string results = slurp(dir.path / "results.csv");
    std::string summary = slurp(dir.path / "summary.csv");
    REQUIRE(results.rfind("dataset,strategy,n_pretrained,metric,k,input_id,mean_score", 0) == 0);
    REQUIRE(summary.rfind(
                "dataset,strategy,n_pretrained,metric,k,median,p5,p95,mean,std,ensemble_acc_mean",
                0) == 0);

    // n=1: 3 strategies (pairing ones skip); n=2: all 5. 3 metrics, 1 k.
    REQUIRE(result.cells.size() == (3 + 5) * 3);
    const auto* cell = result.find(Strategy::vanilla_average, 2, MetricKind::sa, 2);
    REQUIRE(cell != nullptr);
    REQUIRE(cell->summary.per_input_mean.size() == 10);
    for (double v : cell->summary.per_input_mean) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    REQUIRE(cell->ensemble_acc_mean >= 0.0);
    REQUIRE(cell->ensemble_acc_mean <= 1.0);
    REQUIRE(result.find(Strategy::connect, 1, MetricKind::sa, 2) == nullptr);

    // Row counts: results has one row per (cell, input).
    std::size_t result_lines = std::count(results.begin(), results.end(), '\n');
    REQUIRE(result_lines == 1 + result.cells.size() * 10);
}

TEST_CASE("comparison rejects an undersized retained pool") {
    ExperimentConfig cfg = tiny_config();
    cfg.ensemble_sizes = {8};  // 8*2 > 8 trained models
    Dataset data = make_dataset(cfg);
    TempDir dir("harness_out_undersized");
    RunManifest manifest(cfg, dir.path.string());
    UnderspecSet set = run_train_set(cfg, data, manifest);
    REQUIRE_THROWS_AS(run_comparison(cfg, data, set, manifest), ConfigError);
}

TEST_CASE("identical runs produce byte-identical outputs") {
    ExperimentConfig cfg = tiny_config();
    Dataset data = make_dataset(cfg);
    TempDir d1("harness_out_rep1"), d2("harness_out_rep2");
    for (const TempDir* dir : {&d1, &d2}) {
        RunManifest manifest(cfg, dir->path.string());
        UnderspecSet set = run_train_set(cfg, data, manifest);
        run_comparison(cfg, data, set, manifest);
        manifest.write();
    }
    REQUIRE(slurp(d1.path / "results.csv") == slurp(d2.path / "results.csv"));
    REQUIRE(slurp(d1.path / "summary.csv") == slurp(d2.path / "summary.csv"));
    REQUIRE(slurp(d1.path / "models" / "model_0.json") ==
            slurp(d2.path / "models" / "model_0.json"));
}

TEST_CASE("ablation stage sweeps the sigma grid") {
    ExperimentConfig cfg = tiny_config();
    Dataset data = make_dataset(cfg);
    TempDir dir("harness_out_ablate");
    RunManifest manifest(cfg, dir.path.string());
    UnderspecSet set = run_train_set(cfg, data, manifest);
    run_ablation(cfg, data, set, manifest);
    manifest.write();

    std::string text = slurp(dir.path / "ablation.csv");
    REQUIRE(text.rfind("layer,target,sigma,m,sa_median,sa_p5,sa_p95,acc_q1,acc_median,acc_q3",
                       0) == 0);
    std::size_t lines = std::count(text.begin(), text.end(), '\n');
    REQUIRE(lines == 1 + 2);  // two sigma values, one layer/target/count each
    // Zero-sigma perturbations of one model agree with themselves exactly.
    REQUIRE(text.find("weights,0,2,") != std::string::npos);
}

TEST_CASE("toy stage writes a per-strategy heatmap") {
    ExperimentConfig cfg = tiny_config();
    Dataset data = make_dataset(cfg);
    TempDir dir("harness_out_toy");
    RunManifest manifest(cfg, dir.path.string());
    UnderspecSet set = run_train_set(cfg, data, manifest);
    ToyResult toy = run_toy(cfg, data, set, manifest);
    manifest.write();

    std::string text = slurp(dir.path / "toy.csv");
    REQUIRE(text.rfind("strategy,x,y,mean_angle", 0) == 0);
    REQUIRE(toy.grid_average.count("single") == 1);
    REQUIRE(toy.grid_average.count("vanilla-average") == 1);
    REQUIRE(toy.grid_average.count("perturb") == 1);
    for (const auto& [name, v] : toy.grid_average) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= std::acos(-1.0));
    }
    std::size_t lines = std::count(text.begin(), text.end(), '\n');
    REQUIRE(lines == 1 + 3 * 4 * 4);  // three strategy rows per grid cell
}

TEST_CASE("attribution dumps cover every eval input") {
    ExperimentConfig cfg = tiny_config();
    cfg.dump_attributions = true;
    cfg.ensemble_sizes = {2};
    cfg.strategies = {Strategy::vanilla_average};
    Dataset data = make_dataset(cfg);
    TempDir dir("harness_out_attr");
    RunManifest manifest(cfg, dir.path.string());
    UnderspecSet set = run_train_set(cfg, data, manifest);
    run_comparison(cfg, data, set, manifest);
    manifest.write();

    fs::path attr = dir.path / "attributions" / "vanilla-average_n2_set0.csv";
    REQUIRE(fs::exists(attr));
    std::string text = slurp(attr);
    REQUIRE(text.rfind("input_id,method,feature_1,feature_2", 0) == 0);
    REQUIRE(std::count(text.begin(), text.end(), '\n') == 1 + 10);
}
