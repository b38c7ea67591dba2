#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "modeset/csv_out.hpp"
#include "modeset/data.hpp"
#include "modeset/errors.hpp"
#include "modeset/explain.hpp"
#include "modeset/landscape.hpp"
#include "modeset/metrics.hpp"
#include "modeset/mlp.hpp"
#include "modeset/parallel.hpp"
#include "modeset/train.hpp"

namespace modeset {

inline constexpr const char* kToolVersion = "0.1.0";

// ---- configuration ------------------------------------------------------

struct DatasetConfig {
    std::string kind = "two_moons";  // "two_moons" or "csv"
    // two_moons
    std::size_t n = 1000;
    double noise = 0.1;
    // csv
    std::string path;
    SchemaConfig schema;
    // split / generation seed
    std::uint64_t seed = 1;
    std::string name = "two_moons";
};

struct CurveConfig {
    std::size_t samples = 10;
    SampleMode mode = SampleMode::grid;
};

struct ExplanationConfig {
    ExplainMethod method = ExplainMethod::saliency;
    double sigma = 0.1;       // smoothgrad input noise
    std::size_t samples = 50; // smoothgrad sample count
};

struct AblationConfig {
    std::size_t members = 24;
    std::vector<double> sigmas = {0.0, 0.05, 0.1, 0.2, 0.4};
    std::vector<std::size_t> layers = {1};
    std::vector<PerturbTarget> targets = {PerturbTarget::weights};
    std::vector<std::size_t> counts = {50};
    std::size_t k = 5;
};

struct ToyConfig {
    std::size_t grid = 100;
    std::size_t ensemble_size = 10;
    std::vector<Strategy> strategies = {Strategy::vanilla_average};
};

struct ExperimentConfig {
    DatasetConfig dataset;
    TrainConfig train{40, 0.01, 32, false};
    std::vector<std::size_t> hidden_dims = {128, 64, 16};
    std::size_t set_size = 32;
    double filter_threshold = 0.01;
    std::vector<std::size_t> ensemble_sizes = {1, 2, 4, 8, 16};
    std::vector<Strategy> strategies = {Strategy::vanilla_average, Strategy::vanilla_majority,
                                        Strategy::perturb, Strategy::connect,
                                        Strategy::combine};
    PerturbSpec perturb{1, PerturbTarget::weights, 0.1, 50, 0};
    CurveConfig curve;
    ExplanationConfig explanation;
    std::vector<MetricKind> metrics = {MetricKind::sa, MetricKind::ssa, MetricKind::cdc};
    std::vector<std::size_t> k_values = {5};
    std::size_t n_ensemble_sets = 10;  // E
    std::size_t eval_input_count = 200;
    std::uint64_t master_seed = 0;
    AblationConfig ablation;
    ToyConfig toy;
    bool dump_attributions = false;

    std::vector<std::size_t> layer_dims(std::size_t input_dim) const {
        std::vector<std::size_t> dims;
        dims.push_back(input_dim);
        dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
        dims.push_back(2);
        return dims;
    }
};

// Training hyperparameters from the per-dataset defaults table, and the
// matching first-layer perturbation settings.
inline void apply_dataset_preset(ExperimentConfig& cfg, const std::string& name) {
    struct Preset {
        TrainConfig train;
        PerturbSpec perturb;
    };
    static const std::map<std::string, Preset> presets = {
        {"two_moons", {{40, 0.01, 32, false}, {1, PerturbTarget::weights, 0.1, 50, 0}}},
        {"heloc", {{20, 0.0004, 32, false}, {1, PerturbTarget::weights, 0.2, 100, 0}}},
        {"german_credit", {{100, 0.004, 32, false}, {1, PerturbTarget::weights, 0.2, 50, 0}}},
        {"adult_income", {{40, 0.004, 128, false}, {1, PerturbTarget::weights, 0.3, 50, 0}}},
        {"default_credit", {{10, 0.0001, 128, false}, {1, PerturbTarget::biases, 0.5, 50, 0}}},
        {"gmsc", {{20, 0.0004, 32, false}, {1, PerturbTarget::biases, 0.05, 50, 0}}},
    };
    auto it = presets.find(name);
    if (it == presets.end()) return;
    cfg.train = it->second.train;
    cfg.perturb = it->second.perturb;
}

namespace detail {

inline PerturbTarget target_from_name(const std::string& s) {
    if (s == "weights") return PerturbTarget::weights;
    if (s == "biases") return PerturbTarget::biases;
    throw ConfigError("perturbation target must be 'weights' or 'biases'");
}

inline const char* target_name(PerturbTarget t) {
    return t == PerturbTarget::weights ? "weights" : "biases";
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
        cfg.dataset.name = d.value("name", cfg.dataset.kind);
        cfg.dataset.n = d.value("n", cfg.dataset.n);
        cfg.dataset.noise = d.value("noise", cfg.dataset.noise);
        cfg.dataset.seed = d.value("seed", cfg.dataset.seed);
        cfg.dataset.path = d.value("path", cfg.dataset.path);
        if (d.contains("schema")) {
            const auto& s = d.at("schema");
            for (const auto& f : s.value("features", nlohmann::json::array())) {
                FeatureConfig fc;
                fc.name = f.at("name").get<std::string>();
                std::string kind = f.value("kind", "continuous");
                if (kind != "continuous" && kind != "categorical")
                    throw ConfigError("feature kind must be continuous or categorical");
                fc.kind = kind == "continuous" ? FeatureKind::continuous
                                               : FeatureKind::categorical;
                cfg.dataset.schema.features.push_back(fc);
            }
            cfg.dataset.schema.label_column = s.value("label_column", std::string());
            cfg.dataset.schema.positive_values =
                s.value("positive_values", std::vector<std::string>{});
            std::string mp = s.value("missing_policy", "error");
            if (mp == "median") cfg.dataset.schema.missing_policy = MissingPolicy::median;
            else if (mp == "error") cfg.dataset.schema.missing_policy = MissingPolicy::error;
            else throw ConfigError("missing_policy must be 'error' or 'median'");
            cfg.dataset.schema.balance_50_50 = s.value("balance_50_50", false);
        }
    }
    apply_dataset_preset(cfg, cfg.dataset.name);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.shuffle_each_epoch = t.value("shuffle_each_epoch", cfg.train.shuffle_each_epoch);
    }
    cfg.hidden_dims = j.value("hidden_dims", cfg.hidden_dims);
    cfg.set_size = j.value("set_size", cfg.set_size);
    cfg.filter_threshold = j.value("filter_threshold", cfg.filter_threshold);
    cfg.ensemble_sizes = j.value("ensemble_sizes", cfg.ensemble_sizes);
    if (j.contains("strategies")) {
        cfg.strategies.clear();
        for (const auto& s : j.at("strategies"))
            cfg.strategies.push_back(strategy_from_name(s.get<std::string>()));
    }
    if (j.contains("perturb")) {
        const auto& p = j.at("perturb");
        cfg.perturb.layer_index = p.value("layer", cfg.perturb.layer_index);
        if (p.contains("target"))
            cfg.perturb.target = detail::target_from_name(p.at("target").get<std::string>());
        cfg.perturb.sigma = p.value("sigma", cfg.perturb.sigma);
        cfg.perturb.count = p.value("count", cfg.perturb.count);
    }
    if (j.contains("curve")) {
        const auto& c = j.at("curve");
        cfg.curve.samples = c.value("samples", cfg.curve.samples);
        std::string mode = c.value("mode", "grid");
        if (mode == "grid") cfg.curve.mode = SampleMode::grid;
        else if (mode == "uniform-random") cfg.curve.mode = SampleMode::uniform_random;
        else throw ConfigError("curve mode must be 'grid' or 'uniform-random'");
    }
    if (j.contains("explanation")) {
        const auto& e = j.at("explanation");
        std::string method = e.value("method", "saliency");
        if (method == "saliency") cfg.explanation.method = ExplainMethod::saliency;
        else if (method == "smoothgrad") cfg.explanation.method = ExplainMethod::smoothgrad;
        else throw ConfigError("explanation method must be 'saliency' or 'smoothgrad'");
        cfg.explanation.sigma = e.value("sigma", cfg.explanation.sigma);
        cfg.explanation.samples = e.value("samples", cfg.explanation.samples);
    }
    if (j.contains("metrics")) {
        cfg.metrics.clear();
        for (const auto& m : j.at("metrics"))
            cfg.metrics.push_back(metric_from_name(m.get<std::string>()));
    }
    cfg.k_values = j.value("k_values", cfg.k_values);
    cfg.n_ensemble_sets = j.value("n_ensemble_sets", cfg.n_ensemble_sets);
    cfg.eval_input_count = j.value("eval_input_count", cfg.eval_input_count);
    cfg.master_seed = j.value("master_seed", cfg.master_seed);
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        cfg.ablation.members = a.value("members", cfg.ablation.members);
        cfg.ablation.sigmas = a.value("sigmas", cfg.ablation.sigmas);
        cfg.ablation.layers = a.value("layers", cfg.ablation.layers);
        if (a.contains("targets")) {
            cfg.ablation.targets.clear();
            for (const auto& t : a.at("targets"))
                cfg.ablation.targets.push_back(detail::target_from_name(t.get<std::string>()));
        }
        cfg.ablation.counts = a.value("counts", cfg.ablation.counts);
        cfg.ablation.k = a.value("k", cfg.ablation.k);
    }
    if (j.contains("toy")) {
        const auto& t = j.at("toy");
        cfg.toy.grid = t.value("grid", cfg.toy.grid);
        cfg.toy.ensemble_size = t.value("ensemble_size", cfg.toy.ensemble_size);
        if (t.contains("strategies")) {
            cfg.toy.strategies.clear();
            for (const auto& s : t.at("strategies"))
                cfg.toy.strategies.push_back(strategy_from_name(s.get<std::string>()));
        }
    }
    cfg.dump_attributions = j.value("dump_attributions", cfg.dump_attributions);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed config: ") + e.what());
    }
    return parse_config(j);
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["dataset"] = {{"kind", cfg.dataset.kind}, {"name", cfg.dataset.name},
                    {"n", cfg.dataset.n},       {"noise", cfg.dataset.noise},
                    {"seed", cfg.dataset.seed}, {"path", cfg.dataset.path}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"learning_rate", cfg.train.learning_rate},
                  {"batch_size", cfg.train.batch_size},
                  {"shuffle_each_epoch", cfg.train.shuffle_each_epoch}};
    j["hidden_dims"] = cfg.hidden_dims;
    j["set_size"] = cfg.set_size;
    j["filter_threshold"] = cfg.filter_threshold;
    j["ensemble_sizes"] = cfg.ensemble_sizes;
    nlohmann::json strategies = nlohmann::json::array();
    for (Strategy s : cfg.strategies) strategies.push_back(strategy_name(s));
    j["strategies"] = strategies;
    j["perturb"] = {{"layer", cfg.perturb.layer_index},
                    {"target", detail::target_name(cfg.perturb.target)},
                    {"sigma", cfg.perturb.sigma},
                    {"count", cfg.perturb.count}};
    j["curve"] = {{"samples", cfg.curve.samples},
                  {"mode", cfg.curve.mode == SampleMode::grid ? "grid" : "uniform-random"}};
    j["explanation"] = {
        {"method", cfg.explanation.method == ExplainMethod::saliency ? "saliency" : "smoothgrad"},
        {"sigma", cfg.explanation.sigma},
        {"samples", cfg.explanation.samples}};
    nlohmann::json metrics = nlohmann::json::array();
    for (MetricKind m : cfg.metrics) metrics.push_back(metric_name(m));
    j["metrics"] = metrics;
    j["k_values"] = cfg.k_values;
    j["n_ensemble_sets"] = cfg.n_ensemble_sets;
    j["eval_input_count"] = cfg.eval_input_count;
    j["master_seed"] = cfg.master_seed;
    return j;
}

// FNV-1a over the canonical config dump.
inline std::string config_hash(const ExperimentConfig& cfg) {
    std::string s = config_to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline Dataset make_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind == "two_moons") {
        SeededRng rng(cfg.dataset.seed);
        return two_moons(cfg.dataset.n, cfg.dataset.noise, rng);
    }
    if (cfg.dataset.kind == "csv") {
        if (cfg.dataset.path.empty()) throw ConfigError("csv dataset needs a path");
        RawTable raw = load_csv(cfg.dataset.path, cfg.dataset.schema);
        return preprocess(raw, cfg.dataset.schema, cfg.dataset.seed);
    }
    throw ConfigError("unknown dataset kind '" + cfg.dataset.kind + "'");
}

// ---- run manifest -------------------------------------------------------

class RunManifest {
public:
    RunManifest(const ExperimentConfig& cfg, std::string out_dir)
        : out_dir_(std::move(out_dir)) {
        j_["tool_version"] = kToolVersion;
        j_["config_hash"] = config_hash(cfg);
        j_["config"] = config_to_json(cfg);
        j_["artifacts"] = nlohmann::json::array();
        j_["stages"] = nlohmann::json::array();
        std::filesystem::create_directories(out_dir_);
    }

    void add_artifact(const std::string& path) { j_["artifacts"].push_back(path); }

    void add_stage(const std::string& name, double seconds) {
        j_["stages"].push_back({{"name", name}, {"seconds", seconds}});
    }

    void note(const std::string& key, const nlohmann::json& value) { j_[key] = value; }

    void write() const {
        std::string path = out_dir_ + "/manifest.json";
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path);
        out << j_.dump(1) << '\n';
    }

    const std::string& out_dir() const { return out_dir_; }

private:
    std::string out_dir_;
    nlohmann::json j_;
};

class StageTimer {
public:
    StageTimer(RunManifest& m, std::string name)
        : manifest_(m), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        auto dt = std::chrono::steady_clock::now() - start_;
        manifest_.add_stage(name_, std::chrono::duration<double>(dt).count());
    }

private:
    RunManifest& manifest_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
};

// ---- train-set ----------------------------------------------------------

// Trains the underspecification set and writes one model file per seed
// plus set_manifest.json (seeds, accuracies, retained flags, config hash).
inline UnderspecSet run_train_set(const ExperimentConfig& cfg, const Dataset& data,
                                  RunManifest& manifest,
                                  const std::vector<std::uint64_t>& seeds,
                                  std::size_t workers = 1) {
    StageTimer timer(manifest, "train-set");
    UnderspecSet set = build_underspec_set(data, cfg.layer_dims(data.d), cfg.train, seeds,
                                           cfg.filter_threshold, workers);
    std::string dir = manifest.out_dir() + "/models";
    std::filesystem::create_directories(dir);
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : set.members) {
        std::string path = dir + "/model_" + std::to_string(m.seed) + ".json";
        save_model(m.model, path);
        manifest.add_artifact(path);
        members.push_back({{"seed", m.seed},
                           {"train_acc", m.train_acc},
                           {"test_acc", m.test_acc},
                           {"retained", m.retained},
                           {"path", path}});
    }
    nlohmann::json sm;
    sm["config_hash"] = config_hash(cfg);
    sm["filter_threshold"] = set.filter_threshold;
    sm["mean_test_acc"] = set.mean_test_acc;
    sm["members"] = members;
    std::string sm_path = manifest.out_dir() + "/set_manifest.json";
    std::ofstream out(sm_path);
    if (!out) throw IoError("cannot write " + sm_path);
    out << sm.dump(1) << '\n';
    manifest.add_artifact(sm_path);
    return set;
}

inline UnderspecSet run_train_set(const ExperimentConfig& cfg, const Dataset& data,
                                  RunManifest& manifest, std::size_t workers = 1) {
    std::vector<std::uint64_t> seeds(cfg.set_size);
    std::iota(seeds.begin(), seeds.end(), 0);
    return run_train_set(cfg, data, manifest, seeds, workers);
}

// Reloads a set written by run_train_set from its set_manifest.json.
inline UnderspecSet load_set(const std::string& set_manifest_path) {
    std::ifstream in(set_manifest_path);
    if (!in) throw IoError("cannot open " + set_manifest_path);
    nlohmann::json sm;
    try {
        in >> sm;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed set manifest: ") + e.what());
    }
    UnderspecSet set;
    set.filter_threshold = sm.value("filter_threshold", 0.01);
    set.mean_test_acc = sm.value("mean_test_acc", 0.0);
    for (const auto& m : sm.at("members")) {
        SetMember member;
        member.seed = m.at("seed").get<std::uint64_t>();
        member.train_acc = m.at("train_acc").get<double>();
        member.test_acc = m.at("test_acc").get<double>();
        member.retained = m.at("retained").get<bool>();
        member.model = load_model(m.at("path").get<std::string>());
        set.members.push_back(std::move(member));
    }
    if (set.members.empty()) throw ValidationError("set manifest has no members");
    return set;
}

// ---- curve cache --------------------------------------------------------

// Curves are keyed by their endpoint seeds so connect/combine runs at
// different n reuse the same trained curves.
class CurveCache {
public:
    CurveCache(const Dataset& data, const TrainConfig& train, std::uint64_t master_seed)
        : data_(data), train_(train), master_seed_(master_seed) {}

    const CurveParams& get(std::uint64_t seed_a, std::uint64_t seed_b, const Mlp& a,
                           const Mlp& b) {
        auto key = std::make_pair(seed_a, seed_b);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        SeededRng rng(derive_seed(master_seed_, seed_a * 0x1000193ULL + seed_b));
        CurveParams curve = train_curve_fixed(a, b, data_, train_, rng);
        return cache_.emplace(key, std::move(curve)).first->second;
    }

    std::size_t size() const { return cache_.size(); }

    const std::map<std::pair<std::uint64_t, std::uint64_t>, CurveParams>& all() const {
        return cache_;
    }

private:
    const Dataset& data_;
    TrainConfig train_;
    std::uint64_t master_seed_;
    std::map<std::pair<std::uint64_t, std::uint64_t>, CurveParams> cache_;
};

// ---- connect ------------------------------------------------------------

// Trains fixed-endpoint curves for consecutive retained member pairs and
// writes curve files plus a per-curve t/loss/accuracy profile CSV.
inline void run_connect(const ExperimentConfig& cfg, const Dataset& data,
                        const UnderspecSet& set, RunManifest& manifest) {
    StageTimer timer(manifest, "connect");
    std::vector<const SetMember*> retained;
    for (const auto& m : set.members)
        if (m.retained) retained.push_back(&m);
    if (retained.size() < 2) throw ConfigError("need >= 2 retained members to connect");

    std::string dir = manifest.out_dir() + "/curves";
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i + 1 < retained.size(); i += 2) {
        const SetMember& a = *retained[i];
        const SetMember& b = *retained[i + 1];
        SeededRng rng(derive_seed(cfg.master_seed, a.seed * 0x1000193ULL + b.seed));
        CurveParams curve = train_curve_fixed(a.model, b.model, data, cfg.train, rng);
        std::string stem =
            dir + "/curve_" + std::to_string(a.seed) + "_" + std::to_string(b.seed);
        save_curve(curve, stem + ".json");
        manifest.add_artifact(stem + ".json");

        CsvWriter profile(stem + "_profile.csv", {"t", "loss", "accuracy"});
        for (const auto& row : curve_loss_profile(curve, data, data.test_idx, 21))
            profile.write_row({format_double(row.t), format_double(row.loss),
                               format_double(row.accuracy)});
        manifest.add_artifact(stem + "_profile.csv");
    }
}

// ---- explanation helpers ------------------------------------------------

inline std::vector<std::size_t> eval_rows(const Dataset& data, std::size_t count) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.test_idx.size() && i < count; ++i)
        rows.push_back(data.test_idx[i]);
    if (rows.empty()) throw ConfigError("no evaluation inputs available");
    return rows;
}

// One explanation per eval row. Smoothgrad streams are derived from
// (seed, row index) so results do not depend on evaluation order.
inline std::vector<Explanation> explain_rows(const Predictor& p, const Dataset& data,
                                             const std::vector<std::size_t>& rows,
                                             const ExplanationConfig& ecfg,
                                             std::uint64_t seed) {
    std::vector<Explanation> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (ecfg.method == ExplainMethod::saliency) {
            out[i] = saliency(p, data.row(rows[i]), rows[i]);
        } else {
            SeededRng rng(derive_seed(seed, i));
            out[i] = smoothgrad(p, data.row(rows[i]), ecfg.sigma, ecfg.samples, rng, rows[i]);
        }
    }
    return out;
}

// Attribution dump: input_id, method, then one column per feature.
inline void write_attributions(const std::string& path,
                               const std::vector<Explanation>& explanations) {
    if (explanations.empty()) throw ConfigError("no explanations to write");
    std::vector<std::string> header = {"input_id", "method"};
    for (std::size_t j = 0; j < explanations.front().values.size(); ++j)
        header.push_back("feature_" + std::to_string(j + 1));
    CsvWriter out(path, header);
    for (const auto& e : explanations) {
        std::vector<std::string> row = {std::to_string(e.input_id),
                                        e.method == ExplainMethod::saliency ? "saliency"
                                                                            : "smoothgrad"};
        for (double v : e.values) row.push_back(format_double(v));
        out.write_row(row);
    }
}

// ---- ablation -----------------------------------------------------------

// Sigma/layer/target grid over perturbed models built from a sample of
// the retained set; emits SA spread and accuracy quartiles per point.
inline void run_ablation(const ExperimentConfig& cfg, const Dataset& data,
                         const UnderspecSet& set, RunManifest& manifest) {
    StageTimer timer(manifest, "ablate");
    std::vector<const SetMember*> retained;
    for (const auto& m : set.members)
        if (m.retained) retained.push_back(&m);
    if (retained.size() < cfg.ablation.members)
        throw ConfigError("ablation needs " + std::to_string(cfg.ablation.members) +
                          " retained members, have " + std::to_string(retained.size()));

    std::vector<std::size_t> order(retained.size());
    std::iota(order.begin(), order.end(), 0);
    SeededRng pick(derive_seed(cfg.master_seed, 0xab1a7e));
    pick.shuffle(order);
    order.resize(cfg.ablation.members);

    std::vector<std::size_t> rows = eval_rows(data, cfg.eval_input_count);
    std::string path = manifest.out_dir() + "/ablation.csv";
    CsvWriter out(path, {"layer", "target", "sigma", "m", "sa_median", "sa_p5", "sa_p95",
                         "acc_q1", "acc_median", "acc_q3"});

    for (std::size_t layer : cfg.ablation.layers) {
        for (PerturbTarget target : cfg.ablation.targets) {
            for (std::size_t m_count : cfg.ablation.counts) {
                for (double sigma : cfg.ablation.sigmas) {
                    std::vector<std::vector<Explanation>> tables(order.size());
                    std::vector<double> accs;
                    for (std::size_t mi = 0; mi < order.size(); ++mi) {
                        const SetMember& member = *retained[order[mi]];
                        PerturbSpec spec{layer, target, sigma, m_count,
                                         derive_seed(cfg.master_seed, member.seed)};
                        PerturbedModel pm = perturb_model(member.model, spec);
                        Predictor p{PredictorKind::perturbed, std::move(pm.variants)};
                        tables[mi] = explain_rows(p, data, rows, cfg.explanation,
                                                  derive_seed(cfg.master_seed, mi));
                        for (const auto& v : p.constituents)
                            accs.push_back(accuracy(v, data, data.test_idx));
                    }
                    PairwiseSummary s = pairwise_stats(tables, MetricKind::sa, cfg.ablation.k);
                    out.write_row({std::to_string(layer), detail::target_name(target),
                                   format_double(sigma), std::to_string(m_count),
                                   format_double(s.median), format_double(s.p5),
                                   format_double(s.p95), format_double(percentile(accs, 0.25)),
                                   format_double(percentile(accs, 0.5)),
                                   format_double(percentile(accs, 0.75))});
                }
            }
        }
    }
    manifest.add_artifact(path);
}

// ---- comparison ---------------------------------------------------------

struct ComparisonResult {
    // (strategy, n) -> metric/k -> summary, kept for programmatic use.
    struct Cell {
        Strategy strategy;
        std::size_t n = 0;
        MetricKind metric = MetricKind::sa;
        std::size_t k = 0;
        PairwiseSummary summary;
        double ensemble_acc_mean = 0.0;
    };
    std::vector<Cell> cells;

    const Cell* find(Strategy s, std::size_t n, MetricKind m, std::size_t k) const {
        for (const auto& c : cells)
            if (c.strategy == s && c.n == n && c.metric == m && c.k == k) return &c;
        return nullptr;
    }
};

// Strategy-comparison protocol: E non-overlapping member sets of size n
// drawn deterministically from the master seed, one composed ensemble
// per set, pairwise explanation agreement over all C(E,2) pairs.
inline ComparisonResult run_comparison(const ExperimentConfig& cfg, const Dataset& data,
                                       const UnderspecSet& set, RunManifest& manifest) {
    StageTimer timer(manifest, "compare");
    std::vector<const SetMember*> retained;
    for (const auto& m : set.members)
        if (m.retained) retained.push_back(&m);

    // One shuffle for the whole run; every (n, strategy) partitions the
    // same order consecutively, so the E sets are pairwise disjoint.
    std::vector<std::size_t> order(retained.size());
    std::iota(order.begin(), order.end(), 0);
    SeededRng pick(derive_seed(cfg.master_seed, 0xc0));
    pick.shuffle(order);

    const std::size_t E = cfg.n_ensemble_sets;
    if (E < 2) throw ConfigError("need at least 2 ensemble sets");
    std::vector<std::size_t> rows = eval_rows(data, cfg.eval_input_count);

    CurveCache curves(data, cfg.train, cfg.master_seed);
    std::string results_path = manifest.out_dir() + "/results.csv";
    std::string summary_path = manifest.out_dir() + "/summary.csv";
    CsvWriter results(results_path, {"dataset", "strategy", "n_pretrained", "metric", "k",
                                     "input_id", "mean_score"});
    CsvWriter summary(summary_path,
                      {"dataset", "strategy", "n_pretrained", "metric", "k", "median", "p5",
                       "p95", "mean", "std", "ensemble_acc_mean"});

    ComparisonResult result;
    for (std::size_t n : cfg.ensemble_sizes) {
        if (n * E > retained.size())
            throw ConfigError("n*E = " + std::to_string(n * E) +
                              " exceeds retained set size " + std::to_string(retained.size()));
        for (Strategy strategy : cfg.strategies) {
            const bool needs_pairs =
                strategy == Strategy::connect || strategy == Strategy::combine;
            if (needs_pairs && n % 2 != 0) continue;  // pairing impossible; skip this n

            std::vector<std::vector<Explanation>> tables(E);
            std::vector<double> accs(E);
            for (std::size_t e = 0; e < E; ++e) {
                std::vector<const Mlp*> members;
                std::vector<std::uint64_t> member_seeds;
                for (std::size_t i = 0; i < n; ++i) {
                    const SetMember& m = *retained[order[e * n + i]];
                    members.push_back(&m.model);
                    member_seeds.push_back(m.seed);
                }
                EnsembleParams params;
                params.perturb = cfg.perturb;
                params.curve_samples = cfg.curve.samples;
                params.sample_mode = cfg.curve.mode;
                params.seed = derive_seed(cfg.master_seed, 0xe0000 + e);
                std::vector<const CurveParams*> curve_ptrs;
                if (needs_pairs) {
                    for (std::size_t i = 0; i + 1 < n; i += 2)
                        curve_ptrs.push_back(&curves.get(
                            member_seeds[i], member_seeds[i + 1], *members[i], *members[i + 1]));
                    params.curves = curve_ptrs;
                }
                Predictor p = compose_ensemble(strategy, members, params);
                tables[e] = explain_rows(p, data, rows, cfg.explanation,
                                         derive_seed(cfg.master_seed, 0xf0000 + e));
                accs[e] = accuracy(
                    [&p](std::span<const double> x) {
                        if (p.kind == PredictorKind::majority) {
                            int label = predict_label(p, x);
                            return std::vector<double>{label == 0 ? 1.0 : 0.0,
                                                       label == 1 ? 1.0 : 0.0};
                        }
                        return predict_proba(p, x);
                    },
                    data, data.test_idx);
                if (cfg.dump_attributions) {
                    std::string dir = manifest.out_dir() + "/attributions";
                    std::filesystem::create_directories(dir);
                    std::string path = dir + "/" + std::string(strategy_name(strategy)) + "_n" +
                                       std::to_string(n) + "_set" + std::to_string(e) + ".csv";
                    write_attributions(path, tables[e]);
                    manifest.add_artifact(path);
                }
            }
            double acc_mean = 0.0;
            for (double a : accs) acc_mean += a;
            acc_mean /= static_cast<double>(E);

            for (MetricKind metric : cfg.metrics) {
                for (std::size_t k : cfg.k_values) {
                    PairwiseSummary s = pairwise_stats(tables, metric, k);
                    for (std::size_t i = 0; i < s.per_input_mean.size(); ++i)
                        results.write_row({cfg.dataset.name, strategy_name(strategy),
                                           std::to_string(n), metric_name(metric),
                                           std::to_string(k), std::to_string(s.input_ids[i]),
                                           format_double(s.per_input_mean[i])});
                    summary.write_row({cfg.dataset.name, strategy_name(strategy),
                                       std::to_string(n), metric_name(metric),
                                       std::to_string(k), format_double(s.median),
                                       format_double(s.p5), format_double(s.p95),
                                       format_double(s.mean), format_double(s.stddev),
                                       format_double(acc_mean)});
                    result.cells.push_back(
                        {strategy, n, metric, k, std::move(s), acc_mean});
                }
            }
        }
    }
    manifest.add_artifact(results_path);
    manifest.add_artifact(summary_path);
    manifest.note("curves_trained", curves.size());
    return result;
}

// ---- toy heatmap --------------------------------------------------------

struct ToyResult {
    // strategy name ("single" for the unensembled baseline) -> grid-averaged
    // mean pairwise angular difference.
    std::map<std::string, double> grid_average;
};

// Angular-disagreement heatmap over a rectangular grid covering the
// standardized data range, for single models and for E disjoint
// ensembles per configured strategy.
inline ToyResult run_toy(const ExperimentConfig& cfg, const Dataset& data,
                         const UnderspecSet& set, RunManifest& manifest) {
    StageTimer timer(manifest, "toy");
    if (data.d != 2) throw ConfigError("toy heatmaps need a 2-feature dataset");
    std::vector<const SetMember*> retained;
    for (const auto& m : set.members)
        if (m.retained) retained.push_back(&m);
    const std::size_t n_toy = cfg.toy.ensemble_size;
    const std::size_t E = retained.size() / n_toy;
    if (E < 2)
        throw ConfigError("toy run needs >= 2 disjoint ensembles of size " +
                          std::to_string(n_toy) + "; retained set too small");

    double xmin = data.X[0], xmax = data.X[0], ymin = data.X[1], ymax = data.X[1];
    for (std::size_t i = 0; i < data.n; ++i) {
        xmin = std::min(xmin, data.X[i * 2]);
        xmax = std::max(xmax, data.X[i * 2]);
        ymin = std::min(ymin, data.X[i * 2 + 1]);
        ymax = std::max(ymax, data.X[i * 2 + 1]);
    }

    const std::size_t G = cfg.toy.grid;
    if (G < 2) throw ConfigError("toy grid must be >= 2");

    // Member saliencies per grid cell are computed once; single-model and
    // vanilla-average disagreement both reduce to them.
    std::vector<std::size_t> order(retained.size());
    std::iota(order.begin(), order.end(), 0);
    SeededRng pick(derive_seed(cfg.master_seed, 0x703));
    pick.shuffle(order);

    std::string path = manifest.out_dir() + "/toy.csv";
    CsvWriter out(path, {"strategy", "x", "y", "mean_angle"});

    std::vector<std::string> names = {"single"};
    for (Strategy s : cfg.toy.strategies) names.push_back(strategy_name(s));

    // Pre-compose non-vanilla ensembles once (constituent lists are
    // input-independent).
    CurveCache curves(data, cfg.train, cfg.master_seed);
    std::map<std::string, std::vector<Predictor>> composed;
    for (Strategy s : cfg.toy.strategies) {
        if (s == Strategy::vanilla_average || s == Strategy::vanilla_majority) continue;
        std::vector<Predictor> preds;
        for (std::size_t e = 0; e < E; ++e) {
            std::vector<const Mlp*> members;
            std::vector<std::uint64_t> seeds;
            for (std::size_t i = 0; i < n_toy; ++i) {
                const SetMember& m = *retained[order[e * n_toy + i]];
                members.push_back(&m.model);
                seeds.push_back(m.seed);
            }
            EnsembleParams params;
            params.perturb = cfg.perturb;
            params.curve_samples = cfg.curve.samples;
            params.sample_mode = cfg.curve.mode;
            params.seed = derive_seed(cfg.master_seed, 0x70e + e);
            std::vector<const CurveParams*> curve_ptrs;
            if (s == Strategy::connect || s == Strategy::combine) {
                if (n_toy % 2 != 0)
                    throw ConfigError("toy connect/combine need an even ensemble size");
                for (std::size_t i = 0; i + 1 < n_toy; i += 2)
                    curve_ptrs.push_back(
                        &curves.get(seeds[i], seeds[i + 1], *members[i], *members[i + 1]));
                params.curves = curve_ptrs;
            }
            preds.push_back(compose_ensemble(s, members, params));
        }
        composed[strategy_name(s)] = std::move(preds);
    }

    ToyResult result;
    std::map<std::string, double> sums;
    std::map<std::string, std::size_t> counts;

    auto mean_pairwise_angle = [](const std::vector<std::vector<double>>& grads) {
        double sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < grads.size(); ++a)
            for (std::size_t b = a + 1; b < grads.size(); ++b) {
                double na = grads[a][0] * grads[a][0] + grads[a][1] * grads[a][1];
                double nb = grads[b][0] * grads[b][0] + grads[b][1] * grads[b][1];
                if (na == 0.0 || nb == 0.0) continue;  // dead-gradient cell
                double c = (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]) /
                           std::sqrt(na * nb);
                sum += std::acos(std::clamp(c, -1.0, 1.0));
                ++pairs;
            }
        return pairs ? sum / static_cast<double>(pairs) : 0.0;
    };

    std::vector<double> cell(2);
    for (std::size_t gi = 0; gi < G; ++gi) {
        cell[0] = xmin + (xmax - xmin) * static_cast<double>(gi) / static_cast<double>(G - 1);
        for (std::size_t gj = 0; gj < G; ++gj) {
            cell[1] =
                ymin + (ymax - ymin) * static_cast<double>(gj) / static_cast<double>(G - 1);

            std::vector<std::vector<double>> member_grads(retained.size());
            for (std::size_t mi = 0; mi < retained.size(); ++mi)
                member_grads[mi] = input_gradient(retained[mi]->model, cell, 1);

            for (const std::string& name : names) {
                double angle = 0.0;
                if (name == "single") {
                    angle = mean_pairwise_angle(member_grads);
                } else if (name == "vanilla-average" || name == "vanilla-majority") {
                    std::vector<std::vector<double>> ens(E, std::vector<double>(2, 0.0));
                    for (std::size_t e = 0; e < E; ++e) {
                        for (std::size_t i = 0; i < n_toy; ++i) {
                            const auto& g = member_grads[order[e * n_toy + i]];
                            ens[e][0] += g[0];
                            ens[e][1] += g[1];
                        }
                        ens[e][0] /= static_cast<double>(n_toy);
                        ens[e][1] /= static_cast<double>(n_toy);
                    }
                    angle = mean_pairwise_angle(ens);
                } else {
                    const auto& preds = composed.at(name);
                    std::vector<std::vector<double>> ens;
                    for (const auto& p : preds) ens.push_back(saliency(p, cell).values);
                    angle = mean_pairwise_angle(ens);
                }
                out.write_row({name, format_double(cell[0]), format_double(cell[1]),
                               format_double(angle)});
                sums[name] += angle;
                counts[name] += 1;
            }
        }
    }
    for (const auto& [name, sum] : sums)
        result.grid_average[name] = sum / static_cast<double>(counts[name]);
    manifest.add_artifact(path);
    nlohmann::json avg;
    for (const auto& [name, v] : result.grid_average) avg[name] = v;
    manifest.note("toy_grid_average", avg);
    return result;
}

}  // namespace modeset
