#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "modeset/errors.hpp"
#include "modeset/landscape.hpp"
#include "modeset/mlp.hpp"
#include "modeset/rng.hpp"

namespace modeset {

enum class PredictorKind { single, perturbed, curve_sampled, average, majority };

// A composed predictor over a flat list of constituent models.
// Probability output is the arithmetic mean of the constituent softmax
// outputs; the majority kind predicts by argmax vote instead.
struct Predictor {
    PredictorKind kind = PredictorKind::single;
    std::vector<Mlp> constituents;

    void validate() const {
        if (constituents.empty()) throw ConfigError("predictor has no constituents");
        for (const auto& m : constituents)
            if (!m.same_architecture(constituents.front()))
                throw ShapeError("predictor constituents differ in architecture");
    }
};

enum class ExplainMethod { saliency, smoothgrad };

// Per-feature attribution for one input, always w.r.t. the positive class.
struct Explanation {
    std::vector<double> values;
    ExplainMethod method = ExplainMethod::saliency;
    int target_class = 1;
    std::size_t input_id = 0;
};

inline std::vector<double> predict_proba(const Predictor& p, std::span<const double> x) {
    p.validate();
    std::vector<double> mean = forward(p.constituents.front(), x);
    for (std::size_t i = 1; i < p.constituents.size(); ++i) {
        std::vector<double> q = forward(p.constituents[i], x);
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += q[j];
    }
    for (double& v : mean) v /= static_cast<double>(p.constituents.size());
    return mean;
}

// Class label. Average kinds take the argmax of the mean probability;
// the majority kind votes per constituent. Ties resolve to class 0.
inline int predict_label(const Predictor& p, std::span<const double> x) {
    p.validate();
    if (p.kind == PredictorKind::majority) {
        std::size_t votes1 = 0;
        for (const auto& m : p.constituents) {
            std::vector<double> q = forward(m, x);
            if (q[1] > q[0]) ++votes1;
        }
        return 2 * votes1 > p.constituents.size() ? 1 : 0;
    }
    std::vector<double> q = predict_proba(p, x);
    return q[1] > q[0] ? 1 : 0;
}

// Gradient of the predictor's mean positive-class probability w.r.t. the
// input: the mean of the constituent input gradients (exact, by
// linearity of differentiation). Majority predictors use the same mean
// attribution; only their prediction rule differs.
inline Explanation saliency(const Predictor& p, std::span<const double> x,
                            std::size_t input_id = 0) {
    p.validate();
    Explanation e;
    e.method = ExplainMethod::saliency;
    e.input_id = input_id;
    e.values = input_gradient(p.constituents.front(), x, 1);
    for (std::size_t i = 1; i < p.constituents.size(); ++i) {
        std::vector<double> g = input_gradient(p.constituents[i], x, 1);
        for (std::size_t j = 0; j < e.values.size(); ++j) e.values[j] += g[j];
    }
    const double inv = 1.0 / static_cast<double>(p.constituents.size());
    for (double& v : e.values) v *= inv;
    return e;
}

// Mean saliency over n_samples Gaussian input perturbations. sigma_in=0
// short-circuits to plain saliency (bit-exact, no rng consumption).
inline Explanation smoothgrad(const Predictor& p, std::span<const double> x, double sigma_in,
                              std::size_t n_samples, SeededRng& rng,
                              std::size_t input_id = 0) {
    if (!(sigma_in >= 0.0)) throw ConfigError("smoothgrad sigma must be >= 0");
    if (n_samples < 1) throw ConfigError("smoothgrad needs >= 1 sample");
    if (sigma_in == 0.0) {
        Explanation e = saliency(p, x, input_id);
        e.method = ExplainMethod::smoothgrad;
        return e;
    }
    p.validate();
    Explanation e;
    e.method = ExplainMethod::smoothgrad;
    e.input_id = input_id;
    e.values.assign(x.size(), 0.0);
    std::vector<double> noisy(x.size());
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (std::size_t j = 0; j < x.size(); ++j) noisy[j] = x[j] + rng.normal(0.0, sigma_in);
        Explanation g = saliency(p, noisy);
        for (std::size_t j = 0; j < e.values.size(); ++j) e.values[j] += g.values[j];
    }
    const double inv = 1.0 / static_cast<double>(n_samples);
    for (double& v : e.values) v *= inv;
    return e;
}

enum class Strategy { vanilla_average, vanilla_majority, perturb, connect, combine };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::vanilla_average: return "vanilla-average";
        case Strategy::vanilla_majority: return "vanilla-majority";
        case Strategy::perturb: return "perturb";
        case Strategy::connect: return "connect";
        case Strategy::combine: return "combine";
    }
    throw ConfigError("unknown strategy");
}

inline Strategy strategy_from_name(const std::string& name) {
    if (name == "vanilla-average") return Strategy::vanilla_average;
    if (name == "vanilla-majority") return Strategy::vanilla_majority;
    if (name == "perturb") return Strategy::perturb;
    if (name == "connect") return Strategy::connect;
    if (name == "combine") return Strategy::combine;
    throw ConfigError("unknown strategy '" + name + "'");
}

// Parameters for composing ensembles. Curves must be supplied for the
// connect/combine strategies (one per consecutive member pair).
struct EnsembleParams {
    PerturbSpec perturb;                  // perturb/combine
    std::size_t curve_samples = 10;       // connect/combine
    SampleMode sample_mode = SampleMode::grid;
    std::vector<const CurveParams*> curves;
    std::uint64_t seed = 0;               // drives perturbation/sampling streams
};

// Flattens a strategy over n members into a Predictor:
//   vanilla:  the members themselves
//   perturb:  all n*m perturbation variants
//   connect:  s curve samples per each of the n/2 curves
//   combine:  m perturbations of every curve sample, (n/2)*s*m total
inline Predictor compose_ensemble(Strategy strategy, const std::vector<const Mlp*>& members,
                                  const EnsembleParams& params) {
    if (members.empty()) throw ConfigError("ensemble needs at least one member");
    Predictor p;
    switch (strategy) {
        case Strategy::vanilla_average:
        case Strategy::vanilla_majority: {
            p.kind = strategy == Strategy::vanilla_majority ? PredictorKind::majority
                                                            : PredictorKind::average;
            if (members.size() == 1) p.kind = PredictorKind::single;
            for (const Mlp* m : members) p.constituents.push_back(*m);
            break;
        }
        case Strategy::perturb: {
            p.kind = PredictorKind::perturbed;
            for (std::size_t i = 0; i < members.size(); ++i) {
                PerturbSpec spec = params.perturb;
                spec.rng_seed = derive_seed(params.seed, i);
                PerturbedModel pm = perturb_model(*members[i], spec);
                for (auto& v : pm.variants) p.constituents.push_back(std::move(v));
            }
            break;
        }
        case Strategy::connect:
        case Strategy::combine: {
            if (members.size() % 2 != 0)
                throw ConfigError("connect/combine need an even member count for pairing");
            const std::size_t n_pairs = members.size() / 2;
            if (params.curves.size() != n_pairs)
                throw ConfigError("expected " + std::to_string(n_pairs) + " curves, got " +
                                  std::to_string(params.curves.size()));
            p.kind = PredictorKind::curve_sampled;
            for (std::size_t c = 0; c < n_pairs; ++c) {
                SeededRng sample_rng(derive_seed(params.seed, c));
                std::vector<Mlp> samples = sample_curve(*params.curves[c], params.curve_samples,
                                                        params.sample_mode, sample_rng);
                if (strategy == Strategy::connect) {
                    for (auto& s : samples) p.constituents.push_back(std::move(s));
                } else {
                    for (std::size_t s = 0; s < samples.size(); ++s) {
                        PerturbSpec spec = params.perturb;
                        spec.rng_seed = derive_seed(params.seed, (c + 1) * 1000003 + s);
                        PerturbedModel pm = perturb_model(samples[s], spec);
                        for (auto& v : pm.variants) p.constituents.push_back(std::move(v));
                    }
                }
            }
            break;
        }
    }
    p.validate();
    return p;
}

}  // namespace modeset
