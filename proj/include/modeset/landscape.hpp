#pragma once

#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "modeset/data.hpp"
#include "modeset/errors.hpp"
#include "modeset/mlp.hpp"
#include "modeset/rng.hpp"
#include "modeset/train.hpp"

namespace modeset {

enum class PerturbTarget { weights, biases };

// Gaussian perturbation of one layer tensor. layer_index is 1-based:
// layer 1 is the tensor between the input and the first hidden layer.
struct PerturbSpec {
    std::size_t layer_index = 1;
    PerturbTarget target = PerturbTarget::weights;
    double sigma = 0.0;
    std::size_t count = 1;
    std::uint64_t rng_seed = 0;

    void validate_for(const Mlp& base) const {
        if (layer_index < 1 || layer_index > base.num_layers())
            throw ConfigError("perturbation layer " + std::to_string(layer_index) +
                              " out of range for a " + std::to_string(base.num_layers()) +
                              "-layer model");
        if (!(sigma >= 0.0) || !std::isfinite(sigma))
            throw ConfigError("perturbation sigma must be finite and >= 0");
        if (count < 1) throw ConfigError("perturbation count must be >= 1");
    }
};

struct PerturbedModel {
    Mlp base;
    std::vector<Mlp> variants;
    PerturbSpec spec;
};

// m i.i.d. N(0, sigma^2) perturbations of the targeted tensor, all other
// tensors bit-identical to the base.
inline PerturbedModel perturb_model(const Mlp& base, const PerturbSpec& spec) {
    spec.validate_for(base);
    PerturbedModel pm{base, {}, spec};
    SeededRng rng(spec.rng_seed);
    const std::size_t l = spec.layer_index - 1;
    pm.variants.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        Mlp v = base;
        std::vector<double>& tensor =
            (spec.target == PerturbTarget::weights) ? v.weights[l] : v.biases[l];
        for (double& p : tensor) p += rng.normal(0.0, spec.sigma);
        pm.variants.push_back(std::move(v));
    }
    return pm;
}

// Quadratic Bezier curve in weight space with trainable bend theta.
struct CurveParams {
    Mlp w1;
    Mlp w2;
    Mlp theta;
    bool endpoints_trainable = false;

    void validate() const {
        if (!w1.same_architecture(w2) || !w1.same_architecture(theta))
            throw ShapeError("curve endpoints and bend must share one architecture");
    }
};

// phi(t) = (1-t)^2 w1 + 2t(1-t) theta + t^2 w2, evaluated per parameter.
inline Mlp bezier_point(const CurveParams& curve, double t) {
    curve.validate();
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("bezier t must lie in [0,1]");
    const double c1 = (1.0 - t) * (1.0 - t);
    const double ct = 2.0 * t * (1.0 - t);
    const double c2 = t * t;
    Mlp out = curve.w1;
    for (std::size_t l = 0; l < out.num_layers(); ++l) {
        for (std::size_t i = 0; i < out.weights[l].size(); ++i)
            out.weights[l][i] = c1 * curve.w1.weights[l][i] +
                                ct * curve.theta.weights[l][i] +
                                c2 * curve.w2.weights[l][i];
        for (std::size_t i = 0; i < out.biases[l].size(); ++i)
            out.biases[l][i] = c1 * curve.w1.biases[l][i] +
                               ct * curve.theta.biases[l][i] +
                               c2 * curve.w2.biases[l][i];
    }
    return out;
}

inline Mlp midpoint(const Mlp& a, const Mlp& b) {
    if (!a.same_architecture(b)) throw ShapeError("architecture mismatch in midpoint");
    Mlp out = a;
    for (std::size_t l = 0; l < out.num_layers(); ++l) {
        for (std::size_t i = 0; i < out.weights[l].size(); ++i)
            out.weights[l][i] = 0.5 * (a.weights[l][i] + b.weights[l][i]);
        for (std::size_t i = 0; i < out.biases[l].size(); ++i)
            out.biases[l][i] = 0.5 * (a.biases[l][i] + b.biases[l][i]);
    }
    return out;
}

// Fixed-endpoint curve training: theta starts at the midpoint and is
// the only trainable tensor. Per batch one t ~ U(0,1) is drawn, the
// loss is evaluated at phi(t), and the chain factor dphi/dtheta = 2t(1-t)
// scales the parameter gradients. Endpoints are never touched.
inline CurveParams train_curve_fixed(const Mlp& w1, const Mlp& w2, const Dataset& data,
                                     const TrainConfig& config, SeededRng& rng) {
    if (!w1.same_architecture(w2)) throw ShapeError("curve endpoints differ in architecture");
    config.validate();
    if (w1.input_dim() != data.d) throw ShapeError("curve endpoints do not match dataset d");

    CurveParams curve{w1, w2, midpoint(w1, w2), false};
    const std::vector<std::size_t>& order = data.train_idx;
    std::vector<double> bx;
    std::vector<int> by;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            std::size_t e = std::min(b + config.batch_size, order.size());
            detail::gather_batch(data, order, b, e, bx, by);
            double t = rng.uniform();
            Mlp point = bezier_point(curve, t);
            GradBundle g = loss_and_param_grads(point, bx, by, data.d);
            add_scaled(curve.theta, g, -config.learning_rate * 2.0 * t * (1.0 - t));
        }
    }
    return curve;
}

// From-scratch curve training: both endpoints are initialized from
// their seeds with the same scheme as single models and trained jointly
// with the bend, using chain factors (1-t)^2, 2t(1-t), t^2.
inline CurveParams train_curve_scratch(std::uint64_t start_seed, std::uint64_t end_seed,
                                       const std::vector<std::size_t>& layer_dims,
                                       const Dataset& data, const TrainConfig& config,
                                       SeededRng& rng) {
    config.validate();
    CurveParams curve;
    curve.w1 = init_mlp(layer_dims, start_seed);
    curve.w2 = init_mlp(layer_dims, end_seed);
    curve.theta = midpoint(curve.w1, curve.w2);
    curve.endpoints_trainable = true;
    if (curve.w1.input_dim() != data.d) throw ShapeError("architecture does not match dataset d");

    const std::vector<std::size_t>& order = data.train_idx;
    std::vector<double> bx;
    std::vector<int> by;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            std::size_t e = std::min(b + config.batch_size, order.size());
            detail::gather_batch(data, order, b, e, bx, by);
            double t = rng.uniform();
            Mlp point = bezier_point(curve, t);
            GradBundle g = loss_and_param_grads(point, bx, by, data.d);
            const double lr = config.learning_rate;
            add_scaled(curve.w1, g, -lr * (1.0 - t) * (1.0 - t));
            add_scaled(curve.theta, g, -lr * 2.0 * t * (1.0 - t));
            add_scaled(curve.w2, g, -lr * t * t);
        }
    }
    return curve;
}

enum class SampleMode { grid, uniform_random };

// Models along the curve. Grid mode uses t = i/(s-1) including both
// endpoints; s = 1 degenerates to the single point t = 0.5.
inline std::vector<Mlp> sample_curve(const CurveParams& curve, std::size_t s,
                                     SampleMode mode, SeededRng& rng) {
    if (s < 1) throw ConfigError("sample count must be >= 1");
    std::vector<Mlp> out;
    out.reserve(s);
    if (mode == SampleMode::grid) {
        if (s == 1) {
            out.push_back(bezier_point(curve, 0.5));
        } else {
            for (std::size_t i = 0; i < s; ++i)
                out.push_back(bezier_point(
                    curve, static_cast<double>(i) / static_cast<double>(s - 1)));
        }
    } else {
        for (std::size_t i = 0; i < s; ++i) out.push_back(bezier_point(curve, rng.uniform()));
    }
    return out;
}

struct CurveProfileRow {
    double t;
    double loss;
    double accuracy;
};

// Loss/accuracy along a fixed t-grid, used for the near-constant-loss audit.
inline std::vector<CurveProfileRow> curve_loss_profile(const CurveParams& curve,
                                                       const Dataset& data,
                                                       const std::vector<std::size_t>& rows,
                                                       std::size_t grid_points = 21) {
    if (grid_points < 2) throw ConfigError("profile grid needs >= 2 points");
    std::vector<CurveProfileRow> profile;
    for (std::size_t i = 0; i < grid_points; ++i) {
        double t = static_cast<double>(i) / static_cast<double>(grid_points - 1);
        Mlp point = bezier_point(curve, t);
        profile.push_back({t, dataset_loss(point, data, rows), accuracy(point, data, rows)});
    }
    return profile;
}

// ---- serialization ------------------------------------------------------

inline void save_curve(const CurveParams& curve, const std::string& path) {
    curve.validate();
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["w1"] = mlp_to_json(curve.w1);
    j["w2"] = mlp_to_json(curve.w2);
    j["theta"] = mlp_to_json(curve.theta);
    j["endpoints_trainable"] = curve.endpoints_trainable;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(1) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline CurveParams load_curve(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed curve file ") + path + ": " + e.what());
    }
    CurveParams curve;
    curve.w1 = mlp_from_json(j.at("w1"));
    curve.w2 = mlp_from_json(j.at("w2"));
    curve.theta = mlp_from_json(j.at("theta"));
    curve.endpoints_trainable = j.value("endpoints_trainable", false);
    curve.validate();
    return curve;
}

}  // namespace modeset
