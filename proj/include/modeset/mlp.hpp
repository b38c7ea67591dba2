#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "modeset/errors.hpp"
#include "modeset/rng.hpp"

namespace modeset {

// Feed-forward network with ReLU hidden layers and a softmax output.
// Weights are stored row-major per layer: weights[l] has shape
// (layer_dims[l+1] x layer_dims[l]). Values are immutable by convention
// once a model is built; operations return fresh Mlps.
struct Mlp {
    std::vector<std::size_t> layer_dims;
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    std::size_t num_layers() const { return weights.size(); }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }

    bool same_architecture(const Mlp& other) const {
        return layer_dims == other.layer_dims;
    }
};

// Per-layer gradients mirroring the Mlp shapes, plus the batch loss.
struct GradBundle {
    std::vector<std::vector<double>> d_weights;
    std::vector<std::vector<double>> d_biases;
    double loss = 0.0;
};

inline void validate_dims(const std::vector<std::size_t>& layer_dims) {
    if (layer_dims.size() < 2)
        throw ConfigError("architecture needs at least an input and an output layer");
    for (std::size_t d : layer_dims)
        if (d == 0) throw ConfigError("zero-width layer in architecture");
}

// He-style uniform fan-in initialization, U(-sqrt(6/fan_in), +sqrt(6/fan_in)),
// biases zero. Deterministic in the rng seed.
inline Mlp init_mlp(const std::vector<std::size_t>& layer_dims, SeededRng& rng) {
    validate_dims(layer_dims);
    Mlp m;
    m.layer_dims = layer_dims;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        std::size_t fan_in = layer_dims[l];
        std::size_t fan_out = layer_dims[l + 1];
        double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::vector<double> w(fan_out * fan_in);
        for (double& v : w) v = rng.uniform(-bound, bound);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(fan_out, 0.0);
    }
    return m;
}

inline Mlp init_mlp(const std::vector<std::size_t>& layer_dims, std::uint64_t seed) {
    SeededRng rng(seed);
    return init_mlp(layer_dims, rng);
}

namespace detail {

inline void check_input(const Mlp& m, std::span<const double> x) {
    if (x.size() != m.input_dim())
        throw ShapeError("input length " + std::to_string(x.size()) +
                         " does not match model input width " +
                         std::to_string(m.input_dim()));
    for (double v : x)
        if (!std::isfinite(v)) throw NumericError("non-finite input value");
}

inline void softmax_inplace(std::vector<double>& z) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

}  // namespace detail

// Activations of one forward pass, kept for backpropagation.
// act[0] is the input; act[l] for l in 1..L-1 is the post-ReLU hidden
// activation; act[L] is the softmax output. pre[l] holds the
// pre-activation of layer l+1.
struct ForwardTrace {
    std::vector<std::vector<double>> act;
    std::vector<std::vector<double>> pre;
};

inline ForwardTrace forward_trace(const Mlp& m, std::span<const double> x) {
    detail::check_input(m, x);
    ForwardTrace t;
    t.act.emplace_back(x.begin(), x.end());
    const std::size_t L = m.num_layers();
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t in = m.layer_dims[l];
        const std::size_t out = m.layer_dims[l + 1];
        const double* w = m.weights[l].data();
        const double* a = t.act.back().data();
        std::vector<double> z(m.biases[l]);
        for (std::size_t r = 0; r < out; ++r) {
            const double* row = w + r * in;
            double s = 0.0;
            for (std::size_t c = 0; c < in; ++c) s += row[c] * a[c];
            z[r] += s;
        }
        t.pre.push_back(z);
        if (l + 1 < L) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;
        } else {
            detail::softmax_inplace(z);
        }
        t.act.push_back(std::move(z));
    }
    return t;
}

// Class probabilities for one input.
inline std::vector<double> forward(const Mlp& m, std::span<const double> x) {
    return forward_trace(m, x).act.back();
}

inline GradBundle zero_grads(const Mlp& m) {
    GradBundle g;
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
        g.d_weights.emplace_back(m.weights[l].size(), 0.0);
        g.d_biases.emplace_back(m.biases[l].size(), 0.0);
    }
    return g;
}

// Mean cross-entropy over the batch and its exact parameter gradients.
// X is row-major n x d; labels are 0/1.
inline GradBundle loss_and_param_grads(const Mlp& m, const std::vector<double>& X,
                                       const std::vector<int>& y, std::size_t d) {
    if (y.empty()) throw ConfigError("empty batch");
    if (X.size() != y.size() * d) throw ShapeError("batch matrix size mismatch");
    const std::size_t n = y.size();
    const std::size_t L = m.num_layers();
    GradBundle g = zero_grads(m);
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] != 0 && y[i] != 1) throw ConfigError("labels must be 0 or 1");
        ForwardTrace t = forward_trace(m, std::span<const double>(X.data() + i * d, d));
        const std::vector<double>& p = t.act.back();
        double py = p[static_cast<std::size_t>(y[i])];
        g.loss += -std::log(std::max(py, 1e-300)) * inv_n;

        // delta at the output: softmax + cross-entropy.
        std::vector<double> delta = p;
        delta[static_cast<std::size_t>(y[i])] -= 1.0;
        for (double& v : delta) v *= inv_n;

        for (std::size_t l = L; l-- > 0;) {
            const std::size_t in = m.layer_dims[l];
            const std::size_t out = m.layer_dims[l + 1];
            const double* a = t.act[l].data();
            double* dw = g.d_weights[l].data();
            double* db = g.d_biases[l].data();
            for (std::size_t r = 0; r < out; ++r) {
                const double dr = delta[r];
                db[r] += dr;
                double* dwr = dw + r * in;
                for (std::size_t c = 0; c < in; ++c) dwr[c] += dr * a[c];
            }
            if (l == 0) break;
            const double* w = m.weights[l].data();
            std::vector<double> prev(in, 0.0);
            for (std::size_t r = 0; r < out; ++r) {
                const double dr = delta[r];
                const double* wr = w + r * in;
                for (std::size_t c = 0; c < in; ++c) prev[c] += dr * wr[c];
            }
            // ReLU subgradient, 0 at exactly 0.
            const double* z = t.pre[l - 1].data();
            for (std::size_t c = 0; c < in; ++c)
                if (z[c] <= 0.0) prev[c] = 0.0;
            delta = std::move(prev);
        }
    }
    return g;
}

// Gradient of the softmax probability of target_class with respect to
// the input features.
inline std::vector<double> input_gradient(const Mlp& m, std::span<const double> x,
                                          int target_class) {
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= m.output_dim())
        throw ShapeError("target class out of range");
    ForwardTrace t = forward_trace(m, x);
    const std::vector<double>& p = t.act.back();
    const std::size_t L = m.num_layers();

    // d p_t / d z_j = p_t (1[j==t] - p_j)
    std::vector<double> delta(p.size());
    const double pt = p[static_cast<std::size_t>(target_class)];
    for (std::size_t j = 0; j < p.size(); ++j)
        delta[j] = pt * ((static_cast<int>(j) == target_class ? 1.0 : 0.0) - p[j]);

    for (std::size_t l = L; l-- > 0;) {
        const std::size_t in = m.layer_dims[l];
        const std::size_t out = m.layer_dims[l + 1];
        const double* w = m.weights[l].data();
        std::vector<double> prev(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            const double dr = delta[r];
            const double* wr = w + r * in;
            for (std::size_t c = 0; c < in; ++c) prev[c] += dr * wr[c];
        }
        if (l > 0) {
            const double* z = t.pre[l - 1].data();
            for (std::size_t c = 0; c < in; ++c)
                if (z[c] <= 0.0) prev[c] = 0.0;
        }
        delta = std::move(prev);
    }
    return delta;
}

// ---- parameter-space arithmetic ----------------------------------------

inline void add_scaled(Mlp& m, const GradBundle& g, double scale) {
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
        double* w = m.weights[l].data();
        const double* dw = g.d_weights[l].data();
        for (std::size_t i = 0; i < m.weights[l].size(); ++i) w[i] += scale * dw[i];
        double* b = m.biases[l].data();
        const double* db = g.d_biases[l].data();
        for (std::size_t i = 0; i < m.biases[l].size(); ++i) b[i] += scale * db[i];
    }
}

inline double l2_distance(const Mlp& a, const Mlp& b) {
    if (!a.same_architecture(b)) throw ShapeError("architecture mismatch in l2_distance");
    double s = 0.0;
    for (std::size_t l = 0; l < a.num_layers(); ++l) {
        for (std::size_t i = 0; i < a.weights[l].size(); ++i) {
            double d = a.weights[l][i] - b.weights[l][i];
            s += d * d;
        }
        for (std::size_t i = 0; i < a.biases[l].size(); ++i) {
            double d = a.biases[l][i] - b.biases[l][i];
            s += d * d;
        }
    }
    return std::sqrt(s);
}

inline double grad_norm(const GradBundle& g) {
    double s = 0.0;
    for (const auto& w : g.d_weights)
        for (double v : w) s += v * v;
    for (const auto& b : g.d_biases)
        for (double v : b) s += v * v;
    return std::sqrt(s);
}

// ---- serialization ------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json mlp_to_json(const Mlp& m) {
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["layer_dims"] = m.layer_dims;
    nlohmann::json weights = nlohmann::json::array();
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
        const std::size_t in = m.layer_dims[l];
        const std::size_t out = m.layer_dims[l + 1];
        nlohmann::json layer = nlohmann::json::array();
        for (std::size_t r = 0; r < out; ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < in; ++c) row.push_back(m.weights[l][r * in + c]);
            layer.push_back(std::move(row));
        }
        weights.push_back(std::move(layer));
    }
    j["weights"] = std::move(weights);
    j["biases"] = m.biases;
    return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("layer_dims") || !j.contains("weights") ||
        !j.contains("biases"))
        throw ParseError("model file missing layer_dims/weights/biases");
    Mlp m;
    m.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    validate_dims(m.layer_dims);
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (weights.size() != m.layer_dims.size() - 1 || biases.size() != weights.size())
        throw ValidationError("layer count does not match declared dims");
    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
        const std::size_t in = m.layer_dims[l];
        const std::size_t out = m.layer_dims[l + 1];
        const auto& layer = weights.at(l);
        if (layer.size() != out)
            throw ValidationError("weight row count mismatch at layer " + std::to_string(l));
        std::vector<double> w;
        w.reserve(out * in);
        for (const auto& row : layer) {
            if (row.size() != in)
                throw ValidationError("weight column count mismatch at layer " +
                                      std::to_string(l));
            for (const auto& v : row) w.push_back(v.get<double>());
        }
        std::vector<double> b = biases.at(l).get<std::vector<double>>();
        if (b.size() != out)
            throw ValidationError("bias length mismatch at layer " + std::to_string(l));
        for (double v : w)
            if (!std::isfinite(v)) throw ValidationError("non-finite weight in model file");
        for (double v : b)
            if (!std::isfinite(v)) throw ValidationError("non-finite bias in model file");
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    return m;
}

inline void save_model(const Mlp& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << mlp_to_json(m).dump(1) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline Mlp load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed model file ") + path + ": " + e.what());
    }
    return mlp_from_json(j);
}

}  // namespace modeset
