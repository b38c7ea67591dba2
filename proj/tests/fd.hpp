// Finite-difference oracles for gradient checking. Everything here goes
// through forward() only, independent of the analytic backprop path it
// is used to verify.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "modeset/mlp.hpp"

namespace fd {

inline constexpr double kStep = 1e-5;
inline constexpr double kRelTol = 1e-4;
inline constexpr double kAbsFloor = 1e-8;

inline bool close(double analytic, double numeric) {
    double diff = std::fabs(analytic - numeric);
    double scale = std::max(std::fabs(analytic), std::fabs(numeric));
    return diff <= std::max(kAbsFloor, kRelTol * scale);
}

// Mean cross-entropy computed from forward passes only.
inline double batch_loss(const modeset::Mlp& m, const std::vector<double>& X,
                         const std::vector<int>& y, std::size_t d) {
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        std::vector<double> p =
            modeset::forward(m, std::span<const double>(X.data() + i * d, d));
        loss += -std::log(p[static_cast<std::size_t>(y[i])]);
    }
    return loss / static_cast<double>(y.size());
}

// Central difference of an arbitrary scalar function of a vector.
inline std::vector<double> gradient(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> x, double h = kStep) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double orig = x[i];
        x[i] = orig + h;
        double up = f(x);
        x[i] = orig - h;
        double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Checks every entry of an analytic parameter-gradient bundle against
// central differences of the given loss functional. Returns the number
// of failing entries.
inline std::size_t check_param_grads(const modeset::Mlp& m, const modeset::GradBundle& g,
                                     const std::function<double(const modeset::Mlp&)>& loss) {
    std::size_t failures = 0;
    modeset::Mlp probe = m;
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
        for (std::size_t i = 0; i < m.weights[l].size(); ++i) {
            double orig = probe.weights[l][i];
            probe.weights[l][i] = orig + kStep;
            double up = loss(probe);
            probe.weights[l][i] = orig - kStep;
            double down = loss(probe);
            probe.weights[l][i] = orig;
            if (!close(g.d_weights[l][i], (up - down) / (2.0 * kStep))) ++failures;
        }
        for (std::size_t i = 0; i < m.biases[l].size(); ++i) {
            double orig = probe.biases[l][i];
            probe.biases[l][i] = orig + kStep;
            double up = loss(probe);
            probe.biases[l][i] = orig - kStep;
            double down = loss(probe);
            probe.biases[l][i] = orig;
            if (!close(g.d_biases[l][i], (up - down) / (2.0 * kStep))) ++failures;
        }
    }
    return failures;
}

}  // namespace fd
