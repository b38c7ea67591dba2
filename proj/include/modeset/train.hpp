#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "modeset/data.hpp"
#include "modeset/errors.hpp"
#include "modeset/mlp.hpp"
#include "modeset/parallel.hpp"
#include "modeset/rng.hpp"

namespace modeset {

struct TrainConfig {
    std::size_t epochs = 1;
    double learning_rate = 0.01;
    std::size_t batch_size = 32;
    bool shuffle_each_epoch = false;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    }
};

namespace detail {

// Materializes one mini-batch from train-partition row indices.
inline void gather_batch(const Dataset& data, const std::vector<std::size_t>& order,
                         std::size_t begin, std::size_t end, std::vector<double>& X,
                         std::vector<int>& y) {
    const std::size_t d = data.d;
    X.resize((end - begin) * d);
    y.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        auto row = data.row(order[i]);
        std::copy(row.begin(), row.end(), X.begin() + (i - begin) * d);
        y[i - begin] = data.y[order[i]];
    }
}

}  // namespace detail

// Vanilla mini-batch SGD on mean cross-entropy. With shuffle off the
// batch composition is identical across epochs and across seeds, so
// trained models differ only through their initialization. The last
// partial batch is included.
inline Mlp train(Mlp mlp, const Dataset& data, const TrainConfig& config,
                 std::uint64_t shuffle_seed = 0) {
    config.validate();
    if (mlp.input_dim() != data.d)
        throw ShapeError("model input width " + std::to_string(mlp.input_dim()) +
                         " does not match dataset d=" + std::to_string(data.d));

    std::vector<std::size_t> order = data.train_idx;
    SeededRng shuffle_rng(shuffle_seed);
    std::vector<double> bx;
    std::vector<int> by;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle_each_epoch) shuffle_rng.shuffle(order);
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            std::size_t e = std::min(b + config.batch_size, order.size());
            detail::gather_batch(data, order, b, e, bx, by);
            GradBundle g = loss_and_param_grads(mlp, bx, by, data.d);
            add_scaled(mlp, g, -config.learning_rate);
        }
    }
    return mlp;
}

// Fraction of argmax-correct predictions over the given rows. A tie
// (positive-class probability exactly 0.5) resolves to class 0.
inline double accuracy(const std::function<std::vector<double>(std::span<const double>)>& proba,
                       const Dataset& data, const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw ConfigError("accuracy over empty partition");
    std::size_t correct = 0;
    for (std::size_t i : rows) {
        std::vector<double> p = proba(data.row(i));
        int pred = (p[1] > p[0]) ? 1 : 0;
        if (pred == data.y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(rows.size());
}

inline double accuracy(const Mlp& m, const Dataset& data, const std::vector<std::size_t>& rows) {
    return accuracy([&m](std::span<const double> x) { return forward(m, x); }, data, rows);
}

// Mean cross-entropy of one model over the given rows.
inline double dataset_loss(const Mlp& m, const Dataset& data,
                           const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw ConfigError("loss over empty partition");
    double loss = 0.0;
    for (std::size_t i : rows) {
        std::vector<double> p = forward(m, data.row(i));
        loss += -std::log(std::max(p[static_cast<std::size_t>(data.y[i])], 1e-300));
    }
    return loss / static_cast<double>(rows.size());
}

struct SetMember {
    std::uint64_t seed = 0;
    Mlp model;
    double train_acc = 0.0;
    double test_acc = 0.0;
    bool retained = true;
};

struct UnderspecSet {
    std::vector<SetMember> members;  // ordered by position in the seed list
    double filter_threshold = 0.01;
    double mean_test_acc = 0.0;

    std::vector<const Mlp*> retained_models() const {
        std::vector<const Mlp*> out;
        for (const auto& m : members)
            if (m.retained) out.push_back(&m.model);
        return out;
    }

    std::size_t retained_count() const {
        std::size_t c = 0;
        for (const auto& m : members)
            if (m.retained) ++c;
        return c;
    }
};

// Trains one model per seed with identical data and config, then
// discards models more than `threshold` below the mean test accuracy.
// Per-seed runs are independent; assembly is ordered by the seed list,
// so the result does not depend on worker count.
inline UnderspecSet build_underspec_set(const Dataset& data,
                                        const std::vector<std::size_t>& layer_dims,
                                        const TrainConfig& config,
                                        const std::vector<std::uint64_t>& seeds,
                                        double threshold, std::size_t workers = 1) {
    if (seeds.empty()) throw ConfigError("need at least one seed");
    config.validate();

    UnderspecSet set;
    set.filter_threshold = threshold;
    set.members.resize(seeds.size());
    parallel_for(seeds.size(), workers, [&](std::size_t i) {
        SetMember m;
        m.seed = seeds[i];
        m.model = train(init_mlp(layer_dims, seeds[i]), data, config, seeds[i]);
        m.train_acc = accuracy(m.model, data, data.train_idx);
        m.test_acc = accuracy(m.model, data, data.test_idx);
        set.members[i] = std::move(m);
    });

    double mean = 0.0;
    for (const auto& m : set.members) mean += m.test_acc;
    mean /= static_cast<double>(set.members.size());
    set.mean_test_acc = mean;
    for (auto& m : set.members) m.retained = m.test_acc >= mean - threshold;
    if (set.retained_count() == 0)
        throw ConfigError("accuracy filter discarded every model");
    return set;
}

}  // namespace modeset
