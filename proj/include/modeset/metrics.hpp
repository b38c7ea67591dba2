#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "modeset/errors.hpp"
#include "modeset/explain.hpp"

namespace modeset {

// Top-k features by absolute attribution, carrying their signs.
// Ordered by descending |value|, ties broken by ascending index.
struct TopKSet {
    std::size_t k = 0;  // effective k, already clamped to d
    std::vector<std::pair<std::size_t, int>> entries;
};

inline int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

inline TopKSet top_k(std::span<const double> values, std::size_t k) {
    if (k == 0) throw MetricError("k must be >= 1");
    const std::size_t d = values.size();
    std::vector<std::size_t> idx(d);
    for (std::size_t i = 0; i < d; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        double aa = std::fabs(values[a]), ab = std::fabs(values[b]);
        if (aa != ab) return aa > ab;
        return a < b;
    });
    TopKSet set;
    set.k = std::min(k, d);
    for (std::size_t i = 0; i < set.k; ++i)
        set.entries.emplace_back(idx[i], sign_of(values[idx[i]]));
    return set;
}

inline TopKSet top_k(const Explanation& e, std::size_t k) {
    return top_k(std::span<const double>(e.values), k);
}

namespace detail {

inline void check_same_k(const TopKSet& a, const TopKSet& b) {
    if (a.k != b.k) throw MetricError("top-k sets have different k");
}

inline int sign_in(const TopKSet& s, std::size_t feature) {
    for (const auto& [f, sg] : s.entries)
        if (f == feature) return sg;
    return 2;  // sentinel: not present
}

}  // namespace detail

// Sign-Agreement: fraction of top-k features present in both sets with
// matching signs.
inline double sa(const TopKSet& a, const TopKSet& b) {
    detail::check_same_k(a, b);
    std::size_t agree = 0;
    for (const auto& [f, sg] : a.entries) {
        int other = detail::sign_in(b, f);
        if (other != 2 && other == sg) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(a.k);
}

// Signed-Set Agreement: 1 iff the sets contain identical features with
// identical signs, order-free. Equivalent to sa(a, b) == 1.
inline int ssa(const TopKSet& a, const TopKSet& b) {
    detail::check_same_k(a, b);
    return sa(a, b) == 1.0 ? 1 : 0;
}

// Consistent Direction of Contribution: 1 iff every feature present in
// both top-k sets carries the same sign in each. A vacuous (empty)
// intersection scores 1.
inline int cdc(const TopKSet& a, const TopKSet& b) {
    detail::check_same_k(a, b);
    for (const auto& [f, sg] : a.entries) {
        int other = detail::sign_in(b, f);
        if (other != 2 && other != sg) return 0;
    }
    return 1;
}

// Angle in [0, pi] between two attribution vectors.
inline double angular_diff(std::span<const double> e1, std::span<const double> e2) {
    if (e1.size() != e2.size()) throw MetricError("explanation lengths differ");
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < e1.size(); ++i) {
        dot += e1[i] * e2[i];
        n1 += e1[i] * e1[i];
        n2 += e2[i] * e2[i];
    }
    if (n1 == 0.0 || n2 == 0.0) throw MetricError("angular difference of a zero vector");
    double c = dot / std::sqrt(n1 * n2);
    c = std::clamp(c, -1.0, 1.0);
    return std::acos(c);
}

inline double angular_diff(const Explanation& a, const Explanation& b) {
    return angular_diff(std::span<const double>(a.values), std::span<const double>(b.values));
}

enum class MetricKind { sa, ssa, cdc };

inline const char* metric_name(MetricKind m) {
    switch (m) {
        case MetricKind::sa: return "sa";
        case MetricKind::ssa: return "ssa";
        case MetricKind::cdc: return "cdc";
    }
    throw MetricError("unknown metric");
}

inline MetricKind metric_from_name(const std::string& name) {
    if (name == "sa") return MetricKind::sa;
    if (name == "ssa") return MetricKind::ssa;
    if (name == "cdc") return MetricKind::cdc;
    throw MetricError("unknown metric '" + name + "'");
}

inline double eval_metric(MetricKind m, const TopKSet& a, const TopKSet& b) {
    switch (m) {
        case MetricKind::sa: return sa(a, b);
        case MetricKind::ssa: return static_cast<double>(ssa(a, b));
        case MetricKind::cdc: return static_cast<double>(cdc(a, b));
    }
    throw MetricError("unknown metric");
}

// Linear-interpolation percentile over an unsorted sample, q in [0,1].
inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw MetricError("percentile of empty sample");
    std::sort(v.begin(), v.end());
    double rank = q * static_cast<double>(v.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    std::size_t hi = static_cast<std::size_t>(std::ceil(rank));
    double frac = rank - static_cast<double>(lo);
    return v[lo] + (v[hi] - v[lo]) * frac;
}

struct PairwiseSummary {
    std::vector<double> per_input_mean;  // one score per input, mean over pairs
    std::vector<std::size_t> input_ids;
    double median = 0.0;
    double p5 = 0.0;
    double p95 = 0.0;
    double mean = 0.0;
    double stddev = 0.0;
};

// Per-input mean metric over all C(E,2) ensemble pairs, summarized over
// inputs by median and central-decile bounds. explanation_sets[e][i] is
// ensemble e's explanation of input i; input ids must align.
inline PairwiseSummary pairwise_stats(
    const std::vector<std::vector<Explanation>>& explanation_sets, MetricKind metric,
    std::size_t k) {
    const std::size_t E = explanation_sets.size();
    if (E < 2) throw MetricError("pairwise stats need >= 2 ensembles");
    const std::size_t n_inputs = explanation_sets.front().size();
    if (n_inputs == 0) throw MetricError("no inputs to evaluate");
    for (const auto& set : explanation_sets) {
        if (set.size() != n_inputs) throw MetricError("explanation tables differ in length");
        for (std::size_t i = 0; i < n_inputs; ++i)
            if (set[i].input_id != explanation_sets.front()[i].input_id)
                throw MetricError("misaligned input ids across ensembles");
    }

    // Pre-extract top-k tables once per (ensemble, input).
    std::vector<std::vector<TopKSet>> tables(E, std::vector<TopKSet>(n_inputs));
    for (std::size_t e = 0; e < E; ++e)
        for (std::size_t i = 0; i < n_inputs; ++i)
            tables[e][i] = top_k(explanation_sets[e][i], k);

    PairwiseSummary out;
    out.per_input_mean.resize(n_inputs);
    out.input_ids.resize(n_inputs);
    const double n_pairs = static_cast<double>(E * (E - 1) / 2);
    for (std::size_t i = 0; i < n_inputs; ++i) {
        out.input_ids[i] = explanation_sets.front()[i].input_id;
        double sum = 0.0;
        for (std::size_t a = 0; a < E; ++a)
            for (std::size_t b = a + 1; b < E; ++b)
                sum += eval_metric(metric, tables[a][i], tables[b][i]);
        out.per_input_mean[i] = sum / n_pairs;
    }

    out.median = percentile(out.per_input_mean, 0.5);
    out.p5 = percentile(out.per_input_mean, 0.05);
    out.p95 = percentile(out.per_input_mean, 0.95);
    double m = 0.0;
    for (double v : out.per_input_mean) m += v;
    m /= static_cast<double>(n_inputs);
    out.mean = m;
    double var = 0.0;
    for (double v : out.per_input_mean) var += (v - m) * (v - m);
    out.stddev = n_inputs > 1 ? std::sqrt(var / static_cast<double>(n_inputs - 1)) : 0.0;
    return out;
}

}  // namespace modeset
