#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "modeset/errors.hpp"
#include "modeset/rng.hpp"

namespace modeset {

enum class FeatureKind { continuous, categorical };
enum class MissingPolicy { error, median };

// Declared (pre-fit) description of one input column.
struct FeatureConfig {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
};

// Declared dataset layout, read from the config file.
struct SchemaConfig {
    std::vector<FeatureConfig> features;
    std::string label_column;
    std::vector<std::string> positive_values;  // raw label values mapped to y=1
    MissingPolicy missing_policy = MissingPolicy::error;
    bool balance_50_50 = false;  // subsample the majority class before splitting
};

// Fitted per-feature record: categories and standardization statistics
// are computed on the train partition only.
struct FittedFeature {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    std::vector<std::string> categories;  // categorical only
    double mean = 0.0;                    // continuous only
    double stddev = 1.0;                  // continuous only
};

struct FeatureSchema {
    std::vector<FittedFeature> features;
    std::string label_column;
    std::vector<std::string> positive_values;

    std::size_t encoded_dim() const {
        std::size_t d = 0;
        for (const auto& f : features)
            d += (f.kind == FeatureKind::continuous) ? 1 : f.categories.size();
        return d;
    }
};

// Encoded feature matrix with labels and a fixed 80/20 split.
struct Dataset {
    std::vector<double> X;  // row-major n x d
    std::vector<int> y;
    std::size_t n = 0;
    std::size_t d = 0;
    FeatureSchema schema;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;

    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(X.data() + i * d, d);
    }
};

// ---- CSV ingestion ------------------------------------------------------

struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ConfigError("column '" + name + "' not found in CSV header");
    }
};

namespace detail {

// RFC-4180 field splitting for one record; quoted fields may contain
// commas and doubled quotes.
inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t lineno) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c == '\r' && i + 1 == line.size()) {
            // tolerate CRLF
        } else {
            cur += c;
        }
    }
    if (quoted)
        throw ParseError("unterminated quote at line " + std::to_string(lineno));
    fields.push_back(cur);
    return fields;
}

inline bool is_missing_token(const std::string& s) {
    return s.empty() || s == "?" || s == "NA" || s == "nan";
}

inline double parse_numeric(const std::string& s, std::size_t row, const std::string& col) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError("unparseable numeric cell '" + s + "' at row " +
                         std::to_string(row) + ", column '" + col + "'");
    }
}

}  // namespace detail

inline RawTable load_csv(const std::string& path, const SchemaConfig& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    RawTable t;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty CSV: " + path);
    t.header = detail::split_csv_line(line, 1);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line, lineno);
        if (fields.size() != t.header.size())
            throw ParseError("row " + std::to_string(lineno) + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(t.header.size()));
        t.rows.push_back(std::move(fields));
    }
    // Fail early if the declared schema does not fit the file.
    for (const auto& f : schema.features) t.column(f.name);
    t.column(schema.label_column);
    return t;
}

// ---- preprocessing ------------------------------------------------------

namespace detail {

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    if (n == 0) throw ConfigError("median of empty sample");
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// One-hot encodes categoricals, standardizes continuous columns with
// train-partition statistics, maps labels, and fixes a deterministic
// 80/20 split (rows shuffled once with split_seed, first 80% train).
inline Dataset preprocess(const RawTable& raw, const SchemaConfig& schema,
                          std::uint64_t split_seed) {
    if (raw.rows.empty()) throw ConfigError("empty table");

    const std::size_t label_col = raw.column(schema.label_column);
    std::set<std::string> positive(schema.positive_values.begin(),
                                   schema.positive_values.end());

    std::vector<std::size_t> keep(raw.rows.size());
    std::iota(keep.begin(), keep.end(), 0);

    SeededRng rng(split_seed);
    if (schema.balance_50_50) {
        std::vector<std::size_t> pos, neg;
        for (std::size_t i : keep)
            (positive.count(raw.rows[i][label_col]) ? pos : neg).push_back(i);
        std::size_t m = std::min(pos.size(), neg.size());
        rng.shuffle(pos);
        rng.shuffle(neg);
        pos.resize(m);
        neg.resize(m);
        keep.clear();
        keep.insert(keep.end(), pos.begin(), pos.end());
        keep.insert(keep.end(), neg.begin(), neg.end());
        std::sort(keep.begin(), keep.end());
    }

    rng.shuffle(keep);
    const std::size_t n = keep.size();
    const std::size_t n_train = (n * 8) / 10;
    if (n_train == 0 || n_train == n)
        throw ConfigError("dataset too small for an 80/20 split");

    Dataset ds;
    ds.n = n;
    ds.schema.label_column = schema.label_column;
    ds.schema.positive_values = schema.positive_values;
    for (std::size_t i = 0; i < n_train; ++i) ds.train_idx.push_back(i);
    for (std::size_t i = n_train; i < n; ++i) ds.test_idx.push_back(i);

    ds.y.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        ds.y[i] = positive.count(raw.rows[keep[i]][label_col]) ? 1 : 0;

    // Per-feature encoded columns, assembled feature by feature.
    std::vector<std::vector<double>> cols;  // encoded column -> n values
    for (const auto& fc : schema.features) {
        const std::size_t c = raw.column(fc.name);
        FittedFeature ff;
        ff.name = fc.name;
        ff.kind = fc.kind;
        if (fc.kind == FeatureKind::continuous) {
            std::vector<double> vals(n);
            std::vector<bool> missing(n, false);
            for (std::size_t i = 0; i < n; ++i) {
                const std::string& cell = raw.rows[keep[i]][c];
                if (detail::is_missing_token(cell)) {
                    if (schema.missing_policy == MissingPolicy::error)
                        throw ParseError("missing value at row " + std::to_string(keep[i]) +
                                         ", column '" + fc.name + "'");
                    missing[i] = true;
                } else {
                    vals[i] = detail::parse_numeric(cell, keep[i], fc.name);
                }
            }
            std::vector<double> train_present;
            for (std::size_t i = 0; i < n_train; ++i)
                if (!missing[i]) train_present.push_back(vals[i]);
            if (train_present.empty())
                throw ConfigError("column '" + fc.name + "' has no train values");
            double med = detail::median_of(train_present);
            for (std::size_t i = 0; i < n; ++i)
                if (missing[i]) vals[i] = med;

            double mean = 0.0;
            for (std::size_t i = 0; i < n_train; ++i) mean += vals[i];
            mean /= static_cast<double>(n_train);
            double var = 0.0;
            for (std::size_t i = 0; i < n_train; ++i) {
                double dlt = vals[i] - mean;
                var += dlt * dlt;
            }
            var /= static_cast<double>(n_train - 1);
            double sd = std::sqrt(var);
            if (!(sd > 0.0))
                throw ConfigError("constant continuous column '" + fc.name + "'");
            for (double& v : vals) v = (v - mean) / sd;
            ff.mean = mean;
            ff.stddev = sd;
            cols.push_back(std::move(vals));
        } else {
            // Category vocabulary from the train partition, sorted for
            // a deterministic column order. Unseen test categories map
            // to an all-zero block.
            std::set<std::string> vocab;
            for (std::size_t i = 0; i < n_train; ++i) vocab.insert(raw.rows[keep[i]][c]);
            ff.categories.assign(vocab.begin(), vocab.end());
            std::map<std::string, std::size_t> index;
            for (std::size_t k = 0; k < ff.categories.size(); ++k)
                index[ff.categories[k]] = k;
            std::vector<std::vector<double>> block(ff.categories.size(),
                                                   std::vector<double>(n, 0.0));
            for (std::size_t i = 0; i < n; ++i) {
                auto it = index.find(raw.rows[keep[i]][c]);
                if (it != index.end()) block[it->second][i] = 1.0;
            }
            for (auto& col : block) cols.push_back(std::move(col));
        }
        ds.schema.features.push_back(std::move(ff));
    }

    ds.d = cols.size();
    ds.X.resize(n * ds.d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ds.d; ++j) ds.X[i * ds.d + j] = cols[j][i];
    return ds;
}

// ---- two moons ----------------------------------------------------------

// Synthetic two-class dataset: the class-0 moon is the upper half-circle
// of radius 1 centered at the origin; the class-1 moon is the lower
// half-circle offset by (+1, -0.5). Gaussian noise of the given sigma is
// added per coordinate, then the result is split and standardized like
// any other dataset.
inline Dataset two_moons(std::size_t n, double noise, SeededRng& rng) {
    if (n < 2) throw ConfigError("two_moons needs at least 2 points");
    if (!(noise >= 0.0)) throw ConfigError("two_moons noise must be >= 0");

    const std::size_t n0 = (n + 1) / 2;
    std::vector<double> px(n), py(n);
    std::vector<int> labels(n);
    constexpr double pi = 3.14159265358979323846;
    for (std::size_t i = 0; i < n; ++i) {
        double theta = rng.uniform(0.0, pi);
        if (i < n0) {
            px[i] = std::cos(theta);
            py[i] = std::sin(theta);
            labels[i] = 0;
        } else {
            px[i] = 1.0 + std::cos(theta);
            py[i] = -0.5 - std::sin(theta);
            labels[i] = 1;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        px[i] += rng.normal(0.0, noise);
        py[i] += rng.normal(0.0, noise);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const std::size_t n_train = (n * 8) / 10;
    if (n_train == 0 || n_train == n) throw ConfigError("two_moons sample too small to split");

    Dataset ds;
    ds.n = n;
    ds.d = 2;
    ds.X.resize(n * 2);
    ds.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.X[i * 2 + 0] = px[order[i]];
        ds.X[i * 2 + 1] = py[order[i]];
        ds.y[i] = labels[order[i]];
    }
    for (std::size_t i = 0; i < n_train; ++i) ds.train_idx.push_back(i);
    for (std::size_t i = n_train; i < n; ++i) ds.test_idx.push_back(i);

    ds.schema.label_column = "label";
    ds.schema.positive_values = {"1"};
    for (std::size_t j = 0; j < 2; ++j) {
        FittedFeature ff;
        ff.name = (j == 0) ? "x" : "y";
        ff.kind = FeatureKind::continuous;
        double mean = 0.0;
        for (std::size_t i = 0; i < n_train; ++i) mean += ds.X[i * 2 + j];
        mean /= static_cast<double>(n_train);
        double var = 0.0;
        for (std::size_t i = 0; i < n_train; ++i) {
            double dlt = ds.X[i * 2 + j] - mean;
            var += dlt * dlt;
        }
        var /= static_cast<double>(n_train - 1);
        double sd = std::sqrt(var);
        if (!(sd > 0.0)) throw ConfigError("degenerate two_moons coordinate");
        for (std::size_t i = 0; i < n; ++i)
            ds.X[i * 2 + j] = (ds.X[i * 2 + j] - mean) / sd;
        ff.mean = mean;
        ff.stddev = sd;
        ds.schema.features.push_back(std::move(ff));
    }
    return ds;
}

}  // namespace modeset
