#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fd.hpp"
#include "modeset/mlp.hpp"
#include "modeset/rng.hpp"

using namespace modeset;

namespace {

Mlp random_net(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    SeededRng rng(seed);
    Mlp m = init_mlp(dims, rng);
    // Nonzero biases so bias gradients are exercised away from zero.
    for (auto& b : m.biases)
        for (double& v : b) v = rng.uniform(-0.5, 0.5);
    return m;
}

std::vector<double> random_input(std::size_t d, std::uint64_t seed) {
    SeededRng rng(seed);
    std::vector<double> x(d);
    for (double& v : x) v = rng.uniform(-2.0, 2.0);
    return x;
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
    Mlp a = init_mlp({2, 128, 64, 16, 2}, 7);
    Mlp b = init_mlp({2, 128, 64, 16, 2}, 7);
    REQUIRE(a.weights == b.weights);
    REQUIRE(a.biases == b.biases);
    for (const auto& bias : a.biases)
        for (double v : bias) REQUIRE(v == 0.0);
}

TEST_CASE("different seeds give different weights") {
    Mlp a = init_mlp({2, 128, 64, 16, 2}, 7);
    Mlp b = init_mlp({2, 128, 64, 16, 2}, 8);
    REQUIRE(a.weights != b.weights);
}

TEST_CASE("degenerate architectures are rejected") {
    REQUIRE_THROWS_AS(init_mlp({2}, 0), ConfigError);
    REQUIRE_THROWS_AS(init_mlp({}, 0), ConfigError);
    REQUIRE_THROWS_AS(init_mlp({2, 0, 2}, 0), ConfigError);
}

TEST_CASE("softmax outputs are normalized") {
    Mlp m = random_net({3, 10, 2}, 11);
    for (std::uint64_t s = 0; s < 20; ++s) {
        std::vector<double> p = forward(m, random_input(3, s));
        double sum = 0.0;
        for (double v : p) {
            sum += v;
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
        REQUIRE(std::fabs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("all-zero network outputs 0.5/0.5") {
    Mlp m = init_mlp({4, 8, 2}, 3);
    for (auto& w : m.weights)
        for (double& v : w) v = 0.0;
    std::vector<double> p = forward(m, random_input(4, 1));
    REQUIRE(p[0] == Catch::Approx(0.5).epsilon(1e-12));
    REQUIRE(p[1] == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("single-hidden-unit network matches hand computation") {
    Mlp m;
    m.layer_dims = {1, 1, 2};
    m.weights = {{2.0}, {1.0, -1.0}};
    m.biases = {{0.5}, {0.25, -0.25}};
    // x=0.8: hidden pre-act 2*0.8+0.5 = 2.1 (positive, passes ReLU),
    // logits (2.35, -2.35), softmax p0 = 1/(1+exp(-4.7)).
    std::vector<double> x = {0.8};
    std::vector<double> p = forward(m, x);
    double expected_p0 = 1.0 / (1.0 + std::exp(-4.7));
    REQUIRE(p[0] == Catch::Approx(expected_p0).epsilon(1e-12));
    REQUIRE(p[1] == Catch::Approx(1.0 - expected_p0).epsilon(1e-12));
}

TEST_CASE("forward rejects bad inputs") {
    Mlp m = random_net({3, 4, 2}, 5);
    std::vector<double> short_x = {1.0, 2.0};
    REQUIRE_THROWS_AS(forward(m, short_x), ShapeError);
    std::vector<double> bad_x = {1.0, std::nan(""), 0.0};
    REQUIRE_THROWS_AS(forward(m, bad_x), NumericError);
}

TEST_CASE("confident correct predictions give near-zero loss and gradient") {
    Mlp m = init_mlp({2, 4, 2}, 1);
    for (auto& w : m.weights)
        for (double& v : w) v = 0.0;
    m.biases.back() = {20.0, -20.0};
    std::vector<double> X = {0.3, -0.2, 1.0, 0.5};
    std::vector<int> y = {0, 0};
    GradBundle g = loss_and_param_grads(m, X, y, 2);
    REQUIRE(g.loss < 1e-12);
    REQUIRE(grad_norm(g) < 1e-12);
}

TEST_CASE("parameter gradients match finite differences") {
    SeededRng data_rng(77);
    Mlp m = random_net({3, 6, 5, 2}, 21);
    const std::size_t n = 5, d = 3;
    std::vector<double> X(n * d);
    std::vector<int> y(n);
    for (double& v : X) v = data_rng.uniform(-1.5, 1.5);
    for (int& v : y) v = data_rng.next_u64() % 2;

    GradBundle g = loss_and_param_grads(m, X, y, d);
    REQUIRE(std::isfinite(g.loss));
    std::size_t failures = fd::check_param_grads(
        m, g, [&](const Mlp& probe) { return fd::batch_loss(probe, X, y, d); });
    REQUIRE(failures == 0);
}

TEST_CASE("duplicated batch leaves loss and gradients unchanged") {
    SeededRng data_rng(91);
    Mlp m = random_net({2, 5, 2}, 4);
    std::vector<double> X = {0.1, -0.4, 0.9, 0.2, -1.1, 0.7};
    std::vector<int> y = {0, 1, 1};
    std::vector<double> X2;
    std::vector<int> y2;
    for (std::size_t i = 0; i < y.size(); ++i) {
        for (int rep = 0; rep < 2; ++rep) {
            X2.insert(X2.end(), X.begin() + i * 2, X.begin() + (i + 1) * 2);
            y2.push_back(y[i]);
        }
    }
    GradBundle a = loss_and_param_grads(m, X, y, 2);
    GradBundle b = loss_and_param_grads(m, X2, y2, 2);
    REQUIRE(a.loss == Catch::Approx(b.loss).epsilon(1e-12));
    for (std::size_t l = 0; l < m.num_layers(); ++l)
        for (std::size_t i = 0; i < a.d_weights[l].size(); ++i)
            REQUIRE(a.d_weights[l][i] == Catch::Approx(b.d_weights[l][i]).margin(1e-12));
}

TEST_CASE("empty batch is rejected") {
    Mlp m = random_net({2, 3, 2}, 1);
    REQUIRE_THROWS_AS(loss_and_param_grads(m, {}, {}, 2), ConfigError);
}

TEST_CASE("input gradient of a zero-weight net is zero") {
    Mlp m = init_mlp({3, 4, 2}, 1);
    for (auto& w : m.weights)
        for (double& v : w) v = 0.0;
    std::vector<double> g = input_gradient(m, random_input(3, 2), 1);
    for (double v : g) REQUIRE(v == 0.0);
}

TEST_CASE("input gradient matches finite differences") {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        Mlp m = random_net({4, 7, 5, 2}, 100 + trial);
        std::vector<double> x = random_input(4, 200 + trial);
        std::vector<double> analytic = input_gradient(m, x, 1);
        std::vector<double> numeric = fd::gradient(
            [&](const std::vector<double>& probe) { return forward(m, probe)[1]; }, x);
        for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(fd::close(analytic[i], numeric[i]));
    }
}

TEST_CASE("two-class gradients are antisymmetric across classes") {
    Mlp m = random_net({3, 6, 2}, 9);
    std::vector<double> x = random_input(3, 10);
    std::vector<double> g1 = input_gradient(m, x, 1);
    std::vector<double> g0 = input_gradient(m, x, 0);
    for (std::size_t i = 0; i < x.size(); ++i)
        REQUIRE(g1[i] == Catch::Approx(-g0[i]).margin(1e-15));
}

TEST_CASE("model serialization roundtrips bit-exactly") {
    Mlp m = random_net({3, 9, 4, 2}, 55);
    std::string path = "test_model_roundtrip.json";
    save_model(m, path);
    Mlp loaded = load_model(path);
    REQUIRE(loaded.layer_dims == m.layer_dims);
    REQUIRE(loaded.weights == m.weights);
    REQUIRE(loaded.biases == m.biases);
    std::remove(path.c_str());
}

TEST_CASE("truncated model file is a parse error") {
    Mlp m = random_net({2, 3, 2}, 1);
    std::string path = "test_model_truncated.json";
    save_model(m, path);
    std::ifstream in(path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path);
    out << content.substr(0, content.size() / 2);
    out.close();
    REQUIRE_THROWS_AS(load_model(path), ParseError);
    std::remove(path.c_str());
}

TEST_CASE("mismatched declared dims fail validation") {
    Mlp m = random_net({2, 3, 2}, 1);
    nlohmann::json j = mlp_to_json(m);
    j["layer_dims"] = {2, 4, 2};
    REQUIRE_THROWS_AS(mlp_from_json(j), ValidationError);
}
