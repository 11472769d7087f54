#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sdkv/gate.hpp"
#include "sdkv/matrix.hpp"
#include "sdkv/rng.hpp"

using namespace sdkv;

namespace {

GateConfig small_config() {
    GateConfig cfg;
    cfg.n_tokens = 6;
    cfg.d_in = 4;
    cfg.feature_hidden = 3;
    cfg.token_hidden = 2;
    cfg.n_levels = 2;
    return cfg;
}

Matrix random_frame(Rng& rng, std::size_t n, std::size_t d) {
    Matrix m(n, d);
    for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
}

// Straight-line re-implementation of the gate pipeline with explicit loops.
std::vector<double> oracle_gate(const GateParams& p, const Matrix& z_prev,
                                const Matrix& z_curr) {
    const GateConfig& cfg = p.config;
    const std::size_t n = cfg.n_tokens, d = cfg.d_in;
    const std::size_t h1 = cfg.feature_hidden, h2 = cfg.token_hidden;

    auto dense = [](const std::vector<std::vector<double>>& x, const Matrix& w,
                    const std::vector<double>& b, bool relu) {
        std::vector<std::vector<double>> out(x.size(),
                                             std::vector<double>(w.cols, 0.0));
        for (std::size_t i = 0; i < x.size(); ++i) {
            for (std::size_t j = 0; j < w.cols; ++j) {
                double acc = b[j];
                for (std::size_t k = 0; k < w.rows; ++k) acc += x[i][k] * w.at(k, j);
                out[i][j] = relu && acc < 0.0 ? 0.0 : acc;
            }
        }
        return out;
    };

    std::vector<std::vector<double>> rows(n, std::vector<double>(2 * d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            rows[i][j] = z_prev.at(i, j);
            rows[i][d + j] = z_curr.at(i, j);
        }
    auto f = dense(dense(dense(rows, p.f_w1, p.f_b1, true), p.f_w2, p.f_b2, true),
                   p.f_w3, p.f_b3, false);

    std::vector<std::vector<double>> channels(h1, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < h1; ++j) channels[j][i] = f[i][j];
    auto t = dense(dense(dense(channels, p.t_w1, p.t_b1, true), p.t_w2, p.t_b2, true),
                   p.t_w3, p.t_b3, false);

    std::vector<double> flat;
    for (const auto& row : t) flat.insert(flat.end(), row.begin(), row.end());
    std::vector<double> probs(cfg.n_levels);
    for (std::size_t l = 0; l < cfg.n_levels; ++l) {
        double acc = p.head_b[l];
        for (std::size_t i = 0; i < flat.size(); ++i) acc += p.head_w.at(l, i) * flat[i];
        probs[l] = 1.0 / (1.0 + std::exp(-acc));
    }
    return probs;
}

}  // namespace

TEST_SUITE("gate") {

TEST_CASE("zero-initialized heads output exactly one half") {
    GateParams p = init_gate(small_config(), 5);
    Rng rng(6);
    Matrix z = random_frame(rng, 6, 4);
    std::vector<double> probs = gate_forward(p, z, z);
    for (double g : probs) CHECK(g == 0.5);
}

TEST_CASE("probabilities stay strictly inside the unit interval") {
    GateParams p = init_gate(small_config(), 9);
    Rng head_rng(10);
    for (double& v : p.head_w.data) v = head_rng.uniform(-2.0, 2.0);
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        Matrix a = random_frame(rng, 6, 4);
        Matrix b = random_frame(rng, 6, 4);
        for (double g : gate_forward(p, a, b)) {
            CHECK(g > 0.0);
            CHECK(g < 1.0);
        }
    }
}

TEST_CASE("pipeline matches the straight-line oracle to 1e-12") {
    GateParams p = init_gate(small_config(), 13);
    Rng head_rng(14);
    for (double& v : p.head_w.data) v = head_rng.uniform(-1.0, 1.0);
    for (double& v : p.head_b) v = head_rng.uniform(-0.5, 0.5);
    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a = random_frame(rng, 6, 4);
        Matrix b = random_frame(rng, 6, 4);
        std::vector<double> got = gate_forward(p, a, b);
        std::vector<double> want = oracle_gate(p, a, b);
        for (std::size_t l = 0; l < got.size(); ++l)
            CHECK(std::abs(got[l] - want[l]) <= 1e-12);
    }
}

TEST_CASE("gate is exactly reproducible on identical inputs") {
    GateParams p = init_gate(small_config(), 17);
    Rng rng(18);
    Matrix a = random_frame(rng, 6, 4);
    Matrix b = random_frame(rng, 6, 4);
    std::vector<double> g1 = gate_forward(p, a, b);
    std::vector<double> g2 = gate_forward(p, a, b);
    CHECK(g1 == g2);
}

TEST_CASE("gate mac counter matches the closed-form cost") {
    GateConfig cfg = small_config();
    GateParams p = init_gate(cfg, 19);
    Rng rng(20);
    Matrix a = random_frame(rng, 6, 4);
    Matrix b = random_frame(rng, 6, 4);
    std::uint64_t macs = 0;
    gate_forward(p, a, b, &macs);
    const std::uint64_t n = cfg.n_tokens, d = cfg.d_in;
    const std::uint64_t h1 = cfg.feature_hidden, h2 = cfg.token_hidden;
    const std::uint64_t expected = n * 2 * d * h1 + 2 * n * h1 * h1 +
                                   h1 * n * h2 + 2 * h1 * h2 * h2 +
                                   cfg.n_levels * h1 * h2;
    CHECK(macs == expected);
}

TEST_CASE("gate shape validation") {
    GateParams p = init_gate(small_config(), 21);
    Rng rng(22);
    Matrix good = random_frame(rng, 6, 4);
    Matrix bad = random_frame(rng, 5, 4);
    CHECK_THROWS_AS((gate_forward(p, good, bad)), ShapeError);
}

TEST_CASE("gate backward matches central differences on every tensor") {
    GateConfig cfg = small_config();
    GateParams params = init_gate(cfg, 23);
    Rng head_rng(24);
    for (double& v : params.head_w.data) v = head_rng.uniform(-0.8, 0.8);
    // Push pre-activations away from the ReLU kink so central differences
    // stay on one side of it.
    for (auto* bias : {&params.f_b1, &params.f_b2, &params.f_b3, &params.t_b1,
                       &params.t_b2, &params.t_b3}) {
        for (double& v : *bias) v = head_rng.uniform(0.05, 0.3);
    }
    Rng rng(25);
    Matrix a = random_frame(rng, 6, 4);
    Matrix b = random_frame(rng, 6, 4);
    const std::vector<double> weights = {0.7, -0.4};

    auto loss_of = [&]() {
        std::vector<double> probs = gate_forward(params, a, b);
        double acc = 0.0;
        for (std::size_t l = 0; l < probs.size(); ++l) acc += weights[l] * probs[l];
        return acc;
    };

    GateTape tape;
    std::vector<double> probs = gate_forward_taped(params, a, b, tape);
    std::vector<double> d_logits(probs.size());
    for (std::size_t l = 0; l < probs.size(); ++l)
        d_logits[l] = weights[l] * probs[l] * (1.0 - probs[l]);
    GateGrads grads = gate_backward(params, tape, d_logits);

    struct Tensor {
        const char* name;
        double* p;
        double* g;
        std::size_t n;
    };
    const Tensor tensors[] = {
        {"f_w1", params.f_w1.data.data(), grads.f_w1.data.data(), params.f_w1.data.size()},
        {"f_b1", params.f_b1.data(), grads.f_b1.data(), params.f_b1.size()},
        {"f_w2", params.f_w2.data.data(), grads.f_w2.data.data(), params.f_w2.data.size()},
        {"f_b2", params.f_b2.data(), grads.f_b2.data(), params.f_b2.size()},
        {"f_w3", params.f_w3.data.data(), grads.f_w3.data.data(), params.f_w3.data.size()},
        {"f_b3", params.f_b3.data(), grads.f_b3.data(), params.f_b3.size()},
        {"t_w1", params.t_w1.data.data(), grads.t_w1.data.data(), params.t_w1.data.size()},
        {"t_b1", params.t_b1.data(), grads.t_b1.data(), params.t_b1.size()},
        {"t_w2", params.t_w2.data.data(), grads.t_w2.data.data(), params.t_w2.data.size()},
        {"t_b2", params.t_b2.data(), grads.t_b2.data(), params.t_b2.size()},
        {"t_w3", params.t_w3.data.data(), grads.t_w3.data.data(), params.t_w3.data.size()},
        {"t_b3", params.t_b3.data(), grads.t_b3.data(), params.t_b3.size()},
        {"head_w", params.head_w.data.data(), grads.head_w.data.data(),
         params.head_w.data.size()},
        {"head_b", params.head_b.data(), grads.head_b.data(), params.head_b.size()},
    };
    for (const Tensor& t : tensors) {
        INFO(std::string(t.name));
        std::vector<double> x(t.p, t.p + t.n);
        std::vector<double> analytic(t.g, t.g + t.n);
        auto f = [&](const std::vector<double>& v) {
            std::copy(v.begin(), v.end(), t.p);
            const double loss = loss_of();
            std::copy(x.begin(), x.end(), t.p);
            return loss;
        };
        GradCheckReport rep = grad_check(f, x, analytic, 1e-5);
        CHECK(rep.max_relative_error < 1e-4);
    }
}

TEST_CASE("gumbel hard sampling is Bernoulli with the requested probability") {
    const int draws = 100000;
    for (double p : {0.5, 0.75}) {
        Rng rng(1000 + static_cast<std::uint64_t>(p * 100));
        int refreshes = 0;
        for (int i = 0; i < draws; ++i)
            if (gumbel_binary_sample(p, 1.0, rng).hard) ++refreshes;
        const double freq = static_cast<double>(refreshes) / draws;
        const double sigma = std::sqrt(p * (1.0 - p) / draws);
        CHECK(std::abs(freq - p) <= 3.0 * sigma);
    }
}

TEST_CASE("low temperature drives soft samples to the corners") {
    // The perturbed-logit gap ln(p/(1-p)) + L has L ~ Logistic(0,1), so a draw
    // lands within 1e-3 of a corner iff |gap| >= tau * ln(999). Outside that
    // tie set (analytic mass ~3.4% here) every sample must be cornered.
    const double p = 0.4, tau = 0.01;
    const double gap_needed = tau * std::log(999.0);
    const double mu = std::log(p / (1.0 - p));
    const double tie_mass = 1.0 / (1.0 + std::exp(-(gap_needed - mu))) -
                            1.0 / (1.0 + std::exp(-(-gap_needed - mu)));
    Rng rng(31);
    const int draws = 20000;
    int cornered = 0;
    std::vector<double> dists;
    for (int i = 0; i < draws; ++i) {
        GumbelSample s = gumbel_binary_sample(p, tau, rng);
        const double corner_dist = std::min(s.soft, 1.0 - s.soft);
        if (corner_dist <= 1e-3) ++cornered;
        dists.push_back(corner_dist);
        CHECK((s.soft > 0.5) == s.hard);
    }
    const double expected = 1.0 - tie_mass;
    const double freq = static_cast<double>(cornered) / draws;
    const double sigma = std::sqrt(expected * (1.0 - expected) / draws);
    CHECK(std::abs(freq - expected) <= 3.0 * sigma);
    std::nth_element(dists.begin(), dists.begin() + draws / 2, dists.end());
    CHECK(dists[draws / 2] < 1e-9);  // the typical draw is hard-cornered
}

TEST_CASE("straight-through soft gradient matches finite differences") {
    Rng rng(37);
    for (int trial = 0; trial < 30; ++trial) {
        const double u1 = rng.uniform_open01();
        const double u2 = rng.uniform_open01();
        const double tau = rng.uniform(0.4, 2.0);
        const double p0 = rng.uniform(0.15, 0.85);
        auto f = [&](const std::vector<double>& v) {
            return gumbel_binary_sample(v[0], tau, u1, u2).soft;
        };
        const double analytic = gumbel_binary_sample(p0, tau, u1, u2).d_soft_dp;
        GradCheckReport rep = grad_check(f, {p0}, {analytic}, 1e-5);
        CHECK(rep.max_relative_error < 1e-4);
    }
}

TEST_CASE("gumbel rejects degenerate probabilities and temperatures") {
    Rng rng(41);
    CHECK_THROWS_AS((gumbel_binary_sample(0.0, 1.0, rng)), NumericError);
    CHECK_THROWS_AS((gumbel_binary_sample(1.0, 1.0, rng)), NumericError);
    CHECK_THROWS_AS((gumbel_binary_sample(0.5, 0.0, rng)), NumericError);
}

TEST_CASE("threshold uses a strict comparison") {
    CHECK(threshold_decide(0.81, 0.8));
    CHECK_FALSE(threshold_decide(0.8, 0.8));
    CHECK_FALSE(threshold_decide(0.0, 0.0));
}

}  // TEST_SUITE
