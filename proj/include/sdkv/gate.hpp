#pragma once

#include <cstdint>
#include <vector>

#include "sdkv/matrix.hpp"
#include "sdkv/rng.hpp"

namespace sdkv {

struct GateConfig {
    std::size_t n_tokens = 48;
    std::size_t d_in = 64;
    std::size_t feature_hidden = 16;  // h1: width after the feature-axis stack
    std::size_t token_hidden = 8;     // h2: width after the token-axis stack
    std::size_t n_levels = 2;
    double gumbel_temperature = 1.0;

    void validate() const;
};

// Two stacked 3-layer MLPs: the first runs per token over the concatenated
// feature axis (2*d_in -> h1), the embeddings are then transposed so the
// second runs per channel over the token axis (n_tokens -> h2). The flattened
// h1*h2 features feed one linear head per level; everything except the heads
// is shared across levels.
struct GateParams {
    GateConfig config;
    std::uint64_t init_seed = 0;
    Matrix f_w1;  // 2*d_in x h1
    std::vector<double> f_b1;
    Matrix f_w2;  // h1 x h1
    std::vector<double> f_b2;
    Matrix f_w3;  // h1 x h1
    std::vector<double> f_b3;
    Matrix t_w1;  // n_tokens x h2
    std::vector<double> t_b1;
    Matrix t_w2;  // h2 x h2
    std::vector<double> t_b2;
    Matrix t_w3;  // h2 x h2
    std::vector<double> t_b3;
    Matrix head_w;  // n_levels x (h1*h2)
    std::vector<double> head_b;
};

struct GateDecision {
    std::size_t level = 0;
    double probability = 0.0;
    bool refreshed = false;
    std::int64_t delta = 1;  // timesteps since this level's last refresh
};

// Trunk weights uniform in +-1/sqrt(fan_in); heads start at zero so every
// level opens at probability exactly 0.5.
GateParams init_gate(const GateConfig& config, std::uint64_t seed);

// Per-level refresh probabilities for a (reference, current) frame pair.
std::vector<double> gate_forward(const GateParams& params, const Matrix& z_prev,
                                 const Matrix& z_curr, std::uint64_t* macs = nullptr);

struct GateTape {
    Matrix concat;            // n x 2d
    Matrix f1_pre, f1_act;    // n x h1
    Matrix f2_pre, f2_act;    // n x h1
    Matrix f3_out;            // n x h1
    Matrix transposed;        // h1 x n
    Matrix t1_pre, t1_act;    // h1 x h2
    Matrix t2_pre, t2_act;    // h1 x h2
    Matrix t3_out;            // h1 x h2
    std::vector<double> flat; // h1*h2
    std::vector<double> logits;
    std::vector<double> probs;
};

std::vector<double> gate_forward_taped(const GateParams& params, const Matrix& z_prev,
                                       const Matrix& z_curr, GateTape& tape);

struct GateGrads {
    Matrix f_w1, f_w2, f_w3, t_w1, t_w2, t_w3, head_w;
    std::vector<double> f_b1, f_b2, f_b3, t_b1, t_b2, t_b3, head_b;

    static GateGrads zeros_like(const GateParams& params);
    void accumulate(const GateGrads& other);
    void scale(double s);
};

// Backpropagates d(loss)/d(logit) per level through heads and both trunks.
GateGrads gate_backward(const GateParams& params, const GateTape& tape,
                        const std::vector<double>& d_logits);

// Binary Gumbel-softmax over {refresh, reuse} with logits (ln p, ln(1-p)).
// The hard sample is the argmax of the Gumbel-perturbed logits, so it is an
// exact Bernoulli(p) draw regardless of temperature; the soft sample is the
// refresh coordinate of the tempered softmax and carries the gradient for
// straight-through training. d_soft_dp holds d(soft)/dp at fixed noise.
struct GumbelSample {
    bool hard = false;
    double soft = 0.0;
    double d_soft_dp = 0.0;
};

// Noise passed explicitly (u1, u2 uniform in (0,1)) so callers can hold it
// fixed for finite-difference checks.
GumbelSample gumbel_binary_sample(double p, double tau, double u1, double u2);
GumbelSample gumbel_binary_sample(double p, double tau, Rng& rng);

// Refresh iff g exceeds the threshold strictly.
bool threshold_decide(double g, double delta);

}  // namespace sdkv
