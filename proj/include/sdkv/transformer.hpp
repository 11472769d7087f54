#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdkv/flops.hpp"
#include "sdkv/matrix.hpp"

namespace sdkv {

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t action_dim = 3;
    // Learned absolute position table, indexed by slot position in the
    // assembled context. Cached tokens keep their original slot positions,
    // which is what makes prefix reuse exact.
    std::size_t max_positions = 1024;

    std::size_t head_dim() const { return d_model / n_heads; }
    void validate() const;
};

struct LayerParams {
    Matrix wq, wk, wv, wo;  // d_model x d_model
    Matrix w1;              // d_model x d_ff
    std::vector<double> b1;
    Matrix w2;  // d_ff x d_model
    std::vector<double> b2;
    std::vector<double> ln1_scale, ln1_shift;
    std::vector<double> ln2_scale, ln2_shift;
};

struct ModelParams {
    ModelConfig config;
    std::uint64_t init_seed = 0;
    Matrix pos_embedding;  // max_positions x d_model
    std::vector<LayerParams> layers;
    std::vector<double> lnf_scale, lnf_shift;
    Matrix action_w;  // d_model x action_dim
    std::vector<double> action_b;
};

// Per-layer cached key/value projections, one row per cached token.
struct LayerKV {
    Matrix keys;    // n_cached x d_model
    Matrix values;  // n_cached x d_model
};

struct ForwardTrace {
    Matrix hidden;            // one row per *new* token, post final norm
    std::vector<LayerKV> kv;  // per layer: cached rows followed by new rows
    FlopBreakdown flops;
};

// Intermediates of the final block and heads, captured during a forward so
// the task loss can be backpropagated through exactly that slice of the
// model (everything earlier stays frozen).
struct PolicyTape {
    std::size_t n_tokens = 0;
    Matrix x_in;                   // input to the last block
    Matrix ln1, ln1_xhat;          // LN1 output and normalized pre-scale
    Matrix k_all, v_all;           // last block K/V (all rows)
    std::vector<Matrix> q_last;    // per head: 1 x head_dim (scaled)
    std::vector<Matrix> probs_last;  // per head: 1 x n_tokens
    std::vector<double> attn_cat_last, h_last;
    std::vector<double> ln2_last, ln2_xhat_last;
    double ln2_mean = 0.0, ln2_inv_std = 0.0;
    std::vector<double> f1_last, gelu_last, x_out_last;
    std::vector<double> lnf_xhat_last;
    double lnf_mean = 0.0, lnf_inv_std = 0.0;
    std::vector<double> y_last;  // final-norm output at the last row
};

// Gradients for the trained slice: action head, final norm, last block.
struct PolicyGrads {
    Matrix action_w;
    std::vector<double> action_b;
    std::vector<double> lnf_scale, lnf_shift;
    LayerParams last;  // same shapes as the last block's parameters

    static PolicyGrads zeros_like(const ModelParams& params);
    void accumulate(const PolicyGrads& other);
    void scale(double s);
};

// Deterministic init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for all
// weight matrices, ones/zeros for norm scales/shifts and biases. Same seed
// gives bit-identical parameters.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

// Full-sequence causal forward; position i attends to positions <= i.
ForwardTrace forward_full(const ModelParams& params, const Matrix& tokens);

// Incremental forward: computes projections and feedforward only for
// new_tokens, attending over cached plus new keys. New token i sits at
// absolute position n_cached + i. Output KV is cached KV with the new rows
// appended.
ForwardTrace forward_incremental(const ModelParams& params,
                                 const std::vector<LayerKV>& cached,
                                 const Matrix& new_tokens);

// As forward_full, but also captures the last-block tape for training.
ForwardTrace forward_full_taped(const ModelParams& params, const Matrix& tokens,
                                PolicyTape& tape);

// Linear action decoder over the last token's hidden state.
std::vector<double> action_head(const ModelParams& params,
                                const std::vector<double>& hidden_last,
                                std::uint64_t* macs = nullptr);

// Backpropagates d(loss)/d(action) through the head, final norm, and last
// block, treating the block input as constant. Returns gradients for every
// trained tensor.
PolicyGrads policy_backward(const ModelParams& params, const PolicyTape& tape,
                            const std::vector<double>& d_action);

// Named views over every parameter tensor, in a stable order (used by the
// checkpoint format, the optimizer, and bit-identity tests).
struct ParamRef {
    std::string name;
    double* data;
    std::size_t rows, cols;  // cols == 0 marks a flat vector
};
std::vector<ParamRef> param_refs(ModelParams& params);

}  // namespace sdkv
