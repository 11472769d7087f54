#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sdkv/context.hpp"
#include "sdkv/gate.hpp"
#include "sdkv/rollout.hpp"
#include "sdkv/transformer.hpp"
#include "sdkv/world.hpp"

namespace sdkv {

struct LossWeights {
    std::vector<double> alpha = {0.2, 0.1};  // per static level
    double beta = 0.1;
    double infonce_temperature = 0.07;

    void validate(std::size_t n_levels) const;
};

struct GateLossParams {
    double lambda = 0.05;
};

struct LossBreakdown {
    double task = 0.0;
    std::vector<double> infonce_per_level;
    double gate = 0.0;
    double total = 0.0;
};

// Mean squared error over a batch of action vectors, with the gradient
// w.r.t. each prediction entry.
struct TaskLossResult {
    double value = 0.0;
    std::vector<std::vector<double>> grad;
};
TaskLossResult task_loss(const std::vector<Action>& predicted,
                         const std::vector<Action>& target);

// One pooled static embedding per (trajectory, timestep, level).
struct ContrastiveEmbedding {
    std::size_t trajectory = 0;
    std::size_t timestep = 0;
    std::size_t level = 0;
    std::vector<double> vec;
};

// Same-trajectory pairs attract, cross-trajectory pairs repel. Each anchor is
// matched with one uniformly sampled other timestep of its own trajectory;
// every embedding from a different trajectory is a negative. Cosine
// similarities divided by the temperature feed a cross-entropy toward the
// positive. Grad entries align with the input batch (zeros off-level).
struct InfoNceResult {
    double value = 0.0;
    std::vector<std::vector<double>> grad;
    // Chosen positive (batch index) per anchor, keyed by anchor batch index.
    std::vector<std::optional<std::size_t>> positive_of;
};
InfoNceResult info_nce(const std::vector<ContrastiveEmbedding>& batch,
                       std::size_t level, double temperature, Rng& rng);

// Binary cross-entropy toward the staleness prior p = 1 - exp(-lambda*delta).
struct GateLossResult {
    double value = 0.0;
    double d_g = 0.0;     // (g - p) / (g (1 - g)) at the clamped g
    double prior = 0.0;   // p
};
GateLossResult gate_loss(double g, std::int64_t delta, const GateLossParams& params);

LossBreakdown total_loss(double task, const std::vector<double>& infonce_per_level,
                         double gate, const LossWeights& weights);

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double clip_norm = 5.0;  // global gradient-norm clip; <= 0 disables
    std::size_t batch_size = 8;
    std::size_t window = 8;        // dynamic frames per context (T+1)
    std::size_t frame_stride = 4;
    std::size_t infonce_trajectories = 4;
    std::size_t infonce_timesteps = 2;
    LossWeights weights;
    GateLossParams gate_prior;
    double gumbel_tau = 1.0;
    double gumbel_tau_floor = 0.5;
    double gumbel_anneal = 5e-4;  // tau(step) = max(floor, tau*exp(-anneal*step))
};

struct TrainState {
    ModelParams model;
    MixerParams mixer;
    GateParams gate;
    std::uint64_t step = 0;
    // Momentum buffers keyed by the stable trained-tensor order.
    std::vector<std::vector<double>> velocity;
    // Straight-through refresh decisions drawn during training.
    std::uint64_t sampled_refreshes = 0;
    std::uint64_t sampled_decisions = 0;
};

// One SGD(+momentum) step over a batch sampled from the episodes:
// task loss backpropagates through the action head and final block, the
// contrastive losses through the slot mixer, and the gate loss through the
// recache gate (refresh decisions drawn with straight-through Gumbel
// samples). Deterministic given the rng state. Throws NumericError if any
// loss turns non-finite.
LossBreakdown train_step(TrainState& state, const std::vector<Episode>& episodes,
                         const LayoutConfig& layout, const TrainConfig& config,
                         Rng& rng);

// Pooled per-level static embedding of one frame under the current mixer.
std::vector<double> pooled_static_embedding(const Matrix& frame,
                                            const MixerParams& mixer,
                                            const LayoutConfig& layout,
                                            std::size_t level);

// Chain rule from a pooled-embedding gradient into the mixer rows of the
// level (mean pooling spreads the same per-input weight over every slot row).
void accumulate_mixer_grad(Matrix& d_mix, const LayoutConfig& layout,
                           std::size_t level, const Matrix& frame,
                           const std::vector<double>& d_pooled, double weight);

}  // namespace sdkv
