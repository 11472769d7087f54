#pragma once

#include <cstdint>
#include <vector>

#include "sdkv/cache.hpp"
#include "sdkv/context.hpp"
#include "sdkv/transformer.hpp"
#include "sdkv/world.hpp"

namespace sdkv {

// Strided history: frame indices {t-(w-1)s, ..., t-s, t}, clamped at zero,
// oldest first. The policy context always ends at the current frame.
std::vector<std::size_t> window_frame_indices(std::size_t t, std::size_t window,
                                              std::size_t stride);

// Assembles the policy context for episode frame t: one copy of the current
// frame's static slots, the strided dynamic history, then the instruction.
Matrix policy_context(const Episode& episode, std::size_t t, const MixerParams& mixer,
                      const LayoutConfig& layout, std::size_t window,
                      std::size_t stride, std::uint64_t* mixer_macs = nullptr);

enum class RolloutMode { Cached, Full, FixedStep };

struct RolloutOptions {
    RolloutMode mode = RolloutMode::Cached;
    std::size_t fixed_step_interval = 1;  // FixedStep: refresh every k steps
    std::size_t window = 8;               // dynamic frames in context (T+1)
    std::size_t frame_stride = 4;
    std::vector<double> thresholds;  // per level (Cached mode)
    std::size_t step_budget = 200;
    bool memoryless = false;  // evaluate with a single-frame context (T=0)
};

struct EpisodeRollout {
    EpisodeMetrics metrics;
    std::vector<RefreshStats::Level> recache;  // empty in Full mode
    FlopBreakdown backbone_flops;              // per-step forward cost
    FlopBreakdown refresh_flops;               // static recompute cost (cached modes)
    std::uint64_t gate_macs = 0;
    std::uint64_t head_macs = 0;
    std::uint64_t mixer_macs = 0;
    std::size_t steps = 0;
    std::size_t context_rows = 0;  // steady-state context length
};

// Closed-loop evaluation of the policy on one episode's scenario. The world
// is re-simulated from the episode's initial state; frames are rendered with
// the episode's own scene so cached and full modes see identical streams.
EpisodeRollout run_episode(const Episode& episode, const WorldConfig& world_config,
                           const ModelParams& model, const MixerParams& mixer,
                           const GateParams& gate, const LayoutConfig& layout,
                           const RolloutOptions& options);

}  // namespace sdkv
