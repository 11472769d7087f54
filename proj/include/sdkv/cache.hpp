#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "sdkv/context.hpp"
#include "sdkv/gate.hpp"
#include "sdkv/transformer.hpp"

namespace sdkv {

// Per-level cache bookkeeping. Level 0 is the most persistent; refreshing a
// level forces every less persistent level to refresh in the same step.
struct LevelCache {
    std::vector<LayerKV> kv;  // per layer, rows = this level's slot count
    std::int64_t last_refresh_timestep = -1;
    Matrix reference_frame;  // raw encoder tokens seen at the last refresh
    std::uint64_t refresh_count = 0;
};

struct CacheState {
    std::vector<LevelCache> levels;
    std::int64_t current_timestep = -1;  // last processed step
    std::uint64_t total_steps = 0;
    std::vector<bool> force_stale;  // consumed by the next step()

    bool initialized() const { return current_timestep >= 0; }
};

CacheState make_cache_state(std::size_t n_levels);

// Marks the given level and every less persistent one stale for the next
// step.
void force_refresh(CacheState& state, std::size_t level);

struct RefreshStats {
    struct Level {
        std::uint64_t refresh_count = 0;
        std::uint64_t total_steps = 0;
        double average_interval = 0.0;  // total_steps / refresh_count
    };
    std::vector<Level> levels;
};

// Requires at least one processed step.
RefreshStats stats(const CacheState& state);

// Probability source consulted per level: production wraps gate_forward;
// tests may inject arbitrary values. Receives (level, reference, current).
using GateProbeFn =
    std::function<double(std::size_t, const Matrix&, const Matrix&)>;

GateProbeFn make_gate_probe(const GateParams& gate, std::uint64_t* gate_macs = nullptr);

struct StepInputs {
    const ModelParams* model = nullptr;
    const MixerParams* mixer = nullptr;
    const LayoutConfig* layout = nullptr;
    std::vector<double> thresholds;  // per level
    GateProbeFn gate_probe;
};

struct StepResult {
    Matrix hidden;  // hidden states for the dynamic window + instruction rows
    Matrix current_dynamic;  // this frame's projected dynamic slots (for the caller's window)
    std::vector<GateDecision> decisions;
    FlopBreakdown backbone_flops;   // dynamic-path forward (the per-step cost)
    FlopBreakdown refresh_flops;    // static recompute cost, when any level refreshed
    std::uint64_t mixer_macs = 0;   // vision-surrogate slot projection cost
    std::size_t context_rows = 0;   // statics + dynamics + instruction
};

// One cached-inference timestep: consults the gate per level against that
// level's reference frame, applies the threshold rule and the refresh
// cascade, recomputes refreshed static KV via a prefix forward, then runs the
// dynamic window plus instruction incrementally over the static cache.
// dynamic_window holds the already-projected dynamic segments of earlier
// frames (oldest first); the current frame's dynamic slots are projected
// inside and appended after them. The first step after make_cache_state
// refreshes every level.
StepResult cache_step(CacheState& state, const Matrix& frame,
                      const std::vector<Matrix>& dynamic_window,
                      const Matrix& instruction, const StepInputs& inputs);

}  // namespace sdkv
