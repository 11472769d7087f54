#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sdkv/matrix.hpp"
#include "sdkv/rng.hpp"

namespace sdkv {

// Grid-world episodic task: heat one can for an instructed duration, return
// it to where it stood, then heat the other can. Solving it requires
// remembering what happened (which can was heated), where (the original
// position) and when (elapsed heating time) -- none of which is rendered
// into the current frame.
struct WorldConfig {
    std::size_t grid_w = 10;
    std::size_t grid_h = 10;
    std::size_t n_tokens = 48;
    std::size_t feature_dim = 64;
    double static_fraction = 0.75;  // share of constant background tokens
    double noise_level = 0.02;      // per-step noise on state/distractor tokens
    std::size_t min_duration = 20;
    std::size_t max_duration = 60;
    std::size_t step_budget = 400;
    std::uint64_t encoder_seed = 1234;  // fixes the token scatter + held marker

    std::size_t background_tokens() const;
    void validate() const;
};

struct Vec2 {
    int x = 0;
    int y = 0;
    bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }
};

int manhattan(const Vec2& a, const Vec2& b);
int chebyshev(const Vec2& a, const Vec2& b);

enum class ObjectId : int { CanA = 0, CanB = 1 };
enum class Phase : int { HeatFirst = 0, ReturnFirst = 1, HeatSecond = 2, Done = 3 };

struct Instruction {
    ObjectId first_can = ObjectId::CanA;
    int duration = 20;  // heating steps requested
};

struct WorldState {
    Vec2 can_a, can_b, stove, effector;
    std::optional<ObjectId> held;
    std::optional<ObjectId> stove_occupant;
    int elapsed_on_stove = 0;  // of the current occupant
    Phase phase = Phase::HeatFirst;
    int target_duration = 0;           // instruction echo, drives the phase machine
    ObjectId first_can = ObjectId::CanA;  // instruction echo
    // Bookkeeping the renderer never sees.
    int heat_a = 0, heat_b = 0;
    bool first_removed_after_heat = false;
    bool first_set_down_after_heat = false;

    Vec2 can_pos(ObjectId id) const { return id == ObjectId::CanA ? can_a : can_b; }
    int heat_of(ObjectId id) const { return id == ObjectId::CanA ? heat_a : heat_b; }
};

// Actions are continuous 3-vectors (dx, dy, grip): movement rounds to
// {-1,0,1} per axis, grip > 0.5 grasps and grip < -0.5 releases.
using Action = std::vector<double>;
constexpr std::size_t kActionDim = 3;

// Applies one action. Held objects follow the effector; releasing next to a
// free stove puts the can on it; heating accrues at the end of the step.
void world_step(WorldState& state, const Action& action, const WorldConfig& config);

// Scripted controller with full state access; needs the first can's original
// position to undo the move. Total for phase != Done.
Action oracle_action(const WorldState& state, const Instruction& instruction,
                     const Vec2& first_can_origin);

// Token roles at scattered, config-determined indices.
enum class TokenRole : int {
    Background = 0,
    Appearance = 1,  // two per object; gains a marker while held
    State = 2,       // positions/flags of effector, cans, stove, grip, occupancy
    Distractor = 3,  // fresh clutter every step
};

// Per-episode rendering context: scene-specific background/appearance content
// over a config-fixed token scatter.
struct RenderContext {
    std::vector<std::size_t> scatter;   // role slot -> token index
    std::vector<TokenRole> roles;       // per token index
    Matrix background;                  // n_background x d
    Matrix appearance;                  // 6 x d (two per object: A, B, stove)
    std::vector<double> held_marker;    // d
    std::uint64_t noise_seed = 0;
};

RenderContext make_render_context(const WorldConfig& config, std::uint64_t episode_seed);

// Renders the state at timestep t. Background tokens are bit-identical across
// the episode; appearance tokens change only while their object is held;
// state and distractor tokens change every step. Neither elapsed heating time
// nor any original position is emitted.
Matrix render_frame(const RenderContext& ctx, const WorldConfig& config,
                    const WorldState& state, std::int64_t t);

// Instruction rendered as two tokens: which can first, and the normalized
// target duration.
Matrix render_instruction(const WorldConfig& config, const Instruction& instruction);

struct Episode {
    std::uint64_t seed = 0;
    Instruction instruction;
    Matrix instruction_tokens;
    std::vector<Matrix> frames;          // one per step, pre-action
    std::vector<Action> oracle_actions;  // aligned with frames
    std::vector<bool> static_mask;       // per token, identical across frames
    Vec2 initial_a, initial_b, initial_effector, stove_pos;
    std::vector<WorldState> states;  // pre-action states; states.back() is final
    WorldState final_state;

    Vec2 initial_first_can() const {
        return instruction.first_can == ObjectId::CanA ? initial_a : initial_b;
    }
};

// Deterministic per (config, seed): samples the layout within the spawn
// regions, rolls the oracle to completion, and renders every frame. Throws
// NumericError if the oracle fails to finish within the step budget.
Episode generate_episode(std::uint64_t seed, const WorldConfig& config);

struct EpisodeMetrics {
    bool on_stove_success = false;
    double position_reset_error = 0.0;
    bool position_reset_success = false;
    double doneness_error = 0.0;
};

struct RolloutTrace {
    std::vector<WorldState> states;  // pre-action states
    WorldState final_state;
};

// Scores an executed rollout against the episode's instruction and initial
// layout. Reset is scored at the first HeatSecond step (or at the end) and
// requires the first can to have been heated at all; doneness compares the
// first can's accumulated heating steps with the instructed duration.
EpisodeMetrics evaluate_episode(const RolloutTrace& trace, const Episode& episode,
                                double reset_threshold = 1.0);

}  // namespace sdkv
