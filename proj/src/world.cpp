#include "sdkv/world.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sdkv {

namespace {

constexpr std::size_t kAppearanceTokens = 6;  // two per object: A, B, stove
constexpr std::size_t kStateTokens = 6;
// State slot order within the scatter.
enum StateSlot : std::size_t {
    kEffector = 0,
    kCanAState = 1,
    kCanBState = 2,
    kStoveState = 3,
    kGripState = 4,
    kOccupancyState = 5,
};

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

int round_move(double v) {
    if (v > 0.5) return 1;
    if (v < -0.5) return -1;
    return 0;
}

ObjectId other_can(ObjectId id) {
    return id == ObjectId::CanA ? ObjectId::CanB : ObjectId::CanA;
}

void set_can_pos(WorldState& state, ObjectId id, const Vec2& pos) {
    if (id == ObjectId::CanA) {
        state.can_a = pos;
    } else {
        state.can_b = pos;
    }
}

}  // namespace

std::size_t WorldConfig::background_tokens() const {
    return static_cast<std::size_t>(
        std::llround(static_fraction * static_cast<double>(n_tokens)));
}

void WorldConfig::validate() const {
    if (grid_w < 4 || grid_h < 6) throw ConfigError("world: grid must be >= 4x6");
    if (feature_dim < 12) throw ConfigError("world: feature_dim must be >= 12");
    if (static_fraction < 0.0 || static_fraction >= 1.0) {
        throw ConfigError("world: static_fraction outside [0, 1)");
    }
    const std::size_t bg = background_tokens();
    if (n_tokens < bg + kAppearanceTokens + kStateTokens) {
        throw ConfigError("world: n_tokens " + std::to_string(n_tokens) +
                          " leaves fewer than " +
                          std::to_string(kAppearanceTokens + kStateTokens) +
                          " non-background tokens at static_fraction " +
                          std::to_string(static_fraction));
    }
    if (min_duration < 1 || max_duration < min_duration) {
        throw ConfigError("world: bad duration range");
    }
    if (step_budget < 10) throw ConfigError("world: step_budget too small");
}

int manhattan(const Vec2& a, const Vec2& b) {
    return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}

int chebyshev(const Vec2& a, const Vec2& b) {
    return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

void world_step(WorldState& state, const Action& action, const WorldConfig& config) {
    if (action.size() != kActionDim) {
        throw ShapeError("world_step: action must have " + std::to_string(kActionDim) +
                         " components");
    }
    const int dx = round_move(action[0]);
    const int dy = round_move(action[1]);
    state.effector.x = clampi(state.effector.x + dx, 0, static_cast<int>(config.grid_w) - 1);
    state.effector.y = clampi(state.effector.y + dy, 0, static_cast<int>(config.grid_h) - 1);
    if (state.held) set_can_pos(state, *state.held, state.effector);

    const double grip = action[2];
    const ObjectId first = state.first_can;
    if (grip > 0.5 && !state.held) {
        // Grasp the nearest can within reach (ties favor can A).
        std::optional<ObjectId> pick;
        int best = 2;
        for (ObjectId id : {ObjectId::CanA, ObjectId::CanB}) {
            const int dist = chebyshev(state.effector, state.can_pos(id));
            if (dist <= 1 && dist < best) {
                best = dist;
                pick = id;
            }
        }
        if (pick) {
            state.held = pick;
            if (state.stove_occupant == pick) {
                state.stove_occupant.reset();
                state.elapsed_on_stove = 0;
                if (*pick == first && state.heat_of(first) >= 1) {
                    state.first_removed_after_heat = true;
                }
            }
            set_can_pos(state, *pick, state.effector);
        }
    } else if (grip < -0.5 && state.held) {
        const ObjectId id = *state.held;
        if (!state.stove_occupant && chebyshev(state.effector, state.stove) <= 1) {
            state.stove_occupant = id;
            state.elapsed_on_stove = 0;
            set_can_pos(state, id, state.stove);
        } else {
            set_can_pos(state, id, state.effector);
            if (id == first && state.first_removed_after_heat) {
                state.first_set_down_after_heat = true;
            }
        }
        state.held.reset();
    }

    // Heating accrues at the end of the step.
    if (state.stove_occupant) {
        state.elapsed_on_stove += 1;
        if (*state.stove_occupant == ObjectId::CanA) {
            state.heat_a += 1;
        } else {
            state.heat_b += 1;
        }
    }

    // Phase latches; transitions are monotone under any action sequence.
    if (state.phase == Phase::HeatFirst && state.first_removed_after_heat) {
        state.phase = Phase::ReturnFirst;
    }
    if (state.phase == Phase::ReturnFirst && state.first_set_down_after_heat) {
        state.phase = Phase::HeatSecond;
    }
    if (state.phase == Phase::HeatSecond && state.stove_occupant == other_can(first)) {
        state.phase = Phase::Done;
    }
}

namespace {

// One 4-directional step toward the target, x axis first.
Action move_toward(const Vec2& from, const Vec2& to) {
    if (from.x != to.x) return {from.x < to.x ? 1.0 : -1.0, 0.0, 0.0};
    if (from.y != to.y) return {0.0, from.y < to.y ? 1.0 : -1.0, 0.0};
    return {0.0, 0.0, 0.0};
}

Action grasp() { return {0.0, 0.0, 1.0}; }
Action release() { return {0.0, 0.0, -1.0}; }
Action wait_action() { return {0.0, 0.0, 0.0}; }

}  // namespace

Action oracle_action(const WorldState& state, const Instruction& instruction,
                     const Vec2& first_can_origin) {
    const ObjectId first = instruction.first_can;
    const ObjectId second = other_can(first);
    switch (state.phase) {
        case Phase::HeatFirst: {
            if (state.held == first) {
                if (manhattan(state.effector, state.stove) <= 1) return release();
                return move_toward(state.effector, state.stove);
            }
            if (state.stove_occupant == first) {
                if (state.elapsed_on_stove == state.target_duration) return grasp();
                return wait_action();
            }
            if (manhattan(state.effector, state.can_pos(first)) <= 1) return grasp();
            return move_toward(state.effector, state.can_pos(first));
        }
        case Phase::ReturnFirst: {
            if (state.held == first) {
                if (state.effector == first_can_origin) return release();
                return move_toward(state.effector, first_can_origin);
            }
            // Defensive: not holding it yet (cannot happen for the oracle's
            // own trace, but keeps the controller total).
            if (manhattan(state.effector, state.can_pos(first)) <= 1) return grasp();
            return move_toward(state.effector, state.can_pos(first));
        }
        case Phase::HeatSecond: {
            if (state.held == second) {
                if (manhattan(state.effector, state.stove) <= 1) return release();
                return move_toward(state.effector, state.stove);
            }
            if (manhattan(state.effector, state.can_pos(second)) <= 1) return grasp();
            return move_toward(state.effector, state.can_pos(second));
        }
        case Phase::Done: break;
    }
    throw NumericError("oracle_action: phase is Done");
}

RenderContext make_render_context(const WorldConfig& config, std::uint64_t episode_seed) {
    config.validate();
    RenderContext ctx;
    const std::size_t n = config.n_tokens;
    const std::size_t n_bg = config.background_tokens();
    const std::size_t d = config.feature_dim;

    // Token scatter is a property of the encoder, fixed across episodes.
    Rng enc_rng(config.encoder_seed);
    ctx.scatter.resize(n);
    for (std::size_t i = 0; i < n; ++i) ctx.scatter[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = enc_rng.uniform_int(i + 1);
        std::swap(ctx.scatter[i], ctx.scatter[j]);
    }
    ctx.roles.assign(n, TokenRole::Distractor);
    for (std::size_t slot = 0; slot < n; ++slot) {
        TokenRole role = TokenRole::Distractor;
        if (slot < n_bg) {
            role = TokenRole::Background;
        } else if (slot < n_bg + kAppearanceTokens) {
            role = TokenRole::Appearance;
        } else if (slot < n_bg + kAppearanceTokens + kStateTokens) {
            role = TokenRole::State;
        }
        ctx.roles[ctx.scatter[slot]] = role;
    }
    ctx.held_marker.resize(d);
    for (double& v : ctx.held_marker) v = 0.5 * enc_rng.uniform(-1.0, 1.0);

    // Scene content is episode-specific.
    Rng scene_rng(derive_seed(episode_seed, 0xB06));
    ctx.background = Matrix(n_bg, d);
    for (double& v : ctx.background.data) v = scene_rng.uniform(-1.0, 1.0);
    ctx.appearance = Matrix(kAppearanceTokens, d);
    for (double& v : ctx.appearance.data) v = scene_rng.uniform(-1.0, 1.0);
    ctx.noise_seed = derive_seed(episode_seed, 0x4015);
    return ctx;
}

Matrix render_frame(const RenderContext& ctx, const WorldConfig& config,
                    const WorldState& state, std::int64_t t) {
    const std::size_t n = config.n_tokens;
    const std::size_t d = config.feature_dim;
    const std::size_t n_bg = config.background_tokens();
    const double inv_w = 1.0 / static_cast<double>(config.grid_w - 1);
    const double inv_h = 1.0 / static_cast<double>(config.grid_h - 1);
    Matrix frame(n, d);

    for (std::size_t slot = 0; slot < n; ++slot) {
        const std::size_t idx = ctx.scatter[slot];
        double* row = frame.row_ptr(idx);
        if (slot < n_bg) {
            const double* src = ctx.background.row_ptr(slot);
            std::copy(src, src + d, row);
            continue;
        }
        if (slot < n_bg + kAppearanceTokens) {
            const std::size_t app = slot - n_bg;
            const double* src = ctx.appearance.row_ptr(app);
            std::copy(src, src + d, row);
            // Appearance shifts only while the object is held (the gripper
            // occludes it); it reverts on release, so the current frame never
            // reveals which can was handled earlier.
            const bool held =
                (app < 2 && state.held == ObjectId::CanA) ||
                (app >= 2 && app < 4 && state.held == ObjectId::CanB);
            if (held) {
                for (std::size_t j = 0; j < d; ++j) row[j] += ctx.held_marker[j];
            }
            continue;
        }
        // State and distractor tokens change every step.
        Rng token_rng(derive_seed(ctx.noise_seed,
                                  static_cast<std::uint64_t>(t) * 1024 + slot));
        if (slot < n_bg + kAppearanceTokens + kStateTokens) {
            const std::size_t s = slot - n_bg - kAppearanceTokens;
            switch (s) {
                case kEffector:
                    row[0] = 1.0;
                    row[1] = state.effector.x * inv_w;
                    row[2] = state.effector.y * inv_h;
                    break;
                case kCanAState:
                    row[0] = 1.0;
                    row[1] = state.can_a.x * inv_w;
                    row[2] = state.can_a.y * inv_h;
                    row[3] = state.stove_occupant == ObjectId::CanA ? 1.0 : 0.0;
                    row[4] = state.held == ObjectId::CanA ? 1.0 : 0.0;
                    break;
                case kCanBState:
                    row[0] = 1.0;
                    row[1] = state.can_b.x * inv_w;
                    row[2] = state.can_b.y * inv_h;
                    row[3] = state.stove_occupant == ObjectId::CanB ? 1.0 : 0.0;
                    row[4] = state.held == ObjectId::CanB ? 1.0 : 0.0;
                    break;
                case kStoveState:
                    row[0] = 1.0;
                    row[1] = state.stove.x * inv_w;
                    row[2] = state.stove.y * inv_h;
                    row[3] = state.stove_occupant ? 1.0 : 0.0;
                    break;
                case kGripState:
                    row[0] = state.held ? 1.0 : 0.0;
                    row[1] = state.held == ObjectId::CanA ? 1.0 : 0.0;
                    row[2] = state.held == ObjectId::CanB ? 1.0 : 0.0;
                    break;
                case kOccupancyState:
                    row[0] = state.stove_occupant ? 1.0 : 0.0;
                    row[1] = state.stove_occupant == ObjectId::CanA ? 1.0 : 0.0;
                    row[2] = state.stove_occupant == ObjectId::CanB ? 1.0 : 0.0;
                    break;
                default: break;
            }
            for (std::size_t j = 6; j < d; ++j) {
                row[j] = config.noise_level * token_rng.uniform(-1.0, 1.0);
            }
        } else {
            // Clutter: fresh content every step.
            for (std::size_t j = 0; j < d; ++j) row[j] = token_rng.uniform(-1.0, 1.0);
        }
    }
    return frame;
}

Matrix render_instruction(const WorldConfig& config, const Instruction& instruction) {
    Matrix tokens(2, config.feature_dim);
    tokens.at(0, 0) = instruction.first_can == ObjectId::CanA ? 1.0 : 0.0;
    tokens.at(0, 1) = instruction.first_can == ObjectId::CanB ? 1.0 : 0.0;
    tokens.at(0, 2) = 1.0;
    tokens.at(1, 0) = static_cast<double>(instruction.duration) /
                      static_cast<double>(config.max_duration);
    tokens.at(1, 1) = 1.0;
    return tokens;
}

Episode generate_episode(std::uint64_t seed, const WorldConfig& config) {
    config.validate();
    Rng rng(derive_seed(seed, 0xE915));
    Episode ep;
    ep.seed = seed;

    const int w = static_cast<int>(config.grid_w);
    const int h = static_cast<int>(config.grid_h);
    // Spawn regions: cans and effector in the upper operation band, the stove
    // in the bottom band. The bands are disjoint, so releasing a can at its
    // original position can never drop it onto the stove.
    const int op_band = h / 2;
    auto sample_op_cell = [&]() {
        return Vec2{static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w))),
                    static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(op_band)))};
    };

    WorldState state;
    state.stove = {1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - 2))),
                   h - 2 + static_cast<int>(rng.uniform_int(2))};
    state.can_a = sample_op_cell();
    do {
        state.can_b = sample_op_cell();
    } while (chebyshev(state.can_a, state.can_b) < 3);
    do {
        state.effector = sample_op_cell();
    } while (state.effector == state.can_a || state.effector == state.can_b);

    ep.instruction.first_can = rng.uniform_int(2) == 0 ? ObjectId::CanA : ObjectId::CanB;
    ep.instruction.duration =
        static_cast<int>(config.min_duration +
                         rng.uniform_int(config.max_duration - config.min_duration + 1));
    state.first_can = ep.instruction.first_can;
    state.target_duration = ep.instruction.duration;

    ep.initial_a = state.can_a;
    ep.initial_b = state.can_b;
    ep.initial_effector = state.effector;
    ep.stove_pos = state.stove;
    ep.instruction_tokens = render_instruction(config, ep.instruction);

    RenderContext ctx = make_render_context(config, seed);
    ep.static_mask.assign(config.n_tokens, false);
    for (std::size_t idx = 0; idx < config.n_tokens; ++idx) {
        ep.static_mask[idx] = ctx.roles[idx] == TokenRole::Background;
    }

    const Vec2 origin = ep.initial_first_can();
    for (std::size_t t = 0; t < config.step_budget; ++t) {
        if (state.phase == Phase::Done) break;
        ep.states.push_back(state);
        ep.frames.push_back(render_frame(ctx, config, state, static_cast<std::int64_t>(t)));
        Action a = oracle_action(state, ep.instruction, origin);
        ep.oracle_actions.push_back(a);
        world_step(state, a, config);
    }
    if (state.phase != Phase::Done) {
        throw NumericError("generate_episode: oracle did not finish within " +
                           std::to_string(config.step_budget) + " steps (seed " +
                           std::to_string(seed) + ")");
    }
    ep.final_state = state;
    return ep;
}

EpisodeMetrics evaluate_episode(const RolloutTrace& trace, const Episode& episode,
                                double reset_threshold) {
    const ObjectId first = episode.instruction.first_can;
    const ObjectId second = other_can(first);
    EpisodeMetrics m;

    const WorldState& final_state = trace.final_state;
    m.on_stove_success = final_state.stove_occupant == second;
    m.doneness_error = std::abs(final_state.heat_of(first) -
                                episode.instruction.duration);

    // Reset is scored where the first can sat when the third task began (or
    // at the end, if it never did), and only counts once the can was heated.
    Vec2 reset_pos = final_state.can_pos(first);
    for (const WorldState& s : trace.states) {
        if (s.phase == Phase::HeatSecond || s.phase == Phase::Done) {
            reset_pos = s.can_pos(first);
            break;
        }
    }
    m.position_reset_error = manhattan(reset_pos, episode.initial_first_can());
    const bool heated = final_state.heat_of(first) >= 1;
    m.position_reset_success = heated && m.position_reset_error <= reset_threshold;
    return m;
}

}  // namespace sdkv
