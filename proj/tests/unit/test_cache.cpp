#include <doctest.h>

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "sdkv/cache.hpp"
#include "sdkv/context.hpp"
#include "sdkv/rng.hpp"
#include "sdkv/transformer.hpp"

using namespace sdkv;

namespace {

struct Rig {
    ModelConfig model_config;
    ModelParams model;
    LayoutConfig layout;
    MixerParams mixer;
    Matrix instruction;

    Rig() {
        model_config.n_layers = 2;
        model_config.d_model = 8;
        model_config.n_heads = 2;
        model_config.d_ff = 12;
        model_config.action_dim = 2;
        model_config.max_positions = 64;
        model = init_model(model_config, 404);
        layout.level_sizes = {3, 2};
        layout.dynamic_size = 3;
        mixer.mix = Matrix::identity(layout.total());
        Rng rng(405);
        instruction = Matrix(2, 8);
        for (double& v : instruction.data) v = rng.uniform(-1.0, 1.0);
    }

    StepInputs inputs(std::vector<double> thresholds, GateProbeFn probe) const {
        StepInputs in;
        in.model = &model;
        in.mixer = &mixer;
        in.layout = &layout;
        in.thresholds = std::move(thresholds);
        in.gate_probe = std::move(probe);
        return in;
    }
};

GateProbeFn constant_gate(std::vector<double> per_level) {
    return [per_level](std::size_t level, const Matrix&, const Matrix&) {
        return per_level[level];
    };
}

// Frame with fixed static rows and per-step dynamic rows.
Matrix make_frame(const Rig& rig, const Matrix& static_rows, Rng& rng) {
    Matrix frame(rig.layout.total(), rig.model_config.d_model);
    for (std::size_t i = 0; i < rig.layout.static_total(); ++i)
        for (std::size_t j = 0; j < frame.cols; ++j)
            frame.at(i, j) = static_rows.at(i, j);
    for (std::size_t i = rig.layout.static_total(); i < frame.rows; ++i)
        for (std::size_t j = 0; j < frame.cols; ++j)
            frame.at(i, j) = rng.uniform(-1.0, 1.0);
    return frame;
}

// Independent reference: recompute everything from the current frame.
Matrix full_recompute_hidden(const Rig& rig, const Matrix& frame,
                             const std::vector<Matrix>& past_dynamics) {
    DisentangledFrame split = slot_project(frame, rig.mixer, rig.layout);
    std::vector<Matrix> history = past_dynamics;
    history.push_back(split.dynamic);
    AssembledContext ctx = assemble_context(split.static_per_level, history,
                                            rig.instruction, history.size());
    ForwardTrace trace = forward_full(rig.model, ctx.tokens);
    return trace.hidden.slice_rows(rig.layout.static_total(), ctx.tokens.rows);
}

}  // namespace

TEST_SUITE("cache") {

TEST_CASE("cold start refreshes every level") {
    Rig rig;
    Rng rng(1);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(2);
    StepInputs in = rig.inputs({0.5, 0.5}, constant_gate({0.0, 0.0}));
    StepResult r = cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);
    CHECK(r.decisions[0].refreshed);
    CHECK(r.decisions[1].refreshed);
    CHECK(state.levels[0].refresh_count == 1);
    CHECK(state.levels[1].refresh_count == 1);
    CHECK(state.levels[0].last_refresh_timestep == 0);
    CHECK(r.context_rows == 5 + 3 + 2);
}

TEST_CASE("a level-0 refresh cascades to level 1") {
    Rig rig;
    Rng rng(2);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(2);
    StepInputs cold = rig.inputs({0.5, 0.5}, constant_gate({0.0, 0.0}));
    cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, cold);

    StepInputs in = rig.inputs({0.5, 0.5}, constant_gate({1.0, 0.0}));
    StepResult r = cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);
    CHECK(r.decisions[0].refreshed);
    CHECK(r.decisions[1].refreshed);  // forced by the level-0 refresh
    CHECK(r.decisions[1].probability == 0.0);
}

TEST_CASE("a level-1 refresh does not climb to level 0") {
    Rig rig;
    Rng rng(3);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(2);
    StepInputs cold = rig.inputs({0.5, 0.5}, constant_gate({0.0, 0.0}));
    cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, cold);

    StepInputs in = rig.inputs({0.5, 0.5}, constant_gate({0.0, 1.0}));
    StepResult r = cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);
    CHECK_FALSE(r.decisions[0].refreshed);
    CHECK(r.decisions[1].refreshed);
}

TEST_CASE("closed gate on an unchanged-static stream matches full recompute bitwise") {
    Rig rig;
    Rng rng(4);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(2);
    StepInputs in = rig.inputs({0.5, 0.5}, constant_gate({0.0, 0.0}));

    std::deque<Matrix> window;
    for (int t = 0; t < 12; ++t) {
        Matrix frame = make_frame(rig, statics, rng);
        std::vector<Matrix> past(window.begin(), window.end());
        StepResult r = cache_step(state, frame, past, rig.instruction, in);
        Matrix oracle = full_recompute_hidden(rig, frame, past);
        CHECK(max_abs_diff(r.hidden, oracle) <= 1e-9);
        CHECK(r.hidden.bit_equal(oracle));
        if (t > 0) {
            CHECK_FALSE(r.decisions[0].refreshed);
            CHECK(r.decisions[0].delta == t);
        }
        window.push_back(r.current_dynamic);
        if (window.size() > 2) window.pop_front();
    }
    CHECK(state.levels[0].refresh_count == 1);
}

TEST_CASE("stale statics with a closed gate are visibly wrong") {
    Rig rig;
    Rng rng(5);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(2);
    StepInputs in = rig.inputs({0.5, 0.5}, constant_gate({0.0, 0.0}));
    cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);

    // Change the static content; the closed gate must keep serving stale KV,
    // and the harness must be able to see the difference.
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    Matrix frame = make_frame(rig, statics, rng);
    StepResult r = cache_step(state, frame, {}, rig.instruction, in);
    Matrix oracle = full_recompute_hidden(rig, frame, {});
    CHECK(max_abs_diff(r.hidden, oracle) > 1e-3);
}

TEST_CASE("force_refresh marks the level and everything below it") {
    Rig rig;
    Rng rng(6);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(2);
    StepInputs in = rig.inputs({0.5, 0.5}, constant_gate({0.0, 0.0}));
    cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);

    force_refresh(state, 1);
    StepResult r1 = cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);
    CHECK_FALSE(r1.decisions[0].refreshed);
    CHECK(r1.decisions[1].refreshed);

    force_refresh(state, 0);
    StepResult r2 = cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);
    CHECK(r2.decisions[0].refreshed);
    CHECK(r2.decisions[1].refreshed);

    CHECK_THROWS_AS(force_refresh(state, 2), ConfigError);
}

TEST_CASE("forcing a refresh every step gives average interval one") {
    Rig rig;
    Rng rng(7);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(2);
    StepInputs in = rig.inputs({0.5, 0.5}, constant_gate({0.0, 0.0}));
    for (int t = 0; t < 10; ++t) {
        force_refresh(state, 0);
        cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);
    }
    RefreshStats s = stats(state);
    CHECK(s.levels[0].average_interval == 1.0);
    CHECK(s.levels[1].average_interval == 1.0);
}

TEST_CASE("stats arithmetic: refreshes at steps 0, 5, 10 over 15 steps") {
    Rig rig;
    Rng rng(8);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(2);
    StepInputs in = rig.inputs({0.5, 0.5}, constant_gate({0.0, 0.0}));
    for (int t = 0; t < 15; ++t) {
        if (t == 5 || t == 10) force_refresh(state, 0);
        cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);
    }
    RefreshStats s = stats(state);
    CHECK(s.levels[0].refresh_count == 3);
    CHECK(s.levels[0].average_interval == 5.0);
}

TEST_CASE("stats before any step is an error") {
    CacheState state = make_cache_state(2);
    CHECK_THROWS_AS(stats(state), ConfigError);
}

TEST_CASE("cascade invariant holds under randomized gate outputs") {
    Rig rig;
    Rng rng(9);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(2);
    Rng gate_rng(10);
    GateProbeFn random_gate = [&gate_rng](std::size_t, const Matrix&, const Matrix&) {
        return gate_rng.uniform01();
    };
    StepInputs in = rig.inputs({0.5, 0.5}, random_gate);
    for (int t = 0; t < 500; ++t) {
        StepResult r = cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in);
        if (r.decisions[0].refreshed) CHECK(r.decisions[1].refreshed);
    }
}

TEST_CASE("higher thresholds never shorten the refresh interval on a fixed stream") {
    Rig rig;
    // Drift gate: probability grows with the distance between the reference
    // and the current frame, which grows with the time since refresh.
    GateProbeFn drift_gate = [](std::size_t, const Matrix& ref, const Matrix& cur) {
        double acc = max_abs_diff(ref, cur);
        return acc > 1.0 ? 1.0 : acc;
    };
    const int steps = 60;
    auto run = [&](double d1, double d2) {
        Rng rng(11);  // identical stream per run
        Matrix statics(5, 8);
        for (double& v : statics.data) v = rng.uniform(-0.1, 0.1);
        CacheState state = make_cache_state(2);
        StepInputs in = rig.inputs({d1, d2}, drift_gate);
        Matrix frame(rig.layout.total(), 8);
        for (int t = 0; t < steps; ++t) {
            // Slow linear drift on every token.
            for (std::size_t i = 0; i < frame.rows; ++i)
                for (std::size_t j = 0; j < frame.cols; ++j)
                    frame.at(i, j) = statics.at(i % 5, j) + 0.08 * t;
            cache_step(state, frame, {}, rig.instruction, in);
        }
        return stats(state);
    };
    const double deltas[] = {0.3, 0.4, 0.7, 0.8};
    double prev_l1 = 0.0, prev_l2 = 0.0;
    for (double d : deltas) {
        RefreshStats s = run(d, d);
        CHECK(s.levels[0].average_interval >= prev_l1);
        CHECK(s.levels[1].average_interval >= prev_l2);
        prev_l1 = s.levels[0].average_interval;
        prev_l2 = s.levels[1].average_interval;
    }
    CHECK(run(0.8, 0.8).levels[0].average_interval >
          run(0.4, 0.4).levels[0].average_interval);
}

TEST_CASE("level and threshold count mismatches are rejected") {
    Rig rig;
    Rng rng(12);
    Matrix statics(5, 8);
    for (double& v : statics.data) v = rng.uniform(-1.0, 1.0);
    CacheState state = make_cache_state(3);
    StepInputs in = rig.inputs({0.5, 0.5}, constant_gate({0.0, 0.0}));
    CHECK_THROWS_AS(
        (cache_step(state, make_frame(rig, statics, rng), {}, rig.instruction, in)),
        ConfigError);
}

}  // TEST_SUITE
