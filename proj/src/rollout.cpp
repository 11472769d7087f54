#include "sdkv/rollout.hpp"

#include <deque>

namespace sdkv {

std::vector<std::size_t> window_frame_indices(std::size_t t, std::size_t window,
                                              std::size_t stride) {
    if (window < 1 || stride < 1) throw ConfigError("window and stride must be >= 1");
    std::vector<std::size_t> out(window);
    for (std::size_t k = 0; k < window; ++k) {
        const std::size_t back = (window - 1 - k) * stride;
        out[k] = back >= t ? 0 : t - back;
    }
    return out;
}

Matrix policy_context(const Episode& episode, std::size_t t, const MixerParams& mixer,
                      const LayoutConfig& layout, std::size_t window,
                      std::size_t stride, std::uint64_t* mixer_macs) {
    if (t >= episode.frames.size()) throw ConfigError("policy_context: t out of range");
    DisentangledFrame current =
        slot_project(episode.frames[t], mixer, layout, static_cast<std::int64_t>(t),
                     mixer_macs);
    std::vector<Matrix> history;
    for (std::size_t idx : window_frame_indices(t, window, stride)) {
        if (idx == t) {
            history.push_back(current.dynamic);
        } else {
            history.push_back(
                slot_project_dynamic(episode.frames[idx], mixer, layout, mixer_macs));
        }
    }
    AssembledContext ctx = assemble_context(current.static_per_level, history,
                                            episode.instruction_tokens, window);
    return ctx.tokens;
}

EpisodeRollout run_episode(const Episode& episode, const WorldConfig& world_config,
                           const ModelParams& model, const MixerParams& mixer,
                           const GateParams& gate, const LayoutConfig& layout,
                           const RolloutOptions& options) {
    const std::size_t window = options.memoryless ? 1 : options.window;
    const std::size_t stride = options.frame_stride;

    RenderContext render_ctx = make_render_context(world_config, episode.seed);
    EpisodeRollout out;
    RolloutTrace trace;
    WorldState state = episode.states.front();

    CacheState cache = make_cache_state(layout.n_levels());
    StepInputs inputs;
    inputs.model = &model;
    inputs.mixer = &mixer;
    inputs.layout = &layout;
    inputs.thresholds = options.thresholds;
    if (inputs.thresholds.empty()) inputs.thresholds.assign(layout.n_levels(), 0.5);
    GateProbeFn probe;
    switch (options.mode) {
        case RolloutMode::Cached:
            probe = make_gate_probe(gate, &out.gate_macs);
            break;
        case RolloutMode::FixedStep:
            // The learned gate is replaced by a clock; thresholds above 1
            // disable probability-driven refreshes entirely.
            probe = [](std::size_t, const Matrix&, const Matrix&) { return 0.0; };
            inputs.thresholds.assign(layout.n_levels(), 1.1);
            break;
        case RolloutMode::Full:
            break;
    }
    inputs.gate_probe = probe;

    // Projected dynamic slots of every past frame, for strided reassembly.
    std::vector<Matrix> past_dynamics;

    for (std::size_t t = 0; t < options.step_budget && state.phase != Phase::Done;
         ++t) {
        trace.states.push_back(state);
        Matrix frame =
            render_frame(render_ctx, world_config, state, static_cast<std::int64_t>(t));

        std::vector<Matrix> past;
        if (!options.memoryless) {
            // All indices except the last (the current frame); early history
            // clamps to frame 0, so the context shape matches training.
            const std::vector<std::size_t> idxs = window_frame_indices(t, window, stride);
            Matrix pad;
            for (std::size_t k = 0; k + 1 < idxs.size(); ++k) {
                if (idxs[k] < t) {
                    past.push_back(past_dynamics[idxs[k]]);
                } else {  // only at t == 0: pad with the current frame's slots
                    if (pad.rows == 0) pad = slot_project_dynamic(frame, mixer, layout);
                    past.push_back(pad);
                }
            }
        }

        std::vector<double> hidden_last;
        if (options.mode == RolloutMode::Full) {
            DisentangledFrame split =
                slot_project(frame, mixer, layout, static_cast<std::int64_t>(t),
                             &out.mixer_macs);
            std::vector<Matrix> history = past;
            history.push_back(split.dynamic);
            AssembledContext ctx = assemble_context(
                split.static_per_level, history, episode.instruction_tokens, window);
            ForwardTrace fwd = forward_full(model, ctx.tokens);
            out.backbone_flops += fwd.flops;
            out.context_rows = ctx.tokens.rows;
            const std::size_t last = fwd.hidden.rows - 1;
            hidden_last.assign(fwd.hidden.row_ptr(last), fwd.hidden.row_ptr(last) + fwd.hidden.cols);
            past_dynamics.push_back(std::move(split.dynamic));
        } else {
            if (options.mode == RolloutMode::FixedStep &&
                t % options.fixed_step_interval == 0 && t > 0) {
                force_refresh(cache, 0);
            }
            StepResult step = cache_step(cache, frame, past, episode.instruction_tokens,
                                         inputs);
            out.backbone_flops += step.backbone_flops;
            out.refresh_flops += step.refresh_flops;
            out.mixer_macs += step.mixer_macs;
            out.context_rows = step.context_rows;
            const std::size_t last = step.hidden.rows - 1;
            hidden_last.assign(step.hidden.row_ptr(last),
                               step.hidden.row_ptr(last) + step.hidden.cols);
            past_dynamics.push_back(std::move(step.current_dynamic));
        }

        Action action = action_head(model, hidden_last, &out.head_macs);
        world_step(state, action, world_config);
        out.steps += 1;
    }
    trace.final_state = state;
    out.metrics = evaluate_episode(trace, episode);
    if (options.mode != RolloutMode::Full && out.steps > 0) {
        for (const RefreshStats::Level& level : stats(cache).levels)
            out.recache.push_back(level);
    }
    return out;
}

}  // namespace sdkv
