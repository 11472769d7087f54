#include "sdkv/cache.hpp"

#include <string>

namespace sdkv {

CacheState make_cache_state(std::size_t n_levels) {
    if (n_levels < 1) throw ConfigError("cache: need at least one static level");
    CacheState state;
    state.levels.resize(n_levels);
    state.force_stale.assign(n_levels, false);
    return state;
}

void force_refresh(CacheState& state, std::size_t level) {
    if (level >= state.levels.size()) {
        throw ConfigError("force_refresh: level " + std::to_string(level) +
                          " out of range");
    }
    for (std::size_t l = level; l < state.levels.size(); ++l)
        state.force_stale[l] = true;
}

RefreshStats stats(const CacheState& state) {
    if (!state.initialized()) {
        throw ConfigError("stats: no steps have been processed");
    }
    RefreshStats out;
    for (const LevelCache& level : state.levels) {
        RefreshStats::Level s;
        s.refresh_count = level.refresh_count;
        s.total_steps = state.total_steps;
        s.average_interval =
            level.refresh_count == 0
                ? 0.0
                : static_cast<double>(state.total_steps) /
                      static_cast<double>(level.refresh_count);
        out.levels.push_back(s);
    }
    return out;
}

GateProbeFn make_gate_probe(const GateParams& gate, std::uint64_t* gate_macs) {
    return [&gate, gate_macs](std::size_t level, const Matrix& ref,
                              const Matrix& cur) {
        return gate_forward(gate, ref, cur, gate_macs)[level];
    };
}

namespace {

// Concatenate the per-layer KV of levels [0, n_levels) into one causal prefix.
std::vector<LayerKV> concat_static_kv(const CacheState& state, std::size_t n_layers) {
    std::vector<LayerKV> out(n_layers);
    for (std::size_t layer = 0; layer < n_layers; ++layer) {
        std::size_t rows = 0, cols = 0;
        for (const LevelCache& level : state.levels) {
            rows += level.kv[layer].keys.rows;
            cols = level.kv[layer].keys.cols;
        }
        Matrix keys(rows, cols), values(rows, cols);
        std::size_t row = 0;
        for (const LevelCache& level : state.levels) {
            const Matrix& k = level.kv[layer].keys;
            const Matrix& v = level.kv[layer].values;
            std::copy(k.data.begin(), k.data.end(), keys.row_ptr(row));
            std::copy(v.data.begin(), v.data.end(), values.row_ptr(row));
            row += k.rows;
        }
        out[layer].keys = std::move(keys);
        out[layer].values = std::move(values);
    }
    return out;
}

}  // namespace

StepResult cache_step(CacheState& state, const Matrix& frame,
                      const std::vector<Matrix>& dynamic_window,
                      const Matrix& instruction, const StepInputs& inputs) {
    const LayoutConfig& layout = *inputs.layout;
    const std::size_t n_levels = layout.n_levels();
    if (state.levels.size() != n_levels) {
        throw ConfigError("cache_step: state has " +
                          std::to_string(state.levels.size()) +
                          " levels, layout has " + std::to_string(n_levels));
    }
    if (inputs.thresholds.size() != n_levels) {
        throw ConfigError("cache_step: threshold count does not match level count");
    }
    const bool cold = !state.initialized();
    if (!cold) {
        for (const LevelCache& level : state.levels) {
            if (level.last_refresh_timestep < 0 || level.kv.empty()) {
                throw ConfigError(
                    "cache_step: state was used without the first-step refresh");
            }
        }
    }
    const std::int64_t t = state.current_timestep + 1;

    StepResult result;
    bool cascade = false;
    std::vector<bool> refreshed(n_levels, false);
    for (std::size_t l = 0; l < n_levels; ++l) {
        GateDecision d;
        d.level = l;
        if (cold) {
            d.probability = 1.0;
            d.delta = 1;
            d.refreshed = true;
        } else {
            d.delta = t - state.levels[l].last_refresh_timestep;
            d.probability =
                inputs.gate_probe(l, state.levels[l].reference_frame, frame);
            d.refreshed = threshold_decide(d.probability, inputs.thresholds[l]) ||
                          cascade || state.force_stale[l];
        }
        cascade = cascade || d.refreshed;
        refreshed[l] = d.refreshed;
        result.decisions.push_back(d);
    }
    state.force_stale.assign(n_levels, false);

    // Recompute static KV for the refreshed suffix of levels. The cascade
    // guarantees the refreshed set is {l0, ..., L-1}, so cached KV of levels
    // above l0 forms a valid causal prefix for the incremental recompute.
    std::size_t l0 = n_levels;
    for (std::size_t l = 0; l < n_levels; ++l) {
        if (refreshed[l]) {
            l0 = l;
            break;
        }
    }
    if (l0 < n_levels) {
        Matrix new_statics(layout.static_total() - layout.level_offset(l0), frame.cols);
        std::size_t row = 0;
        for (std::size_t l = l0; l < n_levels; ++l) {
            Matrix slots =
                slot_project_level(frame, *inputs.mixer, layout, l, &result.mixer_macs);
            std::copy(slots.data.begin(), slots.data.end(), new_statics.row_ptr(row));
            row += slots.rows;
        }
        std::vector<LayerKV> prefix;
        if (l0 > 0) {
            prefix.resize(inputs.model->config.n_layers);
            for (std::size_t layer = 0; layer < prefix.size(); ++layer) {
                std::size_t rows = 0, cols = frame.cols;
                for (std::size_t l = 0; l < l0; ++l) {
                    rows += state.levels[l].kv[layer].keys.rows;
                    cols = state.levels[l].kv[layer].keys.cols;
                }
                Matrix keys(rows, cols), values(rows, cols);
                std::size_t r = 0;
                for (std::size_t l = 0; l < l0; ++l) {
                    const Matrix& k = state.levels[l].kv[layer].keys;
                    const Matrix& v = state.levels[l].kv[layer].values;
                    std::copy(k.data.begin(), k.data.end(), keys.row_ptr(r));
                    std::copy(v.data.begin(), v.data.end(), values.row_ptr(r));
                    r += k.rows;
                }
                prefix[layer].keys = std::move(keys);
                prefix[layer].values = std::move(values);
            }
        }
        ForwardTrace trace = l0 == 0
                                 ? forward_full(*inputs.model, new_statics)
                                 : forward_incremental(*inputs.model, prefix, new_statics);
        result.refresh_flops += trace.flops;
        for (std::size_t l = l0; l < n_levels; ++l) {
            LevelCache& level = state.levels[l];
            level.kv.assign(inputs.model->config.n_layers, LayerKV{});
            const std::size_t begin = layout.level_offset(l);
            const std::size_t end = begin + layout.level_sizes[l];
            for (std::size_t layer = 0; layer < level.kv.size(); ++layer) {
                level.kv[layer].keys = trace.kv[layer].keys.slice_rows(begin, end);
                level.kv[layer].values = trace.kv[layer].values.slice_rows(begin, end);
            }
            level.last_refresh_timestep = t;
            level.reference_frame = frame;
            level.refresh_count += 1;
        }
    }

    // Dynamic path: project the current frame's dynamic slots, then run the
    // whole dynamic window plus instruction incrementally over the static
    // prefix. Dynamic positions shift every step, so they are never cached.
    result.current_dynamic =
        slot_project_dynamic(frame, *inputs.mixer, layout, &result.mixer_macs);
    std::size_t dyn_rows = result.current_dynamic.rows;
    for (const Matrix& m : dynamic_window) dyn_rows += m.rows;
    Matrix new_tokens(dyn_rows + instruction.rows, frame.cols);
    std::size_t row = 0;
    for (const Matrix& m : dynamic_window) {
        std::copy(m.data.begin(), m.data.end(), new_tokens.row_ptr(row));
        row += m.rows;
    }
    std::copy(result.current_dynamic.data.begin(), result.current_dynamic.data.end(),
              new_tokens.row_ptr(row));
    row += result.current_dynamic.rows;
    if (instruction.rows > 0) {
        std::copy(instruction.data.begin(), instruction.data.end(),
                  new_tokens.row_ptr(row));
    }

    std::vector<LayerKV> static_kv =
        concat_static_kv(state, inputs.model->config.n_layers);
    ForwardTrace trace = forward_incremental(*inputs.model, static_kv, new_tokens);
    result.hidden = std::move(trace.hidden);
    result.backbone_flops = trace.flops;
    result.context_rows = layout.static_total() + new_tokens.rows;

    state.current_timestep = t;
    state.total_steps += 1;
    return result;
}

}  // namespace sdkv
