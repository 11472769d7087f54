#include "sdkv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace sdkv {

void LossWeights::validate(std::size_t n_levels) const {
    if (alpha.size() != n_levels) {
        throw ConfigError("LossWeights: " + std::to_string(alpha.size()) +
                          " alpha weights for " + std::to_string(n_levels) +
                          " static levels");
    }
    for (double a : alpha)
        if (a < 0.0) throw ConfigError("LossWeights: alpha must be >= 0");
    if (beta < 0.0) throw ConfigError("LossWeights: beta must be >= 0");
    if (!(infonce_temperature > 0.0)) {
        throw ConfigError("LossWeights: temperature must be > 0");
    }
}

TaskLossResult task_loss(const std::vector<Action>& predicted,
                         const std::vector<Action>& target) {
    if (predicted.size() != target.size() || predicted.empty()) {
        throw ShapeError("task_loss: prediction/target batch sizes differ");
    }
    std::size_t entries = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i].size() != target[i].size()) {
            throw ShapeError("task_loss: action dims differ at sample " +
                             std::to_string(i));
        }
        entries += predicted[i].size();
    }
    TaskLossResult out;
    out.grad.resize(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        out.grad[i].resize(predicted[i].size());
        for (std::size_t j = 0; j < predicted[i].size(); ++j) {
            const double e = predicted[i][j] - target[i][j];
            out.value += e * e;
            out.grad[i][j] = 2.0 * e / static_cast<double>(entries);
        }
    }
    out.value /= static_cast<double>(entries);
    return out;
}

namespace {

constexpr double kNormFloor = 1e-12;

double vec_norm(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::max(std::sqrt(acc), kNormFloor);
}

double vec_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

InfoNceResult info_nce(const std::vector<ContrastiveEmbedding>& batch,
                       std::size_t level, double temperature, Rng& rng) {
    if (!(temperature > 0.0)) throw ConfigError("info_nce: temperature must be > 0");
    std::vector<std::size_t> members;  // batch indices at this level
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (batch[i].level == level) members.push_back(i);
    if (members.empty()) throw ConfigError("info_nce: no embeddings at this level");

    std::map<std::size_t, std::vector<std::size_t>> by_traj;
    for (std::size_t idx : members) by_traj[batch[idx].trajectory].push_back(idx);
    if (by_traj.size() < 2) {
        throw ConfigError("info_nce: a single trajectory offers no negatives");
    }

    InfoNceResult out;
    out.grad.assign(batch.size(), {});
    for (std::size_t i = 0; i < batch.size(); ++i)
        out.grad[i].assign(batch[i].vec.size(), 0.0);
    out.positive_of.assign(batch.size(), std::nullopt);

    std::size_t n_anchors = 0;
    for (std::size_t anchor : members) {
        const auto& same = by_traj[batch[anchor].trajectory];
        if (same.size() < 2) continue;  // no partner timestep; negatives only
        // Uniformly sampled positive among the other timesteps.
        std::vector<std::size_t> options;
        for (std::size_t idx : same)
            if (idx != anchor) options.push_back(idx);
        const std::size_t positive = options[rng.uniform_int(options.size())];
        out.positive_of[anchor] = positive;

        std::vector<std::size_t> candidates = {positive};
        for (std::size_t idx : members)
            if (batch[idx].trajectory != batch[anchor].trajectory)
                candidates.push_back(idx);

        const std::vector<double>& a = batch[anchor].vec;
        const double na = vec_norm(a);
        std::vector<double> sims(candidates.size());
        double max_logit = -1e300;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            const std::vector<double>& b = batch[candidates[c]].vec;
            sims[c] = vec_dot(a, b) / (na * vec_norm(b));
            max_logit = std::max(max_logit, sims[c] / temperature);
        }
        double denom = 0.0;
        std::vector<double> p(candidates.size());
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            p[c] = std::exp(sims[c] / temperature - max_logit);
            denom += p[c];
        }
        for (double& v : p) v /= denom;
        out.value += -std::log(p[0]);
        ++n_anchors;

        for (std::size_t c = 0; c < candidates.size(); ++c) {
            const double dl = (p[c] - (c == 0 ? 1.0 : 0.0)) / temperature;
            const std::vector<double>& b = batch[candidates[c]].vec;
            const double nb = vec_norm(b);
            const double s = sims[c];
            for (std::size_t k = 0; k < a.size(); ++k) {
                out.grad[anchor][k] += dl * (b[k] / nb - s * a[k] / na) / na;
                out.grad[candidates[c]][k] += dl * (a[k] / na - s * b[k] / nb) / nb;
            }
        }
    }
    if (n_anchors == 0) {
        throw ConfigError("info_nce: no trajectory contributes two timesteps");
    }
    out.value /= static_cast<double>(n_anchors);
    const double inv = 1.0 / static_cast<double>(n_anchors);
    for (auto& g : out.grad)
        for (double& v : g) v *= inv;
    return out;
}

GateLossResult gate_loss(double g, std::int64_t delta, const GateLossParams& params) {
    if (delta < 1) throw ConfigError("gate_loss: delta must be >= 1");
    if (!(params.lambda > 0.0)) throw ConfigError("gate_loss: lambda must be > 0");
    constexpr double kEps = 1e-7;
    const double gc = std::min(std::max(g, kEps), 1.0 - kEps);
    GateLossResult out;
    out.prior = 1.0 - std::exp(-params.lambda * static_cast<double>(delta));
    out.value = -out.prior * std::log(gc) - (1.0 - out.prior) * std::log(1.0 - gc);
    out.d_g = (gc - out.prior) / (gc * (1.0 - gc));
    return out;
}

LossBreakdown total_loss(double task, const std::vector<double>& infonce_per_level,
                         double gate, const LossWeights& weights) {
    weights.validate(infonce_per_level.size());
    LossBreakdown out;
    out.task = task;
    out.infonce_per_level = infonce_per_level;
    out.gate = gate;
    out.total = task + weights.beta * gate;
    for (std::size_t l = 0; l < infonce_per_level.size(); ++l) {
        out.total += weights.alpha[l] * infonce_per_level[l];
    }
    return out;
}

std::vector<double> pooled_static_embedding(const Matrix& frame,
                                            const MixerParams& mixer,
                                            const LayoutConfig& layout,
                                            std::size_t level) {
    Matrix rows = slot_project_level(frame, mixer, layout, level);
    std::vector<double> pooled(rows.cols, 0.0);
    for (std::size_t r = 0; r < rows.rows; ++r)
        for (std::size_t c = 0; c < rows.cols; ++c) pooled[c] += rows.at(r, c);
    for (double& v : pooled) v /= static_cast<double>(rows.rows);
    return pooled;
}

void accumulate_mixer_grad(Matrix& d_mix, const LayoutConfig& layout,
                           std::size_t level, const Matrix& frame,
                           const std::vector<double>& d_pooled, double weight) {
    const std::size_t r0 = layout.level_offset(level);
    const std::size_t rows = layout.level_sizes[level];
    const double scale = weight / static_cast<double>(rows);
    for (std::size_t j = 0; j < frame.rows; ++j) {
        double v = 0.0;
        const double* fr = frame.row_ptr(j);
        for (std::size_t k = 0; k < frame.cols; ++k) v += d_pooled[k] * fr[k];
        v *= scale;
        for (std::size_t rr = r0; rr < r0 + rows; ++rr) d_mix.at(rr, j) += v;
    }
}

namespace {

struct TensorBinding {
    double* param;
    const double* grad;
    std::size_t size;
};

void bind_layer(std::vector<TensorBinding>& out, LayerParams& p, const LayerParams& g) {
    out.push_back({p.wq.data.data(), g.wq.data.data(), p.wq.data.size()});
    out.push_back({p.wk.data.data(), g.wk.data.data(), p.wk.data.size()});
    out.push_back({p.wv.data.data(), g.wv.data.data(), p.wv.data.size()});
    out.push_back({p.wo.data.data(), g.wo.data.data(), p.wo.data.size()});
    out.push_back({p.w1.data.data(), g.w1.data.data(), p.w1.data.size()});
    out.push_back({p.b1.data(), g.b1.data(), p.b1.size()});
    out.push_back({p.w2.data.data(), g.w2.data.data(), p.w2.data.size()});
    out.push_back({p.b2.data(), g.b2.data(), p.b2.size()});
    out.push_back({p.ln1_scale.data(), g.ln1_scale.data(), p.ln1_scale.size()});
    out.push_back({p.ln1_shift.data(), g.ln1_shift.data(), p.ln1_shift.size()});
    out.push_back({p.ln2_scale.data(), g.ln2_scale.data(), p.ln2_scale.size()});
    out.push_back({p.ln2_shift.data(), g.ln2_shift.data(), p.ln2_shift.size()});
}

std::vector<TensorBinding> bind_trained(TrainState& state, PolicyGrads& pol,
                                        Matrix& d_mix, GateGrads& gate) {
    std::vector<TensorBinding> out;
    out.push_back({state.model.action_w.data.data(), pol.action_w.data.data(),
                   state.model.action_w.data.size()});
    out.push_back({state.model.action_b.data(), pol.action_b.data(),
                   state.model.action_b.size()});
    out.push_back({state.model.lnf_scale.data(), pol.lnf_scale.data(),
                   state.model.lnf_scale.size()});
    out.push_back({state.model.lnf_shift.data(), pol.lnf_shift.data(),
                   state.model.lnf_shift.size()});
    bind_layer(out, state.model.layers.back(), pol.last);
    out.push_back({state.mixer.mix.data.data(), d_mix.data.data(),
                   state.mixer.mix.data.size()});
    GateParams& gp = state.gate;
    out.push_back({gp.f_w1.data.data(), gate.f_w1.data.data(), gp.f_w1.data.size()});
    out.push_back({gp.f_b1.data(), gate.f_b1.data(), gp.f_b1.size()});
    out.push_back({gp.f_w2.data.data(), gate.f_w2.data.data(), gp.f_w2.data.size()});
    out.push_back({gp.f_b2.data(), gate.f_b2.data(), gp.f_b2.size()});
    out.push_back({gp.f_w3.data.data(), gate.f_w3.data.data(), gp.f_w3.data.size()});
    out.push_back({gp.f_b3.data(), gate.f_b3.data(), gp.f_b3.size()});
    out.push_back({gp.t_w1.data.data(), gate.t_w1.data.data(), gp.t_w1.data.size()});
    out.push_back({gp.t_b1.data(), gate.t_b1.data(), gp.t_b1.size()});
    out.push_back({gp.t_w2.data.data(), gate.t_w2.data.data(), gp.t_w2.data.size()});
    out.push_back({gp.t_b2.data(), gate.t_b2.data(), gp.t_b2.size()});
    out.push_back({gp.t_w3.data.data(), gate.t_w3.data.data(), gp.t_w3.data.size()});
    out.push_back({gp.t_b3.data(), gate.t_b3.data(), gp.t_b3.size()});
    out.push_back({gp.head_w.data.data(), gate.head_w.data.data(),
                   gp.head_w.data.size()});
    out.push_back({gp.head_b.data(), gate.head_b.data(), gp.head_b.size()});
    return out;
}

}  // namespace

LossBreakdown train_step(TrainState& state, const std::vector<Episode>& episodes,
                         const LayoutConfig& layout, const TrainConfig& config,
                         Rng& rng) {
    if (episodes.empty()) throw ConfigError("train_step: no episodes");
    const std::size_t n_levels = layout.n_levels();
    config.weights.validate(n_levels);

    const double tau = std::max(config.gumbel_tau_floor,
                                config.gumbel_tau *
                                    std::exp(-config.gumbel_anneal *
                                             static_cast<double>(state.step)));

    // --- Task loss through the action head and final block ---
    PolicyGrads pol_acc = PolicyGrads::zeros_like(state.model);
    std::vector<Action> preds, targets;
    std::vector<PolicyTape> tapes(config.batch_size);
    std::vector<std::size_t> sample_count;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
        const Episode& ep = episodes[rng.uniform_int(episodes.size())];
        const std::size_t t = rng.uniform_int(ep.frames.size());
        Matrix ctx = policy_context(ep, t, state.mixer, layout, config.window,
                                    config.frame_stride);
        forward_full_taped(state.model, ctx, tapes[b]);
        preds.push_back(action_head(state.model, tapes[b].y_last));
        targets.push_back(ep.oracle_actions[t]);
    }
    TaskLossResult task = task_loss(preds, targets);
    for (std::size_t b = 0; b < config.batch_size; ++b) {
        pol_acc.accumulate(policy_backward(state.model, tapes[b], task.grad[b]));
    }

    // --- Contrastive losses through the mixer ---
    std::vector<double> infonce_values(n_levels, 0.0);
    Matrix d_mix(state.mixer.mix.rows, state.mixer.mix.cols);
    const std::size_t n_traj = std::min(config.infonce_trajectories, episodes.size());
    if (n_traj >= 2) {
        // Distinct trajectories via a partial Fisher-Yates draw.
        std::vector<std::size_t> order(episodes.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = 0; i < n_traj; ++i) {
            const std::size_t j = i + rng.uniform_int(order.size() - i);
            std::swap(order[i], order[j]);
        }
        struct Sample {
            std::size_t episode;
            std::size_t timestep;
        };
        std::vector<Sample> samples;
        std::vector<ContrastiveEmbedding> emb;
        for (std::size_t i = 0; i < n_traj; ++i) {
            const Episode& ep = episodes[order[i]];
            for (std::size_t k = 0; k < config.infonce_timesteps; ++k) {
                const std::size_t t = rng.uniform_int(ep.frames.size());
                samples.push_back({order[i], t});
                for (std::size_t l = 0; l < n_levels; ++l) {
                    ContrastiveEmbedding e;
                    e.trajectory = order[i];
                    e.timestep = t;
                    e.level = l;
                    e.vec = pooled_static_embedding(ep.frames[t], state.mixer, layout, l);
                    emb.push_back(e);
                }
            }
        }
        for (std::size_t l = 0; l < n_levels; ++l) {
            InfoNceResult r = info_nce(emb, l, config.weights.infonce_temperature, rng);
            infonce_values[l] = r.value;
            for (std::size_t e_idx = 0; e_idx < emb.size(); ++e_idx) {
                if (emb[e_idx].level != l) continue;
                bool nonzero = false;
                for (double v : r.grad[e_idx])
                    if (v != 0.0) nonzero = true;
                if (!nonzero) continue;
                const Episode& ep = episodes[emb[e_idx].trajectory];
                accumulate_mixer_grad(d_mix, layout, l,
                                      ep.frames[emb[e_idx].timestep], r.grad[e_idx],
                                      config.weights.alpha[l]);
            }
        }
    }

    // --- Gate loss through the recache gate ---
    GateGrads gate_acc = GateGrads::zeros_like(state.gate);
    double gate_sum = 0.0;
    std::size_t gate_samples = 0;
    const std::size_t reach =
        std::max<std::size_t>(1, config.frame_stride * (config.window - 1));
    for (std::size_t b = 0; b < config.batch_size; ++b) {
        const Episode& ep = episodes[rng.uniform_int(episodes.size())];
        if (ep.frames.size() < 2) continue;
        const std::size_t max_delta =
            std::min<std::size_t>(reach, ep.frames.size() - 1);
        const std::size_t delta = 1 + rng.uniform_int(max_delta);
        const std::size_t t = delta + rng.uniform_int(ep.frames.size() - delta);
        GateTape tape;
        std::vector<double> probs =
            gate_forward_taped(state.gate, ep.frames[t - delta], ep.frames[t], tape);
        std::vector<double> d_logits(n_levels, 0.0);
        for (std::size_t l = 0; l < n_levels; ++l) {
            GateLossResult gl =
                gate_loss(probs[l], static_cast<std::int64_t>(delta), config.gate_prior);
            gate_sum += gl.value;
            d_logits[l] = gl.d_g * probs[l] * (1.0 - probs[l]);
            // Discrete refresh decision for this pair (hard forward, tempered
            // soft relaxation). The gate's gradient comes from the prior
            // cross-entropy above; the sampled decisions are tracked so the
            // training loop can report the realized refresh rate.
            const double pc = std::min(std::max(probs[l], 1e-7), 1.0 - 1e-7);
            if (gumbel_binary_sample(pc, tau, rng).hard) state.sampled_refreshes += 1;
            state.sampled_decisions += 1;
        }
        gate_acc.accumulate(gate_backward(state.gate, tape, d_logits));
        gate_samples += n_levels;
    }
    double gate_value = 0.0;
    if (gate_samples > 0) {
        gate_value = gate_sum / static_cast<double>(gate_samples);
        gate_acc.scale(config.weights.beta / static_cast<double>(gate_samples));
    }

    LossBreakdown breakdown =
        total_loss(task.value, infonce_values, gate_value, config.weights);
    if (!std::isfinite(breakdown.total)) {
        throw NumericError("train_step: non-finite loss at step " +
                           std::to_string(state.step) + " (task " +
                           std::to_string(task.value) + ", gate " +
                           std::to_string(gate_value) + ")");
    }

    // --- SGD with momentum over every trained tensor ---
    std::vector<TensorBinding> tensors = bind_trained(state, pol_acc, d_mix, gate_acc);
    if (state.velocity.size() != tensors.size()) {
        state.velocity.assign(tensors.size(), {});
        for (std::size_t i = 0; i < tensors.size(); ++i)
            state.velocity[i].assign(tensors[i].size, 0.0);
    }
    double clip_scale = 1.0;
    if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (const TensorBinding& tb : tensors)
            for (std::size_t k = 0; k < tb.size; ++k) sq += tb.grad[k] * tb.grad[k];
        const double norm = std::sqrt(sq);
        if (norm > config.clip_norm) clip_scale = config.clip_norm / norm;
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        TensorBinding& tb = tensors[i];
        std::vector<double>& vel = state.velocity[i];
        for (std::size_t k = 0; k < tb.size; ++k) {
            vel[k] = config.momentum * vel[k] + clip_scale * tb.grad[k];
            tb.param[k] -= config.learning_rate * vel[k];
        }
    }
    state.step += 1;
    return breakdown;
}

}  // namespace sdkv
