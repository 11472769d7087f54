#include "sdkv/transformer.hpp"

#include <cmath>
#include <limits>

#include "sdkv/rng.hpp"

namespace sdkv {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_prime(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
    return cdf + x * pdf;
}

Matrix col_slice(const Matrix& m, std::size_t c0, std::size_t c1) {
    Matrix out(m.rows, c1 - c0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = m.at(i, j);
    return out;
}

Matrix vconcat(const Matrix& top, const Matrix& bottom) {
    if (top.rows == 0) return bottom;
    Matrix out(top.rows + bottom.rows, top.cols);
    std::copy(top.data.begin(), top.data.end(), out.data.begin());
    std::copy(bottom.data.begin(), bottom.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(top.data.size()));
    return out;
}

void fill_uniform(Rng& rng, Matrix& m, double bound) {
    for (double& v : m.data) v = rng.uniform(-bound, bound);
}

// One pre-norm block over the new rows. cached holds previously computed K/V
// for this layer (may have zero rows); offset is the absolute position of the
// first new row. Captures the training tape when requested.
Matrix block_forward(const LayerParams& layer, const ModelConfig& cfg,
                     const Matrix& x, const LayerKV& cached, std::size_t offset,
                     FlopBreakdown& flops, LayerKV& kv_out, PolicyTape* tape) {
    const std::size_t n_new = x.rows;
    const std::size_t d = cfg.d_model;
    const std::size_t dh = cfg.head_dim();

    LayerNormDetail ln1_detail;
    Matrix ln1 = layer_norm_rows_detail(x, layer.ln1_scale, layer.ln1_shift, 1e-5,
                                        tape ? &ln1_detail : nullptr);
    flops.unmodeled += 6 * n_new * d;

    Matrix q = matmul_counted(ln1, layer.wq, flops.proj);
    Matrix k_new = matmul_counted(ln1, layer.wk, flops.proj);
    Matrix v_new = matmul_counted(ln1, layer.wv, flops.proj);

    Matrix k_all = vconcat(cached.keys, k_new);
    Matrix v_all = vconcat(cached.values, v_new);
    const std::size_t n_total = k_all.rows;

    if (tape) {
        tape->x_in = x;
        tape->ln1 = ln1;
        tape->ln1_xhat = std::move(ln1_detail.xhat);
        tape->k_all = k_all;
        tape->v_all = v_all;
        tape->q_last.clear();
        tape->probs_last.clear();
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix attn_cat(n_new, d);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        Matrix qh = col_slice(q, h * dh, (h + 1) * dh);
        for (double& v : qh.data) v *= scale;
        flops.unmodeled += qh.data.size();
        Matrix kh = col_slice(k_all, h * dh, (h + 1) * dh);
        Matrix vh = col_slice(v_all, h * dh, (h + 1) * dh);

        // Full-rectangle score product; masked entries are computed and then
        // discarded, matching the cost model's n*n' accounting.
        Matrix scores = matmul_counted(qh, transpose(kh), flops.attn);
        for (std::size_t i = 0; i < n_new; ++i)
            for (std::size_t j = offset + i + 1; j < n_total; ++j)
                scores.at(i, j) = kNegInf;
        Matrix probs = softmax_rows(scores);
        flops.unmodeled += 4 * n_new * n_total;
        Matrix oh = matmul_counted(probs, vh, flops.attn);
        for (std::size_t i = 0; i < n_new; ++i)
            for (std::size_t j = 0; j < dh; ++j) attn_cat.at(i, h * dh + j) = oh.at(i, j);

        if (tape) {
            tape->q_last.push_back(qh.slice_rows(n_new - 1, n_new));
            tape->probs_last.push_back(probs.slice_rows(n_new - 1, n_new));
        }
    }

    Matrix attn_proj = matmul_counted(attn_cat, layer.wo, flops.proj);
    Matrix h_res = add(x, attn_proj);
    flops.unmodeled += n_new * d;

    LayerNormDetail ln2_detail;
    Matrix ln2 = layer_norm_rows_detail(h_res, layer.ln2_scale, layer.ln2_shift, 1e-5,
                                        tape ? &ln2_detail : nullptr);
    flops.unmodeled += 6 * n_new * d;

    Matrix f1 = matmul_counted(ln2, layer.w1, flops.ffn);
    for (std::size_t i = 0; i < n_new; ++i)
        for (std::size_t j = 0; j < cfg.d_ff; ++j) f1.at(i, j) += layer.b1[j];
    flops.unmodeled += n_new * cfg.d_ff;

    Matrix act(n_new, cfg.d_ff);
    for (std::size_t i = 0; i < act.data.size(); ++i) act.data[i] = gelu(f1.data[i]);
    flops.unmodeled += 4 * n_new * cfg.d_ff;

    Matrix f2 = matmul_counted(act, layer.w2, flops.ffn);
    for (std::size_t i = 0; i < n_new; ++i)
        for (std::size_t j = 0; j < d; ++j) f2.at(i, j) += layer.b2[j];
    flops.unmodeled += n_new * d;

    Matrix x_out = add(h_res, f2);
    flops.unmodeled += n_new * d;

    if (tape) {
        const std::size_t L = n_new - 1;
        tape->n_tokens = n_total;
        tape->attn_cat_last.assign(attn_cat.row_ptr(L), attn_cat.row_ptr(L) + d);
        tape->h_last.assign(h_res.row_ptr(L), h_res.row_ptr(L) + d);
        tape->ln2_last.assign(ln2.row_ptr(L), ln2.row_ptr(L) + d);
        tape->ln2_xhat_last.assign(ln2_detail.xhat.row_ptr(L),
                                   ln2_detail.xhat.row_ptr(L) + d);
        tape->ln2_mean = ln2_detail.mean[L];
        tape->ln2_inv_std = ln2_detail.inv_std[L];
        tape->f1_last.assign(f1.row_ptr(L), f1.row_ptr(L) + cfg.d_ff);
        tape->gelu_last.assign(act.row_ptr(L), act.row_ptr(L) + cfg.d_ff);
        tape->x_out_last.assign(x_out.row_ptr(L), x_out.row_ptr(L) + d);
    }

    kv_out.keys = std::move(k_all);
    kv_out.values = std::move(v_all);
    return x_out;
}

ForwardTrace run_forward(const ModelParams& params, const std::vector<LayerKV>& cached,
                         const Matrix& new_tokens, PolicyTape* tape) {
    const ModelConfig& cfg = params.config;
    if (new_tokens.cols != cfg.d_model) {
        throw ShapeError("forward: token dim " + std::to_string(new_tokens.cols) +
                         " does not match d_model " + std::to_string(cfg.d_model));
    }
    std::size_t offset = 0;
    if (!cached.empty()) {
        if (cached.size() != cfg.n_layers) {
            throw ShapeError("forward: cache has " + std::to_string(cached.size()) +
                             " layers, model has " + std::to_string(cfg.n_layers));
        }
        offset = cached[0].keys.rows;
        for (const LayerKV& kv : cached) {
            if (kv.keys.rows != offset || kv.values.rows != offset ||
                (offset > 0 && (kv.keys.cols != cfg.d_model ||
                                kv.values.cols != cfg.d_model))) {
                throw ShapeError("forward: inconsistent cache shapes across layers");
            }
        }
    }
    if (offset + new_tokens.rows > cfg.max_positions) {
        throw ShapeError("forward: context length " +
                         std::to_string(offset + new_tokens.rows) +
                         " exceeds max_positions " + std::to_string(cfg.max_positions));
    }
    if (new_tokens.rows == 0) throw ShapeError("forward: no new tokens");

    ForwardTrace trace;
    Matrix x = new_tokens;
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j)
            x.at(i, j) += params.pos_embedding.at(offset + i, j);
    trace.flops.unmodeled += x.rows * x.cols;

    static const LayerKV kEmptyKV{};
    trace.kv.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerKV& layer_cache = cached.empty() ? kEmptyKV : cached[l];
        PolicyTape* layer_tape = (tape && l + 1 == cfg.n_layers) ? tape : nullptr;
        x = block_forward(params.layers[l], cfg, x, layer_cache, offset, trace.flops,
                          trace.kv[l], layer_tape);
    }

    LayerNormDetail lnf_detail;
    trace.hidden = layer_norm_rows_detail(x, params.lnf_scale, params.lnf_shift, 1e-5,
                                          tape ? &lnf_detail : nullptr);
    trace.flops.unmodeled += 6 * x.rows * x.cols;

    if (tape) {
        const std::size_t L = x.rows - 1;
        const std::size_t d = cfg.d_model;
        tape->lnf_xhat_last.assign(lnf_detail.xhat.row_ptr(L),
                                   lnf_detail.xhat.row_ptr(L) + d);
        tape->lnf_mean = lnf_detail.mean[L];
        tape->lnf_inv_std = lnf_detail.inv_std[L];
        tape->y_last.assign(trace.hidden.row_ptr(L), trace.hidden.row_ptr(L) + d);
    }
    return trace;
}

// Gradient of layer norm w.r.t. its input for a single row, given the
// gradient w.r.t. xhat. Uses the biased-variance formulation.
std::vector<double> layer_norm_input_grad(const std::vector<double>& d_xhat,
                                          const std::vector<double>& xhat,
                                          double inv_std) {
    const std::size_t n = d_xhat.size();
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        mean_dxhat += d_xhat[j];
        mean_dxhat_xhat += d_xhat[j] * xhat[j];
    }
    mean_dxhat /= static_cast<double>(n);
    mean_dxhat_xhat /= static_cast<double>(n);
    std::vector<double> dx(n);
    for (std::size_t j = 0; j < n; ++j)
        dx[j] = inv_std * (d_xhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
    return dx;
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || action_dim < 1 ||
        max_positions < 1) {
        throw ConfigError("ModelConfig: all dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("ModelConfig: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ModelParams p;
    p.config = config;
    p.init_seed = seed;
    const std::size_t d = config.d_model;
    const double d_bound = 1.0 / std::sqrt(static_cast<double>(d));
    const double ff_bound = 1.0 / std::sqrt(static_cast<double>(config.d_ff));

    p.pos_embedding = Matrix(config.max_positions, d);
    fill_uniform(rng, p.pos_embedding, d_bound);

    p.layers.resize(config.n_layers);
    for (LayerParams& layer : p.layers) {
        layer.wq = Matrix(d, d);
        layer.wk = Matrix(d, d);
        layer.wv = Matrix(d, d);
        layer.wo = Matrix(d, d);
        fill_uniform(rng, layer.wq, d_bound);
        fill_uniform(rng, layer.wk, d_bound);
        fill_uniform(rng, layer.wv, d_bound);
        fill_uniform(rng, layer.wo, d_bound);
        layer.w1 = Matrix(d, config.d_ff);
        fill_uniform(rng, layer.w1, d_bound);
        layer.b1.assign(config.d_ff, 0.0);
        layer.w2 = Matrix(config.d_ff, d);
        fill_uniform(rng, layer.w2, ff_bound);
        layer.b2.assign(d, 0.0);
        layer.ln1_scale.assign(d, 1.0);
        layer.ln1_shift.assign(d, 0.0);
        layer.ln2_scale.assign(d, 1.0);
        layer.ln2_shift.assign(d, 0.0);
    }
    p.lnf_scale.assign(d, 1.0);
    p.lnf_shift.assign(d, 0.0);
    p.action_w = Matrix(d, config.action_dim);
    fill_uniform(rng, p.action_w, d_bound);
    p.action_b.assign(config.action_dim, 0.0);
    return p;
}

ForwardTrace forward_full(const ModelParams& params, const Matrix& tokens) {
    return run_forward(params, {}, tokens, nullptr);
}

ForwardTrace forward_incremental(const ModelParams& params,
                                 const std::vector<LayerKV>& cached,
                                 const Matrix& new_tokens) {
    return run_forward(params, cached, new_tokens, nullptr);
}

ForwardTrace forward_full_taped(const ModelParams& params, const Matrix& tokens,
                                PolicyTape& tape) {
    return run_forward(params, {}, tokens, &tape);
}

std::vector<double> action_head(const ModelParams& params,
                                const std::vector<double>& hidden_last,
                                std::uint64_t* macs) {
    const std::size_t d = params.config.d_model;
    const std::size_t a = params.config.action_dim;
    if (hidden_last.size() != d) {
        throw ShapeError("action_head: hidden size " +
                         std::to_string(hidden_last.size()) + " != d_model " +
                         std::to_string(d));
    }
    std::vector<double> out(params.action_b);
    for (std::size_t i = 0; i < d; ++i) {
        const double h = hidden_last[i];
        for (std::size_t j = 0; j < a; ++j) out[j] += h * params.action_w.at(i, j);
    }
    if (macs) *macs += d * a;
    return out;
}

PolicyGrads PolicyGrads::zeros_like(const ModelParams& params) {
    const ModelConfig& cfg = params.config;
    PolicyGrads g;
    g.action_w = Matrix(cfg.d_model, cfg.action_dim);
    g.action_b.assign(cfg.action_dim, 0.0);
    g.lnf_scale.assign(cfg.d_model, 0.0);
    g.lnf_shift.assign(cfg.d_model, 0.0);
    g.last.wq = Matrix(cfg.d_model, cfg.d_model);
    g.last.wk = Matrix(cfg.d_model, cfg.d_model);
    g.last.wv = Matrix(cfg.d_model, cfg.d_model);
    g.last.wo = Matrix(cfg.d_model, cfg.d_model);
    g.last.w1 = Matrix(cfg.d_model, cfg.d_ff);
    g.last.b1.assign(cfg.d_ff, 0.0);
    g.last.w2 = Matrix(cfg.d_ff, cfg.d_model);
    g.last.b2.assign(cfg.d_model, 0.0);
    g.last.ln1_scale.assign(cfg.d_model, 0.0);
    g.last.ln1_shift.assign(cfg.d_model, 0.0);
    g.last.ln2_scale.assign(cfg.d_model, 0.0);
    g.last.ln2_shift.assign(cfg.d_model, 0.0);
    return g;
}

namespace {

void axpy(std::vector<double>& dst, const std::vector<double>& src, double s) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

void accumulate_layer(LayerParams& dst, const LayerParams& src) {
    for (std::size_t i = 0; i < dst.wq.data.size(); ++i) dst.wq.data[i] += src.wq.data[i];
    for (std::size_t i = 0; i < dst.wk.data.size(); ++i) dst.wk.data[i] += src.wk.data[i];
    for (std::size_t i = 0; i < dst.wv.data.size(); ++i) dst.wv.data[i] += src.wv.data[i];
    for (std::size_t i = 0; i < dst.wo.data.size(); ++i) dst.wo.data[i] += src.wo.data[i];
    for (std::size_t i = 0; i < dst.w1.data.size(); ++i) dst.w1.data[i] += src.w1.data[i];
    for (std::size_t i = 0; i < dst.w2.data.size(); ++i) dst.w2.data[i] += src.w2.data[i];
    axpy(dst.b1, src.b1, 1.0);
    axpy(dst.b2, src.b2, 1.0);
    axpy(dst.ln1_scale, src.ln1_scale, 1.0);
    axpy(dst.ln1_shift, src.ln1_shift, 1.0);
    axpy(dst.ln2_scale, src.ln2_scale, 1.0);
    axpy(dst.ln2_shift, src.ln2_shift, 1.0);
}

void scale_layer(LayerParams& layer, double s) {
    for (double& v : layer.wq.data) v *= s;
    for (double& v : layer.wk.data) v *= s;
    for (double& v : layer.wv.data) v *= s;
    for (double& v : layer.wo.data) v *= s;
    for (double& v : layer.w1.data) v *= s;
    for (double& v : layer.w2.data) v *= s;
    for (double& v : layer.b1) v *= s;
    for (double& v : layer.b2) v *= s;
    for (double& v : layer.ln1_scale) v *= s;
    for (double& v : layer.ln1_shift) v *= s;
    for (double& v : layer.ln2_scale) v *= s;
    for (double& v : layer.ln2_shift) v *= s;
}

}  // namespace

void PolicyGrads::accumulate(const PolicyGrads& other) {
    for (std::size_t i = 0; i < action_w.data.size(); ++i)
        action_w.data[i] += other.action_w.data[i];
    axpy(action_b, other.action_b, 1.0);
    axpy(lnf_scale, other.lnf_scale, 1.0);
    axpy(lnf_shift, other.lnf_shift, 1.0);
    accumulate_layer(last, other.last);
}

void PolicyGrads::scale(double s) {
    for (double& v : action_w.data) v *= s;
    for (double& v : action_b) v *= s;
    for (double& v : lnf_scale) v *= s;
    for (double& v : lnf_shift) v *= s;
    scale_layer(last, s);
}

PolicyGrads policy_backward(const ModelParams& params, const PolicyTape& tape,
                            const std::vector<double>& d_action) {
    const ModelConfig& cfg = params.config;
    const std::size_t d = cfg.d_model;
    const std::size_t dh = cfg.head_dim();
    const std::size_t n = tape.n_tokens;
    const LayerParams& layer = params.layers[cfg.n_layers - 1];
    PolicyGrads g = PolicyGrads::zeros_like(params);

    // Action head: a = y * Wa + b.
    std::vector<double> dy(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < cfg.action_dim; ++j) {
            g.action_w.at(i, j) += tape.y_last[i] * d_action[j];
            dy[i] += params.action_w.at(i, j) * d_action[j];
        }
    }
    for (std::size_t j = 0; j < cfg.action_dim; ++j) g.action_b[j] += d_action[j];

    // Final norm.
    std::vector<double> d_xhat_f(d);
    for (std::size_t j = 0; j < d; ++j) {
        g.lnf_scale[j] += dy[j] * tape.lnf_xhat_last[j];
        g.lnf_shift[j] += dy[j];
        d_xhat_f[j] = dy[j] * params.lnf_scale[j];
    }
    std::vector<double> d_xout =
        layer_norm_input_grad(d_xhat_f, tape.lnf_xhat_last, tape.lnf_inv_std);

    // x_out = h + f2: the residual passes the gradient to both branches.
    std::vector<double> dh_last = d_xout;
    const std::vector<double>& df2 = d_xout;

    // FFN: f2 = gelu(f1) * W2 + b2, f1 = ln2 * W1 + b1.
    std::vector<double> dgelu(cfg.d_ff, 0.0);
    for (std::size_t i = 0; i < cfg.d_ff; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            g.last.w2.at(i, j) += tape.gelu_last[i] * df2[j];
            dgelu[i] += layer.w2.at(i, j) * df2[j];
        }
    }
    axpy(g.last.b2, df2, 1.0);
    std::vector<double> df1(cfg.d_ff);
    for (std::size_t i = 0; i < cfg.d_ff; ++i)
        df1[i] = dgelu[i] * gelu_prime(tape.f1_last[i]);
    std::vector<double> d_ln2(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < cfg.d_ff; ++j) {
            g.last.w1.at(i, j) += tape.ln2_last[i] * df1[j];
            d_ln2[i] += layer.w1.at(i, j) * df1[j];
        }
    }
    axpy(g.last.b1, df1, 1.0);

    // LN2 over h_last.
    std::vector<double> d_xhat2(d);
    for (std::size_t j = 0; j < d; ++j) {
        g.last.ln2_scale[j] += d_ln2[j] * tape.ln2_xhat_last[j];
        g.last.ln2_shift[j] += d_ln2[j];
        d_xhat2[j] = d_ln2[j] * layer.ln2_scale[j];
    }
    std::vector<double> dh_from_ln2 =
        layer_norm_input_grad(d_xhat2, tape.ln2_xhat_last, tape.ln2_inv_std);
    axpy(dh_last, dh_from_ln2, 1.0);

    // Attention output projection: attn_proj = attn_cat * Wo.
    std::vector<double> d_attn_cat(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            g.last.wo.at(i, j) += tape.attn_cat_last[i] * dh_last[j];
            d_attn_cat[i] += layer.wo.at(i, j) * dh_last[j];
        }
    }

    // Per-head attention backward; only the last query row carries gradient.
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> dq(d, 0.0);       // w.r.t. unscaled q at the last row
    Matrix dk(n, d);                      // w.r.t. K for all rows
    Matrix dv(n, d);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const Matrix& probs = tape.probs_last[h];  // 1 x n
        const Matrix& qs = tape.q_last[h];         // 1 x dh (scaled)
        std::vector<double> doh(d_attn_cat.begin() + static_cast<std::ptrdiff_t>(h * dh),
                                d_attn_cat.begin() + static_cast<std::ptrdiff_t>((h + 1) * dh));

        std::vector<double> dprobs(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double pj = probs.at(0, j);
            for (std::size_t c = 0; c < dh; ++c) {
                dprobs[j] += doh[c] * tape.v_all.at(j, h * dh + c);
                dv.at(j, h * dh + c) += pj * doh[c];
            }
        }
        // Softmax backward: masked entries have prob 0 and drop out.
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += probs.at(0, j) * dprobs[j];
        std::vector<double> dscores(n);
        for (std::size_t j = 0; j < n; ++j)
            dscores[j] = probs.at(0, j) * (dprobs[j] - dot);

        for (std::size_t j = 0; j < n; ++j) {
            const double dsj = dscores[j];
            if (dsj == 0.0) continue;
            for (std::size_t c = 0; c < dh; ++c) {
                dq[h * dh + c] += dsj * tape.k_all.at(j, h * dh + c) * scale;
                dk.at(j, h * dh + c) += dsj * qs.at(0, c);
            }
        }
    }

    // Projections: q/k/v = ln1 * W. Only the last row of q matters; K and V
    // receive gradient at every row.
    const std::size_t L = n - 1;
    std::vector<double> d_ln1_last(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const double ln1_li = tape.ln1.at(L, i);
        for (std::size_t j = 0; j < d; ++j) {
            g.last.wq.at(i, j) += ln1_li * dq[j];
            d_ln1_last[i] += layer.wq.at(i, j) * dq[j];
        }
    }
    Matrix d_ln1(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            const double ln1_ri = tape.ln1.at(r, i);
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                g.last.wk.at(i, j) += ln1_ri * dk.at(r, j);
                g.last.wv.at(i, j) += ln1_ri * dv.at(r, j);
                acc += layer.wk.at(i, j) * dk.at(r, j) + layer.wv.at(i, j) * dv.at(r, j);
            }
            d_ln1.at(r, i) = acc;
        }
    }
    for (std::size_t i = 0; i < d; ++i) d_ln1.at(L, i) += d_ln1_last[i];

    // LN1 parameters only; the block input is frozen.
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            g.last.ln1_scale[j] += d_ln1.at(r, j) * tape.ln1_xhat.at(r, j);
            g.last.ln1_shift[j] += d_ln1.at(r, j);
        }
    }
    return g;
}

std::vector<ParamRef> param_refs(ModelParams& params) {
    std::vector<ParamRef> refs;
    auto mat = [&refs](const std::string& name, Matrix& m) {
        refs.push_back({name, m.data.data(), m.rows, m.cols});
    };
    auto vec = [&refs](const std::string& name, std::vector<double>& v) {
        refs.push_back({name, v.data(), v.size(), 0});
    };
    mat("pos_embedding", params.pos_embedding);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        LayerParams& layer = params.layers[l];
        mat(p + "wq", layer.wq);
        mat(p + "wk", layer.wk);
        mat(p + "wv", layer.wv);
        mat(p + "wo", layer.wo);
        mat(p + "w1", layer.w1);
        vec(p + "b1", layer.b1);
        mat(p + "w2", layer.w2);
        vec(p + "b2", layer.b2);
        vec(p + "ln1_scale", layer.ln1_scale);
        vec(p + "ln1_shift", layer.ln1_shift);
        vec(p + "ln2_scale", layer.ln2_scale);
        vec(p + "ln2_shift", layer.ln2_shift);
    }
    vec("lnf_scale", params.lnf_scale);
    vec("lnf_shift", params.lnf_shift);
    mat("action_w", params.action_w);
    vec("action_b", params.action_b);
    return refs;
}

}  // namespace sdkv
