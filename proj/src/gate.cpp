#include "sdkv/gate.hpp"

#include <cmath>
#include <string>

namespace sdkv {

namespace {

void fill_uniform(Rng& rng, Matrix& m, double bound) {
    for (double& v : m.data) v = rng.uniform(-bound, bound);
}

Matrix linear(const Matrix& x, const Matrix& w, const std::vector<double>& b,
              std::uint64_t* macs) {
    std::uint64_t local = 0;
    Matrix out = matmul_counted(x, w, local);
    if (macs) *macs += local;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) += b[j];
    return out;
}

Matrix relu(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

}  // namespace

void GateConfig::validate() const {
    if (n_tokens < 1 || d_in < 1 || feature_hidden < 1 || token_hidden < 1 ||
        n_levels < 1) {
        throw ConfigError("GateConfig: all counts must be >= 1");
    }
    if (!(gumbel_temperature > 0.0)) {
        throw ConfigError("GateConfig: gumbel_temperature must be > 0");
    }
}

GateParams init_gate(const GateConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    GateParams p;
    p.config = config;
    p.init_seed = seed;
    const std::size_t h1 = config.feature_hidden;
    const std::size_t h2 = config.token_hidden;

    p.f_w1 = Matrix(2 * config.d_in, h1);
    fill_uniform(rng, p.f_w1, 1.0 / std::sqrt(2.0 * static_cast<double>(config.d_in)));
    p.f_b1.assign(h1, 0.0);
    p.f_w2 = Matrix(h1, h1);
    fill_uniform(rng, p.f_w2, 1.0 / std::sqrt(static_cast<double>(h1)));
    p.f_b2.assign(h1, 0.0);
    p.f_w3 = Matrix(h1, h1);
    fill_uniform(rng, p.f_w3, 1.0 / std::sqrt(static_cast<double>(h1)));
    p.f_b3.assign(h1, 0.0);

    p.t_w1 = Matrix(config.n_tokens, h2);
    fill_uniform(rng, p.t_w1, 1.0 / std::sqrt(static_cast<double>(config.n_tokens)));
    p.t_b1.assign(h2, 0.0);
    p.t_w2 = Matrix(h2, h2);
    fill_uniform(rng, p.t_w2, 1.0 / std::sqrt(static_cast<double>(h2)));
    p.t_b2.assign(h2, 0.0);
    p.t_w3 = Matrix(h2, h2);
    fill_uniform(rng, p.t_w3, 1.0 / std::sqrt(static_cast<double>(h2)));
    p.t_b3.assign(h2, 0.0);

    p.head_w = Matrix(config.n_levels, h1 * h2);  // zeros: every level opens at 0.5
    p.head_b.assign(config.n_levels, 0.0);
    return p;
}

namespace {

std::vector<double> run_gate(const GateParams& p, const Matrix& z_prev,
                             const Matrix& z_curr, std::uint64_t* macs,
                             GateTape* tape) {
    const GateConfig& cfg = p.config;
    if (z_prev.rows != cfg.n_tokens || z_curr.rows != cfg.n_tokens ||
        z_prev.cols != cfg.d_in || z_curr.cols != cfg.d_in) {
        throw ShapeError("gate_forward: inputs must be n_tokens x d_in");
    }
    Matrix concat(cfg.n_tokens, 2 * cfg.d_in);
    for (std::size_t i = 0; i < cfg.n_tokens; ++i) {
        for (std::size_t j = 0; j < cfg.d_in; ++j) {
            concat.at(i, j) = z_prev.at(i, j);
            concat.at(i, cfg.d_in + j) = z_curr.at(i, j);
        }
    }

    Matrix f1_pre = linear(concat, p.f_w1, p.f_b1, macs);
    Matrix f1_act = relu(f1_pre);
    Matrix f2_pre = linear(f1_act, p.f_w2, p.f_b2, macs);
    Matrix f2_act = relu(f2_pre);
    Matrix f3_out = linear(f2_act, p.f_w3, p.f_b3, macs);

    Matrix transposed = transpose(f3_out);  // h1 x n

    Matrix t1_pre = linear(transposed, p.t_w1, p.t_b1, macs);
    Matrix t1_act = relu(t1_pre);
    Matrix t2_pre = linear(t1_act, p.t_w2, p.t_b2, macs);
    Matrix t2_act = relu(t2_pre);
    Matrix t3_out = linear(t2_act, p.t_w3, p.t_b3, macs);

    const std::vector<double>& flat = t3_out.data;  // row-major h1*h2
    std::vector<double> logits(cfg.n_levels, 0.0);
    for (std::size_t l = 0; l < cfg.n_levels; ++l) {
        double acc = p.head_b[l];
        for (std::size_t i = 0; i < flat.size(); ++i) acc += p.head_w.at(l, i) * flat[i];
        logits[l] = acc;
    }
    if (macs) *macs += cfg.n_levels * flat.size();

    std::vector<double> probs(cfg.n_levels);
    for (std::size_t l = 0; l < cfg.n_levels; ++l) probs[l] = sigmoid(logits[l]);

    if (tape) {
        tape->concat = std::move(concat);
        tape->f1_pre = std::move(f1_pre);
        tape->f1_act = std::move(f1_act);
        tape->f2_pre = std::move(f2_pre);
        tape->f2_act = std::move(f2_act);
        tape->f3_out = std::move(f3_out);
        tape->transposed = std::move(transposed);
        tape->t1_pre = std::move(t1_pre);
        tape->t1_act = std::move(t1_act);
        tape->t2_pre = std::move(t2_pre);
        tape->t2_act = std::move(t2_act);
        tape->t3_out = std::move(t3_out);
        tape->flat = tape->t3_out.data;
        tape->logits = logits;
        tape->probs = probs;
    }
    return probs;
}

void relu_backward_inplace(Matrix& grad, const Matrix& pre) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (pre.data[i] <= 0.0) grad.data[i] = 0.0;
}

// dx, dW, db for y = x*W + b given dy.
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy,
                       Matrix& dw, std::vector<double>& db) {
    std::uint64_t scratch = 0;
    Matrix dwt = matmul_counted(transpose(x), dy, scratch);
    for (std::size_t i = 0; i < dw.data.size(); ++i) dw.data[i] += dwt.data[i];
    for (std::size_t i = 0; i < dy.rows; ++i)
        for (std::size_t j = 0; j < dy.cols; ++j) db[j] += dy.at(i, j);
    return matmul_counted(dy, transpose(w), scratch);
}

}  // namespace

std::vector<double> gate_forward(const GateParams& params, const Matrix& z_prev,
                                 const Matrix& z_curr, std::uint64_t* macs) {
    return run_gate(params, z_prev, z_curr, macs, nullptr);
}

std::vector<double> gate_forward_taped(const GateParams& params, const Matrix& z_prev,
                                       const Matrix& z_curr, GateTape& tape) {
    return run_gate(params, z_prev, z_curr, nullptr, &tape);
}

GateGrads GateGrads::zeros_like(const GateParams& p) {
    GateGrads g;
    g.f_w1 = Matrix(p.f_w1.rows, p.f_w1.cols);
    g.f_w2 = Matrix(p.f_w2.rows, p.f_w2.cols);
    g.f_w3 = Matrix(p.f_w3.rows, p.f_w3.cols);
    g.t_w1 = Matrix(p.t_w1.rows, p.t_w1.cols);
    g.t_w2 = Matrix(p.t_w2.rows, p.t_w2.cols);
    g.t_w3 = Matrix(p.t_w3.rows, p.t_w3.cols);
    g.head_w = Matrix(p.head_w.rows, p.head_w.cols);
    g.f_b1.assign(p.f_b1.size(), 0.0);
    g.f_b2.assign(p.f_b2.size(), 0.0);
    g.f_b3.assign(p.f_b3.size(), 0.0);
    g.t_b1.assign(p.t_b1.size(), 0.0);
    g.t_b2.assign(p.t_b2.size(), 0.0);
    g.t_b3.assign(p.t_b3.size(), 0.0);
    g.head_b.assign(p.head_b.size(), 0.0);
    return g;
}

namespace {
void add_into(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}
void add_into(std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}
}  // namespace

void GateGrads::accumulate(const GateGrads& o) {
    add_into(f_w1, o.f_w1);
    add_into(f_w2, o.f_w2);
    add_into(f_w3, o.f_w3);
    add_into(t_w1, o.t_w1);
    add_into(t_w2, o.t_w2);
    add_into(t_w3, o.t_w3);
    add_into(head_w, o.head_w);
    add_into(f_b1, o.f_b1);
    add_into(f_b2, o.f_b2);
    add_into(f_b3, o.f_b3);
    add_into(t_b1, o.t_b1);
    add_into(t_b2, o.t_b2);
    add_into(t_b3, o.t_b3);
    add_into(head_b, o.head_b);
}

void GateGrads::scale(double s) {
    for (double& v : f_w1.data) v *= s;
    for (double& v : f_w2.data) v *= s;
    for (double& v : f_w3.data) v *= s;
    for (double& v : t_w1.data) v *= s;
    for (double& v : t_w2.data) v *= s;
    for (double& v : t_w3.data) v *= s;
    for (double& v : head_w.data) v *= s;
    for (double& v : f_b1) v *= s;
    for (double& v : f_b2) v *= s;
    for (double& v : f_b3) v *= s;
    for (double& v : t_b1) v *= s;
    for (double& v : t_b2) v *= s;
    for (double& v : t_b3) v *= s;
    for (double& v : head_b) v *= s;
}

GateGrads gate_backward(const GateParams& p, const GateTape& tape,
                        const std::vector<double>& d_logits) {
    const GateConfig& cfg = p.config;
    GateGrads g = GateGrads::zeros_like(p);

    std::vector<double> d_flat(tape.flat.size(), 0.0);
    for (std::size_t l = 0; l < cfg.n_levels; ++l) {
        const double dl = d_logits[l];
        g.head_b[l] += dl;
        for (std::size_t i = 0; i < d_flat.size(); ++i) {
            g.head_w.at(l, i) += dl * tape.flat[i];
            d_flat[i] += p.head_w.at(l, i) * dl;
        }
    }

    Matrix d_t3(tape.t3_out.rows, tape.t3_out.cols);
    d_t3.data = d_flat;  // flatten is row-major

    Matrix d_t2_act = linear_backward(tape.t2_act, p.t_w3, d_t3, g.t_w3, g.t_b3);
    relu_backward_inplace(d_t2_act, tape.t2_pre);
    Matrix d_t1_act = linear_backward(tape.t1_act, p.t_w2, d_t2_act, g.t_w2, g.t_b2);
    relu_backward_inplace(d_t1_act, tape.t1_pre);
    Matrix d_transposed =
        linear_backward(tape.transposed, p.t_w1, d_t1_act, g.t_w1, g.t_b1);

    Matrix d_f3 = transpose(d_transposed);  // back to n x h1

    Matrix d_f2_act = linear_backward(tape.f2_act, p.f_w3, d_f3, g.f_w3, g.f_b3);
    relu_backward_inplace(d_f2_act, tape.f2_pre);
    Matrix d_f1_act = linear_backward(tape.f1_act, p.f_w2, d_f2_act, g.f_w2, g.f_b2);
    relu_backward_inplace(d_f1_act, tape.f1_pre);
    linear_backward(tape.concat, p.f_w1, d_f1_act, g.f_w1, g.f_b1);
    return g;
}

GumbelSample gumbel_binary_sample(double p, double tau, double u1, double u2) {
    if (!(p > 0.0 && p < 1.0)) {
        throw NumericError("gumbel_binary_sample: p = " + std::to_string(p) +
                           " outside (0, 1); caller must clamp");
    }
    if (!(tau > 0.0)) throw NumericError("gumbel_binary_sample: tau must be > 0");
    const double g1 = -std::log(-std::log(u1));
    const double g2 = -std::log(-std::log(u2));
    const double a = std::log(p) + g1;        // refresh logit
    const double b = std::log1p(-p) + g2;     // reuse logit
    GumbelSample s;
    s.hard = a > b;
    const double z = (a - b) / tau;
    s.soft = sigmoid(z);
    s.d_soft_dp = s.soft * (1.0 - s.soft) * (1.0 / p + 1.0 / (1.0 - p)) / tau;
    return s;
}

GumbelSample gumbel_binary_sample(double p, double tau, Rng& rng) {
    const double u1 = rng.uniform_open01();
    const double u2 = rng.uniform_open01();
    return gumbel_binary_sample(p, tau, u1, u2);
}

bool threshold_decide(double g, double delta) { return g > delta; }

}  // namespace sdkv
