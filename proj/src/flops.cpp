#include "sdkv/flops.hpp"

#include <cmath>

#include "sdkv/errors.hpp"

namespace sdkv {

ContextLength context_length(std::uint64_t n_tokens, double cached_fraction,
                             std::uint64_t n_frames) {
    if (n_tokens < 1 || n_frames < 1) {
        throw ConfigError("context_length: n_tokens and n_frames must be >= 1");
    }
    if (cached_fraction < 0.0 || cached_fraction > 1.0) {
        throw ConfigError("context_length: cached_fraction outside [0, 1]");
    }
    const double rn = cached_fraction * static_cast<double>(n_tokens);
    const double rounded = std::round(rn);
    if (std::abs(rn - rounded) > 1e-9) {
        throw ConfigError("context_length: cached_fraction * n_tokens = " +
                          std::to_string(rn) + " is not a whole token count");
    }
    const auto static_tokens = static_cast<std::uint64_t>(rounded);
    ContextLength out;
    out.full = n_tokens * n_frames;
    out.ours = static_tokens + (n_tokens - static_tokens) * n_frames;
    return out;
}

std::uint64_t flops_full(std::uint64_t n, std::uint64_t d, std::uint64_t m) {
    return 4 * n * d * d + 2 * n * n * d + 2 * n * d * m;
}

std::uint64_t flops_cached(std::uint64_t n, std::uint64_t n_new, std::uint64_t d,
                           std::uint64_t m) {
    if (n_new > n) {
        throw ConfigError("flops_cached: recomputed tokens " + std::to_string(n_new) +
                          " exceed total " + std::to_string(n));
    }
    return 4 * n_new * d * d + 2 * n * n_new * d + 2 * n_new * d * m;
}

FlopsReport predict(std::uint64_t n, std::uint64_t n_new, std::uint64_t d,
                    std::uint64_t m, std::uint64_t n_layers, std::uint64_t n_frames,
                    double cached_fraction) {
    FlopsReport r;
    r.f_full_per_layer = flops_full(n, d, m);
    r.f_cached_per_layer = flops_cached(n, n_new, d, m);
    r.f_full_total = r.f_full_per_layer * n_layers;
    r.f_cached_total = r.f_cached_per_layer * n_layers;
    r.ratio = r.f_full_total == 0
                  ? 0.0
                  : static_cast<double>(r.f_cached_total) /
                        static_cast<double>(r.f_full_total);
    const ContextLength ctx = context_length(n, cached_fraction, n_frames);
    r.context_full = ctx.full;
    r.context_ours = ctx.ours;
    return r;
}

ReconcileReport reconcile(const FlopBreakdown& measured, std::uint64_t n,
                          std::uint64_t n_new, std::uint64_t d, std::uint64_t m,
                          std::uint64_t n_layers, std::uint64_t gate_macs,
                          std::uint64_t head_macs) {
    const std::uint64_t proj = 4 * n_new * d * d * n_layers;
    const std::uint64_t attn = 2 * n * n_new * d * n_layers;
    const std::uint64_t ffn = 2 * n_new * d * m * n_layers;

    ReconcileReport rep;
    rep.predicted_modeled = proj + attn + ffn;
    rep.measured_modeled = measured.modeled();
    rep.exact = measured.proj == proj && measured.attn == attn && measured.ffn == ffn;
    if (!rep.exact) {
        throw NumericError(
            "reconcile: measured/predicted multiply-accumulate mismatch: "
            "proj " + std::to_string(measured.proj) + "/" + std::to_string(proj) +
            ", attn " + std::to_string(measured.attn) + "/" + std::to_string(attn) +
            ", ffn " + std::to_string(measured.ffn) + "/" + std::to_string(ffn));
    }
    const double backbone = static_cast<double>(rep.measured_modeled);
    if (backbone > 0.0) {
        rep.gate_overhead = static_cast<double>(gate_macs) / backbone;
        rep.head_overhead = static_cast<double>(head_macs) / backbone;
        rep.unmodeled_overhead = static_cast<double>(measured.unmodeled) / backbone;
    }
    rep.detail = "proj=" + std::to_string(proj) + " attn=" + std::to_string(attn) +
                 " ffn=" + std::to_string(ffn);
    return rep;
}

}  // namespace sdkv
