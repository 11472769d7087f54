#pragma once

#include <cstdint>
#include <string>

#include "sdkv/errors.hpp"

namespace sdkv {

// Multiply-accumulate breakdown of a transformer forward, split into the
// modeled terms (projections, attention products, feedforward) and everything
// the closed-form cost model deliberately leaves out (softmax, norms,
// residual adds, position lookups).
struct FlopBreakdown {
    std::uint64_t proj = 0;
    std::uint64_t attn = 0;
    std::uint64_t ffn = 0;
    std::uint64_t unmodeled = 0;

    std::uint64_t modeled() const { return proj + attn + ffn; }
    FlopBreakdown& operator+=(const FlopBreakdown& o) {
        proj += o.proj;
        attn += o.attn;
        ffn += o.ffn;
        unmodeled += o.unmodeled;
        return *this;
    }
};

struct ContextLength {
    std::uint64_t full = 0;  // n_tokens * n_frames
    std::uint64_t ours = 0;  // cached statics once + dynamics per frame
};

// Per-frame token budget: with cached fraction r of n tokens, a window of
// n_frames observations costs r*n + (1-r)*n*n_frames tokens instead of
// n*n_frames. r*n must be a whole number of tokens.
ContextLength context_length(std::uint64_t n_tokens, double cached_fraction,
                             std::uint64_t n_frames);

// Per-layer forward cost of a decoder block over n tokens:
// projections 4*n*d^2, attention products 2*n^2*d, feedforward 2*n*d*m.
std::uint64_t flops_full(std::uint64_t n, std::uint64_t d, std::uint64_t m);

// Per-layer cost when only n_new of n tokens are recomputed against a cache:
// 4*n_new*d^2 + 2*n*n_new*d + 2*n_new*d*m.
std::uint64_t flops_cached(std::uint64_t n, std::uint64_t n_new, std::uint64_t d,
                           std::uint64_t m);

struct FlopsReport {
    std::uint64_t f_full_per_layer = 0;
    std::uint64_t f_cached_per_layer = 0;
    std::uint64_t f_full_total = 0;
    std::uint64_t f_cached_total = 0;
    double ratio = 0.0;  // f_cached_total / f_full_total
    std::uint64_t context_full = 0;
    std::uint64_t context_ours = 0;
};

FlopsReport predict(std::uint64_t n, std::uint64_t n_new, std::uint64_t d,
                    std::uint64_t m, std::uint64_t n_layers, std::uint64_t n_frames,
                    double cached_fraction);

struct ReconcileReport {
    bool exact = false;
    std::uint64_t measured_modeled = 0;
    std::uint64_t predicted_modeled = 0;
    double gate_overhead = 0.0;  // gate macs / backbone modeled macs
    double head_overhead = 0.0;
    double unmodeled_overhead = 0.0;
    std::string detail;
};

// Asserts the instrumented counter agrees with the closed form, term by term.
// Throws NumericError with a per-term breakdown on mismatch.
ReconcileReport reconcile(const FlopBreakdown& measured, std::uint64_t n,
                          std::uint64_t n_new, std::uint64_t d, std::uint64_t m,
                          std::uint64_t n_layers, std::uint64_t gate_macs = 0,
                          std::uint64_t head_macs = 0);

}  // namespace sdkv
