#pragma once

#include <cstdint>
#include <vector>

#include "sdkv/matrix.hpp"

namespace sdkv {

// Partition of a frame's tokens into static levels (most persistent first)
// and a dynamic remainder. Sizes must add up to the encoder token count.
struct LayoutConfig {
    std::vector<std::size_t> level_sizes;
    std::size_t dynamic_size = 0;

    std::size_t n_levels() const { return level_sizes.size(); }
    std::size_t static_total() const;
    std::size_t total() const { return static_total() + dynamic_size; }
    std::size_t level_offset(std::size_t level) const;
    void validate() const;
};

// Learned token-axis mixing: an n x n matrix reorders/combines encoder tokens
// into the slot layout. Feature axis is untouched.
struct MixerParams {
    Matrix mix;  // n x n
    std::uint64_t init_seed = 0;
};

// Identity plus small uniform noise, so slots start as a positional split and
// training can rotate them toward temporally stable inputs.
MixerParams init_mixer(const LayoutConfig& layout, std::uint64_t seed,
                       double noise = 0.05);

struct DisentangledFrame {
    std::vector<Matrix> static_per_level;
    Matrix dynamic;
    std::int64_t timestep = 0;
};

// Applies the mixer and splits rows per the layout.
DisentangledFrame slot_project(const Matrix& frame_tokens, const MixerParams& mixer,
                               const LayoutConfig& layout, std::int64_t timestep = 0,
                               std::uint64_t* macs = nullptr);

// Computes only the dynamic slot rows (the per-step path; static slots are
// served from cache between refreshes).
Matrix slot_project_dynamic(const Matrix& frame_tokens, const MixerParams& mixer,
                            const LayoutConfig& layout, std::uint64_t* macs = nullptr);

// Computes only one static level's slot rows.
Matrix slot_project_level(const Matrix& frame_tokens, const MixerParams& mixer,
                          const LayoutConfig& layout, std::size_t level,
                          std::uint64_t* macs = nullptr);

struct SegmentInfo {
    enum class Kind { StaticLevel, Dynamic, Instruction };
    Kind kind = Kind::Dynamic;
    std::size_t index = 0;  // level index or dynamic-segment age (0 = oldest)
    std::size_t row_begin = 0;
    std::size_t row_count = 0;
};

// Token matrix ordered [static L1 | static L2 | ... | dyn oldest..newest |
// instruction], with a segment map and the rolling-window capacity.
struct AssembledContext {
    Matrix tokens;
    std::vector<SegmentInfo> segments;
    std::size_t window_capacity = 1;

    std::size_t static_rows() const;
    std::size_t dynamic_segments() const;
    Matrix segment(const SegmentInfo& info) const;
};

// Statics appear exactly once regardless of how many frames the window holds.
// dynamic_history is ordered oldest to newest and must be non-empty; the
// instruction (possibly zero rows) is appended last.
AssembledContext assemble_context(const std::vector<Matrix>& static_per_level,
                                  const std::vector<Matrix>& dynamic_history,
                                  const Matrix& instruction,
                                  std::size_t window_capacity);

// Appends the newest dynamic segment, evicting the oldest when the window is
// already at capacity. Static and instruction segments are untouched.
AssembledContext rolling_window_update(const AssembledContext& ctx,
                                       const Matrix& new_dynamic);

}  // namespace sdkv
