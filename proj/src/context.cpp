#include "sdkv/context.hpp"

#include <string>

#include "sdkv/rng.hpp"

namespace sdkv {

std::size_t LayoutConfig::static_total() const {
    std::size_t n = 0;
    for (std::size_t s : level_sizes) n += s;
    return n;
}

std::size_t LayoutConfig::level_offset(std::size_t level) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < level; ++l) off += level_sizes[l];
    return off;
}

void LayoutConfig::validate() const {
    if (level_sizes.empty()) throw ConfigError("layout: at least one static level");
    for (std::size_t s : level_sizes)
        if (s < 1) throw ConfigError("layout: every level size must be >= 1");
    if (dynamic_size < 1) throw ConfigError("layout: dynamic_size must be >= 1");
}

MixerParams init_mixer(const LayoutConfig& layout, std::uint64_t seed, double noise) {
    layout.validate();
    const std::size_t n = layout.total();
    Rng rng(seed);
    MixerParams p;
    p.init_seed = seed;
    p.mix = Matrix::identity(n);
    for (double& v : p.mix.data) v += rng.uniform(-noise, noise);
    return p;
}

namespace {

void check_frame(const Matrix& frame, const MixerParams& mixer,
                 const LayoutConfig& layout) {
    if (frame.rows != layout.total()) {
        throw ShapeError("slot_project: frame has " + std::to_string(frame.rows) +
                         " tokens, layout expects " + std::to_string(layout.total()));
    }
    if (mixer.mix.rows != layout.total() || mixer.mix.cols != layout.total()) {
        throw ShapeError("slot_project: mixer shape does not match layout");
    }
}

// rows [r0, r1) of mix * frame.
Matrix project_rows(const Matrix& frame, const Matrix& mix, std::size_t r0,
                    std::size_t r1, std::uint64_t* macs) {
    Matrix out(r1 - r0, frame.cols);
    for (std::size_t i = r0; i < r1; ++i) {
        double* out_row = out.row_ptr(i - r0);
        for (std::size_t k = 0; k < frame.rows; ++k) {
            const double w = mix.at(i, k);
            const double* src = frame.row_ptr(k);
            for (std::size_t j = 0; j < frame.cols; ++j) out_row[j] += w * src[j];
        }
    }
    if (macs) *macs += (r1 - r0) * frame.rows * frame.cols;
    return out;
}

}  // namespace

DisentangledFrame slot_project(const Matrix& frame_tokens, const MixerParams& mixer,
                               const LayoutConfig& layout, std::int64_t timestep,
                               std::uint64_t* macs) {
    check_frame(frame_tokens, mixer, layout);
    DisentangledFrame out;
    out.timestep = timestep;
    std::size_t row = 0;
    for (std::size_t s : layout.level_sizes) {
        out.static_per_level.push_back(
            project_rows(frame_tokens, mixer.mix, row, row + s, macs));
        row += s;
    }
    out.dynamic = project_rows(frame_tokens, mixer.mix, row, row + layout.dynamic_size,
                               macs);
    return out;
}

Matrix slot_project_dynamic(const Matrix& frame_tokens, const MixerParams& mixer,
                            const LayoutConfig& layout, std::uint64_t* macs) {
    check_frame(frame_tokens, mixer, layout);
    const std::size_t r0 = layout.static_total();
    return project_rows(frame_tokens, mixer.mix, r0, r0 + layout.dynamic_size, macs);
}

Matrix slot_project_level(const Matrix& frame_tokens, const MixerParams& mixer,
                          const LayoutConfig& layout, std::size_t level,
                          std::uint64_t* macs) {
    check_frame(frame_tokens, mixer, layout);
    if (level >= layout.n_levels()) throw ShapeError("slot_project_level: bad level");
    const std::size_t r0 = layout.level_offset(level);
    return project_rows(frame_tokens, mixer.mix, r0, r0 + layout.level_sizes[level],
                        macs);
}

std::size_t AssembledContext::static_rows() const {
    std::size_t n = 0;
    for (const SegmentInfo& s : segments)
        if (s.kind == SegmentInfo::Kind::StaticLevel) n += s.row_count;
    return n;
}

std::size_t AssembledContext::dynamic_segments() const {
    std::size_t n = 0;
    for (const SegmentInfo& s : segments)
        if (s.kind == SegmentInfo::Kind::Dynamic) ++n;
    return n;
}

Matrix AssembledContext::segment(const SegmentInfo& info) const {
    return tokens.slice_rows(info.row_begin, info.row_begin + info.row_count);
}

AssembledContext assemble_context(const std::vector<Matrix>& static_per_level,
                                  const std::vector<Matrix>& dynamic_history,
                                  const Matrix& instruction,
                                  std::size_t window_capacity) {
    if (dynamic_history.empty()) {
        throw ShapeError("assemble_context: dynamic history must hold >= 1 frame");
    }
    if (window_capacity < 1 || dynamic_history.size() > window_capacity) {
        throw ShapeError("assemble_context: history exceeds window capacity");
    }
    std::size_t d = dynamic_history[0].cols;
    const std::size_t n_dyn_rows = dynamic_history[0].rows;
    for (const Matrix& m : dynamic_history) {
        if (m.rows != n_dyn_rows || m.cols != d) {
            throw ShapeError("assemble_context: dynamic segments disagree in shape");
        }
    }
    std::size_t total = 0;
    for (const Matrix& m : static_per_level) {
        if (m.cols != d) throw ShapeError("assemble_context: static feature dim differs");
        total += m.rows;
    }
    total += dynamic_history.size() * n_dyn_rows;
    if (instruction.rows > 0 && instruction.cols != d) {
        throw ShapeError("assemble_context: instruction feature dim differs");
    }
    total += instruction.rows;

    AssembledContext ctx;
    ctx.window_capacity = window_capacity;
    ctx.tokens = Matrix(total, d);
    std::size_t row = 0;
    auto put = [&](const Matrix& m, SegmentInfo::Kind kind, std::size_t index) {
        std::copy(m.data.begin(), m.data.end(), ctx.tokens.row_ptr(row));
        ctx.segments.push_back({kind, index, row, m.rows});
        row += m.rows;
    };
    for (std::size_t l = 0; l < static_per_level.size(); ++l)
        put(static_per_level[l], SegmentInfo::Kind::StaticLevel, l);
    for (std::size_t i = 0; i < dynamic_history.size(); ++i)
        put(dynamic_history[i], SegmentInfo::Kind::Dynamic, i);
    put(instruction, SegmentInfo::Kind::Instruction, 0);
    return ctx;
}

AssembledContext rolling_window_update(const AssembledContext& ctx,
                                       const Matrix& new_dynamic) {
    std::vector<Matrix> statics;
    std::vector<Matrix> dynamics;
    Matrix instruction(0, new_dynamic.cols);
    for (const SegmentInfo& s : ctx.segments) {
        switch (s.kind) {
            case SegmentInfo::Kind::StaticLevel: statics.push_back(ctx.segment(s)); break;
            case SegmentInfo::Kind::Dynamic: dynamics.push_back(ctx.segment(s)); break;
            case SegmentInfo::Kind::Instruction: instruction = ctx.segment(s); break;
        }
    }
    dynamics.push_back(new_dynamic);
    if (dynamics.size() > ctx.window_capacity) {
        dynamics.erase(dynamics.begin());
    }
    return assemble_context(statics, dynamics, instruction, ctx.window_capacity);
}

}  // namespace sdkv
