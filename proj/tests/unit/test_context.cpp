#include <doctest.h>

#include <deque>
#include <vector>

#include "sdkv/context.hpp"
#include "sdkv/flops.hpp"
#include "sdkv/rng.hpp"

using namespace sdkv;

namespace {

Matrix random_frame(Rng& rng, std::size_t n, std::size_t d) {
    Matrix m(n, d);
    for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
}

LayoutConfig small_layout() {
    LayoutConfig layout;
    layout.level_sizes = {3, 2};
    layout.dynamic_size = 3;
    return layout;
}

}  // namespace

TEST_SUITE("context") {

TEST_CASE("identity mixer is a pure positional split") {
    LayoutConfig layout = small_layout();
    MixerParams mixer;
    mixer.mix = Matrix::identity(layout.total());
    Rng rng(3);
    Matrix frame = random_frame(rng, 8, 5);
    DisentangledFrame split = slot_project(frame, mixer, layout, 7);
    CHECK(split.timestep == 7);
    CHECK(split.static_per_level[0].bit_equal(frame.slice_rows(0, 3)));
    CHECK(split.static_per_level[1].bit_equal(frame.slice_rows(3, 5)));
    CHECK(split.dynamic.bit_equal(frame.slice_rows(5, 8)));
}

TEST_CASE("permutation mixer selects exactly the permuted rows") {
    LayoutConfig layout = small_layout();
    MixerParams mixer;
    mixer.mix = Matrix(8, 8);
    const std::size_t perm[8] = {4, 1, 7, 0, 3, 6, 2, 5};
    for (std::size_t i = 0; i < 8; ++i) mixer.mix.at(i, perm[i]) = 1.0;
    Rng rng(5);
    Matrix frame = random_frame(rng, 8, 4);
    DisentangledFrame split = slot_project(frame, mixer, layout);
    for (std::size_t slot = 0; slot < 3; ++slot)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(split.static_per_level[0].at(slot, j) == frame.at(perm[slot], j));
    for (std::size_t slot = 0; slot < 3; ++slot)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(split.dynamic.at(slot, j) == frame.at(perm[5 + slot], j));
}

TEST_CASE("random mixer equals the explicit matrix-product oracle") {
    LayoutConfig layout = small_layout();
    MixerParams mixer = init_mixer(layout, 11, 0.3);
    Rng rng(12);
    Matrix frame = random_frame(rng, 8, 6);
    DisentangledFrame split = slot_project(frame, mixer, layout);
    Matrix full = matmul(mixer.mix, frame);
    CHECK(split.static_per_level[0].bit_equal(full.slice_rows(0, 3)));
    CHECK(split.static_per_level[1].bit_equal(full.slice_rows(3, 5)));
    CHECK(split.dynamic.bit_equal(full.slice_rows(5, 8)));
    CHECK(slot_project_dynamic(frame, mixer, layout).bit_equal(full.slice_rows(5, 8)));
    CHECK(slot_project_level(frame, mixer, layout, 1).bit_equal(full.slice_rows(3, 5)));
}

TEST_CASE("slot projection is linear in the frame") {
    LayoutConfig layout = small_layout();
    MixerParams mixer = init_mixer(layout, 21, 0.2);
    Rng rng(22);
    Matrix a = random_frame(rng, 8, 4);
    Matrix b = random_frame(rng, 8, 4);
    const double alpha = 0.7, beta = -1.3;
    Matrix combo(8, 4);
    for (std::size_t i = 0; i < combo.data.size(); ++i)
        combo.data[i] = alpha * a.data[i] + beta * b.data[i];
    DisentangledFrame pa = slot_project(a, mixer, layout);
    DisentangledFrame pb = slot_project(b, mixer, layout);
    DisentangledFrame pc = slot_project(combo, mixer, layout);
    for (std::size_t i = 0; i < pc.dynamic.data.size(); ++i) {
        CHECK(pc.dynamic.data[i] ==
              doctest::Approx(alpha * pa.dynamic.data[i] + beta * pb.dynamic.data[i])
                  .epsilon(1e-12));
    }
}

TEST_CASE("single-frame window degenerates to statics plus one dynamic segment") {
    Rng rng(31);
    std::vector<Matrix> statics = {random_frame(rng, 3, 4), random_frame(rng, 2, 4)};
    Matrix dyn = random_frame(rng, 3, 4);
    Matrix instr = random_frame(rng, 2, 4);
    AssembledContext ctx = assemble_context(statics, {dyn}, instr, 1);
    CHECK(ctx.tokens.rows == 3 + 2 + 3 + 2);
    CHECK(ctx.static_rows() == 5);
    CHECK(ctx.dynamic_segments() == 1);
    CHECK(ctx.segments.back().kind == SegmentInfo::Kind::Instruction);
}

TEST_CASE("paper-scale window: 230 statics + 20 frames of 26 dynamics = 750 rows") {
    Rng rng(41);
    std::vector<Matrix> statics = {random_frame(rng, 230, 2)};
    std::vector<Matrix> history;
    for (int i = 0; i < 20; ++i) history.push_back(random_frame(rng, 26, 2));
    AssembledContext ctx = assemble_context(statics, history, Matrix(0, 2), 20);
    CHECK(ctx.tokens.rows == 750);
    CHECK(context_length(256, 230.0 / 256.0, 20).ours == 750);
}

TEST_CASE("fuzzed assemblies obey the row-count formula and the one-copy rule") {
    Rng rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.uniform_int(6);
        const std::size_t n_levels = 1 + rng.uniform_int(3);
        std::vector<Matrix> statics;
        std::size_t static_rows = 0;
        for (std::size_t l = 0; l < n_levels; ++l) {
            const std::size_t rows = 1 + rng.uniform_int(20);
            statics.push_back(random_frame(rng, rows, d));
            static_rows += rows;
        }
        const std::size_t n_d = 1 + rng.uniform_int(12);
        const std::size_t cap = 1 + rng.uniform_int(10);
        const std::size_t frames = 1 + rng.uniform_int(cap);
        std::vector<Matrix> history;
        for (std::size_t f = 0; f < frames; ++f) history.push_back(random_frame(rng, n_d, d));
        const std::size_t instr_rows = rng.uniform_int(5);
        AssembledContext ctx =
            assemble_context(statics, history, random_frame(rng, instr_rows, d), cap);
        CHECK(ctx.tokens.rows == static_rows + frames * n_d + instr_rows);
        CHECK(ctx.static_rows() == static_rows);

        // Cross-check the closed-form context length when the layout is
        // expressible as one frame's split (window full, no instruction).
        if (instr_rows == 0 && frames == cap) {
            const std::size_t n_frame = static_rows + n_d;
            const double r = static_cast<double>(static_rows) / n_frame;
            CHECK(context_length(n_frame, r, cap).ours == ctx.tokens.rows);
        }
    }
}

TEST_CASE("assemble rejects an empty history and ragged dynamics") {
    Rng rng(61);
    std::vector<Matrix> statics = {random_frame(rng, 2, 3)};
    CHECK_THROWS_AS((assemble_context(statics, {}, Matrix(0, 3), 4)), ShapeError);
    std::vector<Matrix> ragged = {random_frame(rng, 3, 3), random_frame(rng, 4, 3)};
    CHECK_THROWS_AS((assemble_context(statics, ragged, Matrix(0, 3), 4)), ShapeError);
}

TEST_CASE("rolling window grows until capacity then replaces the oldest") {
    Rng rng(71);
    std::vector<Matrix> statics = {random_frame(rng, 2, 3)};
    Matrix instr = random_frame(rng, 1, 3);
    AssembledContext ctx = assemble_context(statics, {random_frame(rng, 2, 3)}, instr, 3);
    const std::size_t below = ctx.tokens.rows;
    ctx = rolling_window_update(ctx, random_frame(rng, 2, 3));
    CHECK(ctx.tokens.rows == below + 2);
    ctx = rolling_window_update(ctx, random_frame(rng, 2, 3));
    CHECK(ctx.dynamic_segments() == 3);
    const std::size_t full_rows = ctx.tokens.rows;

    Matrix newest = random_frame(rng, 2, 3);
    AssembledContext updated = rolling_window_update(ctx, newest);
    CHECK(updated.tokens.rows == full_rows);
    CHECK(updated.dynamic_segments() == 3);
    // Newest segment is the appended matrix, statics and instruction untouched.
    std::vector<Matrix> dyn_segments;
    for (const SegmentInfo& s : updated.segments)
        if (s.kind == SegmentInfo::Kind::Dynamic) dyn_segments.push_back(updated.segment(s));
    CHECK(dyn_segments.back().bit_equal(newest));
    CHECK(updated.static_rows() == 2);
}

TEST_CASE("fifty rolling updates keep exactly the last segments, per a deque oracle") {
    Rng rng(81);
    const std::size_t cap = 8, n_d = 2, d = 3;
    std::vector<Matrix> statics = {random_frame(rng, 3, d)};
    Matrix first = random_frame(rng, n_d, d);
    AssembledContext ctx = assemble_context(statics, {first}, Matrix(0, d), cap);
    std::deque<Matrix> oracle = {first};
    for (int step = 0; step < 50; ++step) {
        Matrix next = random_frame(rng, n_d, d);
        ctx = rolling_window_update(ctx, next);
        oracle.push_back(next);
        if (oracle.size() > cap) oracle.pop_front();
    }
    std::vector<Matrix> dyn_segments;
    for (const SegmentInfo& s : ctx.segments)
        if (s.kind == SegmentInfo::Kind::Dynamic) dyn_segments.push_back(ctx.segment(s));
    REQUIRE(dyn_segments.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i)
        CHECK(dyn_segments[i].bit_equal(oracle[i]));
}

}  // TEST_SUITE
