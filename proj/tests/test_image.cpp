#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tmad/image.hpp"
#include "tmad/masks.hpp"

namespace tmad {
namespace {

using testing::random_tensor;

Image random_image(int h, int w, std::uint64_t seed) { return Image(random_tensor({1, 3, h, w}, seed)); }

Mask rect_mask(int h, int w, int top, int left, int mh, int mw) {
    Mask m(h, w);
    for (int y = top; y < top + mh; ++y)
        for (int x = left; x < left + mw; ++x) m.set(y, x, true);
    return m;
}

Mask random_mask(int h, int w, std::uint64_t seed, double p = 0.1) {
    Rng rng(seed);
    std::bernoulli_distribution hole(p);
    Mask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.set(y, x, hole(rng));
    return m;
}

bool cell_hits_hole(const Mask& m, const Cell& c, int k) {
    for (int y = c.row; y < c.row + k; ++y)
        for (int x = c.col; x < c.col + k; ++x)
            if (m.hole(y, x)) return true;
    return false;
}

TEST(Compose, IdentityCases) {
    const auto coarse = random_image(8, 8, 1);
    const auto input = random_image(8, 8, 2);
    Mask ones(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) ones.set(y, x, true);
    EXPECT_EQ(compose_with_valid(coarse, input, ones), coarse);
    EXPECT_EQ(compose_with_valid(coarse, input, Mask(8, 8)), input);
}

TEST(Compose, CheckerboardSelectsPerPixel) {
    const auto coarse = random_image(7, 9, 3);
    const auto input = random_image(7, 9, 4);
    Mask m(7, 9);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 9; ++x) m.set(y, x, (x + y) % 2 == 0);
    const auto out = compose_with_valid(coarse, input, m);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 7; ++y)
            for (int x = 0; x < 9; ++x) EXPECT_EQ(out.at(c, y, x), m.hole(y, x) ? coarse.at(c, y, x) : input.at(c, y, x));
}

TEST(Compose, IdempotentAndRejectsMismatch) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto coarse = random_image(16, 12, seed);
        const auto input = random_image(16, 12, seed + 100);
        const auto m = random_mask(16, 12, seed, 0.4);
        const auto once = compose_with_valid(coarse, input, m);
        EXPECT_EQ(compose_with_valid(once, input, m), once);
    }
    EXPECT_THROW(compose_with_valid(random_image(8, 8, 1), random_image(8, 8, 2), Mask(8, 9)), ShapeError);
    EXPECT_THROW(compose_with_valid(random_image(8, 8, 1), random_image(8, 7, 2), Mask(8, 8)), ShapeError);
}

TEST(Masks, RejectNonBinaryValues) {
    Tensor t({1, 1, 2, 2});
    t[1] = 0.5;
    EXPECT_THROW(Mask{t}, std::invalid_argument);
    Tensor img({1, 3, 2, 2});
    img[0] = std::nan("");
    EXPECT_THROW(Image{img}, std::invalid_argument);
}

TEST(PatchGrid, AlignedHoleGivesSixteenCells) {
    const auto m = rect_mask(256, 256, 64, 64, 128, 128);
    const auto p = extract_coarse_patches(random_image(256, 256, 5), m, 32);
    EXPECT_EQ(p.grid.cells.size(), 16u);
    EXPECT_EQ(p.patches.shape(), (Shape{16, 3, 32, 32}));
}

TEST(PatchGrid, UnalignedHoleMatchesBruteForce) {
    const int k = 32;
    const auto m = rect_mask(256, 256, 10, 10, 100, 100);
    const auto grid = build_patch_grid(m, k);
    EXPECT_EQ(grid.origin_row, 10);
    EXPECT_EQ(grid.origin_col, 10);
    std::vector<Cell> expected;
    for (int r = grid.origin_row; r + k <= 256; r += k)
        for (int c = grid.origin_col; c + k <= 256; c += k)
            if (cell_hits_hole(m, {r, c}, k)) expected.push_back({r, c});
    EXPECT_EQ(grid.cells, expected);
    EXPECT_EQ(grid.cells.size(), 16u);
}

TEST(PatchGrid, EmptyMaskAndOversizedPatch) {
    EXPECT_TRUE(extract_coarse_patches(random_image(32, 32, 6), Mask(32, 32), 8).grid.cells.empty());
    EXPECT_THROW(build_patch_grid(Mask(16, 16), 32), std::invalid_argument);
}

TEST(PatchGrid, CellsDisjointCoverHoleAndInsideImage) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        // 48 is a multiple of every k used, so any hole admits an in-image lattice.
        const int k = 4 + static_cast<int>(seed % 3) * 2;
        const auto m = random_mask(48, 48, seed, 0.01);
        if (m.empty()) continue;
        const auto grid = build_patch_grid(m, k);
        std::vector<int> owner(48 * 48, 0);
        for (const auto& c : grid.cells) {
            ASSERT_GE(c.row, 0);
            ASSERT_GE(c.col, 0);
            ASSERT_LE(c.row + k, 48);
            ASSERT_LE(c.col + k, 48);
            EXPECT_TRUE(cell_hits_hole(m, c, k));
            for (int y = c.row; y < c.row + k; ++y)
                for (int x = c.col; x < c.col + k; ++x) ++owner[y * 48 + x];
        }
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                EXPECT_LE(owner[y * 48 + x], 1);
                if (m.hole(y, x)) EXPECT_EQ(owner[y * 48 + x], 1) << "hole pixel uncovered at " << y << "," << x;
            }
        for (std::size_t i = 1; i < grid.cells.size(); ++i) {
            const auto& a = grid.cells[i - 1];
            const auto& b = grid.cells[i];
            EXPECT_TRUE(a.row < b.row || (a.row == b.row && a.col < b.col));
        }
    }
}

TEST(Tiling, ExtractThenTileIsIdentity) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto img = random_image(40, 48, seed);
        const auto m = random_mask(40, 48, seed + 7, 0.01);
        const auto p = extract_coarse_patches(img, m, 8);
        EXPECT_EQ(tile_patches(img, p.grid, p.patches), img);
    }
}

TEST(Tiling, ReplacingOnePatchTouchesExactlyItsPixels) {
    const auto img = random_image(64, 64, 9);
    const auto m = rect_mask(64, 64, 16, 16, 32, 32);
    auto p = extract_coarse_patches(img, m, 16);
    ASSERT_EQ(p.grid.cells.size(), 4u);
    Tensor patches = p.patches;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) patches.at(2, c, y, x) = 0.0;
    const auto out = tile_patches(img, p.grid, patches);
    int changed = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            if (out.at(0, y, x) != img.at(0, y, x)) ++changed;
    EXPECT_EQ(changed, 16 * 16);
}

TEST(Tiling, DisjointWritesCommute) {
    const auto img = random_image(32, 32, 10);
    const auto m = rect_mask(32, 32, 0, 0, 32, 32);
    const auto p = extract_coarse_patches(img, m, 16);
    const auto replacement = random_tensor(p.patches.shape(), 11);
    PatchGrid first = p.grid;
    PatchGrid second = p.grid;
    first.cells = {p.grid.cells[0]};
    second.cells = {p.grid.cells[3]};
    const auto a = replacement.slice(0, 1);
    const auto b = replacement.slice(3, 1);
    EXPECT_EQ(tile_patches(tile_patches(img, first, a), second, b), tile_patches(tile_patches(img, second, b), first, a));
}

TEST(Tiling, RejectsWrongPatchCount) {
    const auto img = random_image(32, 32, 12);
    const auto p = extract_coarse_patches(img, rect_mask(32, 32, 0, 0, 8, 8), 8);
    EXPECT_THROW(tile_patches(img, p.grid, Tensor({2, 3, 8, 8})), ShapeError);
    EXPECT_THROW(tile_patches(img, p.grid, Tensor({1, 3, 4, 4})), ShapeError);
}

TEST(Context, InteriorWindowIsPlainCrop) {
    const auto img = random_image(128, 128, 13);
    PatchGrid grid{32, 0, 0, {{32, 32}}};
    const auto ctx = extract_context_patches(img, grid);
    ASSERT_EQ(ctx.shape(), (Shape{1, 3, 96, 96}));
    EXPECT_EQ(Image(ctx), crop(img, 0, 0, 96, 96));
}

TEST(Context, BorderWindowMatchesExplicitReflectionPad) {
    const auto img = random_image(64, 64, 14);
    PatchGrid grid{16, 0, 0, {{0, 0}, {48, 32}}};
    const auto ctx = extract_context_patches(img, grid);
    const auto padded = reflect_pad(img, 16, 16, 16, 16);
    EXPECT_EQ(Image(ctx.slice(0, 1)), crop(padded, 0, 0, 48, 48));
    EXPECT_EQ(Image(ctx.slice(1, 1)), crop(padded, 48, 32, 48, 48));
}

TEST(Context, WindowIsThreePatchesWide) {
    const auto img = random_image(64, 64, 15);
    const auto p = extract_coarse_patches(img, rect_mask(64, 64, 20, 20, 20, 20), 16);
    const auto ctx = extract_context_patches(img, p.grid);
    EXPECT_EQ(ctx.shape(), (Shape{static_cast<int>(p.grid.cells.size()), 3, 48, 48}));
}

TEST(Reflect, IndexMirrorsWithoutRepeatingEdge) {
    EXPECT_EQ(reflect_index(-1, 5), 1);
    EXPECT_EQ(reflect_index(-2, 5), 2);
    EXPECT_EQ(reflect_index(5, 5), 3);
    EXPECT_EQ(reflect_index(6, 5), 2);
    EXPECT_EQ(reflect_index(3, 5), 3);
    EXPECT_EQ(reflect_index(0, 1), 0);
    EXPECT_EQ(reflect_index(-7, 1), 0);
    for (int i = -20; i < 30; ++i) {
        const int r = reflect_index(i, 4);
        EXPECT_GE(r, 0);
        EXPECT_LT(r, 4);
    }
}

TEST(Reflect, PadThenCropRoundTrips) {
    const auto img = random_image(10, 13, 16);
    const auto padded = reflect_pad(img, 3, 5, 6, 2);
    EXPECT_EQ(padded.height(), 19);
    EXPECT_EQ(padded.width(), 20);
    EXPECT_EQ(crop(padded, 3, 5, 10, 13), img);
    EXPECT_EQ(padded.at(1, 0, 0), img.at(1, 3, 5));
    EXPECT_THROW(crop(img, 5, 5, 10, 10), ShapeError);
}

TEST(GenerateMask, RectangleWithinBounds) {
    MaskSpec spec;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        spec.seed = seed;
        const auto m = generate_mask(spec, 256, 256);
        EXPECT_LE(m.hole_count(), 128u * 128u);
        EXPECT_GE(m.hole_count(), 32u * 32u);
        const auto grid = build_patch_grid(m, 1);
        int r1 = 0, c1 = 0;
        for (const auto& c : grid.cells) {
            r1 = std::max(r1, c.row);
            c1 = std::max(c1, c.col);
        }
        const int rows = r1 - grid.origin_row + 1;
        const int cols = c1 - grid.origin_col + 1;
        EXPECT_EQ(static_cast<std::size_t>(rows) * cols, m.hole_count()) << "hole is not one rectangle";
    }
}

TEST(GenerateMask, DeterministicUnderSeed) {
    for (auto kind : {MaskSpec::Kind::rectangle, MaskSpec::Kind::freeform}) {
        MaskSpec spec;
        spec.kind = kind;
        spec.rectangle = {8, 40, 8, 40};
        spec.seed = 42;
        EXPECT_EQ(generate_mask(spec, 64, 80), generate_mask(spec, 64, 80));
        auto other = spec;
        other.seed = 43;
        EXPECT_NE(generate_mask(spec, 64, 80), generate_mask(other, 64, 80));
    }
}

TEST(GenerateMask, FreeformWithoutStrokesIsEmpty) {
    MaskSpec spec;
    spec.kind = MaskSpec::Kind::freeform;
    spec.freeform.strokes = 0;
    EXPECT_TRUE(generate_mask(spec, 64, 64).empty());
    spec.freeform.strokes = 3;
    EXPECT_FALSE(generate_mask(spec, 64, 64).empty());
}

TEST(GenerateMask, BoundsLargerThanImageThrow) {
    MaskSpec spec;
    EXPECT_THROW(generate_mask(spec, 100, 256), std::invalid_argument);
    spec.kind = MaskSpec::Kind::freeform;
    spec.freeform.max_width = 40;
    EXPECT_THROW(generate_mask(spec, 32, 32), std::invalid_argument);
}

TEST(DrawSegment, DotIsRoundDisc) {
    Mask m(21, 21);
    draw_segment(m, 10, 10, 10, 10, 10.0);
    EXPECT_TRUE(m.hole(10, 10));
    EXPECT_TRUE(m.hole(10, 14));
    EXPECT_FALSE(m.hole(10, 16));
    EXPECT_FALSE(m.hole(14, 14));
    for (int y = 0; y < 21; ++y)
        for (int x = 0; x < 21; ++x) EXPECT_EQ(m.hole(y, x), m.hole(20 - y, x));
}

}  // namespace
}  // namespace tmad
