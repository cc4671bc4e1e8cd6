#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tmad/tensor.hpp"

namespace tmad {

/// RGB image with values in [-1, 1], stored as a (1, 3, H, W) tensor.
class Image {
public:
    Image() = default;
    Image(int height, int width, double fill = 0.0);
    /// Takes a (1, 3, H, W) tensor; throws on wrong shape or non-finite values.
    explicit Image(Tensor t);

    [[nodiscard]] int height() const { return t_.shape().h; }
    [[nodiscard]] int width() const { return t_.shape().w; }
    [[nodiscard]] double at(int c, int y, int x) const { return t_.at(0, c, y, x); }
    double& at(int c, int y, int x) { return t_.at(0, c, y, x); }
    [[nodiscard]] const Tensor& tensor() const { return t_; }

    bool operator==(const Image& o) const { return t_.shape() == o.t_.shape() && t_.vector() == o.t_.vector(); }

private:
    Tensor t_;
};

/// Binary hole mask, 1 = missing. Stored as a (1, 1, H, W) tensor of {0, 1}.
class Mask {
public:
    Mask() = default;
    Mask(int height, int width);
    /// Takes a (1, 1, H, W) tensor; throws unless strictly binary.
    explicit Mask(Tensor t);

    [[nodiscard]] int height() const { return t_.shape().h; }
    [[nodiscard]] int width() const { return t_.shape().w; }
    [[nodiscard]] bool hole(int y, int x) const { return t_.at(0, 0, y, x) != 0.0; }
    void set(int y, int x, bool hole) { t_.at(0, 0, y, x) = hole ? 1.0 : 0.0; }
    [[nodiscard]] std::size_t hole_count() const;
    [[nodiscard]] bool empty() const { return hole_count() == 0; }
    [[nodiscard]] const Tensor& tensor() const { return t_; }
    /// Mask repeated over three channels, for elementwise products with images.
    [[nodiscard]] Tensor expanded(int channels = 3) const;

    bool operator==(const Mask& o) const { return t_.shape() == o.t_.shape() && t_.vector() == o.t_.vector(); }

private:
    Tensor t_;
};

/// Top-left anchor of a k_p x k_p cell, in image pixels.
struct Cell {
    int row = 0;
    int col = 0;
    bool operator==(const Cell&) const = default;
};

/// Non-overlapping k_p lattice cells covering the hole, in row-major order.
struct PatchGrid {
    int patch_size = 0;
    int origin_row = 0;
    int origin_col = 0;
    std::vector<Cell> cells;
};

struct CoarsePatches {
    PatchGrid grid;
    Tensor patches;  // (cells, 3, k_p, k_p)
};

void require_same_size(const Image& image, const Mask& mask);

/// coarse where mask = 1, masked_input where mask = 0.
Image compose_with_valid(const Image& coarse, const Image& masked_input, const Mask& mask);

/// Input with hole pixels zeroed.
Image apply_mask(const Image& image, const Mask& mask);

/// Lattice anchored at the hole bounding box's top-left, shifted up/left only
/// as far as needed to keep every cell inside the image.
PatchGrid build_patch_grid(const Mask& mask, int patch_size);

/// All lattice cells (same origin as `grid`) inside the image with no hole pixel.
std::vector<Cell> valid_lattice_cells(const Mask& mask, const PatchGrid& grid);

CoarsePatches extract_coarse_patches(const Image& image, const Mask& mask, int patch_size);

/// 3k_p x 3k_p windows centred on each cell, reflection-padded at borders.
Tensor extract_context_patches(const Image& image, const PatchGrid& grid);

/// base with each grid cell replaced by its patch.
Image tile_patches(const Image& base, const PatchGrid& grid, const Tensor& patches);

/// Mirror index into [0, n) without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2…).
int reflect_index(int i, int n);

/// Appends flat indices of a size x size window at (top, left) of a (channels, height, width)
/// plane stack starting at `base`; out-of-range coordinates are reflected.
void append_window_indices(std::vector<std::int64_t>& out, std::int64_t base, int channels, int height, int width,
                           int top, int left, int size);

/// Reflection pad on all sides (used by inference for size alignment and by tests).
Image reflect_pad(const Image& image, int top, int left, int bottom, int right);
Image crop(const Image& image, int top, int left, int height, int width);

}  // namespace tmad
