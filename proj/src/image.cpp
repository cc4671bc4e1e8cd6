#include "tmad/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tmad {

Image::Image(int height, int width, double fill) : t_(Shape{1, 3, height, width}, fill) {
    if (height <= 0 || width <= 0) throw ShapeError("image dimensions must be positive");
}

Image::Image(Tensor t) : t_(std::move(t)) {
    const auto& s = t_.shape();
    if (s.n != 1 || s.c != 3 || s.h <= 0 || s.w <= 0) throw ShapeError("image tensor must be (1, 3, H, W), got " + to_string(s));
    if (!t_.all_finite()) throw std::invalid_argument("image contains non-finite values");
}

Mask::Mask(int height, int width) : t_(Shape{1, 1, height, width}) {
    if (height <= 0 || width <= 0) throw ShapeError("mask dimensions must be positive");
}

Mask::Mask(Tensor t) : t_(std::move(t)) {
    const auto& s = t_.shape();
    if (s.n != 1 || s.c != 1 || s.h <= 0 || s.w <= 0) throw ShapeError("mask tensor must be (1, 1, H, W), got " + to_string(s));
    for (double v : t_.values()) {
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask must be strictly binary");
    }
}

std::size_t Mask::hole_count() const {
    return static_cast<std::size_t>(std::count(t_.values().begin(), t_.values().end(), 1.0));
}

Tensor Mask::expanded(int channels) const {
    const std::size_t plane = static_cast<std::size_t>(height()) * width();
    Tensor out(Shape{1, channels, height(), width()});
    for (int c = 0; c < channels; ++c) std::copy(t_.data(), t_.data() + plane, out.data() + c * plane);
    return out;
}

void require_same_size(const Image& image, const Mask& mask) {
    if (image.height() != mask.height() || image.width() != mask.width()) {
        throw ShapeError("image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                         " and mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                         " differ in size");
    }
}

Image compose_with_valid(const Image& coarse, const Image& masked_input, const Mask& mask) {
    require_same_size(coarse, mask);
    require_same_size(masked_input, mask);
    Tensor out = masked_input.tensor();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < mask.height(); ++y)
            for (int x = 0; x < mask.width(); ++x)
                if (mask.hole(y, x)) out.at(0, c, y, x) = coarse.at(c, y, x);
    return Image(std::move(out));
}

Image apply_mask(const Image& image, const Mask& mask) {
    require_same_size(image, mask);
    Tensor out = image.tensor();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < mask.height(); ++y)
            for (int x = 0; x < mask.width(); ++x)
                if (mask.hole(y, x)) out.at(0, c, y, x) = 0.0;
    return Image(std::move(out));
}

PatchGrid build_patch_grid(const Mask& mask, int patch_size) {
    const int h = mask.height();
    const int w = mask.width();
    if (patch_size <= 0) throw std::invalid_argument("patch size must be positive");
    if (patch_size > h || patch_size > w) {
        throw std::invalid_argument("patch size " + std::to_string(patch_size) + " exceeds image " + std::to_string(h) +
                                    "x" + std::to_string(w));
    }
    PatchGrid grid;
    grid.patch_size = patch_size;
    int r0 = h, r1 = -1, c0 = w, c1 = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.hole(y, x)) {
                r0 = std::min(r0, y);
                r1 = std::max(r1, y);
                c0 = std::min(c0, x);
                c1 = std::max(c1, x);
            }
    if (r1 < 0) return grid;

    const int nr = (r1 - r0 + patch_size) / patch_size;
    const int nc = (c1 - c0 + patch_size) / patch_size;
    grid.origin_row = std::min(r0, h - nr * patch_size);
    grid.origin_col = std::min(c0, w - nc * patch_size);
    if (grid.origin_row < 0 || grid.origin_col < 0) {
        throw std::invalid_argument("hole bounding box cannot be covered by an in-image lattice of size " +
                                    std::to_string(patch_size) + "; pad the image to a multiple of the patch size");
    }
    for (int i = 0; i < nr; ++i) {
        for (int j = 0; j < nc; ++j) {
            const Cell cell{grid.origin_row + i * patch_size, grid.origin_col + j * patch_size};
            bool hit = false;
            for (int y = cell.row; y < cell.row + patch_size && !hit; ++y)
                for (int x = cell.col; x < cell.col + patch_size; ++x)
                    if (mask.hole(y, x)) {
                        hit = true;
                        break;
                    }
            if (hit) grid.cells.push_back(cell);
        }
    }
    return grid;
}

std::vector<Cell> valid_lattice_cells(const Mask& mask, const PatchGrid& grid) {
    const int k = grid.patch_size;
    std::vector<Cell> cells;
    for (int r = grid.origin_row % k; r + k <= mask.height(); r += k) {
        for (int c = grid.origin_col % k; c + k <= mask.width(); c += k) {
            bool valid = true;
            for (int y = r; y < r + k && valid; ++y)
                for (int x = c; x < c + k; ++x)
                    if (mask.hole(y, x)) {
                        valid = false;
                        break;
                    }
            if (valid) cells.push_back({r, c});
        }
    }
    return cells;
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

void append_window_indices(std::vector<std::int64_t>& out, std::int64_t base, int channels, int height, int width,
                           int top, int left, int size) {
    const std::int64_t plane = static_cast<std::int64_t>(height) * width;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < size; ++y) {
            const int ry = reflect_index(top + y, height);
            for (int x = 0; x < size; ++x) {
                const int rx = reflect_index(left + x, width);
                out.push_back(base + c * plane + static_cast<std::int64_t>(ry) * width + rx);
            }
        }
}

namespace {

Tensor gather_windows(const Image& image, const std::vector<Cell>& cells, int offset, int size) {
    std::vector<std::int64_t> idx;
    idx.reserve(cells.size() * 3 * size * size);
    for (const auto& cell : cells) {
        append_window_indices(idx, 0, 3, image.height(), image.width(), cell.row + offset, cell.col + offset, size);
    }
    Tensor out(Shape{static_cast<int>(cells.size()), 3, size, size});
    const auto& src = image.tensor();
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = src[static_cast<std::size_t>(idx[i])];
    return out;
}

}  // namespace

CoarsePatches extract_coarse_patches(const Image& image, const Mask& mask, int patch_size) {
    require_same_size(image, mask);
    CoarsePatches out;
    out.grid = build_patch_grid(mask, patch_size);
    out.patches = gather_windows(image, out.grid.cells, 0, patch_size);
    return out;
}

Tensor extract_context_patches(const Image& image, const PatchGrid& grid) {
    const int k = grid.patch_size;
    return gather_windows(image, grid.cells, -k, 3 * k);
}

Image tile_patches(const Image& base, const PatchGrid& grid, const Tensor& patches) {
    const int k = grid.patch_size;
    const Shape expect{static_cast<int>(grid.cells.size()), 3, k, k};
    if (patches.shape() != expect) {
        throw ShapeError("tile_patches expects " + to_string(expect) + ", got " + to_string(patches.shape()));
    }
    Tensor out = base.tensor();
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        const auto& cell = grid.cells[i];
        if (cell.row < 0 || cell.col < 0 || cell.row + k > base.height() || cell.col + k > base.width()) {
            throw ShapeError("grid cell outside image");
        }
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < k; ++y)
                for (int x = 0; x < k; ++x)
                    out.at(0, c, cell.row + y, cell.col + x) = patches.at(static_cast<int>(i), c, y, x);
    }
    return Image(std::move(out));
}

Image reflect_pad(const Image& image, int top, int left, int bottom, int right) {
    const int h = image.height() + top + bottom;
    const int w = image.width() + left + right;
    Image out(h, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at(c, y, x) = image.at(c, reflect_index(y - top, image.height()), reflect_index(x - left, image.width()));
    return out;
}

Image crop(const Image& image, int top, int left, int height, int width) {
    if (top < 0 || left < 0 || top + height > image.height() || left + width > image.width()) {
        throw ShapeError("crop outside image");
    }
    Image out(height, width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, top + y, left + x);
    return out;
}

}  // namespace tmad
