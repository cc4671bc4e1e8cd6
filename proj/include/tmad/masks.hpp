#pragma once

#include <cstdint>
#include <random>

#include "tmad/image.hpp"

namespace tmad {

using Rng = std::mt19937_64;

struct RectangleBounds {
    int min_height = 32;
    int max_height = 128;
    int min_width = 32;
    int max_width = 128;
};

/// Random brush strokes: each stroke is a polyline of `1..max_vertices`
/// segments drawn with a round brush.
struct FreeformBounds {
    int strokes = 4;
    int max_vertices = 8;
    double min_length = 10.0;
    double max_length = 40.0;
    double min_width = 8.0;
    double max_width = 20.0;
};

struct MaskSpec {
    enum class Kind { rectangle, freeform };
    Kind kind = Kind::rectangle;
    RectangleBounds rectangle{};
    FreeformBounds freeform{};
    std::uint64_t seed = 0;
};

/// Deterministic in (spec, height, width).
Mask generate_mask(const MaskSpec& spec, int height, int width);
/// Draws from `rng` instead of spec.seed (training loop).
Mask generate_mask(const MaskSpec& spec, int height, int width, Rng& rng);

/// Rasterises a round-capped segment of the given width into the mask (binary OR).
void draw_segment(Mask& mask, double y0, double x0, double y1, double x1, double width);

}  // namespace tmad
