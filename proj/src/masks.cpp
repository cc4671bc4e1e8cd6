#include "tmad/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tmad {

namespace {

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
double uniform_real(Rng& rng, double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

void validate(const MaskSpec& spec, int height, int width) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("mask dimensions must be positive");
    if (spec.kind == MaskSpec::Kind::rectangle) {
        const auto& r = spec.rectangle;
        if (r.min_height < 1 || r.min_width < 1 || r.min_height > r.max_height || r.min_width > r.max_width) {
            throw std::invalid_argument("rectangle bounds are inconsistent");
        }
        if (r.max_height > height || r.max_width > width) {
            throw std::invalid_argument("rectangle bounds " + std::to_string(r.max_height) + "x" +
                                        std::to_string(r.max_width) + " exceed image " + std::to_string(height) + "x" +
                                        std::to_string(width));
        }
    } else {
        const auto& f = spec.freeform;
        if (f.strokes < 0 || f.max_vertices < 1 || f.min_length < 0 || f.min_length > f.max_length ||
            f.min_width <= 0 || f.min_width > f.max_width) {
            throw std::invalid_argument("freeform bounds are inconsistent");
        }
        if (f.max_width > std::min(height, width)) throw std::invalid_argument("brush width exceeds image dimensions");
    }
}

}  // namespace

void draw_segment(Mask& mask, double y0, double x0, double y1, double x1, double width) {
    const double r = width / 2.0;
    const int ylo = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - r)));
    const int yhi = std::min(mask.height() - 1, static_cast<int>(std::ceil(std::max(y0, y1) + r)));
    const int xlo = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - r)));
    const int xhi = std::min(mask.width() - 1, static_cast<int>(std::ceil(std::max(x0, x1) + r)));
    const double dy = y1 - y0;
    const double dx = x1 - x0;
    const double len2 = dy * dy + dx * dx;
    for (int y = ylo; y <= yhi; ++y) {
        for (int x = xlo; x <= xhi; ++x) {
            double t = len2 > 0 ? ((y - y0) * dy + (x - x0) * dx) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double py = y0 + t * dy - y;
            const double px = x0 + t * dx - x;
            if (py * py + px * px <= r * r) mask.set(y, x, true);
        }
    }
}

Mask generate_mask(const MaskSpec& spec, int height, int width) {
    Rng rng(spec.seed);
    return generate_mask(spec, height, width, rng);
}

Mask generate_mask(const MaskSpec& spec, int height, int width, Rng& rng) {
    validate(spec, height, width);
    Mask mask(height, width);
    if (spec.kind == MaskSpec::Kind::rectangle) {
        const auto& b = spec.rectangle;
        const int h = uniform_int(rng, b.min_height, b.max_height);
        const int w = uniform_int(rng, b.min_width, b.max_width);
        const int top = uniform_int(rng, 0, height - h);
        const int left = uniform_int(rng, 0, width - w);
        for (int y = top; y < top + h; ++y)
            for (int x = left; x < left + w; ++x) mask.set(y, x, true);
        return mask;
    }
    const auto& f = spec.freeform;
    for (int s = 0; s < f.strokes; ++s) {
        double y = uniform_real(rng, 0.0, height - 1.0);
        double x = uniform_real(rng, 0.0, width - 1.0);
        const int vertices = uniform_int(rng, 1, f.max_vertices);
        const double brush = uniform_real(rng, f.min_width, f.max_width);
        for (int v = 0; v < vertices; ++v) {
            const double angle = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
            const double length = uniform_real(rng, f.min_length, f.max_length);
            const double ny = std::clamp(y + length * std::sin(angle), 0.0, height - 1.0);
            const double nx = std::clamp(x + length * std::cos(angle), 0.0, width - 1.0);
            draw_segment(mask, y, x, ny, nx, brush);
            y = ny;
            x = nx;
        }
    }
    return mask;
}

}  // namespace tmad
