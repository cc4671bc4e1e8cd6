#pragma once

#include <cmath>

#include "tmad/pipeline.hpp"

namespace tmad::testing {

/// Small networks so whole-pipeline tests run in milliseconds.
inline ModelSpec toy_spec(int patch_size = 8, int pool_size = 16) {
    ModelSpec spec;
    spec.patch_size = patch_size;
    spec.pool_size = pool_size;
    spec.coarse_widths = spec.psnet_widths = spec.critic_widths = WidthSpec{4, 16};
    spec.embedding_channels = 4;
    return spec;
}

/// Deterministic striped texture in [-1, 1].
inline Image stripes(int height, int width, double phase = 0.0) {
    Image img(height, width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                img.at(c, y, x) = 0.8 * std::sin(0.7 * x + 0.3 * y + phase + c) * std::cos(0.2 * y - 0.1 * c);
    return img;
}

inline Mask rect_mask(int height, int width, int top, int left, int h, int w) {
    Mask m(height, width);
    for (int y = top; y < top + h; ++y)
        for (int x = left; x < left + w; ++x) m.set(y, x, true);
    return m;
}

}  // namespace tmad::testing
