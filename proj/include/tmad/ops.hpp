#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tmad/autograd.hpp"

namespace tmad {

using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

// Structural ops.
Var detach(const Var& x);
Var reshape(const Var& x, Shape s);
/// out.flat[i] = x.flat[idx[i]], or 0 where idx[i] < 0. Backward scatters.
Var gather(const Var& x, Shape out_shape, IndexMap idx);
/// axis 0 stacks samples, axis 1 stacks channels.
Var concat(std::span<const Var> parts, int axis);
Var slice_batch(const Var& x, int begin, int count);
/// Nearest-neighbour halving: keeps pixel (2i, 2j).
Var nearest_downsample(const Var& x);
Var pixel_shuffle(const Var& x, int scale);
/// Zero canvas of (height, width) with x placed at its centre.
Var pad_center(const Var& x, int height, int width);
Var crop_center(const Var& x, int height, int width);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
/// a - s with s a (1,1,1,1) scalar broadcast over a.
Var sub_broadcast(const Var& a, const Var& s);
Var leaky_relu(const Var& x, double slope);
Var abs(const Var& x);
Var square(const Var& x);
/// -log(max(sigmoid(x), floor)).
Var neg_log_sigmoid(const Var& x, double floor = 1e-8);

// Reductions.
Var sum(const Var& x);
Var mean(const Var& x);
Var mean_per_sample(const Var& x);

// Linear algebra. Rows are samples (n); columns are the flattened c*h*w.
/// (n x k) * (k x m) where b has k samples; output keeps b's per-sample shape.
Var matmul(const Var& a, const Var& b);
/// (n x d) * (m x d)^T -> (n, m, 1, 1).
Var matmul_nt(const Var& a, const Var& b);
/// Softmax over the channel axis at every (n, h, w).
Var softmax_channels(const Var& x);
/// Each sample divided by max(||sample||_2, eps).
Var l2_normalize_rows(const Var& x, double eps);

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};
/// Zero-padded cross-correlation. `bias` may be undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt = {});

/// Content-aware reassembly: kernels is (N, k*k, s*H, s*W), normalised per
/// location; output(c, y, x) sums k*k neighbours of input(c, y/s, x/s) with
/// clamp-to-edge borders.
Var carafe_reassemble(const Var& x, const Var& kernels, int scale);

/// weight / sigma(weight) with sigma from power iteration on the
/// (out, in*kh*kw) matrix. `u` is the persistent left singular vector estimate;
/// `power_iterations` updates it in place (0 freezes it).
Var spectral_normalize(const Var& weight, Tensor& u, int power_iterations);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator*(const Var& a, double s);
Var operator*(double s, const Var& a);

}  // namespace tmad
