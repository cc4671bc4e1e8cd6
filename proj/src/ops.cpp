#include "tmad/ops.hpp"

#include <algorithm>
#include <cmath>

namespace tmad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

int rows_of(const Shape& s) { return s.n; }
int cols_of(const Shape& s) { return static_cast<int>(s.sample_size()); }

template <class F, class G>
Var unary(const Var& x, F&& forward, G&& derivative) {
    Tensor out(x.shape());
    const auto& in = x.value();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
    auto xn = x.node();
    return make_result(std::move(out), {x}, [xn, derivative](const Tensor& g, std::span<Tensor* const> pg) {
        const auto& in = xn->value;
        Tensor& gx = *pg[0];
        for (std::size_t i = 0; i < in.size(); ++i) gx[i] += g[i] * derivative(in[i]);
    });
}

constexpr std::size_t kMaxColumnBuffer = std::size_t{1} << 22;

struct ConvGeometry {
    int n, cin, h, w, cout, kh, kw, stride, pad, dil, hout, wout;
    [[nodiscard]] int k() const { return cin * kh * kw; }
    [[nodiscard]] bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
    [[nodiscard]] int rows_per_chunk() const {
        const std::size_t per_row = static_cast<std::size_t>(k()) * wout;
        return std::max(1, static_cast<int>(kMaxColumnBuffer / std::max<std::size_t>(per_row, 1)));
    }
};

void im2col(const ConvGeometry& g, const double* x, int oy0, int oy1, double* col) {
    const int cols = (oy1 - oy0) * g.wout;
    for (int ci = 0; ci < g.cin; ++ci) {
        const double* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                double* row = col + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * cols;
                for (int oy = oy0; oy < oy1; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky * g.dil;
                    double* dst = row + static_cast<std::size_t>(oy - oy0) * g.wout;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wout, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.wout; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx * g.dil;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& g, const double* col, int oy0, int oy1, double* dx) {
    const int cols = (oy1 - oy0) * g.wout;
    for (int ci = 0; ci < g.cin; ++ci) {
        double* plane = dx + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                const double* row = col + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * cols;
                for (int oy = oy0; oy < oy1; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky * g.dil;
                    if (iy < 0 || iy >= g.h) continue;
                    const double* src = row + static_cast<std::size_t>(oy - oy0) * g.wout;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.wout; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx * g.dil;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var detach(const Var& x) { return constant(x.value()); }

Var reshape(const Var& x, Shape s) {
    const Shape from = x.shape();
    return make_result(x.value().reshaped(s), {x}, [from](const Tensor& g, std::span<Tensor* const> pg) {
        *pg[0] += g.reshaped(from);
    });
}

Var gather(const Var& x, Shape out_shape, IndexMap idx) {
    if (idx->size() != out_shape.numel()) throw ShapeError("gather: index map size does not match output shape");
    const auto& in = x.value();
    const auto limit = static_cast<std::int64_t>(in.size());
    Tensor out(out_shape);
    for (std::size_t i = 0; i < idx->size(); ++i) {
        const auto j = (*idx)[i];
        if (j >= limit) throw ShapeError("gather: index out of range");
        out[i] = j >= 0 ? in[static_cast<std::size_t>(j)] : 0.0;
    }
    return make_result(std::move(out), {x}, [idx](const Tensor& g, std::span<Tensor* const> pg) {
        Tensor& gx = *pg[0];
        for (std::size_t i = 0; i < idx->size(); ++i) {
            const auto j = (*idx)[i];
            if (j >= 0) gx[static_cast<std::size_t>(j)] += g[i];
        }
    });
}

Var concat(std::span<const Var> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    if (axis != 0 && axis != 1) throw ShapeError("concat axis must be 0 or 1");
    Shape s = parts.front().shape();
    if (axis == 0) s.n = 0; else s.c = 0;
    for (const auto& p : parts) {
        const auto& ps = p.shape();
        const bool ok = axis == 0 ? (ps.c == s.c && ps.h == s.h && ps.w == s.w)
                                  : (ps.n == s.n && ps.h == s.h && ps.w == s.w);
        if (!ok) throw ShapeError("concat: incompatible part shape " + to_string(ps));
        if (axis == 0) s.n += ps.n; else s.c += ps.c;
    }
    Tensor out(s);
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    std::vector<Shape> shapes;
    if (axis == 0) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
            off += p.value().size();
        }
    } else {
        int c0 = 0;
        for (const auto& p : parts) {
            const int pc = p.shape().c;
            for (int n = 0; n < s.n; ++n) {
                const double* src = p.value().data() + static_cast<std::size_t>(n) * pc * plane;
                double* dst = out.data() + (static_cast<std::size_t>(n) * s.c + c0) * plane;
                std::copy(src, src + pc * plane, dst);
            }
            c0 += pc;
        }
    }
    for (const auto& p : parts) shapes.push_back(p.shape());
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_result(std::move(out), std::move(parents),
                       [shapes, axis, s, plane](const Tensor& g, std::span<Tensor* const> pg) {
                           std::size_t off = 0;
                           int c0 = 0;
                           for (std::size_t k = 0; k < shapes.size(); ++k) {
                               const auto& ps = shapes[k];
                               if (pg[k]) {
                                   Tensor& gp = *pg[k];
                                   if (axis == 0) {
                                       for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                                   } else {
                                       for (int n = 0; n < s.n; ++n) {
                                           const double* src = g.data() + (static_cast<std::size_t>(n) * s.c + c0) * plane;
                                           double* dst = gp.data() + static_cast<std::size_t>(n) * ps.c * plane;
                                           for (std::size_t i = 0; i < ps.c * plane; ++i) dst[i] += src[i];
                                       }
                                   }
                               }
                               off += ps.numel();
                               c0 += ps.c;
                           }
                       });
}

Var slice_batch(const Var& x, int begin, int count) {
    const Shape from = x.shape();
    Tensor out = x.value().slice(begin, count);
    const std::size_t off = static_cast<std::size_t>(begin) * from.sample_size();
    return make_result(std::move(out), {x}, [off](const Tensor& g, std::span<Tensor* const> pg) {
        Tensor& gx = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
    });
}

Var nearest_downsample(const Var& x) {
    const Shape s = x.shape();
    const Shape o{s.n, s.c, s.h / 2, s.w / 2};
    auto idx = std::make_shared<std::vector<std::int64_t>>(o.numel());
    std::size_t i = 0;
    for (int n = 0; n < o.n; ++n)
        for (int c = 0; c < o.c; ++c)
            for (int y = 0; y < o.h; ++y)
                for (int xx = 0; xx < o.w; ++xx)
                    (*idx)[i++] = ((static_cast<std::int64_t>(n) * s.c + c) * s.h + 2 * y) * s.w + 2 * xx;
    return gather(x, o, std::move(idx));
}

Var pixel_shuffle(const Var& x, int scale) {
    const Shape s = x.shape();
    const int r2 = scale * scale;
    if (s.c % r2 != 0) throw ShapeError("pixel_shuffle: channels not divisible by scale^2");
    const Shape o{s.n, s.c / r2, s.h * scale, s.w * scale};
    auto idx = std::make_shared<std::vector<std::int64_t>>(o.numel());
    std::size_t i = 0;
    for (int n = 0; n < o.n; ++n)
        for (int c = 0; c < o.c; ++c)
            for (int y = 0; y < o.h; ++y)
                for (int xx = 0; xx < o.w; ++xx) {
                    const int ic = c * r2 + (y % scale) * scale + (xx % scale);
                    (*idx)[i++] = ((static_cast<std::int64_t>(n) * s.c + ic) * s.h + y / scale) * s.w + xx / scale;
                }
    return gather(x, o, std::move(idx));
}

Var pad_center(const Var& x, int height, int width) {
    const Shape s = x.shape();
    if (s.h > height || s.w > width) throw ShapeError("pad_center: input larger than canvas");
    const int top = (height - s.h) / 2;
    const int left = (width - s.w) / 2;
    const Shape o{s.n, s.c, height, width};
    auto idx = std::make_shared<std::vector<std::int64_t>>(o.numel(), -1);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                    const auto dst = ((static_cast<std::size_t>(n) * s.c + c) * height + y + top) * width + xx + left;
                    (*idx)[dst] = ((static_cast<std::int64_t>(n) * s.c + c) * s.h + y) * s.w + xx;
                }
    return gather(x, o, std::move(idx));
}

Var crop_center(const Var& x, int height, int width) {
    const Shape s = x.shape();
    if (height > s.h || width > s.w) throw ShapeError("crop_center: crop larger than input");
    const int top = (s.h - height) / 2;
    const int left = (s.w - width) / 2;
    const Shape o{s.n, s.c, height, width};
    auto idx = std::make_shared<std::vector<std::int64_t>>(o.numel());
    std::size_t i = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < height; ++y)
                for (int xx = 0; xx < width; ++xx)
                    (*idx)[i++] = ((static_cast<std::int64_t>(n) * s.c + c) * s.h + y + top) * s.w + xx + left;
    return gather(x, o, std::move(idx));
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    out += b.value();
    return make_result(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) *pg[0] += g;
        if (pg[1]) *pg[1] += g;
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return make_result(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) *pg[0] += g;
        if (pg[1]) {
            Tensor& gb = *pg[1];
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    auto an = a.node();
    auto bn = b.node();
    return make_result(std::move(out), {a, b}, [an, bn](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) {
            Tensor& ga = *pg[0];
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
        }
        if (pg[1]) {
            Tensor& gb = *pg[1];
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
        }
    });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double v) { return v * s; }, [s](double) { return s; });
}

Var sub_broadcast(const Var& a, const Var& s) {
    if (s.value().size() != 1) throw ShapeError("sub_broadcast: subtrahend must be a scalar");
    Tensor out = a.value();
    const double sv = s.value()[0];
    for (auto& v : out.values()) v -= sv;
    return make_result(std::move(out), {a, s}, [](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) *pg[0] += g;
        if (pg[1]) (*pg[1])[0] -= g.sum();
    });
}

Var leaky_relu(const Var& x, double slope) {
    return unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                 [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Var abs(const Var& x) {
    return unary(x, [](double v) { return std::abs(v); },
                 [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
    return unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var neg_log_sigmoid(const Var& x, double floor) {
    const double cap = -std::log(floor);
    // softplus(-v) = -log sigmoid(v), evaluated stably.
    auto f = [cap](double v) {
        const double sp = v > 0.0 ? std::log1p(std::exp(-v)) : -v + std::log1p(std::exp(v));
        return std::min(sp, cap);
    };
    auto df = [cap](double v) {
        const double sp = v > 0.0 ? std::log1p(std::exp(-v)) : -v + std::log1p(std::exp(v));
        if (sp >= cap) return 0.0;
        const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return -(1.0 - sig);
    };
    return unary(x, f, df);
}

Var sum(const Var& x) {
    return make_result(Tensor::scalar(x.value().sum()), {x}, [](const Tensor& g, std::span<Tensor* const> pg) {
        const double gv = g[0];
        for (auto& v : pg[0]->values()) v += gv;
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.value().size());
    if (n == 0) throw ShapeError("mean of empty tensor");
    return make_result(Tensor::scalar(x.value().sum() / n), {x}, [n](const Tensor& g, std::span<Tensor* const> pg) {
        const double gv = g[0] / n;
        for (auto& v : pg[0]->values()) v += gv;
    });
}

Var mean_per_sample(const Var& x) {
    const Shape s = x.shape();
    const std::size_t per = s.sample_size();
    Tensor out(Shape{s.n, 1, 1, 1});
    for (int n = 0; n < s.n; ++n) {
        double acc = 0.0;
        for (std::size_t i = 0; i < per; ++i) acc += x.value()[n * per + i];
        out[n] = acc / static_cast<double>(per);
    }
    return make_result(std::move(out), {x}, [per](const Tensor& g, std::span<Tensor* const> pg) {
        Tensor& gx = *pg[0];
        for (std::size_t n = 0; n < g.size(); ++n) {
            const double gv = g[n] / static_cast<double>(per);
            for (std::size_t i = 0; i < per; ++i) gx[n * per + i] += gv;
        }
    });
}

Var matmul(const Var& a, const Var& b) {
    const int n = rows_of(a.shape());
    const int k = cols_of(a.shape());
    if (rows_of(b.shape()) != k) {
        throw ShapeError("matmul: inner dimension mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const int m = cols_of(b.shape());
    Shape os = b.shape();
    os.n = n;
    Tensor out(os);
    gemm(false, false, n, m, k, 1.0, a.value().data(), k, b.value().data(), m, 0.0, out.data(), m);
    auto an = a.node();
    auto bn = b.node();
    return make_result(std::move(out), {a, b}, [an, bn, n, m, k](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) gemm(false, true, n, k, m, 1.0, g.data(), m, bn->value.data(), m, 1.0, pg[0]->data(), k);
        if (pg[1]) gemm(true, false, k, m, n, 1.0, an->value.data(), k, g.data(), m, 1.0, pg[1]->data(), m);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    const int n = rows_of(a.shape());
    const int d = cols_of(a.shape());
    const int m = rows_of(b.shape());
    if (cols_of(b.shape()) != d) throw ShapeError("matmul_nt: feature dimension mismatch");
    Tensor out(Shape{n, m, 1, 1});
    gemm(false, true, n, m, d, 1.0, a.value().data(), d, b.value().data(), d, 0.0, out.data(), m);
    auto an = a.node();
    auto bn = b.node();
    return make_result(std::move(out), {a, b}, [an, bn, n, m, d](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) gemm(false, false, n, d, m, 1.0, g.data(), m, bn->value.data(), d, 1.0, pg[0]->data(), d);
        if (pg[1]) gemm(true, false, m, d, n, 1.0, g.data(), m, an->value.data(), d, 1.0, pg[1]->data(), d);
    });
}

Var softmax_channels(const Var& x) {
    const Shape s = x.shape();
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    Tensor out(s);
    const auto& in = x.value();
    for (int n = 0; n < s.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < s.c; ++c) mx = std::max(mx, in[base + c * plane + p]);
            double z = 0.0;
            for (int c = 0; c < s.c; ++c) {
                const double e = std::exp(in[base + c * plane + p] - mx);
                out[base + c * plane + p] = e;
                z += e;
            }
            for (int c = 0; c < s.c; ++c) out[base + c * plane + p] /= z;
        }
    }
    auto y = std::make_shared<Tensor>(out);
    return make_result(std::move(out), {x}, [y, s, plane](const Tensor& g, std::span<Tensor* const> pg) {
        Tensor& gx = *pg[0];
        for (int n = 0; n < s.n; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                double dot = 0.0;
                for (int c = 0; c < s.c; ++c) dot += g[base + c * plane + p] * (*y)[base + c * plane + p];
                for (int c = 0; c < s.c; ++c) {
                    const auto i = base + c * plane + p;
                    gx[i] += (*y)[i] * (g[i] - dot);
                }
            }
        }
    });
}

Var l2_normalize_rows(const Var& x, double eps) {
    const Shape s = x.shape();
    const std::size_t d = s.sample_size();
    Tensor out(s);
    std::vector<double> denom(static_cast<std::size_t>(s.n));
    std::vector<bool> floored(static_cast<std::size_t>(s.n));
    for (int n = 0; n < s.n; ++n) {
        double ss = 0.0;
        for (std::size_t i = 0; i < d; ++i) ss += x.value()[n * d + i] * x.value()[n * d + i];
        const double nrm = std::sqrt(ss);
        floored[n] = !(nrm > eps);
        denom[n] = floored[n] ? eps : nrm;
        for (std::size_t i = 0; i < d; ++i) out[n * d + i] = x.value()[n * d + i] / denom[n];
    }
    auto y = std::make_shared<Tensor>(out);
    return make_result(std::move(out), {x}, [y, d, denom, floored](const Tensor& g, std::span<Tensor* const> pg) {
        Tensor& gx = *pg[0];
        for (std::size_t n = 0; n < denom.size(); ++n) {
            double dot = 0.0;
            if (!floored[n]) {
                for (std::size_t i = 0; i < d; ++i) dot += g[n * d + i] * (*y)[n * d + i];
            }
            for (std::size_t i = 0; i < d; ++i) gx[n * d + i] += (g[n * d + i] - (*y)[n * d + i] * dot) / denom[n];
        }
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c) {
        throw ShapeError("conv2d: weight expects " + std::to_string(ws.c) + " input channels, got " + to_string(xs));
    }
    ConvGeometry g{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, ws.w, opt.stride, opt.padding, opt.dilation, 0, 0};
    g.hout = (xs.h + 2 * opt.padding - opt.dilation * (ws.h - 1) - 1) / opt.stride + 1;
    g.wout = (xs.w + 2 * opt.padding - opt.dilation * (ws.w - 1) - 1) / opt.stride + 1;
    if (g.hout <= 0 || g.wout <= 0) throw ShapeError("conv2d: input " + to_string(xs) + " too small for kernel");
    if (bias.defined() && bias.value().size() != static_cast<std::size_t>(g.cout)) {
        throw ShapeError("conv2d: bias size mismatch");
    }

    const int hw_out = g.hout * g.wout;
    const std::size_t in_per = xs.sample_size();
    const std::size_t out_per = static_cast<std::size_t>(g.cout) * hw_out;
    Tensor out(Shape{g.n, g.cout, g.hout, g.wout});
    const double* wv = weight.value().data();
    std::vector<double> col;
    for (int n = 0; n < g.n; ++n) {
        const double* xn = x.value().data() + n * in_per;
        double* on = out.data() + n * out_per;
        if (g.pointwise()) {
            gemm(false, false, g.cout, hw_out, g.cin, 1.0, wv, g.cin, xn, hw_out, 0.0, on, hw_out);
        } else {
            const int step = g.rows_per_chunk();
            for (int oy0 = 0; oy0 < g.hout; oy0 += step) {
                const int oy1 = std::min(g.hout, oy0 + step);
                const int cols = (oy1 - oy0) * g.wout;
                col.resize(static_cast<std::size_t>(g.k()) * cols);
                im2col(g, xn, oy0, oy1, col.data());
                gemm(false, false, g.cout, cols, g.k(), 1.0, wv, g.k(), col.data(), cols, 0.0,
                     on + static_cast<std::size_t>(oy0) * g.wout, hw_out);
            }
        }
        if (bias.defined()) {
            for (int c = 0; c < g.cout; ++c) {
                const double b = bias.value()[c];
                double* p = on + static_cast<std::size_t>(c) * hw_out;
                for (int i = 0; i < hw_out; ++i) p[i] += b;
            }
        }
    }

    auto xn_ = x.node();
    auto wn_ = weight.node();
    std::vector<Var> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents), [g, xn_, wn_, in_per, out_per, hw_out](
                                                               const Tensor& go, std::span<Tensor* const> pg) {
        Tensor* gx = pg[0];
        Tensor* gw = pg[1];
        Tensor* gb = pg.size() > 2 ? pg[2] : nullptr;
        const double* wv = wn_->value.data();
        std::vector<double> col;
        std::vector<double> dcol;
        for (int n = 0; n < g.n; ++n) {
            const double* xn = xn_->value.data() + n * in_per;
            const double* gon = go.data() + n * out_per;
            if (gb) {
                for (int c = 0; c < g.cout; ++c) {
                    double acc = 0.0;
                    const double* p = gon + static_cast<std::size_t>(c) * hw_out;
                    for (int i = 0; i < hw_out; ++i) acc += p[i];
                    (*gb)[c] += acc;
                }
            }
            if (g.pointwise()) {
                if (gw) gemm(false, true, g.cout, g.cin, hw_out, 1.0, gon, hw_out, xn, hw_out, 1.0, gw->data(), g.cin);
                if (gx) {
                    gemm(true, false, g.cin, hw_out, g.cout, 1.0, wv, g.cin, gon, hw_out, 1.0, gx->data() + n * in_per,
                         hw_out);
                }
                continue;
            }
            const int step = g.rows_per_chunk();
            for (int oy0 = 0; oy0 < g.hout; oy0 += step) {
                const int oy1 = std::min(g.hout, oy0 + step);
                const int cols = (oy1 - oy0) * g.wout;
                const double* gchunk = gon + static_cast<std::size_t>(oy0) * g.wout;
                if (gw) {
                    col.resize(static_cast<std::size_t>(g.k()) * cols);
                    im2col(g, xn, oy0, oy1, col.data());
                    gemm(false, true, g.cout, g.k(), cols, 1.0, gchunk, hw_out, col.data(), cols, 1.0, gw->data(), g.k());
                }
                if (gx) {
                    dcol.resize(static_cast<std::size_t>(g.k()) * cols);
                    gemm(true, false, g.k(), cols, g.cout, 1.0, wv, g.k(), gchunk, hw_out, 0.0, dcol.data(), cols);
                    col2im(g, dcol.data(), oy0, oy1, gx->data() + n * in_per);
                }
            }
        }
    });
}

Var carafe_reassemble(const Var& x, const Var& kernels, int scale) {
    const Shape xs = x.shape();
    const Shape ks = kernels.shape();
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(ks.c))));
    if (k * k != ks.c || k % 2 == 0) throw ShapeError("carafe: kernel channels must be an odd square");
    if (ks.n != xs.n || ks.h != xs.h * scale || ks.w != xs.w * scale) {
        throw ShapeError("carafe: kernel map " + to_string(ks) + " does not match input " + to_string(xs));
    }
    const int r = k / 2;
    const int oh = ks.h;
    const int ow = ks.w;
    const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
    const std::size_t iplane = static_cast<std::size_t>(xs.h) * xs.w;
    // Neighbour offsets inside an input plane, per (output pixel, tap).
    auto nbr = std::make_shared<std::vector<int>>(oplane * ks.c);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const int iy = std::clamp(oy / scale + ky - r, 0, xs.h - 1);
                    const int ix = std::clamp(ox / scale + kx - r, 0, xs.w - 1);
                    (*nbr)[(static_cast<std::size_t>(oy) * ow + ox) * ks.c + ky * k + kx] = iy * xs.w + ix;
                }
    Tensor out(Shape{xs.n, xs.c, oh, ow});
    const int taps = ks.c;
    for (int n = 0; n < xs.n; ++n) {
        const double* kn = kernels.value().data() + static_cast<std::size_t>(n) * taps * oplane;
        for (int c = 0; c < xs.c; ++c) {
            const double* xp = x.value().data() + (static_cast<std::size_t>(n) * xs.c + c) * iplane;
            double* op = out.data() + (static_cast<std::size_t>(n) * xs.c + c) * oplane;
            for (std::size_t p = 0; p < oplane; ++p) {
                const int* nb = nbr->data() + p * taps;
                double acc = 0.0;
                for (int t = 0; t < taps; ++t) acc += kn[t * oplane + p] * xp[nb[t]];
                op[p] = acc;
            }
        }
    }
    auto xn_ = x.node();
    auto kn_ = kernels.node();
    return make_result(std::move(out), {x, kernels}, [xn_, kn_, nbr, xs, taps, oplane, iplane](
                                                         const Tensor& g, std::span<Tensor* const> pg) {
        for (int n = 0; n < xs.n; ++n) {
            const double* kn = kn_->value.data() + static_cast<std::size_t>(n) * taps * oplane;
            for (int c = 0; c < xs.c; ++c) {
                const std::size_t xo = (static_cast<std::size_t>(n) * xs.c + c) * iplane;
                const double* xp = xn_->value.data() + xo;
                const double* gp = g.data() + (static_cast<std::size_t>(n) * xs.c + c) * oplane;
                for (std::size_t p = 0; p < oplane; ++p) {
                    const int* nb = nbr->data() + p * taps;
                    const double gv = gp[p];
                    if (pg[0]) {
                        double* gx = pg[0]->data() + xo;
                        for (int t = 0; t < taps; ++t) gx[nb[t]] += gv * kn[t * oplane + p];
                    }
                    if (pg[1]) {
                        double* gk = pg[1]->data() + static_cast<std::size_t>(n) * taps * oplane;
                        for (int t = 0; t < taps; ++t) gk[t * oplane + p] += gv * xp[nb[t]];
                    }
                }
            }
        }
    });
}

Var spectral_normalize(const Var& weight, Tensor& u, int power_iterations) {
    const Shape ws = weight.shape();
    const int rows = ws.n;
    const int cols = static_cast<int>(ws.sample_size());
    if (u.size() != static_cast<std::size_t>(rows)) throw ShapeError("spectral_normalize: u has wrong length");
    const double* w = weight.value().data();
    std::vector<double> v(cols);
    std::vector<double> uu(u.values().begin(), u.values().end());
    auto normalize = [](std::vector<double>& a) {
        double ss = 0.0;
        for (double e : a) ss += e * e;
        const double nrm = std::max(std::sqrt(ss), 1e-12);
        for (double& e : a) e /= nrm;
        return nrm;
    };
    auto wt_u = [&] {
        gemm(true, false, cols, 1, rows, 1.0, w, cols, uu.data(), 1, 0.0, v.data(), 1);
        return normalize(v);
    };
    for (int it = 0; it < power_iterations; ++it) {
        wt_u();
        gemm(false, false, rows, 1, cols, 1.0, w, cols, v.data(), 1, 0.0, uu.data(), 1);
        normalize(uu);
    }
    if (power_iterations > 0) std::copy(uu.begin(), uu.end(), u.data());
    const double sigma = wt_u();  // u^T W v with v = W^T u / |W^T u|
    Tensor out = weight.value();
    out *= 1.0 / sigma;
    auto wn = std::make_shared<Tensor>(out);
    return make_result(std::move(out), {weight}, [wn, uu, v, sigma, rows, cols](const Tensor& g,
                                                                                 std::span<Tensor* const> pg) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * (*wn)[i];
        Tensor& gw = *pg[0];
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const auto i = static_cast<std::size_t>(r) * cols + c;
                gw[i] += (g[i] - dot * uu[r] * v[c]) / sigma;
            }
    });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator*(const Var& a, double s) { return scale(a, s); }
Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace tmad
