#include "tmad/losses.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace tmad {

LossConfig LossConfig::preset(MaskMode mode) {
    LossConfig cfg;
    cfg.mode = mode;
    if (mode == MaskMode::rectangle) {
        cfg.hole = 5.0;
        cfg.valid = 0.0;
    }
    return cfg;
}

std::vector<std::string> LossConfig::validate() const {
    std::vector<std::string> errors;
    const std::pair<const char*, double> weights[] = {
        {"lambda_hole", hole},   {"lambda_valid", valid}, {"lambda_l1", l1},
        {"lambda_gan_pd", gan_pd}, {"lambda_percep", percep}, {"lambda_tv", tv},
        {"lambda_gan_gl", gan_gl}, {"gradient_penalty", gradient_penalty},
    };
    for (const auto& [key, v] : weights) {
        if (!std::isfinite(v) || v < 0.0) errors.push_back(std::string(key) + " must be a finite non-negative number");
    }
    return errors;
}

namespace {

Tensor broadcast_mask(const Tensor& mask, const Shape& like) {
    const auto& ms = mask.shape();
    if (ms == like) return mask;
    if (ms.n != like.n || ms.c != 1 || ms.h != like.h || ms.w != like.w) {
        throw ShapeError("mask " + to_string(ms) + " does not broadcast to " + to_string(like));
    }
    Tensor out(like);
    const std::size_t plane = static_cast<std::size_t>(like.h) * like.w;
    for (int n = 0; n < like.n; ++n)
        for (int c = 0; c < like.c; ++c)
            std::copy(mask.data() + n * plane, mask.data() + (n + 1) * plane,
                      out.data() + (static_cast<std::size_t>(n) * like.c + c) * plane);
    return out;
}

}  // namespace

Var recon_loss(const Var& output, const Tensor& target, const Tensor& mask, double hole, double valid) {
    if (output.shape() != target.shape()) {
        throw ShapeError("reconstruction shapes differ: " + to_string(output.shape()) + " vs " + to_string(target.shape()));
    }
    const Tensor m = broadcast_mask(mask, target.shape());
    const double n_hole = m.sum();
    const double n_valid = static_cast<double>(m.size()) - n_hole;
    Tensor w(m.shape());
    for (std::size_t i = 0; i < m.size(); ++i) {
        w[i] = m[i] != 0.0 ? (n_hole > 0 ? hole / n_hole : 0.0) : (n_valid > 0 ? valid / n_valid : 0.0);
    }
    return sum(mul(abs(sub(output, constant(target))), constant(std::move(w))));
}

Var recon_loss(const Var& output, const Tensor& target, const Tensor& mask, const LossConfig& cfg) {
    return recon_loss(output, target, mask, cfg.hole, cfg.valid);
}

double masked_l1(const Tensor& a, const Tensor& b, const Tensor& mask) {
    if (a.shape() != b.shape()) throw ShapeError("masked_l1 shapes differ");
    const Tensor m = broadcast_mask(mask, a.shape());
    double total = 0.0, count = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (m[i] != 0.0) {
            total += std::abs(a[i] - b[i]);
            count += 1.0;
        }
    }
    return count > 0 ? total / count : 0.0;
}

Var patch_discriminator_loss(const Var& real, const Var& fake) {
    const Var real_term = mean(neg_log_sigmoid(sub_broadcast(real, mean(fake))));
    const Var fake_term = mean(neg_log_sigmoid(scale(sub_broadcast(fake, mean(real)), -1.0)));
    return add(real_term, fake_term);
}

Var patch_generator_loss(const Var& memory, const Var& real, const Var& fake) {
    const Var memory_term = mean(neg_log_sigmoid(scale(sub_broadcast(memory, mean(fake)), -1.0)));
    const Var fake_term = mean(neg_log_sigmoid(sub_broadcast(fake, mean(real))));
    return add(memory_term, fake_term);
}

PatchLosses patch_distribution_losses(const Var& real, const Var& fake, const Var& memory) {
    return {patch_discriminator_loss(real, fake), patch_generator_loss(memory, real, fake)};
}

Var global_discriminator_loss(const Var& real, const Var& fake) {
    return add(mean(neg_log_sigmoid(real)), mean(neg_log_sigmoid(scale(fake, -1.0))));
}

Var global_generator_loss(const Var& fake) { return mean(neg_log_sigmoid(fake)); }

Var perceptual_loss(const FeatureExtractor& extractor, const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("perceptual loss shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    const auto fa = extractor.features(a);
    const auto fb = extractor.features(b);
    if (fa.empty()) throw std::invalid_argument("feature extractor returned no taps");
    Var total;
    for (std::size_t t = 0; t < fa.size(); ++t) {
        const Var term = mean(abs(sub(fa[t], fb[t])));
        total = total.defined() ? add(total, term) : term;
    }
    return scale(total, 1.0 / static_cast<double>(fa.size()));
}

namespace {

/// Flat indices of x[..., y + oy, x + ox] for y < h - dy, x < w - dx.
IndexMap shifted_indices(const Shape& s, int dy, int dx, int oy, int ox) {
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(s.n) * s.c * (s.h - dy) * (s.w - dx));
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y + dy < s.h; ++y)
                for (int x = 0; x + dx < s.w; ++x) {
                    idx->push_back(((static_cast<std::int64_t>(n) * s.c + c) * s.h + y + oy) * s.w + x + ox);
                }
    return idx;
}

Var mean_abs_difference(const Var& x, int dy, int dx) {
    const auto& s = x.shape();
    const Shape out{s.n, s.c, s.h - dy, s.w - dx};
    if (out.h <= 0 || out.w <= 0) return constant(Tensor::scalar(0.0));
    return mean(abs(sub(gather(x, out, shifted_indices(s, dy, dx, dy, dx)), gather(x, out, shifted_indices(s, dy, dx, 0, 0)))));
}

}  // namespace

Var tv_loss(const Var& x) { return add(mean_abs_difference(x, 0, 1), mean_abs_difference(x, 1, 0)); }

Tensor interpolate(const Tensor& real, const Tensor& fake, Rng& rng) {
    if (real.shape() != fake.shape()) throw ShapeError("gradient penalty needs matched real and fake batches");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor out(real.shape());
    const std::size_t per = real.shape().sample_size();
    for (int n = 0; n < real.shape().n; ++n) {
        const double e = u(rng);
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) out[i] = e * real[i] + (1.0 - e) * fake[i];
    }
    return out;
}

namespace {

Tensor input_gradient(const CriticFn& critic, const Tensor& x) {
    const Var input(x, true);
    const Var score = sum(critic(input));
    const Var wrt[] = {input};
    return gradients(score, wrt)[0];
}

std::vector<double> sample_norms(const Tensor& g) {
    const std::size_t per = g.shape().sample_size();
    std::vector<double> norms(static_cast<std::size_t>(g.shape().n));
    for (int n = 0; n < g.shape().n; ++n) {
        double s = 0.0;
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) s += g[i] * g[i];
        norms[static_cast<std::size_t>(n)] = std::sqrt(s);
    }
    return norms;
}

}  // namespace

std::vector<double> critic_gradient_norms(const CriticFn& critic, const Tensor& x) {
    return sample_norms(input_gradient(critic, x));
}

double gradient_penalty(const CriticFn& critic, const Tensor& x) {
    const auto norms = critic_gradient_norms(critic, x);
    double total = 0.0;
    for (double v : norms) total += (v - 1.0) * (v - 1.0);
    return total / static_cast<double>(norms.size());
}

double accumulate_gradient_penalty(const CriticFn& critic, const Tensor& x, double weight, double h) {
    const Tensor g = input_gradient(critic, x);
    const auto norms = sample_norms(g);
    const int n = x.shape().n;
    const std::size_t per = x.shape().sample_size();
    double value = 0.0;
    for (double v : norms) value += (v - 1.0) * (v - 1.0);
    value /= n;
    if (weight == 0.0) return value;

    // d/dw ||g_i|| = u_i . d/dw dC/dx = d/dh C(x_i + h u_i) at h = 0.
    Tensor plus = x, minus = x;
    Tensor coeff(Shape{n, 1, 1, 1});
    for (int i = 0; i < n; ++i) {
        const double norm = norms[static_cast<std::size_t>(i)];
        if (norm == 0.0) continue;
        coeff[static_cast<std::size_t>(i)] = weight * 2.0 * (norm - 1.0) / n / (2.0 * h);
        for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
            plus[j] += h * g[j] / norm;
            minus[j] -= h * g[j] / norm;
        }
    }
    const Var diff = sub(critic(constant(plus)), critic(constant(minus)));
    backward(sum(mul(diff, constant(coeff))));
    return value;
}

}  // namespace tmad
