#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tmad/networks.hpp"
#include "tmad/texture_memory.hpp"

namespace tmad {

struct LossConfig {
    double hole = 6.0;     // λ_m^s
    double valid = 1.0;    // λ_v^s
    double l1 = 1.0;
    double gan_pd = 0.05;  // patch distribution
    double percep = 0.02;
    double tv = 0.02;
    double gan_gl = 0.02;  // global critic in the blending loss
    double gradient_penalty = 10.0;
    MaskMode mode = MaskMode::irregular;

    /// (hole, valid) = (5, 0) for rectangles, (6, 1) for irregular holes.
    static LossConfig preset(MaskMode mode);
    /// One message per offending key; empty when valid.
    [[nodiscard]] std::vector<std::string> validate() const;
    bool operator==(const LossConfig&) const = default;
};

/// hole * mean_hole|a - t| + valid * mean_valid|a - t|, each a region mean
/// (zero for an empty region). mask is (N, 1, H, W) and broadcasts over channels.
Var recon_loss(const Var& output, const Tensor& target, const Tensor& mask, double hole, double valid);
Var recon_loss(const Var& output, const Tensor& target, const Tensor& mask, const LossConfig& cfg);

/// Mean |a - b| over hole pixels only (0 for an empty hole).
double masked_l1(const Tensor& a, const Tensor& b, const Tensor& mask);

/// Relativistic patch distribution losses on raw critic scores (each (n, 1, 1, 1)).
/// real: samples of the candidate + ground-truth mixture; fake: synthesized patches;
/// memory: samples of the whole texture memory.
Var patch_discriminator_loss(const Var& real, const Var& fake);
Var patch_generator_loss(const Var& memory, const Var& real, const Var& fake);

struct PatchLosses {
    Var discriminator;
    Var generator;
};
PatchLosses patch_distribution_losses(const Var& real, const Var& fake, const Var& memory);

/// Non-saturating losses for the global critic.
Var global_discriminator_loss(const Var& real, const Var& fake);
Var global_generator_loss(const Var& fake);

/// Mean over taps of mean |F_t(a) - F_t(b)|.
Var perceptual_loss(const FeatureExtractor& extractor, const Var& a, const Var& b);

/// mean |horizontal forward difference| + mean |vertical forward difference|.
Var tv_loss(const Var& x);

using CriticFn = std::function<Var(const Var&)>;

/// eps * real + (1 - eps) * fake with eps ~ U[0, 1) per sample.
Tensor interpolate(const Tensor& real, const Tensor& fake, Rng& rng);

/// Per-sample ||dC/dx|| at x.
std::vector<double> critic_gradient_norms(const CriticFn& critic, const Tensor& x);

/// mean_i (||dC/dx(x_i)|| - 1)^2.
double gradient_penalty(const CriticFn& critic, const Tensor& x);

/// Returns the penalty value and accumulates weight * d(penalty)/d(critic params)
/// into the critic's parameter grads. The parameter gradient of the input-gradient
/// norm is a central finite-difference Hessian-vector product with step `h`.
double accumulate_gradient_penalty(const CriticFn& critic, const Tensor& x, double weight, double h = 1e-4);

template <class T>
struct StageParts {
    T recon{};
    T gan_pd{};
    T l1{};
    T percep{};
    T tv{};
    T gan_gl{};
};

template <class T>
struct StageTotals {
    T ps{};
    T blend{};
    T total{};
};

/// L_ps = λ_gan^pd L_gan^pd + λ_l1 L_l1 + λ_percep L_percep; L_blend = λ_gan^gl L_gan^gl + λ_tv L_tv;
/// L_total = L_recon + L_ps + L_blend. L_recon arrives already weighted.
template <class T>
StageTotals<T> compose_stage_losses(const LossConfig& cfg, const StageParts<T>& p) {
    StageTotals<T> t;
    t.ps = cfg.gan_pd * p.gan_pd + cfg.l1 * p.l1 + cfg.percep * p.percep;
    t.blend = cfg.gan_gl * p.gan_gl + cfg.tv * p.tv;
    t.total = p.recon + t.ps + t.blend;
    return t;
}

}  // namespace tmad
