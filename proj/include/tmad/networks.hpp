#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tmad/nn.hpp"

namespace tmad {

/// Number of basic blocks of each kind in an encoder-decoder.
struct BlockStack {
    int input_conv = 0;
    int down_blocks = 0;
    int res_blocks = 0;
    int up_blocks = 0;
    int out_conv = 0;
    bool operator==(const BlockStack&) const = default;
};

inline constexpr BlockStack kCoarseBlocks{1, 3, 8, 3, 1};
inline constexpr BlockStack kPsnetBackboneBlocks{1, 2, 5, 3, 1};
inline constexpr BlockStack kPsnetTextureBlocks{1, 2, 2, 0, 0};

inline constexpr int kCoarseDilation = 2;

/// Coarse encoder-decoder: 4-channel (image, mask) input -> 3-channel image.
class CoarseNet : public Module {
public:
    CoarseNet(WidthSpec widths, Rng& rng);

    [[nodiscard]] Var forward(const Var& input) const;
    /// Encoder + residual trunk only.
    [[nodiscard]] Var bottleneck(const Var& input) const;

    [[nodiscard]] BlockStack blocks() const;
    [[nodiscard]] std::vector<LayerInfo> layers() const override;
    void collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) override;

private:
    Conv2d input_;
    std::vector<DownBlock> down_;
    std::vector<ResBlock> res_;
    std::vector<UpBlock> up_;
    Conv2d output_;
};

/// Patch synthesis network: a backbone encoder-decoder over 3k x 3k context
/// windows plus a texture encoder over the N_c concatenated candidates whose two
/// feature levels are added into the centre of the decoder maps.
class PsNet : public Module {
public:
    PsNet(WidthSpec widths, int candidates, Rng& rng);

    /// context (B, 3, 3k, 3k), candidates (B, 3*N_c, k, k) -> (B, 3, k, k).
    [[nodiscard]] Var forward(const Var& context, const Var& candidates) const;
    /// Full 3k x 3k backbone output before the centre crop.
    [[nodiscard]] Var forward_full(const Var& context, const Var& candidates) const;

    [[nodiscard]] int candidates() const { return candidates_; }
    [[nodiscard]] BlockStack backbone_blocks() const;
    [[nodiscard]] BlockStack texture_blocks() const;
    [[nodiscard]] std::vector<LayerInfo> layers() const override;
    void collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) override;

private:
    int candidates_;
    Conv2d input_;
    std::vector<DownBlock> down_;
    std::vector<ResBlock> res_;
    std::vector<UpBlock> up_;
    Conv2d output_;
    Conv2d tex_input_;
    std::vector<DownBlock> tex_down_;
    std::vector<ResBlock> tex_res_;
};

/// Shared by both critics: spectrally normalised convs, raw scalar per sample.
class Critic : public Module {
public:
    /// Forward with spectral power iteration frozen (generator step, penalties).
    [[nodiscard]] virtual Var score(const Var& x) const = 0;
    /// Forward that advances the power iteration (critic step).
    virtual Var score_update(const Var& x) = 0;
    void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) override;
    void collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) override;
    [[nodiscard]] std::vector<LayerInfo> layers() const override;

protected:
    [[nodiscard]] Var run(const Var& x, bool update);
    [[nodiscard]] Var run(const Var& x) const;

    std::vector<Conv2d> convs_;  // strided trunk
    Conv2d head_;
};

/// 4 stride-2 convs + 1x1 scalar head averaged over the remaining map.
class PatchCritic : public Critic {
public:
    PatchCritic(WidthSpec widths, Rng& rng);
    [[nodiscard]] Var score(const Var& x) const override { return run(x); }
    Var score_update(const Var& x) override { return run(x, true); }
};

/// PatchGAN-style: 3 stride-2 convs, one stride-1 conv, 1-channel score map averaged.
class GlobalCritic : public Critic {
public:
    GlobalCritic(WidthSpec widths, Rng& rng);
    [[nodiscard]] Var score(const Var& x) const override { return run(x); }
    Var score_update(const Var& x) override { return run(x, true); }
};

/// Feature taps for the perceptual loss, each taken before its activation.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    [[nodiscard]] virtual std::vector<Var> features(const Var& x) const = 0;
};

/// Fixed, seeded, randomly initialised stack of 3x3 convs with taps at the
/// given 1-based conv depths (pre-activation).
class RandomConvExtractor : public FeatureExtractor {
public:
    explicit RandomConvExtractor(std::uint64_t seed = 0x5eed, int width = 16, int depth = 16,
                                 std::vector<int> taps = {5, 9, 15});
    [[nodiscard]] std::vector<Var> features(const Var& x) const override;
    [[nodiscard]] const std::vector<int>& taps() const { return taps_; }

private:
    std::vector<Conv2d> convs_;
    std::vector<int> taps_;
};

}  // namespace tmad
