#pragma once

#include <random>
#include <string>
#include <vector>

#include "tmad/ops.hpp"

namespace tmad {

using Rng = std::mt19937_64;

inline constexpr double kLeakySlope = 0.2;

struct NamedParam {
    std::string name;
    Var var;
};

struct NamedBuffer {
    std::string name;
    Tensor* tensor;
};

enum class LayerKind { conv, downsample, upsample, residual };

/// One entry of a network's flattened layer list, for introspection
/// (receptive field, normalization audit).
struct LayerInfo {
    std::string name;
    LayerKind kind = LayerKind::conv;
    int kernel = 1;
    int dilation = 1;
    int stride = 1;
    int scale = 1;
    bool normalization = false;
    bool spectral = false;
};

/// Channel width at encoder depth `level`: base * 2^level, capped.
struct WidthSpec {
    int base = 32;
    int cap = 256;
    [[nodiscard]] int at(int level) const { return std::min(base << level, cap); }
    bool operator==(const WidthSpec&) const = default;
};

struct ConvSpec {
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
    bool spectral = false;
    /// Weight init std multiplier on top of He init.
    double init_gain = 1.0;
    /// When > 0, overrides He init with a fixed std.
    double init_std = 0.0;
};

/// 2-d convolution with "same" padding for stride 1 and optional spectral norm.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const ConvSpec& spec, Rng& rng);

    /// Inference / generator-side forward: spectral u is read, never updated.
    [[nodiscard]] Var forward(const Var& x) const;
    /// Critic training forward: runs one power iteration and stores u.
    Var forward_update(const Var& x);

    [[nodiscard]] Var effective_weight() const;
    [[nodiscard]] const ConvSpec& spec() const { return spec_; }
    [[nodiscard]] LayerInfo info(std::string name) const;

    void collect(const std::string& prefix, std::vector<NamedParam>& params);
    void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& buffers);

    Var weight;
    Var bias;

private:
    [[nodiscard]] Var apply(const Var& x, const Var& w) const;

    ConvSpec spec_{};
    Tensor u_;
};

/// Base for parameterised modules. Copies would alias parameters, so modules
/// are move-only.
class Module {
public:
    Module() = default;
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;
    Module(Module&&) = default;
    Module& operator=(Module&&) = default;

    virtual void collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) = 0;
    virtual void collect_buffers(const std::string&, std::vector<NamedBuffer>&) {}
    [[nodiscard]] virtual std::vector<LayerInfo> layers() const = 0;

    std::vector<NamedParam> parameters(const std::string& prefix = "");
    std::vector<NamedBuffer> buffers(const std::string& prefix = "");
    void set_requires_grad(bool enabled);
    void zero_grad();
};

/// conv3x3, conv3x3, nearest-neighbour halving.
struct DownBlock {
    Conv2d first;
    Conv2d second;
    DownBlock() = default;
    DownBlock(int in, int out, Rng& rng);
    [[nodiscard]] Var forward(const Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    void append_layers(const std::string& prefix, std::vector<LayerInfo>& out) const;
};

/// x + conv(lrelu(conv(x))), both convs 3x3 with the given dilation.
struct ResBlock {
    Conv2d first;
    Conv2d second;
    ResBlock() = default;
    ResBlock(int channels, int dilation, Rng& rng);
    [[nodiscard]] Var forward(const Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    void append_layers(const std::string& prefix, std::vector<LayerInfo>& out) const;
};

/// Content-aware reassembly upsampling: a 1x1 compressor and 3x3 encoder
/// predict a softmax-normalised 5x5 kernel per output pixel.
class ContentAwareUpsample {
public:
    static constexpr int kKernel = 5;
    static constexpr int kCompressedMax = 64;

    ContentAwareUpsample() = default;
    ContentAwareUpsample(int channels, int scale, Rng& rng);
    [[nodiscard]] Var forward(const Var& x) const;
    /// Per-output-pixel reassembly kernels (N, 25, sH, sW), rows summing to 1.
    [[nodiscard]] Var predict_kernels(const Var& x) const;
    [[nodiscard]] int scale() const { return scale_; }
    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    void append_layers(const std::string& prefix, std::vector<LayerInfo>& out) const;

private:
    Conv2d compress_;
    Conv2d encode_;
    int scale_ = 2;
};

/// Upsample, conv3x3, conv3x3.
struct UpBlock {
    ContentAwareUpsample up;
    Conv2d first;
    Conv2d second;
    UpBlock() = default;
    UpBlock(int in, int out, int scale, Rng& rng);
    [[nodiscard]] Var forward(const Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    void append_layers(const std::string& prefix, std::vector<LayerInfo>& out) const;
};

}  // namespace tmad
