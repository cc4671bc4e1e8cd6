#include "tmad/nn.hpp"

#include <cmath>

namespace tmad {

namespace {

constexpr int kInitPowerIterations = 10;

Tensor normal_tensor(Shape s, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(s);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace

Conv2d::Conv2d(const ConvSpec& spec, Rng& rng) : spec_(spec) {
    const int fan_in = spec.in * spec.kernel * spec.kernel;
    const double he = std::sqrt(2.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
    const double stddev = spec.init_std > 0.0 ? spec.init_std : spec.init_gain * he;
    weight = Var::parameter(normal_tensor(Shape{spec.out, spec.in, spec.kernel, spec.kernel}, stddev, rng));
    bias = Var::parameter(Tensor(Shape{spec.out, 1, 1, 1}));
    if (spec.spectral) {
        u_ = normal_tensor(Shape{spec.out, 1, 1, 1}, 1.0, rng);
        double nrm = 0.0;
        for (double v : u_.values()) nrm += v * v;
        u_ *= 1.0 / std::sqrt(nrm);
        spectral_normalize(detach(weight), u_, kInitPowerIterations);
    }
}

Var Conv2d::apply(const Var& x, const Var& w) const {
    Conv2dOptions opt;
    opt.stride = spec_.stride;
    opt.dilation = spec_.dilation;
    opt.padding = spec_.dilation * (spec_.kernel - 1) / 2;
    return conv2d(x, w, bias, opt);
}

Var Conv2d::effective_weight() const {
    if (!spec_.spectral) return weight;
    Tensor u = u_;
    return spectral_normalize(weight, u, 0);
}

Var Conv2d::forward(const Var& x) const { return apply(x, effective_weight()); }

Var Conv2d::forward_update(const Var& x) {
    if (!spec_.spectral) return forward(x);
    return apply(x, spectral_normalize(weight, u_, 1));
}

LayerInfo Conv2d::info(std::string name) const {
    LayerInfo li;
    li.name = std::move(name);
    li.kind = LayerKind::conv;
    li.kernel = spec_.kernel;
    li.dilation = spec_.dilation;
    li.stride = spec_.stride;
    li.spectral = spec_.spectral;
    return li;
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& params) {
    params.push_back({prefix + ".weight", weight});
    params.push_back({prefix + ".bias", bias});
}

void Conv2d::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& buffers) {
    if (spec_.spectral) buffers.push_back({prefix + ".sn_u", &u_});
}

std::vector<NamedParam> Module::parameters(const std::string& prefix) {
    std::vector<NamedParam> out;
    collect_parameters(prefix, out);
    return out;
}

std::vector<NamedBuffer> Module::buffers(const std::string& prefix) {
    std::vector<NamedBuffer> out;
    collect_buffers(prefix, out);
    return out;
}

void Module::set_requires_grad(bool enabled) {
    for (auto& p : parameters()) p.var.set_requires_grad(enabled);
}

void Module::zero_grad() {
    for (auto& p : parameters()) p.var.zero_grad();
}

DownBlock::DownBlock(int in, int out, Rng& rng)
    : first(ConvSpec{.in = in, .out = out}, rng), second(ConvSpec{.in = out, .out = out}, rng) {}

Var DownBlock::forward(const Var& x) const {
    auto h = leaky_relu(first.forward(x), kLeakySlope);
    h = leaky_relu(second.forward(h), kLeakySlope);
    return nearest_downsample(h);
}

void DownBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    first.collect(prefix + ".conv1", out);
    second.collect(prefix + ".conv2", out);
}

void DownBlock::append_layers(const std::string& prefix, std::vector<LayerInfo>& out) const {
    out.push_back(first.info(prefix + ".conv1"));
    out.push_back(second.info(prefix + ".conv2"));
    out.push_back(LayerInfo{.name = prefix + ".downsample", .kind = LayerKind::downsample, .stride = 2});
}

ResBlock::ResBlock(int channels, int dilation, Rng& rng)
    : first(ConvSpec{.in = channels, .out = channels, .dilation = dilation}, rng),
      second(ConvSpec{.in = channels, .out = channels, .dilation = dilation, .init_gain = 0.5}, rng) {}

Var ResBlock::forward(const Var& x) const {
    auto h = leaky_relu(first.forward(x), kLeakySlope);
    return add(x, second.forward(h));
}

void ResBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    first.collect(prefix + ".conv1", out);
    second.collect(prefix + ".conv2", out);
}

void ResBlock::append_layers(const std::string& prefix, std::vector<LayerInfo>& out) const {
    out.push_back(first.info(prefix + ".conv1"));
    out.push_back(second.info(prefix + ".conv2"));
    out.push_back(LayerInfo{.name = prefix + ".add", .kind = LayerKind::residual});
}

ContentAwareUpsample::ContentAwareUpsample(int channels, int scale, Rng& rng) : scale_(scale) {
    const int compressed = std::min(channels, kCompressedMax);
    compress_ = Conv2d(ConvSpec{.in = channels, .out = compressed, .kernel = 1}, rng);
    encode_ = Conv2d(ConvSpec{.in = compressed, .out = scale * scale * kKernel * kKernel, .kernel = 3, .init_std = 1e-3},
                     rng);
}

Var ContentAwareUpsample::predict_kernels(const Var& x) const {
    auto k = encode_.forward(leaky_relu(compress_.forward(x), kLeakySlope));
    if (scale_ > 1) k = pixel_shuffle(k, scale_);
    return softmax_channels(k);
}

Var ContentAwareUpsample::forward(const Var& x) const {
    return carafe_reassemble(x, predict_kernels(x), scale_);
}

void ContentAwareUpsample::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    compress_.collect(prefix + ".compress", out);
    encode_.collect(prefix + ".encode", out);
}

void ContentAwareUpsample::append_layers(const std::string& prefix, std::vector<LayerInfo>& out) const {
    out.push_back(compress_.info(prefix + ".compress"));
    out.push_back(encode_.info(prefix + ".encode"));
    out.push_back(LayerInfo{.name = prefix + ".reassemble", .kind = LayerKind::upsample, .kernel = kKernel, .scale = scale_});
}

UpBlock::UpBlock(int in, int out, int scale, Rng& rng)
    : up(in, scale, rng), first(ConvSpec{.in = in, .out = out}, rng), second(ConvSpec{.in = out, .out = out}, rng) {}

Var UpBlock::forward(const Var& x) const {
    auto h = up.forward(x);
    h = leaky_relu(first.forward(h), kLeakySlope);
    return leaky_relu(second.forward(h), kLeakySlope);
}

void UpBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    up.collect(prefix + ".up", out);
    first.collect(prefix + ".conv1", out);
    second.collect(prefix + ".conv2", out);
}

void UpBlock::append_layers(const std::string& prefix, std::vector<LayerInfo>& out) const {
    up.append_layers(prefix + ".up", out);
    out.push_back(first.info(prefix + ".conv1"));
    out.push_back(second.info(prefix + ".conv2"));
}

}  // namespace tmad
