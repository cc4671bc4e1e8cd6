#include "tmad/networks.hpp"

namespace tmad {

namespace {

template <class Block>
void collect_all(std::vector<Block>& blocks, const std::string& prefix, std::vector<NamedParam>& out) {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + "." + std::to_string(i), out);
}

template <class Block>
void layers_all(const std::vector<Block>& blocks, const std::string& prefix, std::vector<LayerInfo>& out) {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].append_layers(prefix + "." + std::to_string(i), out);
}

}  // namespace

CoarseNet::CoarseNet(WidthSpec widths, Rng& rng) {
    const auto& b = kCoarseBlocks;
    input_ = Conv2d(ConvSpec{.in = 4, .out = widths.at(0), .kernel = 1}, rng);
    for (int i = 0; i < b.down_blocks; ++i) down_.emplace_back(widths.at(i), widths.at(i + 1), rng);
    const int trunk = widths.at(b.down_blocks);
    for (int i = 0; i < b.res_blocks; ++i) res_.emplace_back(trunk, kCoarseDilation, rng);
    for (int i = 0; i < b.up_blocks; ++i) {
        up_.emplace_back(widths.at(b.down_blocks - i), widths.at(b.down_blocks - i - 1), 2, rng);
    }
    output_ = Conv2d(ConvSpec{.in = widths.at(0), .out = 3, .kernel = 1}, rng);
}

Var CoarseNet::bottleneck(const Var& input) const {
    const auto& s = input.shape();
    const int factor = 1 << static_cast<int>(down_.size());
    if (s.c != 4) throw ShapeError("coarse network expects 4 input channels (image + mask)");
    if (s.h % factor != 0 || s.w % factor != 0) {
        throw ShapeError("coarse network input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " is not divisible by " + std::to_string(factor));
    }
    auto h = leaky_relu(input_.forward(input), kLeakySlope);
    for (const auto& d : down_) h = d.forward(h);
    for (const auto& r : res_) h = r.forward(h);
    return h;
}

Var CoarseNet::forward(const Var& input) const {
    auto h = bottleneck(input);
    for (const auto& u : up_) h = u.forward(h);
    return output_.forward(h);
}

BlockStack CoarseNet::blocks() const {
    return {1, static_cast<int>(down_.size()), static_cast<int>(res_.size()), static_cast<int>(up_.size()), 1};
}

std::vector<LayerInfo> CoarseNet::layers() const {
    std::vector<LayerInfo> out;
    out.push_back(input_.info("input"));
    layers_all(down_, "down", out);
    layers_all(res_, "res", out);
    layers_all(up_, "up", out);
    out.push_back(output_.info("output"));
    return out;
}

void CoarseNet::collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) {
    input_.collect(prefix + "input", out);
    collect_all(down_, prefix + "down", out);
    collect_all(res_, prefix + "res", out);
    collect_all(up_, prefix + "up", out);
    output_.collect(prefix + "output", out);
}

PsNet::PsNet(WidthSpec widths, int candidates, Rng& rng) : candidates_(candidates) {
    if (candidates < 1) throw std::invalid_argument("PSNet needs at least one candidate");
    const auto& b = kPsnetBackboneBlocks;
    input_ = Conv2d(ConvSpec{.in = 3, .out = widths.at(0), .kernel = 1}, rng);
    for (int i = 0; i < b.down_blocks; ++i) down_.emplace_back(widths.at(i), widths.at(i + 1), rng);
    const int trunk = widths.at(b.down_blocks);
    for (int i = 0; i < b.res_blocks; ++i) res_.emplace_back(trunk, 1, rng);
    // Two doubling up-blocks undo the two halvings; the last one reassembles at unit scale.
    up_.emplace_back(widths.at(2), widths.at(1), 2, rng);
    up_.emplace_back(widths.at(1), widths.at(0), 2, rng);
    up_.emplace_back(widths.at(0), widths.at(0), 1, rng);
    output_ = Conv2d(ConvSpec{.in = widths.at(0), .out = 3, .kernel = 1}, rng);

    const auto& t = kPsnetTextureBlocks;
    tex_input_ = Conv2d(ConvSpec{.in = 3 * candidates, .out = widths.at(0), .kernel = 1}, rng);
    for (int i = 0; i < t.down_blocks; ++i) tex_down_.emplace_back(widths.at(i), widths.at(i + 1), rng);
    for (int i = 0; i < t.res_blocks; ++i) tex_res_.emplace_back(widths.at(t.down_blocks), 1, rng);
}

Var PsNet::forward_full(const Var& context, const Var& candidates) const {
    const auto& cs = context.shape();
    const auto& ts = candidates.shape();
    if (ts.c != 3 * candidates_) {
        throw ShapeError("PSNet expects " + std::to_string(candidates_) + " candidates (" +
                         std::to_string(3 * candidates_) + " channels), got " + std::to_string(ts.c));
    }
    const int k = ts.h;
    if (cs.n != ts.n || cs.c != 3 || cs.h != 3 * k || cs.w != 3 * k || ts.w != k) {
        throw ShapeError("PSNet context " + to_string(cs) + " does not match candidates " + to_string(ts));
    }
    if (k % 4 != 0) throw ShapeError("PSNet patch size must be divisible by 4");

    auto t = leaky_relu(tex_input_.forward(candidates), kLeakySlope);
    const Var level1 = tex_down_[0].forward(t);
    t = tex_down_[1].forward(level1);
    for (const auto& r : tex_res_) t = r.forward(t);
    const Var level2 = t;

    auto h = leaky_relu(input_.forward(context), kLeakySlope);
    for (const auto& d : down_) h = d.forward(h);
    for (const auto& r : res_) h = r.forward(h);
    h = add(h, pad_center(level2, h.shape().h, h.shape().w));
    h = up_[0].forward(h);
    h = add(h, pad_center(level1, h.shape().h, h.shape().w));
    h = up_[1].forward(h);
    h = up_[2].forward(h);
    return output_.forward(h);
}

Var PsNet::forward(const Var& context, const Var& candidates) const {
    const int k = candidates.shape().h;
    return crop_center(forward_full(context, candidates), k, k);
}

BlockStack PsNet::backbone_blocks() const {
    return {1, static_cast<int>(down_.size()), static_cast<int>(res_.size()), static_cast<int>(up_.size()), 1};
}

BlockStack PsNet::texture_blocks() const {
    return {1, static_cast<int>(tex_down_.size()), static_cast<int>(tex_res_.size()), 0, 0};
}

std::vector<LayerInfo> PsNet::layers() const {
    std::vector<LayerInfo> out;
    out.push_back(input_.info("backbone.input"));
    layers_all(down_, "backbone.down", out);
    layers_all(res_, "backbone.res", out);
    layers_all(up_, "backbone.up", out);
    out.push_back(output_.info("backbone.output"));
    out.push_back(tex_input_.info("texture.input"));
    layers_all(tex_down_, "texture.down", out);
    layers_all(tex_res_, "texture.res", out);
    return out;
}

void PsNet::collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) {
    input_.collect(prefix + "backbone.input", out);
    collect_all(down_, prefix + "backbone.down", out);
    collect_all(res_, prefix + "backbone.res", out);
    collect_all(up_, prefix + "backbone.up", out);
    output_.collect(prefix + "backbone.output", out);
    tex_input_.collect(prefix + "texture.input", out);
    collect_all(tex_down_, prefix + "texture.down", out);
    collect_all(tex_res_, prefix + "texture.res", out);
}

Var Critic::run(const Var& x, bool update) {
    if (!update) return static_cast<const Critic&>(*this).run(x);
    auto h = x;
    for (auto& c : convs_) h = leaky_relu(c.forward_update(h), kLeakySlope);
    return mean_per_sample(head_.forward_update(h));
}

Var Critic::run(const Var& x) const {
    auto h = x;
    for (const auto& c : convs_) h = leaky_relu(c.forward(h), kLeakySlope);
    return mean_per_sample(head_.forward(h));
}

void Critic::collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(prefix + "conv." + std::to_string(i), out);
    head_.collect(prefix + "head", out);
}

void Critic::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect_buffers(prefix + "conv." + std::to_string(i), out);
    head_.collect_buffers(prefix + "head", out);
}

std::vector<LayerInfo> Critic::layers() const {
    std::vector<LayerInfo> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) out.push_back(convs_[i].info("conv." + std::to_string(i)));
    out.push_back(head_.info("head"));
    return out;
}

PatchCritic::PatchCritic(WidthSpec widths, Rng& rng) {
    int in = 3;
    for (int i = 0; i < 4; ++i) {
        convs_.emplace_back(ConvSpec{.in = in, .out = widths.at(i), .kernel = 3, .stride = 2, .spectral = true}, rng);
        in = widths.at(i);
    }
    head_ = Conv2d(ConvSpec{.in = in, .out = 1, .kernel = 1, .spectral = true}, rng);
}

GlobalCritic::GlobalCritic(WidthSpec widths, Rng& rng) {
    int in = 3;
    for (int i = 0; i < 4; ++i) {
        convs_.emplace_back(
            ConvSpec{.in = in, .out = widths.at(i), .kernel = 3, .stride = i < 3 ? 2 : 1, .spectral = true}, rng);
        in = widths.at(i);
    }
    head_ = Conv2d(ConvSpec{.in = in, .out = 1, .kernel = 3, .spectral = true}, rng);
}

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, int width, int depth, std::vector<int> taps)
    : taps_(std::move(taps)) {
    Rng rng(seed);
    int in = 3;
    for (int i = 0; i < depth; ++i) {
        convs_.emplace_back(ConvSpec{.in = in, .out = width, .kernel = 3}, rng);
        convs_.back().weight.set_requires_grad(false);
        convs_.back().bias.set_requires_grad(false);
        in = width;
    }
    for (int t : taps_) {
        if (t < 1 || t > depth) throw std::invalid_argument("perceptual tap outside extractor depth");
    }
}

std::vector<Var> RandomConvExtractor::features(const Var& x) const {
    std::vector<Var> out;
    auto h = x;
    int last = 0;
    for (int t : taps_) last = std::max(last, t);
    for (int i = 0; i < last; ++i) {
        auto pre = convs_[i].forward(h);
        if (std::find(taps_.begin(), taps_.end(), i + 1) != taps_.end()) out.push_back(pre);
        h = leaky_relu(pre, kLeakySlope);
    }
    return out;
}

}  // namespace tmad
