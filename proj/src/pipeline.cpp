#include "tmad/pipeline.hpp"

#include <numeric>
#include <stdexcept>

namespace tmad {

namespace {

constexpr int kInferenceChunk = 64;

}  // namespace

std::vector<std::string> ModelSpec::validate() const {
    std::vector<std::string> errors;
    if (patch_size < 4 || patch_size % 4 != 0) errors.push_back("patch_size must be a positive multiple of 4");
    if (pool_size < 1) errors.push_back("pool_size must be at least 1");
    if (candidates < 1 || candidates > pool_size) errors.push_back("candidates must lie in [1, pool_size]");
    for (const auto& [key, w] : {std::pair{"coarse_width", coarse_widths}, std::pair{"psnet_width", psnet_widths},
                                 std::pair{"critic_width", critic_widths}}) {
        if (w.base < 1 || w.cap < w.base) errors.push_back(std::string(key) + " must satisfy 1 <= base <= cap");
    }
    if (embedding_channels < 1) errors.push_back("embedding_channels must be at least 1");
    return errors;
}

int ModelSpec::alignment() const { return std::lcm(8, patch_size); }

Model::Model(const ModelSpec& s, std::uint64_t seed) : Model(s, Rng(seed)) {}

Model::Model(const ModelSpec& s, Rng rng)
    : spec(s),
      coarse(s.coarse_widths, rng),
      embedding(s.embedding_channels, rng),
      psnet(s.psnet_widths, s.candidates, rng),
      patch_critic(s.critic_widths, rng),
      global_critic(s.critic_widths, rng) {
    if (auto errors = s.validate(); !errors.empty()) throw std::invalid_argument("invalid model spec: " + errors.front());
}

std::vector<NamedParam> Model::generator_parameters(bool include_coarse) {
    std::vector<NamedParam> out;
    if (include_coarse) coarse.collect_parameters("coarse.", out);
    embedding.collect_parameters("embedding.", out);
    psnet.collect_parameters("psnet.", out);
    return out;
}

std::vector<NamedParam> Model::critic_parameters() {
    std::vector<NamedParam> out;
    patch_critic.collect_parameters("patch_critic.", out);
    global_critic.collect_parameters("global_critic.", out);
    return out;
}

std::vector<NamedParam> Model::parameters() {
    auto out = generator_parameters(true);
    auto critics = critic_parameters();
    out.insert(out.end(), critics.begin(), critics.end());
    return out;
}

std::vector<NamedBuffer> Model::buffers() {
    std::vector<NamedBuffer> out;
    patch_critic.collect_buffers("patch_critic.", out);
    global_critic.collect_buffers("global_critic.", out);
    return out;
}

Tensor coarse_input(const Tensor& masked_input, const Tensor& mask) {
    const auto& s = masked_input.shape();
    if (s.c != 3 || mask.shape() != Shape{s.n, 1, s.h, s.w}) {
        throw ShapeError("coarse input needs (N,3,H,W) image and (N,1,H,W) mask, got " + to_string(s) + " and " +
                         to_string(mask.shape()));
    }
    Tensor out(Shape{s.n, 4, s.h, s.w});
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        std::copy(masked_input.data() + n * 3 * plane, masked_input.data() + (n + 1) * 3 * plane, out.data() + n * 4 * plane);
        std::copy(mask.data() + n * plane, mask.data() + (n + 1) * plane, out.data() + (n * 4 + 3) * plane);
    }
    return out;
}

PatchStageOutput run_patch_stage(const Model& model, const Var& composed, std::span<const PatchJob> jobs) {
    const auto& s = composed.shape();
    const int k = model.spec.patch_size;
    if (s.c != 3 || static_cast<int>(jobs.size()) != s.n) {
        throw ShapeError("patch stage needs one job per image of a (N,3,H,W) batch, got " + to_string(s));
    }
    auto patch_idx = std::make_shared<std::vector<std::int64_t>>();
    auto context_idx = std::make_shared<std::vector<std::int64_t>>();
    int total = 0;
    const std::int64_t image_size = static_cast<std::int64_t>(s.sample_size());
    for (int b = 0; b < s.n; ++b) {
        for (const auto& cell : jobs[static_cast<std::size_t>(b)].cells) {
            append_window_indices(*patch_idx, b * image_size, 3, s.h, s.w, cell.row, cell.col, k);
            append_window_indices(*context_idx, b * image_size, 3, s.h, s.w, cell.row - k, cell.col - k, 3 * k);
            ++total;
        }
    }
    PatchStageOutput out;
    if (total == 0) return out;
    out.coarse_patches = gather(composed, Shape{total, 3, k, k}, patch_idx);
    out.context = gather(composed, Shape{total, 3, 3 * k, 3 * k}, context_idx);

    const Var theta = model.embedding.theta(out.coarse_patches);
    std::vector<Var> parts;
    int offset = 0;
    for (const auto& job : jobs) {
        const int count = static_cast<int>(job.cells.size());
        if (count == 0) {
            out.retrieval.emplace_back();
            continue;
        }
        if (job.memory.patch_size != k) throw ShapeError("texture memory patch size does not match the model");
        const Var memory = constant(job.memory.patches);
        const Var similarity =
            correspondence_softmax(correspondence(slice_batch(theta, offset, count), model.embedding.phi(memory)));
        auto cs = select_candidates(similarity, memory, model.spec.candidates, model.spec.retrieval);
        parts.push_back(cs.patches);
        out.retrieval.push_back(std::move(cs));
        offset += count;
    }
    out.candidates = parts.size() == 1 ? parts.front() : concat(parts, 0);
    out.synthesized = model.psnet.forward(out.context, out.candidates);
    return out;
}

Var assemble_output(const Var& composed, const Var& synthesized, std::span<const PatchJob> jobs,
                    const Tensor& masked_input, const Tensor& mask) {
    const auto& s = composed.shape();
    if (masked_input.shape() != s || mask.shape() != Shape{s.n, 1, s.h, s.w}) {
        throw ShapeError("assemble_output inputs disagree with " + to_string(s));
    }
    const std::int64_t composed_len = static_cast<std::int64_t>(s.numel());
    const std::int64_t synth_len = synthesized.defined() ? static_cast<std::int64_t>(synthesized.shape().numel()) : 0;
    const int k = synthesized.defined() ? synthesized.shape().h : 0;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;

    auto idx = std::make_shared<std::vector<std::int64_t>>(s.numel());
    std::int64_t patch_base = 0;
    std::vector<std::int64_t> owner(plane);
    for (int b = 0; b < s.n; ++b) {
        const auto& job = jobs[static_cast<std::size_t>(b)];
        std::fill(owner.begin(), owner.end(), -1);
        for (int i = 0; i < job.synthesized; ++i) {
            const auto& cell = job.cells[static_cast<std::size_t>(i)];
            for (int y = 0; y < k; ++y)
                for (int x = 0; x < k; ++x) owner[static_cast<std::size_t>(cell.row + y) * s.w + cell.col + x] = patch_base + i;
        }
        for (int c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t flat = (static_cast<std::size_t>(b) * 3 + c) * plane + p;
                std::int64_t src;
                if (mask[static_cast<std::size_t>(b) * plane + p] == 0.0) {
                    src = composed_len + synth_len + static_cast<std::int64_t>(flat);
                } else if (owner[p] >= 0) {
                    src = composed_len + (owner[p] * 3 + c) * k * k + static_cast<std::int64_t>(p / s.w - job.cells[owner[p] - patch_base].row) * k +
                          static_cast<std::int64_t>(p % s.w - job.cells[owner[p] - patch_base].col);
                } else {
                    src = static_cast<std::int64_t>(flat);
                }
                (*idx)[flat] = src;
            }
        patch_base += static_cast<std::int64_t>(job.cells.size());
    }

    std::vector<Var> sources{reshape(composed, Shape{static_cast<int>(composed_len), 1, 1, 1})};
    if (synth_len > 0) sources.push_back(reshape(synthesized, Shape{static_cast<int>(synth_len), 1, 1, 1}));
    sources.push_back(constant(masked_input.reshaped(Shape{static_cast<int>(composed_len), 1, 1, 1})));
    return gather(concat(sources, 0), s, idx);
}

namespace {

Mask reflect_pad_mask(const Mask& mask, int bottom, int right) {
    Mask out(mask.height() + bottom, mask.width() + right);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            out.set(y, x, mask.hole(reflect_index(y, mask.height()), reflect_index(x, mask.width())));
    return out;
}

TextureMemory inference_memory(const ModelSpec& spec, const Image& masked, const Mask& mask) {
    if (spec.mask_mode == MaskMode::rectangle) {
        try {
            return build_memory(masked, mask, spec.patch_size, MaskMode::rectangle, spec.memory_seed, spec.pool_size);
        } catch (const std::runtime_error&) {
            // No fully valid window: rank by masked fraction instead.
        }
    }
    return build_memory(masked, mask, spec.patch_size, MaskMode::irregular, spec.memory_seed, spec.pool_size);
}

InpaintResult run_inference(const Model& model, const Image& image, const Mask& mask, const Image* completed) {
    require_same_size(image, mask);
    if (completed) require_same_size(*completed, mask);
    if (mask.empty()) return {image, completed ? *completed : image, {}};

    const int h = image.height();
    const int w = image.width();
    const int align = model.spec.alignment();
    const int pad_h = (h + align - 1) / align * align - h;
    const int pad_w = (w + align - 1) / align * align - w;
    const Mask m = reflect_pad_mask(mask, pad_h, pad_w);
    const Image masked = apply_mask(reflect_pad(image, 0, 0, pad_h, pad_w), m);

    NoGradGuard no_grad;
    Image coarse_out = completed
                           ? reflect_pad(*completed, 0, 0, pad_h, pad_w)
                           : Image(model.coarse.forward(constant(coarse_input(masked.tensor(), m.tensor()))).value());
    const Image composed = compose_with_valid(coarse_out, masked, m);
    const PatchGrid grid = build_patch_grid(m, model.spec.patch_size);
    const TextureMemory memory = inference_memory(model.spec, masked, m);

    InpaintResult result;
    std::vector<Tensor> synthesized;
    const Var composed_var = constant(composed.tensor());
    for (std::size_t begin = 0; begin < grid.cells.size(); begin += kInferenceChunk) {
        const std::size_t end = std::min(grid.cells.size(), begin + kInferenceChunk);
        PatchJob job{{grid.cells.begin() + static_cast<std::ptrdiff_t>(begin), grid.cells.begin() + static_cast<std::ptrdiff_t>(end)},
                     static_cast<int>(end - begin), memory};
        const auto stage = run_patch_stage(model, composed_var, std::span<const PatchJob>(&job, 1));
        synthesized.push_back(stage.synthesized.value());
        const auto& cs = stage.retrieval.front();
        for (std::size_t i = 0; i < job.cells.size(); ++i) {
            const auto& cell = job.cells[i];
            if (cell.row >= h || cell.col >= w) continue;
            RetrievalRecord rec{cell, cs.indices[i], {}, cs.scores[i]};
            for (int j : rec.indices) rec.sources.push_back(memory.coords[static_cast<std::size_t>(j)]);
            result.retrieval.push_back(std::move(rec));
        }
    }
    const PatchJob all{grid.cells, static_cast<int>(grid.cells.size()), {}};
    const Var out = assemble_output(composed_var, constant(concat_batch(synthesized)), std::span<const PatchJob>(&all, 1),
                                    masked.tensor(), m.tensor());
    result.output = crop(Image(out.value()), 0, 0, h, w);
    result.coarse = crop(composed, 0, 0, h, w);
    return result;
}

}  // namespace

InpaintResult inpaint(const Model& model, const Image& image, const Mask& mask) {
    return run_inference(model, image, mask, nullptr);
}

InpaintResult postprocess(const Model& model, const Image& completed, const Mask& mask) {
    return run_inference(model, completed, mask, &completed);
}

}  // namespace tmad
