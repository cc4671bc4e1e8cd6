#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tmad/image.hpp"
#include "tmad/losses.hpp"
#include "tmad/networks.hpp"
#include "tmad/texture_memory.hpp"

namespace tmad {

struct ModelSpec {
    int patch_size = 32;
    int pool_size = kDefaultPoolSize;
    int candidates = 4;
    WidthSpec coarse_widths{};
    WidthSpec psnet_widths{};
    WidthSpec critic_widths{};
    int embedding_channels = kEmbeddingChannels;
    MaskMode mask_mode = MaskMode::irregular;
    RetrievalMode retrieval = RetrievalMode::top_n;
    std::uint64_t memory_seed = 0;

    [[nodiscard]] std::vector<std::string> validate() const;
    /// Images fed to the networks must be multiples of this (lcm of 8 and k).
    [[nodiscard]] int alignment() const;
    bool operator==(const ModelSpec&) const = default;
};

/// Every network of the system, built deterministically from (spec, seed).
class Model {
public:
    Model(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec spec;
    CoarseNet coarse;
    RetrievalEmbedding embedding;
    PsNet psnet;
    PatchCritic patch_critic;
    GlobalCritic global_critic;

    /// All parameters with stable dotted names (checkpoint order).
    std::vector<NamedParam> parameters();
    std::vector<NamedBuffer> buffers();
    std::vector<NamedParam> generator_parameters(bool include_coarse = true);
    std::vector<NamedParam> critic_parameters();

private:
    Model(const ModelSpec& spec, Rng rng);
};

/// Cells of one image sent through the patch stage. The first `synthesized`
/// cells cover the hole; the rest are complementary fully valid cells.
struct PatchJob {
    std::vector<Cell> cells;
    int synthesized = 0;
    TextureMemory memory;
};

struct PatchStageOutput {
    Var coarse_patches;     // (P, 3, k, k) cut from the composed coarse image
    Var context;            // (P, 3, 3k, 3k)
    Var candidates;         // (P, 3 N_c, k, k)
    Var synthesized;        // (P, 3, k, k)
    std::vector<CandidateSet> retrieval;  // one per job
};

/// Coarse input: masked image and mask stacked to 4 channels.
Tensor coarse_input(const Tensor& masked_input, const Tensor& mask);

/// composed is (B, 3, H, W), one job per sample.
PatchStageOutput run_patch_stage(const Model& model, const Var& composed, std::span<const PatchJob> jobs);

/// Final composite: synthesized patches over the coarse composite inside the hole,
/// the masked input everywhere else.
Var assemble_output(const Var& composed, const Var& synthesized, std::span<const PatchJob> jobs,
                    const Tensor& masked_input, const Tensor& mask);

struct RetrievalRecord {
    Cell cell;
    std::vector<int> indices;
    std::vector<Cell> sources;
    std::vector<double> scores;
};

struct InpaintResult {
    Image output;
    Image coarse;  // coarse output composed with the valid pixels, original size
    std::vector<RetrievalRecord> retrieval;
};

/// Full pipeline. Sizes are reflection-padded to spec.alignment() and cropped back.
InpaintResult inpaint(const Model& model, const Image& image, const Mask& mask);

/// Skips the coarse network: `completed` (any externally inpainted image) plays the coarse role.
InpaintResult postprocess(const Model& model, const Image& completed, const Mask& mask);

}  // namespace tmad
