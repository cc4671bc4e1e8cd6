#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tmad/losses.hpp"
#include "tmad/masks.hpp"
#include "tmad/pipeline.hpp"

namespace tmad {

/// Cosine annealing with warm restarts; lr is a pure function of the step.
struct CosineRestarts {
    double base_lr = 1e-4;
    int period = 10000;
    double min_factor = 0.01;
    [[nodiscard]] double lr(std::int64_t step) const;
};

struct AdamOptions {
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::int64_t t = 0;
    std::vector<std::string> names;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

class Adam {
public:
    Adam() = default;
    Adam(std::vector<NamedParam> params, AdamOptions options = {});

    /// Updates every parameter holding a gradient; parameters without one are left alone.
    void step(double lr);
    void zero_grad();
    [[nodiscard]] const AdamState& state() const { return state_; }
    /// Throws unless names and shapes match this optimizer's parameters.
    void restore(const AdamState& state);
    [[nodiscard]] const std::vector<NamedParam>& params() const { return params_; }

private:
    std::vector<NamedParam> params_;
    AdamOptions options_{};
    AdamState state_;
};

struct TrainConfig {
    int images_per_batch = 4;
    int patches_per_image = 16;  // N_ps
    double lr = 1e-4;
    int pretrain_epochs = 4;
    int restart_period = 10000;
    double min_lr_factor = 0.01;
    std::uint64_t seed = 0;
    int image_size = 256;
    int memory_draws = 8;  // samples of the whole memory per step
    bool freeze_coarse = false;
    bool flip = true;
    MaskSpec mask{};

    [[nodiscard]] std::vector<std::string> validate() const;
    [[nodiscard]] CosineRestarts schedule() const { return {lr, restart_period, min_lr_factor}; }
};

/// Directory of images, centre-cropped and resized to a square. A `<split>.txt`
/// file listing names (one per line) selects the split; otherwise every image is used.
struct Dataset {
    std::vector<std::string> names;
    std::vector<Image> images;

    static Dataset load(const std::filesystem::path& dir, int size, const std::string& split = "train");
    [[nodiscard]] bool empty() const { return images.empty(); }
};

/// Stacked images (B, 3, H, W) and masks (B, 1, H, W).
struct TrainBatch {
    Tensor images;
    Tensor masks;
};

TrainBatch make_batch(std::span<const Image> images, std::span<const Mask> masks);

/// Per image: hole cells subsampled to N_ps, or topped up with fully valid lattice
/// cells (complementary); memory built from the masked image.
std::vector<PatchJob> make_patch_jobs(const TrainBatch& batch, const ModelSpec& spec, int patches_per_image, Rng& rng);

struct StepLosses {
    std::int64_t step = 0;
    double recon = 0.0;
    double ps = 0.0;
    double blend = 0.0;
    double d_patch = 0.0;
    double d_global = 0.0;
    double total = 0.0;
    double masked_l1 = 0.0;  // hole L1 of the final composite (monitoring)
    [[nodiscard]] std::string json_line() const;
};

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainState {
    std::int64_t step = 0;
    Rng rng;
    AdamState coarse;
    AdamState generator;
    AdamState critic;
};

class Trainer {
public:
    Trainer(Model& model, TrainConfig config, LossConfig losses,
            std::shared_ptr<const FeatureExtractor> extractor = nullptr);

    /// One coarse-only reconstruction step.
    StepLosses pretrain_step(const TrainBatch& batch);
    /// One critic update followed by one generator update.
    StepLosses joint_step(const TrainBatch& batch);

    /// Random images (with optional horizontal flip) and masks from the dataset.
    TrainBatch sample_batch(const Dataset& data);

    /// pretrain_epochs passes over the dataset with the reconstruction loss only.
    std::vector<StepLosses> pretrain_coarse(const Dataset& data);

    [[nodiscard]] TrainState state() const;
    void restore(const TrainState& state);
    [[nodiscard]] std::int64_t step() const { return step_; }
    [[nodiscard]] double current_lr() const { return config_.schedule().lr(step_); }

    void set_log(std::ostream* log) { log_ = log; }
    void set_diagnostic_dir(std::filesystem::path dir) { diagnostic_dir_ = std::move(dir); }
    [[nodiscard]] const TrainConfig& config() const { return config_; }
    [[nodiscard]] const LossConfig& losses() const { return losses_; }

private:
    void finish_step(StepLosses& losses);
    [[noreturn]] void abort_non_finite(const StepLosses& losses, const std::string& what);

    Model& model_;
    TrainConfig config_;
    LossConfig losses_;
    std::shared_ptr<const FeatureExtractor> extractor_;
    Adam coarse_opt_;
    Adam generator_opt_;
    Adam critic_opt_;
    std::int64_t step_ = 0;
    Rng rng_;
    std::ostream* log_ = nullptr;
    std::filesystem::path diagnostic_dir_;
};

}  // namespace tmad
