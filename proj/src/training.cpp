#include "tmad/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include <json.hpp>

#include "tmad/image_io.hpp"

namespace tmad {

double CosineRestarts::lr(std::int64_t step) const {
    const double phase = static_cast<double>(step % period) / period;
    const double floor = base_lr * min_factor;
    return floor + (base_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

Adam::Adam(std::vector<NamedParam> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        state_.names.push_back(p.name);
        state_.m.emplace_back(p.var.shape());
        state_.v.emplace_back(p.var.shape());
    }
}

void Adam::step(double lr) {
    ++state_.t;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(state_.t));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(state_.t));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& var = params_[i].var;
        if (!var.has_grad()) continue;
        const auto& g = var.grad();
        auto& m = state_.m[i];
        auto& v = state_.v[i];
        auto& w = var.mutable_value();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
            v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
            w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

void Adam::restore(const AdamState& state) {
    if (state.names != state_.names || state.m.size() != state_.m.size() || state.v.size() != state_.v.size()) {
        throw std::invalid_argument("optimizer state does not match the parameter list");
    }
    for (std::size_t i = 0; i < state.m.size(); ++i) {
        if (state.m[i].shape() != state_.m[i].shape() || state.v[i].shape() != state_.v[i].shape()) {
            throw std::invalid_argument("optimizer moment shape mismatch for " + state.names[i]);
        }
    }
    state_ = state;
}

std::vector<std::string> TrainConfig::validate() const {
    std::vector<std::string> errors;
    if (images_per_batch < 1) errors.push_back("images_per_batch must be at least 1");
    if (patches_per_image < 1) errors.push_back("patches_per_image must be at least 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) errors.push_back("lr must be positive");
    if (pretrain_epochs < 0) errors.push_back("pretrain_epochs must be non-negative");
    if (restart_period < 1) errors.push_back("restart_period must be at least 1");
    if (!(min_lr_factor >= 0.0 && min_lr_factor <= 1.0)) errors.push_back("min_lr_factor must lie in [0, 1]");
    if (image_size < 8) errors.push_back("image_size must be at least 8");
    if (memory_draws < 1) errors.push_back("memory_draws must be at least 1");
    return errors;
}

Dataset Dataset::load(const std::filesystem::path& dir, int size, const std::string& split) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
    std::vector<std::string> names;
    const auto split_file = dir / (split + ".txt");
    if (fs::exists(split_file)) {
        std::ifstream in(split_file);
        for (std::string line; std::getline(in, line);) {
            line.erase(0, line.find_first_not_of(" \t\r"));
            line.erase(line.find_last_not_of(" \t\r") + 1);
            if (!line.empty()) names.push_back(line);
        }
    } else {
        static const std::set<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"};
        for (const auto& entry : fs::directory_iterator(dir)) {
            auto ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
            if (entry.is_regular_file() && exts.count(ext)) names.push_back(entry.path().filename().string());
        }
        std::sort(names.begin(), names.end());
    }
    Dataset data;
    for (const auto& name : names) {
        data.images.push_back(load_square(dir / name, size));
        data.names.push_back(name);
    }
    return data;
}

TrainBatch make_batch(std::span<const Image> images, std::span<const Mask> masks) {
    if (images.empty() || images.size() != masks.size()) throw std::invalid_argument("batch needs one mask per image");
    std::vector<Tensor> imgs, ms;
    for (std::size_t i = 0; i < images.size(); ++i) {
        require_same_size(images[i], masks[i]);
        imgs.push_back(images[i].tensor());
        ms.push_back(masks[i].tensor());
    }
    return {concat_batch(imgs), concat_batch(ms)};
}

namespace {

template <class T>
std::vector<T> sample_without_replacement(const std::vector<T>& pool, std::size_t count, Rng& rng) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    order.resize(count);
    std::sort(order.begin(), order.end());
    std::vector<T> out;
    for (auto i : order) out.push_back(pool[i]);
    return out;
}

Tensor masked_images(const TrainBatch& batch) {
    Tensor out = batch.images;
    const auto& s = out.shape();
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (std::size_t p = 0; p < plane; ++p)
                if (batch.masks[n * plane + p] != 0.0) out[(static_cast<std::size_t>(n) * s.c + c) * plane + p] = 0.0;
    return out;
}

Tensor expand_channels(const Tensor& mask, int channels) {
    const auto& s = mask.shape();
    Tensor out(Shape{s.n, channels, s.h, s.w});
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < channels; ++c)
            std::copy(mask.data() + n * plane, mask.data() + (n + 1) * plane,
                      out.data() + (static_cast<std::size_t>(n) * channels + c) * plane);
    return out;
}

Tensor patches_at(const Tensor& images, std::span<const PatchJob> jobs, int k) {
    const auto& s = images.shape();
    std::vector<std::int64_t> idx;
    int total = 0;
    for (int b = 0; b < s.n; ++b)
        for (const auto& cell : jobs[static_cast<std::size_t>(b)].cells) {
            append_window_indices(idx, b * static_cast<std::int64_t>(s.sample_size()), 3, s.h, s.w, cell.row, cell.col, k);
            ++total;
        }
    Tensor out(Shape{total, 3, k, k});
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = images[static_cast<std::size_t>(idx[i])];
    return out;
}

Var select_rows(const Var& x, std::span<const int> rows) {
    const auto& s = x.shape();
    const std::size_t per = s.sample_size();
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(rows.size() * per);
    for (int r : rows)
        for (std::size_t j = 0; j < per; ++j) idx->push_back(static_cast<std::int64_t>(r * per + j));
    return gather(x, Shape{static_cast<int>(rows.size()), s.c, s.h, s.w}, idx);
}

Tensor rows_of(const Tensor& x, std::span<const int> rows) {
    std::vector<Tensor> parts;
    for (int r : rows) parts.push_back(x.slice(r, 1));
    return concat_batch(parts);
}

double scalar(const Var& v) { return v.value().item(); }

Image flip_horizontal(const Image& img) {
    Image out(img.height(), img.width());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
    return out;
}

/// Sets requires_grad on a module for the lifetime of the guard.
class FreezeGuard {
public:
    explicit FreezeGuard(Module& m) : m_(m) { m_.set_requires_grad(false); }
    ~FreezeGuard() { m_.set_requires_grad(true); }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    Module& m_;
};

}  // namespace

std::vector<PatchJob> make_patch_jobs(const TrainBatch& batch, const ModelSpec& spec, int patches_per_image, Rng& rng) {
    const int k = spec.patch_size;
    const int n = batch.images.shape().n;
    std::vector<PatchJob> jobs;
    for (int b = 0; b < n; ++b) {
        const Mask mask(batch.masks.slice(b, 1));
        const Image image(batch.images.slice(b, 1));
        const PatchGrid grid = build_patch_grid(mask, k);
        PatchJob job;
        job.cells = grid.cells.size() > static_cast<std::size_t>(patches_per_image)
                        ? sample_without_replacement(grid.cells, static_cast<std::size_t>(patches_per_image), rng)
                        : grid.cells;
        job.synthesized = static_cast<int>(job.cells.size());
        const std::size_t missing = static_cast<std::size_t>(patches_per_image) - job.cells.size();
        if (missing > 0) {
            const auto valid = valid_lattice_cells(mask, grid);
            if (valid.empty()) {
                throw std::runtime_error("no fully valid patch available to complete the patch batch of image " +
                                         std::to_string(b));
            }
            if (valid.size() >= missing) {
                auto extra = sample_without_replacement(valid, missing, rng);
                job.cells.insert(job.cells.end(), extra.begin(), extra.end());
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
                for (std::size_t i = 0; i < missing; ++i) job.cells.push_back(valid[pick(rng)]);
            }
        }
        job.memory = build_memory(apply_mask(image, mask), mask, k, spec.mask_mode, rng(), spec.pool_size);
        jobs.push_back(std::move(job));
    }
    return jobs;
}

std::string StepLosses::json_line() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["L_recon"] = recon;
    j["L_ps"] = ps;
    j["L_blend"] = blend;
    j["L_D_patch"] = d_patch;
    j["L_D_global"] = d_global;
    j["L_total"] = total;
    return j.dump();
}

Trainer::Trainer(Model& model, TrainConfig config, LossConfig losses, std::shared_ptr<const FeatureExtractor> extractor)
    : model_(model),
      config_(std::move(config)),
      losses_(losses),
      extractor_(extractor ? std::move(extractor) : std::make_shared<RandomConvExtractor>()),
      rng_(config_.seed) {
    auto errors = config_.validate();
    auto loss_errors = losses_.validate();
    errors.insert(errors.end(), loss_errors.begin(), loss_errors.end());
    if (!errors.empty()) throw std::invalid_argument("invalid training configuration: " + errors.front());
    std::vector<NamedParam> coarse;
    model_.coarse.collect_parameters("coarse.", coarse);
    coarse_opt_ = Adam(std::move(coarse));
    generator_opt_ = Adam(model_.generator_parameters(!config_.freeze_coarse));
    critic_opt_ = Adam(model_.critic_parameters());
}

TrainBatch Trainer::sample_batch(const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("dataset is empty");
    std::uniform_int_distribution<std::size_t> pick(0, data.images.size() - 1);
    std::bernoulli_distribution flip(0.5);
    std::vector<Image> images;
    std::vector<Mask> masks;
    for (int i = 0; i < config_.images_per_batch; ++i) {
        Image img = data.images[pick(rng_)];
        if (config_.flip && flip(rng_)) img = flip_horizontal(img);
        masks.push_back(generate_mask(config_.mask, img.height(), img.width(), rng_));
        images.push_back(std::move(img));
    }
    return make_batch(images, masks);
}

std::vector<StepLosses> Trainer::pretrain_coarse(const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("dataset is empty");
    std::vector<StepLosses> out;
    const std::size_t n = data.images.size();
    const auto b = static_cast<std::size_t>(config_.images_per_batch);
    std::bernoulli_distribution flip(0.5);
    for (int epoch = 0; epoch < config_.pretrain_epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng_);
        for (std::size_t begin = 0; begin < n; begin += b) {
            std::vector<Image> images;
            std::vector<Mask> masks;
            for (std::size_t i = begin; i < std::min(n, begin + b); ++i) {
                Image img = data.images[order[i]];
                if (config_.flip && flip(rng_)) img = flip_horizontal(img);
                masks.push_back(generate_mask(config_.mask, img.height(), img.width(), rng_));
                images.push_back(std::move(img));
            }
            out.push_back(pretrain_step(make_batch(images, masks)));
        }
    }
    return out;
}

StepLosses Trainer::pretrain_step(const TrainBatch& batch) {
    StepLosses losses;
    coarse_opt_.zero_grad();
    const Tensor masked = masked_images(batch);
    const Var out = model_.coarse.forward(constant(coarse_input(masked, batch.masks)));
    const Var recon = recon_loss(out, batch.images, batch.masks, losses_);
    losses.recon = losses.total = scalar(recon);
    losses.masked_l1 = masked_l1(out.value(), batch.images, batch.masks);
    if (!std::isfinite(losses.total)) abort_non_finite(losses, "reconstruction loss");
    backward(recon);
    coarse_opt_.step(current_lr());
    finish_step(losses);
    return losses;
}

StepLosses Trainer::joint_step(const TrainBatch& batch) {
    const auto& spec = model_.spec;
    const int k = spec.patch_size;
    const int n_images = batch.images.shape().n;
    const double lr = current_lr();
    StepLosses losses;

    const auto jobs = make_patch_jobs(batch, spec, config_.patches_per_image, rng_);
    const Tensor masked = masked_images(batch);
    const Tensor mask3 = expand_channels(batch.masks, 3);

    Var coarse_out;
    {
        std::unique_ptr<NoGradGuard> no_grad;
        if (config_.freeze_coarse) no_grad = std::make_unique<NoGradGuard>();
        coarse_out = model_.coarse.forward(constant(coarse_input(masked, batch.masks)));
    }
    const Var composed = add(mul(coarse_out, constant(mask3)), constant(masked));
    const auto stage = run_patch_stage(model_, composed, jobs);
    const Var output = assemble_output(composed, stage.synthesized, jobs, masked, batch.masks);
    const Tensor target = patches_at(batch.images, jobs, k);

    // Fakes are the hole patches only; each one's real pool is its candidates plus its ground truth.
    std::vector<int> fake_rows;
    std::vector<Tensor> reals;
    int offset = 0;
    for (std::size_t b = 0; b < jobs.size(); ++b) {
        const auto& job = jobs[b];
        const auto& cs = stage.retrieval[b];
        for (int i = 0; i < job.synthesized; ++i) {
            fake_rows.push_back(offset + i);
            for (int j : cs.indices[static_cast<std::size_t>(i)]) reals.push_back(job.memory.patches.slice(j, 1));
        }
        offset += static_cast<int>(job.cells.size());
    }
    const int n_fake = static_cast<int>(fake_rows.size());
    for (int r : fake_rows) reals.push_back(target.slice(r, 1));
    std::vector<Tensor> draws;
    std::uniform_int_distribution<std::size_t> pick_image(0, jobs.size() - 1);
    for (int i = 0; i < config_.memory_draws; ++i) {
        const auto& mem = jobs[pick_image(rng_)].memory;
        std::uniform_int_distribution<int> pick_entry(0, mem.size() - 1);
        draws.push_back(mem.patches.slice(pick_entry(rng_), 1));
    }
    const Tensor memory_draws = concat_batch(draws);

    // Critic step.
    critic_opt_.zero_grad();
    Var fake;
    Tensor real_patches, fake_values, fake_targets;
    if (n_fake > 0) {
        fake = select_rows(stage.synthesized, fake_rows);
        real_patches = concat_batch(reals);
        fake_values = fake.value();
        fake_targets = rows_of(target, fake_rows);
        const int n_real = real_patches.shape().n;
        const Tensor both[] = {real_patches, fake_values};
        const Var scores = model_.patch_critic.score_update(constant(concat_batch(both)));
        const Var d = patch_discriminator_loss(slice_batch(scores, 0, n_real), slice_batch(scores, n_real, n_fake));
        backward(d);
        const double gp = accumulate_gradient_penalty([&](const Var& x) { return model_.patch_critic.score(x); },
                                                      interpolate(fake_targets, fake_values, rng_), losses_.gradient_penalty);
        losses.d_patch = scalar(d) + losses_.gradient_penalty * gp;
    }
    {
        const Tensor both[] = {batch.images, output.value()};
        const Var scores = model_.global_critic.score_update(constant(concat_batch(both)));
        const Var d = global_discriminator_loss(slice_batch(scores, 0, n_images), slice_batch(scores, n_images, n_images));
        backward(d);
        const double gp = accumulate_gradient_penalty([&](const Var& x) { return model_.global_critic.score(x); },
                                                      interpolate(batch.images, output.value(), rng_), losses_.gradient_penalty);
        losses.d_global = scalar(d) + losses_.gradient_penalty * gp;
    }
    if (!std::isfinite(losses.d_patch) || !std::isfinite(losses.d_global)) abort_non_finite(losses, "critic loss");
    critic_opt_.step(lr);

    // Generator step with both critics frozen.
    generator_opt_.zero_grad();
    coarse_opt_.zero_grad();
    StageTotals<Var> totals;
    {
        FreezeGuard freeze_patch(model_.patch_critic);
        FreezeGuard freeze_global(model_.global_critic);
        StageParts<Var> parts;
        parts.recon = recon_loss(coarse_out, batch.images, batch.masks, losses_);
        parts.l1 = mean(abs(sub(stage.synthesized, constant(target))));
        parts.percep = perceptual_loss(*extractor_, stage.synthesized, constant(target));
        parts.gan_pd = n_fake > 0 ? patch_generator_loss(model_.patch_critic.score(constant(memory_draws)),
                                                         model_.patch_critic.score(constant(real_patches)),
                                                         model_.patch_critic.score(fake))
                                  : constant(Tensor::scalar(0.0));
        parts.gan_gl = global_generator_loss(model_.global_critic.score(output));
        parts.tv = tv_loss(output);
        totals = compose_stage_losses(losses_, parts);
        losses.recon = scalar(parts.recon);
        losses.ps = scalar(totals.ps);
        losses.blend = scalar(totals.blend);
        losses.total = scalar(totals.total);
        losses.masked_l1 = masked_l1(output.value(), batch.images, batch.masks);
        if (!std::isfinite(losses.total)) abort_non_finite(losses, "generator loss");
        backward(totals.total);
    }
    generator_opt_.step(lr);
    finish_step(losses);
    return losses;
}

void Trainer::finish_step(StepLosses& losses) {
    for (const auto& p : model_.parameters()) {
        if (!p.var.value().all_finite()) abort_non_finite(losses, "parameter " + p.name);
    }
    losses.step = step_++;
    if (log_) *log_ << losses.json_line() << '\n' << std::flush;
}

void Trainer::abort_non_finite(const StepLosses& losses, const std::string& what) {
    std::string where;
    if (!diagnostic_dir_.empty()) {
        nlohmann::ordered_json dump;
        dump["step"] = step_;
        dump["reason"] = "non-finite " + what;
        dump["losses"] = nlohmann::json::parse(losses.json_line());
        dump["lr"] = current_lr();
        auto& params = dump["parameters"];
        for (const auto& p : model_.parameters()) {
            params[p.name] = {{"finite", p.var.value().all_finite()},
                              {"max_abs", p.var.value().all_finite() ? p.var.value().max_abs() : 0.0},
                              {"grad_finite", !p.var.has_grad() || p.var.grad().all_finite()}};
        }
        std::filesystem::create_directories(diagnostic_dir_);
        const auto path = diagnostic_dir_ / ("diagnostic_step" + std::to_string(step_) + ".json");
        std::ofstream(path) << dump.dump(2) << '\n';
        where = " (diagnostics in " + path.string() + ")";
    }
    throw NonFiniteLoss("non-finite " + what + " at step " + std::to_string(step_) + where);
}

TrainState Trainer::state() const {
    return {step_, rng_, coarse_opt_.state(), generator_opt_.state(), critic_opt_.state()};
}

void Trainer::restore(const TrainState& state) {
    coarse_opt_.restore(state.coarse);
    generator_opt_.restore(state.generator);
    critic_opt_.restore(state.critic);
    step_ = state.step;
    rng_ = state.rng;
}

}  // namespace tmad
