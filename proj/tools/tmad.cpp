#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include "tmad/checkpoint.hpp"
#include "tmad/config.hpp"
#include "tmad/evaluation.hpp"
#include "tmad/image_io.hpp"
#include "tmad/service.hpp"
#include "tmad/training.hpp"

namespace {

using namespace tmad;

struct Common {
    std::string config;
    std::string checkpoint;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
};

RunConfig load_config(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig::from_json(nlohmann::json::object()) : RunConfig::load(c.config);
    if (!c.checkpoint.empty()) cfg.checkpoint = c.checkpoint;
    if (c.seed) {
        cfg.train.seed = *c.seed;
        cfg.train.mask.seed = *c.seed;
    }
    if (c.deterministic) cfg.deterministic = true;
    if (cfg.deterministic) set_single_threaded_blas();
    return cfg;
}

std::unique_ptr<Model> model_from(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw std::runtime_error("no checkpoint given (--checkpoint or config.checkpoint)");
    return load_model(cfg.checkpoint);
}

nlohmann::json retrieval_json(const InpaintResult& r) {
    auto out = nlohmann::json::array();
    for (const auto& rec : r.retrieval) {
        auto sources = nlohmann::json::array();
        for (const auto& s : rec.sources) sources.push_back({s.row, s.col});
        out.push_back({{"cell", {rec.cell.row, rec.cell.col}},
                       {"indices", rec.indices},
                       {"sources", sources},
                       {"scores", rec.scores}});
    }
    return out;
}

struct ImageJob {
    std::string image;
    std::string mask;
    std::string out;
    std::string debug_json;
};

int run_image_job(const Common& common, const ImageJob& job, bool external_coarse) {
    const RunConfig cfg = load_config(common);
    const auto model = model_from(cfg);
    const Bytes input = read_file(job.image);
    const Image image = decode_image(input);
    const Mask mask = read_mask(job.mask);
    require_same_size(image, mask);
    if (mask.empty()) {
        write_file(job.out, input);
        if (!job.debug_json.empty()) std::ofstream(job.debug_json) << nlohmann::json::array().dump(2) << '\n';
        return 0;
    }
    const auto result = external_coarse ? postprocess(*model, image, mask) : inpaint(*model, image, mask);
    write_image(job.out, result.output);
    if (!job.debug_json.empty()) {
        std::ofstream out(job.debug_json);
        if (!out) throw std::runtime_error("cannot write " + job.debug_json);
        out << retrieval_json(result).dump(2) << '\n';
    }
    return 0;
}

struct TrainArgs {
    std::string resume;
    std::string fine_tune;
};

int run_train(const Common& common, const TrainArgs& args) {
    RunConfig cfg = load_config(common);
    if (cfg.train_dir.empty()) throw std::runtime_error("data.train_dir is required for training");
    if (cfg.checkpoint.empty()) throw std::runtime_error("checkpoint path is required for training");
    if (!args.fine_tune.empty()) cfg.train.freeze_coarse = true;

    const Dataset data = Dataset::load(cfg.train_dir, cfg.train.image_size, "train");
    if (data.empty()) throw std::runtime_error("no training images in " + cfg.train_dir);
    std::cerr << "loaded " << data.images.size() << " training images\n";

    Model model(cfg.model, cfg.train.seed);
    std::optional<TrainState> resumed;
    if (!args.resume.empty()) {
        resumed = load_checkpoint(args.resume, model);
        if (!resumed) throw std::runtime_error(args.resume + " holds no training state");
    } else if (!args.fine_tune.empty()) {
        load_checkpoint(args.fine_tune, model);
    }

    Trainer trainer(model, cfg.train, cfg.losses);
    if (resumed) trainer.restore(*resumed);
    std::ofstream log_file;
    if (!cfg.log.empty()) {
        log_file.open(cfg.log, std::ios::app);
        if (!log_file) throw std::runtime_error("cannot open log " + cfg.log);
        trainer.set_log(&log_file);
    } else {
        trainer.set_log(&std::cout);
    }
    if (!cfg.diagnostics_dir.empty()) trainer.set_diagnostic_dir(cfg.diagnostics_dir);

    // Pretraining advances the step counter too; joint steps follow it.
    const std::int64_t batches_per_epoch =
        (static_cast<std::int64_t>(data.images.size()) + cfg.train.images_per_batch - 1) / cfg.train.images_per_batch;
    const std::int64_t pretrain_steps = cfg.train.freeze_coarse ? 0 : cfg.train.pretrain_epochs * batches_per_epoch;
    if (!resumed && pretrain_steps > 0) trainer.pretrain_coarse(data);
    const std::int64_t end = pretrain_steps + cfg.joint_steps;
    while (trainer.step() < end) {
        trainer.joint_step(trainer.sample_batch(data));
        if (cfg.checkpoint_every > 0 && trainer.step() % cfg.checkpoint_every == 0) {
            const auto state = trainer.state();
            save_checkpoint(cfg.checkpoint, model, &state);
        }
    }
    const auto state = trainer.state();
    save_checkpoint(cfg.checkpoint, model, &state);
    std::cerr << "saved " << cfg.checkpoint << " at step " << trainer.step() << '\n';
    return 0;
}

struct EvalArgs {
    std::string truth;
    std::string results;
    std::string masks;
    std::string json_out;
};

int run_eval(const Common& common, const EvalArgs& args) {
    const RunConfig cfg = load_config(common);
    const std::string truth = args.truth.empty() ? cfg.val_dir : args.truth;
    if (truth.empty()) throw std::runtime_error("ground-truth directory required (--truth or data.val_dir)");
    MetricReport report;
    if (!args.results.empty()) {
        report = evaluate_dirs(truth, args.results, args.masks.empty() ? cfg.mask_dir : args.masks);
    } else {
        const auto model = model_from(cfg);
        report = evaluate_model(*model, truth, cfg.train.mask);
    }
    std::cout << report.table();
    if (!args.json_out.empty()) {
        std::ofstream out(args.json_out);
        if (!out) throw std::runtime_error("cannot write " + args.json_out);
        out << report.to_json().dump(2) << '\n';
    }
    return 0;
}

InferenceService* g_service = nullptr;

int run_serve(const Common& common, std::optional<int> port) {
    RunConfig cfg = load_config(common);
    if (port) cfg.service.port = *port;
    std::shared_ptr<const Model> model = model_from(cfg);
    InferenceService service(model, cfg.service);
    const int bound = service.bind();
    std::cerr << "serving on " << cfg.service.host << ":" << bound << '\n';
    g_service = &service;
    std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_service) g_service->stop();
    });
    service.serve();
    g_service = nullptr;
    return 0;
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--checkpoint", c.checkpoint, "checkpoint path (overrides the config)");
    cmd->add_option("--seed", c.seed, "random seed (training and mask generation)");
    cmd->add_flag("--deterministic", c.deterministic, "single-threaded BLAS; outputs are a pure function of inputs");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Texture-memory patch-based image inpainting"};
    app.require_subcommand(1);

    Common common;
    ImageJob job;
    TrainArgs train_args;
    EvalArgs eval_args;
    std::optional<int> port;

    auto* train = app.add_subcommand("train", "pretrain the coarse network, then train jointly");
    add_common(train, common);
    train->add_option("--resume", train_args.resume, "continue from a checkpoint with training state")
        ->check(CLI::ExistingFile);
    train->add_option("--fine-tune", train_args.fine_tune,
                      "start from these weights and train the patch stage only (coarse frozen)")
        ->check(CLI::ExistingFile);
    train->get_option("--resume")->excludes("--fine-tune");

    auto* inpaint_cmd = app.add_subcommand("inpaint", "complete the hole of one image");
    auto* post_cmd = app.add_subcommand("postprocess", "refine an externally inpainted image with the patch stage");
    for (auto* cmd : {inpaint_cmd, post_cmd}) {
        add_common(cmd, common);
        cmd->add_option("--image", job.image, "input image")->required()->check(CLI::ExistingFile);
        cmd->add_option("--mask", job.mask, "mask PNG, 255 = hole")->required()->check(CLI::ExistingFile);
        cmd->add_option("--out", job.out, "output PNG")->required();
        cmd->add_option("--debug-json", job.debug_json, "write retrieval indices per hole cell");
    }

    auto* eval = app.add_subcommand("eval", "L1 / PSNR / SSIM / TV over a directory");
    add_common(eval, common);
    eval->add_option("--truth", eval_args.truth, "ground-truth images (default data.val_dir)");
    eval->add_option("--results", eval_args.results, "inpainted images, paired by file stem; omit to run the model");
    eval->add_option("--masks", eval_args.masks, "hole masks, paired by file stem");
    eval->add_option("--json", eval_args.json_out, "write the report as JSON");

    auto* serve = app.add_subcommand("serve", "HTTP inference service");
    add_common(serve, common);
    serve->add_option("--port", port, "listen port (0 picks a free one)")->check(CLI::Range(0, 65535));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return run_train(common, train_args);
        if (*inpaint_cmd) return run_image_job(common, job, false);
        if (*post_cmd) return run_image_job(common, job, true);
        if (*eval) return run_eval(common, eval_args);
        if (*serve) return run_serve(common, port);
    } catch (const ConfigError& e) {
        std::cerr << "configuration errors:\n";
        for (const auto& msg : e.errors()) std::cerr << "  " << msg << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
