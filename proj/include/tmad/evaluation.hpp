#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmad/image.hpp"
#include "tmad/masks.hpp"
#include "tmad/pipeline.hpp"

namespace tmad {

inline constexpr double kPsnrCap = 99.0;

/// Mean |a - b| on the [0, 1] scale, x100. With `region`, hole pixels only.
double metric_l1(const Image& a, const Image& b, const Mask* region = nullptr);
/// 10 log10(255^2 / MSE) on the continuous 0..255 scale, capped at 99 dB.
double metric_psnr(const Image& a, const Image& b, const Mask* region = nullptr);
/// Gaussian-window SSIM (11 taps, sigma 1.5, K1 0.01, K2 0.03, L 255), valid
/// windows only, channel-averaged. With `region`, only windows centred in the hole.
double metric_ssim(const Image& a, const Image& b, const Mask* region = nullptr);
/// Total variation of the result on the [0, 1] scale, x100.
double metric_tv(const Image& image);

struct ImageMetrics {
    std::string name;
    double l1 = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double tv = 0.0;
    std::optional<double> hole_l1;
    std::optional<double> hole_psnr;
    std::optional<double> hole_ssim;
};

ImageMetrics compute_metrics(const std::string& name, const Image& result, const Image& truth,
                             const Mask* mask = nullptr);

struct MetricReport {
    std::vector<ImageMetrics> images;  // sorted by name
    ImageMetrics mean;
    nlohmann::json config;

    [[nodiscard]] nlohmann::json to_json() const;
    /// Aligned columns: name, l1, PSNR, SSIM, TV (+ hole columns when present).
    [[nodiscard]] std::string table() const;
};

MetricReport aggregate(std::vector<ImageMetrics> images, nlohmann::json config = nlohmann::json::object());

/// Pairs files by stem. `mask_dir` (optional) adds hole metrics.
MetricReport evaluate_dirs(const std::filesystem::path& truth_dir, const std::filesystem::path& result_dir,
                           const std::filesystem::path& mask_dir = {});

/// Inpaints every image of `truth_dir` with masks drawn from `masks` (seed + image index).
MetricReport evaluate_model(const Model& model, const std::filesystem::path& truth_dir, const MaskSpec& masks);

}  // namespace tmad
