#include "tmad/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "tmad/image_io.hpp"

namespace tmad {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kRange = 255.0;

double to_255(double v) { return (v + 1.0) * 127.5; }

void check_pair(const Image& a, const Image& b, const Mask* region) {
    if (a.height() != b.height() || a.width() != b.width()) throw ShapeError("metric inputs differ in size");
    if (region) require_same_size(a, *region);
}

std::vector<double> gaussian_taps() {
    std::vector<double> taps(kWindow);
    double total = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        total += taps[static_cast<std::size_t>(i)];
    }
    for (auto& t : taps) t /= total;
    return taps;
}

/// Separable valid-mode filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w, const std::vector<double>& taps) {
    const int oh = h - kWindow + 1;
    const int ow = w - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int t = 0; t < kWindow; ++t) s += taps[static_cast<std::size_t>(t)] * plane[static_cast<std::size_t>(y) * w + x + t];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int t = 0; t < kWindow; ++t) s += taps[static_cast<std::size_t>(t)] * rows[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

}  // namespace

double metric_l1(const Image& a, const Image& b, const Mask* region) {
    check_pair(a, b, region);
    double total = 0.0, count = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) {
                if (region && !region->hole(y, x)) continue;
                total += std::abs(a.at(c, y, x) - b.at(c, y, x));
                count += 1.0;
            }
    // [-1, 1] differences are twice the [0, 1] differences.
    return count > 0 ? total / count / 2.0 * 100.0 : 0.0;
}

double metric_psnr(const Image& a, const Image& b, const Mask* region) {
    check_pair(a, b, region);
    double total = 0.0, count = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) {
                if (region && !region->hole(y, x)) continue;
                const double d = to_255(a.at(c, y, x)) - to_255(b.at(c, y, x));
                total += d * d;
                count += 1.0;
            }
    if (count == 0 || total == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(kRange * kRange / (total / count)));
}

double metric_ssim(const Image& a, const Image& b, const Mask* region) {
    check_pair(a, b, region);
    const int h = a.height();
    const int w = a.width();
    if (h < kWindow || w < kWindow) {
        throw std::invalid_argument("SSIM needs images of at least " + std::to_string(kWindow) + "x" + std::to_string(kWindow));
    }
    const double c1 = (0.01 * kRange) * (0.01 * kRange);
    const double c2 = (0.03 * kRange) * (0.03 * kRange);
    const auto taps = gaussian_taps();
    const int oh = h - kWindow + 1;
    const int ow = w - kWindow + 1;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    double total = 0.0, count = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> pa(plane), pb(plane), aa(plane), bb(plane), ab(plane);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                pa[i] = to_255(a.at(c, y, x));
                pb[i] = to_255(b.at(c, y, x));
                aa[i] = pa[i] * pa[i];
                bb[i] = pb[i] * pb[i];
                ab[i] = pa[i] * pb[i];
            }
        const auto ma = filter_valid(pa, h, w, taps);
        const auto mb = filter_valid(pb, h, w, taps);
        const auto saa = filter_valid(aa, h, w, taps);
        const auto sbb = filter_valid(bb, h, w, taps);
        const auto sab = filter_valid(ab, h, w, taps);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                if (region && !region->hole(y + kWindow / 2, x + kWindow / 2)) continue;
                const std::size_t i = static_cast<std::size_t>(y) * ow + x;
                const double va = saa[i] - ma[i] * ma[i];
                const double vb = sbb[i] - mb[i] * mb[i];
                const double cov = sab[i] - ma[i] * mb[i];
                total += ((2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2)) /
                         ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
                count += 1.0;
            }
    }
    if (count == 0) throw std::invalid_argument("no SSIM window is centred inside the region");
    return total / count;
}

double metric_tv(const Image& image) {
    double dx = 0.0, dy = 0.0;
    double nx = 0.0, ny = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x) {
                if (x + 1 < image.width()) {
                    dx += std::abs(image.at(c, y, x + 1) - image.at(c, y, x));
                    nx += 1.0;
                }
                if (y + 1 < image.height()) {
                    dy += std::abs(image.at(c, y + 1, x) - image.at(c, y, x));
                    ny += 1.0;
                }
            }
    const double tv = (nx > 0 ? dx / nx : 0.0) + (ny > 0 ? dy / ny : 0.0);
    return tv / 2.0 * 100.0;
}

ImageMetrics compute_metrics(const std::string& name, const Image& result, const Image& truth, const Mask* mask) {
    ImageMetrics m;
    m.name = name;
    m.l1 = metric_l1(result, truth);
    m.psnr = metric_psnr(result, truth);
    m.ssim = metric_ssim(result, truth);
    m.tv = metric_tv(result);
    if (mask && !mask->empty()) {
        m.hole_l1 = metric_l1(result, truth, mask);
        m.hole_psnr = metric_psnr(result, truth, mask);
        try {
            m.hole_ssim = metric_ssim(result, truth, mask);
        } catch (const std::invalid_argument&) {
            // Hole lies entirely within the border band where no window is centred.
        }
    }
    return m;
}

MetricReport aggregate(std::vector<ImageMetrics> images, nlohmann::json config) {
    std::sort(images.begin(), images.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    MetricReport r;
    r.config = std::move(config);
    r.mean.name = "mean";
    const double n = static_cast<double>(images.size());
    auto mean_opt = [&](auto field) -> std::optional<double> {
        double total = 0.0;
        int count = 0;
        for (const auto& m : images)
            if ((m.*field).has_value()) {
                total += *(m.*field);
                ++count;
            }
        return count > 0 ? std::optional<double>(total / count) : std::nullopt;
    };
    if (n > 0) {
        for (const auto& m : images) {
            r.mean.l1 += m.l1 / n;
            r.mean.psnr += m.psnr / n;
            r.mean.ssim += m.ssim / n;
            r.mean.tv += m.tv / n;
        }
        r.mean.hole_l1 = mean_opt(&ImageMetrics::hole_l1);
        r.mean.hole_psnr = mean_opt(&ImageMetrics::hole_psnr);
        r.mean.hole_ssim = mean_opt(&ImageMetrics::hole_ssim);
    }
    r.images = std::move(images);
    return r;
}

namespace {

nlohmann::json metrics_json(const ImageMetrics& m) {
    nlohmann::json j = {{"name", m.name}, {"l1", m.l1}, {"psnr", m.psnr}, {"ssim", m.ssim}, {"tv", m.tv}};
    if (m.hole_l1) j["hole_l1"] = *m.hole_l1;
    if (m.hole_psnr) j["hole_psnr"] = *m.hole_psnr;
    if (m.hole_ssim) j["hole_ssim"] = *m.hole_ssim;
    return j;
}

std::string cell(const std::optional<double>& v, int precision) {
    if (!v) return "-";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, *v);
    return buf;
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j;
    j["count"] = images.size();
    j["mean"] = metrics_json(mean);
    j["images"] = nlohmann::json::array();
    for (const auto& m : images) j["images"].push_back(metrics_json(m));
    j["config"] = config;
    return j;
}

std::string MetricReport::table() const {
    const bool hole = mean.hole_l1.has_value();
    std::vector<std::string> header{"image", "l1", "PSNR", "SSIM", "TV"};
    if (hole) header.insert(header.end(), {"hole l1", "hole PSNR", "hole SSIM"});
    std::vector<std::vector<std::string>> rows{header};
    auto row = [&](const ImageMetrics& m) {
        std::vector<std::string> r{m.name, cell(m.l1, 3), cell(m.psnr, 3), cell(m.ssim, 4), cell(m.tv, 3)};
        if (hole) r.insert(r.end(), {cell(m.hole_l1, 3), cell(m.hole_psnr, 3), cell(m.hole_ssim, 4)});
        rows.push_back(std::move(r));
    };
    for (const auto& m : images) row(m);
    row(mean);
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    std::ostringstream out;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (k + 1 == rows.size()) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            out << std::string(total - 2, '-') << '\n';
        }
        for (std::size_t i = 0; i < rows[k].size(); ++i) {
            const auto& s = rows[k][i];
            if (i == 0) {
                out << s << std::string(width[i] - s.size(), ' ');
            } else {
                out << "  " << std::string(width[i] - s.size(), ' ') << s;
            }
        }
        out << '\n';
    }
    return out.str();
}

namespace {

std::map<std::string, std::filesystem::path> images_by_stem(const std::filesystem::path& dir) {
    static const std::set<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"};
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("directory not found: " + dir.string());
    std::map<std::string, std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && exts.count(ext)) out[e.path().stem().string()] = e.path();
    }
    return out;
}

}  // namespace

MetricReport evaluate_dirs(const std::filesystem::path& truth_dir, const std::filesystem::path& result_dir,
                           const std::filesystem::path& mask_dir) {
    const auto truth = images_by_stem(truth_dir);
    const auto results = images_by_stem(result_dir);
    const auto masks = mask_dir.empty() ? std::map<std::string, std::filesystem::path>{} : images_by_stem(mask_dir);
    std::vector<std::string> missing;
    for (const auto& [stem, path] : truth) {
        if (!results.count(stem)) missing.push_back(result_dir.string() + "/" + stem + ".*");
        if (!mask_dir.empty() && !masks.count(stem)) missing.push_back(mask_dir.string() + "/" + stem + ".*");
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw std::runtime_error("missing counterpart files: " + list);
    }
    std::vector<ImageMetrics> metrics;
    for (const auto& [stem, path] : truth) {
        const Image gt = read_image(path);
        const Image res = read_image(results.at(stem));
        if (mask_dir.empty()) {
            metrics.push_back(compute_metrics(stem, res, gt));
        } else {
            const Mask m = read_mask(masks.at(stem));
            metrics.push_back(compute_metrics(stem, res, gt, &m));
        }
    }
    return aggregate(std::move(metrics), {{"truth_dir", truth_dir.string()},
                                          {"result_dir", result_dir.string()},
                                          {"mask_dir", mask_dir.string()}});
}

MetricReport evaluate_model(const Model& model, const std::filesystem::path& truth_dir, const MaskSpec& masks) {
    const auto truth = images_by_stem(truth_dir);
    std::vector<ImageMetrics> metrics;
    std::uint64_t index = 0;
    for (const auto& [stem, path] : truth) {
        const Image gt = read_image(path);
        MaskSpec spec = masks;
        spec.seed = masks.seed + index++;
        const Mask m = generate_mask(spec, gt.height(), gt.width());
        const auto result = inpaint(model, apply_mask(gt, m), m);
        metrics.push_back(compute_metrics(stem, result.output, gt, &m));
    }
    return aggregate(std::move(metrics), {{"truth_dir", truth_dir.string()},
                                          {"mask_kind", masks.kind == MaskSpec::Kind::rectangle ? "rectangle" : "freeform"},
                                          {"mask_seed", masks.seed}});
}

}  // namespace tmad
