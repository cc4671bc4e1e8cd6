#include "tmad/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace tmad {

namespace {

cv::Mat decode_any(std::span<const std::uint8_t> bytes, int flags) {
    if (bytes.empty()) throw ImageIoError("empty image payload");
    cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat m = cv::imdecode(buf, flags);
    if (m.empty()) throw ImageIoError("could not decode image payload");
    if (m.depth() != CV_8U) {
        cv::Mat converted;
        m.convertTo(converted, CV_8U, m.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
        m = converted;
    }
    return m;
}

Image from_bgr(const cv::Mat& bgr) {
    Image img(bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            img.at(0, y, x) = from_byte(row[x][2]);
            img.at(1, y, x) = from_byte(row[x][1]);
            img.at(2, y, x) = from_byte(row[x][0]);
        }
    }
    return img;
}

cv::Mat to_bgr(const Image& image) {
    cv::Mat m(image.height(), image.width(), CV_8UC3);
    for (int y = 0; y < image.height(); ++y) {
        auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.width(); ++x) {
            row[x][2] = to_byte(image.at(0, y, x));
            row[x][1] = to_byte(image.at(1, y, x));
            row[x][0] = to_byte(image.at(2, y, x));
        }
    }
    return m;
}

Bytes encode(const cv::Mat& m) {
    std::vector<uchar> out;
    if (!cv::imencode(".png", m, out)) throw ImageIoError("PNG encoding failed");
    return Bytes(out.begin(), out.end());
}

cv::Mat to_bgr3(const cv::Mat& m) {
    cv::Mat out;
    switch (m.channels()) {
        case 1: cv::cvtColor(m, out, cv::COLOR_GRAY2BGR); return out;
        case 4: cv::cvtColor(m, out, cv::COLOR_BGRA2BGR); return out;
        case 3: return m;
        default: throw ImageIoError("unsupported channel count " + std::to_string(m.channels()));
    }
}

}  // namespace

double from_byte(std::uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }

std::uint8_t to_byte(double v) {
    const double s = std::round((v + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

Image decode_image(std::span<const std::uint8_t> bytes) {
    return from_bgr(to_bgr3(decode_any(bytes, cv::IMREAD_UNCHANGED)));
}

Mask decode_mask(std::span<const std::uint8_t> bytes) {
    cv::Mat m = decode_any(bytes, cv::IMREAD_UNCHANGED);
    if (m.channels() == 3) {
        cv::cvtColor(m, m, cv::COLOR_BGR2GRAY);
    } else if (m.channels() == 4) {
        cv::cvtColor(m, m, cv::COLOR_BGRA2GRAY);
    }
    Mask mask(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < m.cols; ++x) mask.set(y, x, row[x] >= 128);
    }
    return mask;
}

Bytes encode_png(const Image& image) { return encode(to_bgr(image)); }

Bytes encode_mask_png(const Mask& mask) {
    cv::Mat m(mask.height(), mask.width(), CV_8UC1);
    for (int y = 0; y < mask.height(); ++y) {
        auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.width(); ++x) row[x] = mask.hole(y, x) ? 255 : 0;
    }
    return encode(m);
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageIoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageIoError("write failed for " + path.string());
}

Image read_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }
Mask read_mask(const std::filesystem::path& path) { return decode_mask(read_file(path)); }
void write_image(const std::filesystem::path& path, const Image& image) { write_file(path, encode_png(image)); }
void write_mask(const std::filesystem::path& path, const Mask& mask) { write_file(path, encode_mask_png(mask)); }

Image load_square(const std::filesystem::path& path, int size) {
    const auto bytes = read_file(path);
    cv::Mat m = to_bgr3(decode_any(bytes, cv::IMREAD_UNCHANGED));
    const int side = std::min(m.rows, m.cols);
    cv::Mat square = m(cv::Rect((m.cols - side) / 2, (m.rows - side) / 2, side, side));
    if (side != size) {
        cv::Mat resized;
        cv::resize(square, resized, cv::Size(size, size), 0, 0, side > size ? cv::INTER_AREA : cv::INTER_LINEAR);
        square = resized;
    }
    return from_bgr(square);
}

}  // namespace tmad
