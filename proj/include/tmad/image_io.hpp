#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "tmad/image.hpp"

namespace tmad {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Bytes = std::vector<std::uint8_t>;

/// 8-bit <-> [-1, 1]: v / 127.5 - 1, inverted with rounding. Lossless on 8-bit data.
double from_byte(std::uint8_t v);
std::uint8_t to_byte(double v);

/// Any format OpenCV decodes; converted to 8-bit RGB.
Image decode_image(std::span<const std::uint8_t> bytes);
/// Single-channel (or RGB, converted to gray) 8-bit; value >= 128 is a hole.
Mask decode_mask(std::span<const std::uint8_t> bytes);
Bytes encode_png(const Image& image);
/// 255 = hole, 0 = valid.
Bytes encode_mask_png(const Mask& mask);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

Image read_image(const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);
void write_mask(const std::filesystem::path& path, const Mask& mask);

/// Centre-crops to a square and resizes to size x size (dataset loading only).
Image load_square(const std::filesystem::path& path, int size);

}  // namespace tmad
