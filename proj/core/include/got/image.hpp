#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "got/tensor.hpp"

namespace got {

/// RGB image as an [H, W, 3] tensor of intensities in [0, 1].
using Image = Tensor<float>;

class ImageDecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decodes PNG or JPEG (sniffed from the magic bytes). Grey and alpha
/// channels are converted to RGB.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);

/// Bilinear resize (half-pixel centres).
Image resize_bilinear(const Image& image, int out_h, int out_w);

/// Scale factor that brings the shorter side to `shorter` while capping the
/// longer side at `longer_max`. Returns 1 when shorter <= 0 (no resizing).
double resize_scale(int height, int width, int shorter, int longer_max);

}  // namespace got
