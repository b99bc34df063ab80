#pragma once

#include <filesystem>
#include <stdexcept>

#include "cleansplat/image.hpp"

namespace cleansplat {

class PngError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit PNG. Gray(+alpha) loads as 1 channel, RGB(A) as 3; alpha is dropped.
Image read_png(const std::filesystem::path& path);
/// Writes 1- or 3-channel images, rounding v*255 after clamping to [0,1].
void write_png(const std::filesystem::path& path, const Image& image);

/// Masks are 1-channel 0/255 PNGs; any value >= 128 reads as set.
BinaryMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);

/// Rounds every value to the nearest multiple of 1/255, as a PNG round trip would.
Image quantize8(const Image& image);

}  // namespace cleansplat
