#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cleansplat {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major raster with interleaved channels. Used for photographs,
/// renders, depth maps, residuals and gradient images alike; only
/// `Image::clamped` enforces the [0,1] photographic range.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0);
  Image(int width, int height, int channels, std::vector<double> data);

  /// Photographic image: values clamped to [0,1], non-finite input rejected.
  static Image clamped(int width, int height, int channels, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

struct Pixel {
  int x = 0;
  int y = 0;
  auto operator<=>(const Pixel&) const = default;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return bits_.size(); }

  bool test(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool value = true) {
    bits_[static_cast<std::size_t>(y) * width_ + x] = value ? 1 : 0;
  }
  bool test(std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool value = true) { bits_[i] = value ? 1 : 0; }

  std::size_t count() const;
  bool none() const { return count() == 0; }
  bool same_shape(const BinaryMask& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }
  bool subset_of(const BinaryMask& other) const;

  BinaryMask operator|(const BinaryMask& other) const;
  BinaryMask operator&(const BinaryMask& other) const;
  BinaryMask operator~() const;
  BinaryMask& operator|=(const BinaryMask& other);

  std::span<const std::uint8_t> bits() const { return bits_; }
  bool operator==(const BinaryMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

class ProbabilityMask {
 public:
  ProbabilityMask() = default;
  ProbabilityMask(int width, int height, double fill = 0.0);
  /// Values must already lie in [0,1].
  ProbabilityMask(int width, int height, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return values_.size(); }

  double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  double& at(int x, int y) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool operator==(const ProbabilityMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

/// Maximal 8-connected region of set pixels.
struct ComponentRegion {
  std::vector<Pixel> pixels;  // raster order
  int min_x = 0;
  int min_y = 0;
  int max_x = 0;
  int max_y = 0;

  std::size_t size() const { return pixels.size(); }
  BinaryMask to_mask(int width, int height) const;
};

/// Grows the mask by the 3x3 (8-connected) structuring element per iteration.
BinaryMask dilate(const BinaryMask& mask, int iterations);

/// Components in raster order of their first (top-most, then left-most) pixel.
std::vector<ComponentRegion> connected_components(const BinaryMask& mask);

/// Bilinear resampling with half-pixel-center alignment and edge clamping.
ProbabilityMask upsample_bilinear(const ProbabilityMask& src, int width, int height);

/// Transpose of `upsample_bilinear`: scatters an output-resolution gradient
/// back onto the source grid.
std::vector<double> upsample_bilinear_adjoint(std::span<const double> grad_out, int out_width,
                                              int out_height, int src_width, int src_height);

inline constexpr double kPsnrCap = 99.0;

/// 10*log10(1/MSE) over all channels, capped at 99 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b, const BinaryMask& region);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), zero padding at the
/// borders and C1=0.01^2, C2=0.03^2.
double ssim(const Image& a, const Image& b);
double ssim(const Image& a, const Image& b, const BinaryMask& region);

struct SsimGradient {
  double value = 0.0;
  Image grad;  // d mean-SSIM / d b
};

/// Mean SSIM(a, b) and its gradient with respect to `b`.
SsimGradient ssim_with_gradient(const Image& a, const Image& b);

/// |a∩b| / |a∪b|; 1 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

/// Per-pixel mean over channels of |a - b|.
Image abs_residual(const Image& a, const Image& b);

}  // namespace cleansplat
