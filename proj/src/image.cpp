#include "cleansplat/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

namespace cleansplat {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace

Image::Image(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
  require(width >= 0 && height >= 0 && channels >= 1, "invalid image dimensions");
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Image::Image(int width, int height, int channels, std::vector<double> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  require(width >= 0 && height >= 0 && channels >= 1, "invalid image dimensions");
  require(data_.size() == static_cast<std::size_t>(width) * height * channels,
          "image data length does not match width*height*channels");
}

Image Image::clamped(int width, int height, int channels, std::vector<double> data) {
  for (double& v : data) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite pixel value");
    v = std::clamp(v, 0.0, 1.0);
  }
  return Image(width, height, channels, std::move(data));
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
  require(width >= 0 && height >= 0, "invalid mask dimensions");
  bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

bool BinaryMask::subset_of(const BinaryMask& other) const {
  require(same_shape(other), "mask dimension mismatch");
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i] && !other.bits_[i]) return false;
  }
  return true;
}

BinaryMask BinaryMask::operator|(const BinaryMask& other) const {
  BinaryMask out = *this;
  out |= other;
  return out;
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& other) {
  require(same_shape(other), "mask dimension mismatch");
  for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] = bits_[i] | other.bits_[i];
  return *this;
}

BinaryMask BinaryMask::operator&(const BinaryMask& other) const {
  require(same_shape(other), "mask dimension mismatch");
  BinaryMask out = *this;
  for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] & other.bits_[i];
  return out;
}

BinaryMask BinaryMask::operator~() const {
  BinaryMask out = *this;
  for (auto& b : out.bits_) b = b ? 0 : 1;
  return out;
}

ProbabilityMask::ProbabilityMask(int width, int height, double fill) : width_(width), height_(height) {
  require(width >= 0 && height >= 0, "invalid mask dimensions");
  values_.assign(static_cast<std::size_t>(width) * height, fill);
}

ProbabilityMask::ProbabilityMask(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
  require(values_.size() == static_cast<std::size_t>(width) * height,
          "probability mask length does not match width*height");
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("probability outside [0,1]");
  }
}

BinaryMask ComponentRegion::to_mask(int width, int height) const {
  BinaryMask mask(width, height);
  for (const Pixel& p : pixels) mask.set(p.x, p.y);
  return mask;
}

BinaryMask dilate(const BinaryMask& mask, int iterations) {
  if (iterations < 0) throw std::invalid_argument("dilation iterations must be >= 0");
  BinaryMask current = mask;
  const int w = mask.width();
  const int h = mask.height();
  for (int it = 0; it < iterations; ++it) {
    BinaryMask next(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!current.test(x, y)) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx;
            const int ny = y + dy;
            if (nx >= 0 && ny >= 0 && nx < w && ny < h) next.set(nx, ny);
          }
        }
      }
    }
    if (next == current) break;
    current = std::move(next);
  }
  return current;
}

std::vector<ComponentRegion> connected_components(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  std::vector<std::uint8_t> seen(mask.pixel_count(), 0);
  std::vector<ComponentRegion> out;
  std::deque<Pixel> queue;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (!mask.test(i) || seen[i]) continue;
      ComponentRegion region;
      region.min_x = region.max_x = x;
      region.min_y = region.max_y = y;
      seen[i] = 1;
      queue.push_back({x, y});
      while (!queue.empty()) {
        const Pixel p = queue.front();
        queue.pop_front();
        region.pixels.push_back(p);
        region.min_x = std::min(region.min_x, p.x);
        region.max_x = std::max(region.max_x, p.x);
        region.min_y = std::min(region.min_y, p.y);
        region.max_y = std::max(region.max_y, p.y);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = p.x + dx;
            const int ny = p.y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
            if (mask.test(j) && !seen[j]) {
              seen[j] = 1;
              queue.push_back({nx, ny});
            }
          }
        }
      }
      std::sort(region.pixels.begin(), region.pixels.end(),
                [](const Pixel& a, const Pixel& b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
      out.push_back(std::move(region));
    }
  }
  return out;
}

namespace {

struct Tap {
  int i0;
  int i1;
  double t;
};

// Source coordinate for output sample `o` under half-pixel-center alignment.
Tap bilinear_tap(int o, int out_size, int src_size) {
  const double scale = static_cast<double>(src_size) / out_size;
  double u = (o + 0.5) * scale - 0.5;
  u = std::clamp(u, 0.0, static_cast<double>(src_size - 1));
  const int i0 = static_cast<int>(std::floor(u));
  const int i1 = std::min(i0 + 1, src_size - 1);
  return {i0, i1, u - i0};
}

}  // namespace

ProbabilityMask upsample_bilinear(const ProbabilityMask& src, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("upsample target must be >= 1x1");
  if (src.width() < 1 || src.height() < 1) throw std::invalid_argument("empty source grid");
  std::vector<Tap> xs(width);
  std::vector<Tap> ys(height);
  for (int x = 0; x < width; ++x) xs[x] = bilinear_tap(x, width, src.width());
  for (int y = 0; y < height; ++y) ys[y] = bilinear_tap(y, height, src.height());
  std::vector<double> out(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < width; ++x) {
      const Tap& tx = xs[x];
      const double top = src.at(tx.i0, ty.i0) * (1.0 - tx.t) + src.at(tx.i1, ty.i0) * tx.t;
      const double bottom = src.at(tx.i0, ty.i1) * (1.0 - tx.t) + src.at(tx.i1, ty.i1) * tx.t;
      out[static_cast<std::size_t>(y) * width + x] =
          std::clamp(top * (1.0 - ty.t) + bottom * ty.t, 0.0, 1.0);
    }
  }
  return ProbabilityMask(width, height, std::move(out));
}

std::vector<double> upsample_bilinear_adjoint(std::span<const double> grad_out, int out_width,
                                              int out_height, int src_width, int src_height) {
  require(grad_out.size() == static_cast<std::size_t>(out_width) * out_height,
          "gradient size does not match output dimensions");
  std::vector<double> grad_src(static_cast<std::size_t>(src_width) * src_height, 0.0);
  auto cell = [&](int x, int y) -> double& {
    return grad_src[static_cast<std::size_t>(y) * src_width + x];
  };
  for (int y = 0; y < out_height; ++y) {
    const Tap ty = bilinear_tap(y, out_height, src_height);
    for (int x = 0; x < out_width; ++x) {
      const Tap tx = bilinear_tap(x, out_width, src_width);
      const double g = grad_out[static_cast<std::size_t>(y) * out_width + x];
      cell(tx.i0, ty.i0) += g * (1.0 - tx.t) * (1.0 - ty.t);
      cell(tx.i1, ty.i0) += g * tx.t * (1.0 - ty.t);
      cell(tx.i0, ty.i1) += g * (1.0 - tx.t) * ty.t;
      cell(tx.i1, ty.i1) += g * tx.t * ty.t;
    }
  }
  return grad_src;
}

namespace {

double mse(const Image& a, const Image& b, const BinaryMask* region) {
  if (!a.same_shape(b)) throw DimensionError("image dimension mismatch");
  if (region && (region->width() != a.width() || region->height() != a.height())) {
    throw DimensionError("region mask dimension mismatch");
  }
  const int c = a.channels();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    if (region && !region->test(p)) continue;
    for (int k = 0; k < c; ++k) {
      const double d = a.data()[p * c + k] - b.data()[p * c + k];
      sum += d * d;
    }
    n += c;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double psnr_from_mse(double m) {
  if (m < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, 2 * kSsimRadius + 1> ssim_kernel() {
  std::array<double, 2 * kSsimRadius + 1> k{};
  double sum = 0.0;
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
    k[i + kSsimRadius] = std::exp(-(i * i) / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i + kSsimRadius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian filter of a single-channel plane, zero padded, same size.
std::vector<double> gaussian_filter(const std::vector<double>& plane, int w, int h) {
  static const auto kernel = ssim_kernel();
  std::vector<double> tmp(plane.size(), 0.0);
  std::vector<double> out(plane.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -kSsimRadius; k <= kSsimRadius; ++k) {
        const int xx = x + k;
        if (xx < 0 || xx >= w) continue;
        acc += kernel[k + kSsimRadius] * plane[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -kSsimRadius; k <= kSsimRadius; ++k) {
        const int yy = y + k;
        if (yy < 0 || yy >= h) continue;
        acc += kernel[k + kSsimRadius] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

std::vector<double> channel_plane(const Image& img, int c) {
  std::vector<double> plane(img.pixel_count());
  for (std::size_t p = 0; p < plane.size(); ++p) plane[p] = img.data()[p * img.channels() + c];
  return plane;
}

struct SsimStats {
  std::vector<double> mu_a, mu_b, e_aa, e_bb, e_ab;
};

SsimStats ssim_stats(const std::vector<double>& a, const std::vector<double>& b, int w, int h) {
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  return {gaussian_filter(a, w, h), gaussian_filter(b, w, h), gaussian_filter(aa, w, h),
          gaussian_filter(bb, w, h), gaussian_filter(ab, w, h)};
}

double ssim_impl(const Image& a, const Image& b, const BinaryMask* region) {
  if (!a.same_shape(b)) throw DimensionError("image dimension mismatch");
  if (region && (region->width() != a.width() || region->height() != a.height())) {
    throw DimensionError("region mask dimension mismatch");
  }
  const int w = a.width();
  const int h = a.height();
  double sum = 0.0;
  std::size_t n = 0;
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = channel_plane(a, c);
    const auto pb = channel_plane(b, c);
    const SsimStats s = ssim_stats(pa, pb, w, h);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (region && !region->test(i)) continue;
      const double ma = s.mu_a[i];
      const double mb = s.mu_b[i];
      const double va = s.e_aa[i] - ma * ma;
      const double vb = s.e_bb[i] - mb * mb;
      const double cov = s.e_ab[i] - ma * mb;
      sum += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
             ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
      ++n;
    }
  }
  return n == 0 ? 1.0 : sum / static_cast<double>(n);
}

}  // namespace

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b, nullptr)); }

double psnr(const Image& a, const Image& b, const BinaryMask& region) {
  return psnr_from_mse(mse(a, b, &region));
}

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, nullptr); }

double ssim(const Image& a, const Image& b, const BinaryMask& region) {
  return ssim_impl(a, b, &region);
}

SsimGradient ssim_with_gradient(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("image dimension mismatch");
  const int w = a.width();
  const int h = a.height();
  const int channels = a.channels();
  const double norm = 1.0 / static_cast<double>(a.pixel_count() * channels);
  SsimGradient out{0.0, Image(w, h, channels)};
  for (int c = 0; c < channels; ++c) {
    const auto pa = channel_plane(a, c);
    const auto pb = channel_plane(b, c);
    const SsimStats s = ssim_stats(pa, pb, w, h);
    std::vector<double> g_mu(pa.size()), g_ebb(pa.size()), g_eab(pa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      const double ma = s.mu_a[i];
      const double mb = s.mu_b[i];
      const double a1 = 2.0 * ma * mb + kC1;
      const double a2 = 2.0 * (s.e_ab[i] - ma * mb) + kC2;
      const double b1 = ma * ma + mb * mb + kC1;
      const double b2 = (s.e_aa[i] - ma * ma) + (s.e_bb[i] - mb * mb) + kC2;
      const double value = (a1 * a2) / (b1 * b2);
      out.value += value * norm;
      g_mu[i] = norm * value * (2.0 * ma / a1 - 2.0 * ma / a2 - 2.0 * mb / b1 + 2.0 * mb / b2);
      g_eab[i] = norm * value * 2.0 / a2;
      g_ebb[i] = -norm * value / b2;
    }
    // The zero-padded symmetric filter is self-adjoint.
    const auto f_mu = gaussian_filter(g_mu, w, h);
    const auto f_ebb = gaussian_filter(g_ebb, w, h);
    const auto f_eab = gaussian_filter(g_eab, w, h);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      out.grad.data()[i * channels + c] = f_mu[i] + 2.0 * pb[i] * f_ebb[i] + pa[i] * f_eab[i];
    }
  }
  return out;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw DimensionError("mask dimension mismatch");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    const bool x = a.test(i);
    const bool y = b.test(i);
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Image abs_residual(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("image dimension mismatch");
  const int c = a.channels();
  Image out(a.width(), a.height(), 1);
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += std::abs(a.data()[p * c + k] - b.data()[p * c + k]);
    out.data()[p] = s / c;
  }
  return out;
}

}  // namespace cleansplat
