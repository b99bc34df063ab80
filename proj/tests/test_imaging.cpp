#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "cleansplat/image.hpp"
#include "cleansplat/png_io.hpp"

using namespace cleansplat;

namespace {

Image random_image(std::mt19937& rng, int w, int h, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> data(static_cast<std::size_t>(w) * h * c);
  for (double& v : data) v = u(rng);
  return Image(w, h, c, std::move(data));
}

BinaryMask random_mask(std::mt19937& rng, int w, int h, double p) {
  std::bernoulli_distribution b(p);
  BinaryMask m(w, h);
  for (std::size_t i = 0; i < m.pixel_count(); ++i) m.set(i, b(rng));
  return m;
}

// Direct 2D-window SSIM, written independently of the separable version.
double reference_ssim(const Image& a, const Image& b) {
  const int w = a.width(), h = a.height(), ch = a.channels();
  double kernel[11][11];
  double ksum = 0.0;
  for (int j = 0; j < 11; ++j) {
    for (int i = 0; i < 11; ++i) {
      const double dx = i - 5, dy = j - 5;
      kernel[j][i] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      ksum += kernel[j][i];
    }
  }
  double total = 0.0;
  for (int c = 0; c < ch; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int j = 0; j < 11; ++j) {
          for (int i = 0; i < 11; ++i) {
            const int xx = x + i - 5, yy = y + j - 5;
            if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
            const double k = kernel[j][i] / ksum;
            const double va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
            ma += k * va;
            mb += k * vb;
            saa += k * va * va;
            sbb += k * vb * vb;
            sab += k * va * vb;
          }
        }
        const double c1 = 1e-4, c2 = 9e-4;
        total += ((2 * ma * mb + c1) * (2 * (sab - ma * mb) + c2)) /
                 ((ma * ma + mb * mb + c1) * ((saa - ma * ma) + (sbb - mb * mb) + c2));
      }
    }
  }
  return total / (static_cast<double>(w) * h * ch);
}

}  // namespace

TEST_CASE("image construction") {
  CHECK_THROWS_AS(Image(2, 2, 3, std::vector<double>(5)), DimensionError);
  const Image c = Image::clamped(2, 1, 1, {-0.5, 1.5});
  CHECK(c.at(0, 0) == 0.0);
  CHECK(c.at(1, 0) == 1.0);
  CHECK_THROWS(Image::clamped(1, 1, 1, {std::nan("")}));
  CHECK_THROWS(ProbabilityMask(1, 1, std::vector<double>{1.2}));
}

TEST_CASE("dilate") {
  BinaryMask m(11, 11);
  m.set(5, 5);
  const BinaryMask d = dilate(m, 1);
  CHECK(d.count() == 9);
  for (int y = 4; y <= 6; ++y)
    for (int x = 4; x <= 6; ++x) CHECK(d.test(x, y));
  CHECK(dilate(m, 0) == m);
  const BinaryMask full(8, 8, true);
  CHECK(dilate(full, 3) == full);
  CHECK_THROWS(dilate(m, -1));
}

TEST_CASE("dilate is monotone and extensive") {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const BinaryMask a = random_mask(rng, 17, 13, 0.05);
    const BinaryMask b = a | random_mask(rng, 17, 13, 0.05);
    for (int n = 0; n < 4; ++n) {
      CHECK(a.subset_of(dilate(a, n)));
      CHECK(dilate(a, n).subset_of(dilate(b, n)));
    }
  }
}

TEST_CASE("connected components") {
  CHECK(connected_components(BinaryMask(5, 5)).empty());
  BinaryMask two(10, 10);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      two.set(x, y);
      two.set(x + 5, y + 5);
    }
  const auto comps = connected_components(two);
  REQUIRE(comps.size() == 2);
  CHECK(comps[0].size() == 4);
  CHECK(comps[1].size() == 4);
  CHECK(comps[0].min_x == 0);
  CHECK(comps[1].min_x == 5);

  BinaryMask diag(3, 3);
  diag.set(0, 0);
  diag.set(1, 1);
  CHECK(connected_components(diag).size() == 1);
}

TEST_CASE("connected components partition the mask") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const BinaryMask m = random_mask(rng, 23, 19, 0.3);
    BinaryMask acc(23, 19);
    std::size_t total = 0;
    for (const auto& c : connected_components(m)) {
      const BinaryMask cm = c.to_mask(23, 19);
      CHECK((cm & acc).none());
      acc |= cm;
      total += c.size();
      for (const Pixel& p : c.pixels) {
        CHECK(p.x >= c.min_x);
        CHECK(p.x <= c.max_x);
        CHECK(p.y >= c.min_y);
        CHECK(p.y <= c.max_y);
      }
    }
    CHECK(acc == m);
    CHECK(total == m.count());
  }
}

TEST_CASE("bilinear upsampling") {
  const ProbabilityMask half(2, 2, 0.5);
  const auto up = upsample_bilinear(half, 7, 5);
  for (double v : up.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
  const auto one = upsample_bilinear(ProbabilityMask(1, 1, 0.3), 4, 3);
  for (double v : one.values()) CHECK(v == doctest::Approx(0.3));

  // [0,1] at half-pixel centers: output centers map to u = -0.25, 0.25, 0.75, 1.25.
  const ProbabilityMask ramp(2, 1, std::vector<double>{0.0, 1.0});
  const auto r4 = upsample_bilinear(ramp, 4, 1);
  CHECK(r4.at(0, 0) == doctest::Approx(0.0));
  CHECK(r4.at(1, 0) == doctest::Approx(0.25));
  CHECK(r4.at(2, 0) == doctest::Approx(0.75));
  CHECK(r4.at(3, 0) == doctest::Approx(1.0));
  CHECK(upsample_bilinear(ramp, 3, 1).at(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("bilinear adjoint is the transpose") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int sw = 4, sh = 3, ow = 11, oh = 9;
  std::vector<double> src(sw * sh), g(ow * oh);
  for (double& v : src) v = u(rng);
  for (double& v : g) v = u(rng) - 0.5;
  const auto up = upsample_bilinear(ProbabilityMask(sw, sh, src), ow, oh);
  double lhs = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) lhs += g[i] * up.values()[i];
  const auto adj = upsample_bilinear_adjoint(g, ow, oh, sw, sh);
  double rhs = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) rhs += adj[i] * src[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("psnr and ssim") {
  std::mt19937 rng(7);
  const Image a = random_image(rng, 20, 17, 3);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  const Image g1(8, 8, 3, 0.3), g2(8, 8, 3, 0.4);
  CHECK(psnr(g1, g2) == doctest::Approx(20.0).epsilon(1e-9));

  const Image b = random_image(rng, 20, 17, 3);
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK(std::abs(ssim(a, b) - reference_ssim(a, b)) < 1e-6);

  double se = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    se += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  }
  CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(a.data().size() / se)) < 1e-6);
  CHECK_THROWS_AS(psnr(a, Image(3, 3, 3)), DimensionError);
  CHECK_THROWS_AS(ssim(a, Image(3, 3, 3)), DimensionError);
}

TEST_CASE("masked metrics only see the region") {
  std::mt19937 rng(8);
  const Image a = random_image(rng, 12, 12, 3);
  Image b = a;
  BinaryMask region(12, 12);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 6; ++x) region.set(x, y);
  for (int y = 0; y < 12; ++y)
    for (int x = 6; x < 12; ++x) b.at(x, y, 0) = 1.0 - a.at(x, y, 0);
  CHECK(psnr(a, b, region) == kPsnrCap);
  CHECK(psnr(a, b) < 40.0);
}

TEST_CASE("ssim gradient matches finite differences") {
  std::mt19937 rng(9);
  const Image a = random_image(rng, 9, 8, 3);
  const Image b = random_image(rng, 9, 8, 3);
  const SsimGradient sg = ssim_with_gradient(a, b);
  CHECK(sg.value == doctest::Approx(ssim(a, b)).epsilon(1e-12));
  const double eps = 1e-6;
  for (std::size_t i = 0; i < b.data().size(); i += 7) {
    Image p = b, m = b;
    p.data()[i] += eps;
    m.data()[i] -= eps;
    const double fd = (ssim(a, p) - ssim(a, m)) / (2 * eps);
    CHECK(std::abs(fd - sg.grad.data()[i]) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("iou") {
  BinaryMask a(20, 20), b(20, 20);
  CHECK(iou(a, b) == 1.0);
  for (int i = 0; i < 100; ++i) a.set(static_cast<std::size_t>(i));
  CHECK(iou(a, a) == 1.0);
  for (int i = 50; i < 150; ++i) b.set(static_cast<std::size_t>(i));
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(a, b) == iou(b, a));
  BinaryMask c(20, 20);
  for (int i = 300; i < 320; ++i) c.set(static_cast<std::size_t>(i));
  CHECK(iou(a, c) == 0.0);
  CHECK_THROWS_AS(iou(a, BinaryMask(3, 3)), DimensionError);
}

TEST_CASE("png round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "cleansplat_png_test";
  std::filesystem::remove_all(dir);
  std::mt19937 rng(2);
  const Image img = quantize8(random_image(rng, 13, 7, 3));
  write_png(dir / "a.png", img);
  CHECK(read_png(dir / "a.png") == img);
  const BinaryMask m = random_mask(rng, 13, 7, 0.4);
  write_mask_png(dir / "m.png", m);
  CHECK(read_mask_png(dir / "m.png") == m);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), PngError);
  std::filesystem::remove_all(dir);
}
