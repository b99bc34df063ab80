#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cleansplat/gaussian.hpp"
#include "cleansplat/tmp.hpp"

using namespace cleansplat;

namespace {

FeatureMap random_features(std::mt19937& rng, int gw, int gh, int dim) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(gw) * gh * dim);
  for (float& x : v) x = n(rng);
  return FeatureMap(gw, gh, dim, 14, v);
}

// Scalar restatement of the prediction pipeline.
std::vector<double> reference_prediction(const TmpModel& m, const FeatureMap& f, int w, int h) {
  const int gw = f.grid_w(), gh = f.grid_h();
  std::vector<double> prob(gw * gh), dil(gw * gh);
  for (int i = 0; i < gw * gh; ++i) {
    double z = m.bias;
    for (int k = 0; k < f.dim(); ++k) z += m.weights[k] * f.patch(i)[k];
    prob[i] = 1.0 / (1.0 + std::exp(-z));
  }
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x) {
      double best = 0.0;
      for (int yy = std::max(0, y - 1); yy <= std::min(gh - 1, y + 1); ++yy)
        for (int xx = std::max(0, x - 1); xx <= std::min(gw - 1, x + 1); ++xx)
          best = std::max(best, prob[yy * gw + xx]);
      dil[y * gw + x] = best;
    }
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    double v = std::clamp((y + 0.5) * gh / h - 0.5, 0.0, gh - 1.0);
    const int y0 = static_cast<int>(v), y1 = std::min(y0 + 1, gh - 1);
    const double ty = v - y0;
    for (int x = 0; x < w; ++x) {
      double u = std::clamp((x + 0.5) * gw / w - 0.5, 0.0, gw - 1.0);
      const int x0 = static_cast<int>(u), x1 = std::min(x0 + 1, gw - 1);
      const double tx = u - x0;
      out[y * w + x] = (1 - ty) * ((1 - tx) * dil[y0 * gw + x0] + tx * dil[y0 * gw + x1]) +
                       ty * ((1 - tx) * dil[y1 * gw + x0] + tx * dil[y1 * gw + x1]);
    }
  }
  return out;
}

Image noise_image(std::mt19937& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h, 3);
  for (double& v : img.data()) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("zero model predicts one half") {
  std::mt19937 rng(1);
  const auto f = random_features(rng, 3, 2, 8);
  const auto p = predict_mask(TmpModel(8), f, 40, 28);
  for (double v : p.values()) CHECK(v == 0.5);
  CHECK(binarize(p).none());
  CHECK(binarize(ProbabilityMask(4, 4, 0.6)).count() == 16);
  CHECK_THROWS_AS(predict_mask(TmpModel(7), f, 40, 28), DimensionError);
}

TEST_CASE("patch dilation spreads a hot patch to its 8 neighbors") {
  std::vector<float> v(5 * 5, -1.0f);
  v[2 * 5 + 2] = 1.0f;
  const FeatureMap f(5, 5, 1, 14, v);
  TmpModel m(1, false);
  m.weights[0] = 60.0;
  const auto pred = predict_mask_traced(m, f, 70, 70);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      const bool near = std::abs(x - 2) <= 1 && std::abs(y - 2) <= 1;
      CHECK(pred.dilated[y * 5 + x] == doctest::Approx(near ? 1.0 : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("prediction matches the scalar reference pipeline") {
  std::mt19937 rng(2);
  std::normal_distribution<double> n(0.0, 0.5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = random_features(rng, 4 + trial % 3, 3 + trial % 2, 6);
    TmpModel m(6);
    for (double& w : m.weights) w = n(rng);
    m.bias = n(rng);
    const int w = 37 + trial, h = 29;
    const auto got = predict_mask(m, f, w, h);
    const auto ref = reference_prediction(m, f, w, h);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got.values()[i] - ref[i]) <= 1e-6);
  }
}

TEST_CASE("transient loss terms") {
  std::mt19937 rng(3);
  const Image a = noise_image(rng, 6, 5), b = noise_image(rng, 6, 5);
  const Image r = abs_residual(a, b);
  double mean_r = 0.0;
  for (double v : r.data()) mean_r += v / 30.0;
  const ProbabilityMask zero(6, 5, 0.0), one(6, 5, 1.0);
  CHECK(transient_loss(zero, &zero, a, b, 0.1).value == doctest::Approx(mean_r));
  CHECK(transient_loss(one, &zero, a, b, 0.1).value == doctest::Approx(0.1));
  CHECK(transient_loss(one, &one, a, b, 0.1).value == doctest::Approx(1.1));
  CHECK(transient_loss(zero, &zero, a, a, 0.1).value == 0.0);
  CHECK_THROWS_AS(transient_loss(ProbabilityMask(2, 2), nullptr, a, b, 0.1), DimensionError);

  CHECK(optimal_transient_probability(0.2, 0.1) == 1.0);
  CHECK(optimal_transient_probability(0.05, 0.1) == 0.0);
  CHECK(optimal_transient_probability(0.1, 0.1) == 0.0);
}

TEST_CASE("transient loss is non-negative") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(20), q(20);
    for (auto& v : p) v = u(rng);
    for (auto& v : q) v = u(rng);
    const auto l = transient_loss(ProbabilityMask(5, 4, p), &static_cast<const ProbabilityMask&>(
                                                               ProbabilityMask(5, 4, q)),
                                  noise_image(rng, 5, 4), noise_image(rng, 5, 4), 0.1);
    CHECK(l.value >= 0.0);
  }
}

TEST_CASE("per-pixel optimization reaches the closed-form indicator") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  const int n = 400;
  std::vector<double> residuals;
  while (residuals.size() < n) {
    const double r = u(rng);
    if (r < 0.095 || r > 0.105) residuals.push_back(r);
  }
  // Residual image: reference = r, render = 0 on every channel.
  Image ref(20, 20, 3), render(20, 20, 3);
  for (int p = 0; p < n; ++p)
    for (int c = 0; c < 3; ++c) ref.data()[p * 3 + c] = residuals[p];
  std::vector<double> logits(n, 0.0);
  Adam adam(std::vector<double>(n, 0.1), {});
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> probs(n);
    for (int p = 0; p < n; ++p) probs[p] = sigmoid(logits[p]);
    const auto loss = transient_loss(ProbabilityMask(20, 20, probs), nullptr, ref, render, 0.1);
    std::vector<double> g(n);
    for (int p = 0; p < n; ++p) g[p] = loss.grad[p] * probs[p] * (1.0 - probs[p]);
    adam.step(logits, g);
  }
  std::vector<double> final_probs(n);
  for (int p = 0; p < n; ++p) {
    final_probs[p] = sigmoid(logits[p]);
    CHECK(std::abs(final_probs[p] - optimal_transient_probability(residuals[p], 0.1)) <= 1e-3);
  }
  const BinaryMask bin = binarize(ProbabilityMask(20, 20, final_probs));
  for (int p = 0; p < n; ++p) CHECK(bin.test(static_cast<std::size_t>(p)) == (residuals[p] > 0.1));
}

TEST_CASE("model gradient matches finite differences with the rendered mask held fixed") {
  std::mt19937 rng(6);
  std::normal_distribution<double> n(0.0, 0.3);
  const auto f = random_features(rng, 4, 3, 5);
  const auto fr = random_features(rng, 4, 3, 5);
  const Image a = noise_image(rng, 45, 33), b = noise_image(rng, 45, 33);
  TmpModel m(5);
  for (double& w : m.weights) w = n(rng);
  m.bias = 0.2;
  const ProbabilityMask rendered = predict_mask(m, fr, 45, 33);
  auto value = [&](const TmpModel& mm, bool recompute_rendered) {
    const ProbabilityMask rm = recompute_rendered ? predict_mask(mm, fr, 45, 33) : rendered;
    return transient_loss(predict_mask(mm, f, 45, 33), &rm, a, b, 0.1).value;
  };
  const auto pred = predict_mask_traced(m, f, 45, 33);
  const auto loss = transient_loss(pred.mask, &rendered, a, b, 0.1);
  const TmpGradient g = tmp_backward(m, f, pred, loss.grad);
  const double eps = 1e-6;
  double full_gap = 0.0;
  for (int k = 0; k <= 5; ++k) {
    TmpModel p = m, q = m;
    double& pk = k < 5 ? p.weights[k] : p.bias;
    double& qk = k < 5 ? q.weights[k] : q.bias;
    pk += eps;
    qk -= eps;
    const double detached = (value(p, false) - value(q, false)) / (2 * eps);
    const double full = (value(p, true) - value(q, true)) / (2 * eps);
    const double analytic = k < 5 ? g.weights[k] : g.bias;
    CHECK(std::abs(analytic - detached) <= 1e-5 * std::max(1.0, std::abs(detached)));
    full_gap = std::max(full_gap, std::abs(full - analytic));
  }
  // The undetached derivative differs, so the rendered path really is cut.
  CHECK(full_gap > 1e-4);
}

TEST_CASE("rendered features change the loss but carry no gradient path") {
  std::mt19937 rng(7);
  const auto f = random_features(rng, 3, 3, 4);
  const auto fr1 = random_features(rng, 3, 3, 4);
  auto fr2 = fr1;
  fr2.patch(4)[0] += 3.0f;
  const Image a = noise_image(rng, 30, 30), b = noise_image(rng, 30, 30);
  TmpModel m(4);
  m.weights = {0.3, -0.2, 0.1, 0.4};
  const auto pred = predict_mask_traced(m, f, 30, 30);
  const auto r1 = predict_mask(m, fr1, 30, 30), r2 = predict_mask(m, fr2, 30, 30);
  const auto l1 = transient_loss(pred.mask, &r1, a, b, 0.1);
  const auto l2 = transient_loss(pred.mask, &r2, a, b, 0.1);
  CHECK(l1.value != l2.value);
  // dL/dP differs only by the constant P_hat values; its structure never
  // involves d P_hat / d W.
  for (std::size_t p = 0; p < l1.grad.size(); ++p) {
    CHECK(l2.grad[p] - l1.grad[p] ==
          doctest::Approx((r2.values()[p] - r1.values()[p]) / 900.0).epsilon(1e-9));
  }
}

TEST_CASE("trainer schedule") {
  TmpTrainer t(TmpModel(4), TmpSchedule{});
  CHECK_FALSE(t.active(100, -1));
  CHECK(t.active(500, -1));
  CHECK_FALSE(t.active(3100, 3000));
  CHECK(t.active(3250, 3000));
  std::mt19937 rng(8);
  const auto f = random_features(rng, 2, 2, 4);
  const Image a = noise_image(rng, 28, 28);
  CHECK_FALSE(t.step(f, nullptr, a, a, 100, -1));
  CHECK(t.model() == TmpModel(4));
  TmpSchedule bad;
  bad.lambda_prior = 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("trainer separates transient patches from static ones") {
  // Patches of class 0 are transient (large residual), classes 1..3 static.
  const int gw = 10, gh = 10, ps = 4, dim = 32;
  std::mt19937 rng(9);
  std::vector<std::vector<float>> emb;
  for (std::uint16_t c = 0; c < 4; ++c) emb.push_back(class_embedding(99, c, dim));
  std::vector<int> label(gw * gh);
  std::uniform_int_distribution<int> pick(0, 3);
  for (int& l : label) l = pick(rng);
  std::normal_distribution<float> jitter(0.0f, 0.05f);
  TmpTrainer trainer(TmpModel(dim), TmpSchedule{});
  for (int it = 0; it < 200; ++it) {
    std::vector<float> v;
    for (int i = 0; i < gw * gh; ++i)
      for (int k = 0; k < dim; ++k) v.push_back(emb[label[i]][k] + jitter(rng));
    const FeatureMap f(gw, gh, dim, ps, v);
    Image ref(gw * ps, gh * ps, 3), render(gw * ps, gh * ps, 3);
    for (int y = 0; y < gh * ps; ++y)
      for (int x = 0; x < gw * ps; ++x) {
        const bool transient = label[(y / ps) * gw + x / ps] == 0;
        for (int c = 0; c < 3; ++c) ref.at(x, y, c) = transient ? 0.6 : 0.02;
      }
    REQUIRE(trainer.step(f, nullptr, ref, render, 1000 + it, -1));
  }
  int correct = 0;
  std::vector<float> v;
  for (int i = 0; i < gw * gh; ++i)
    for (int k = 0; k < dim; ++k) v.push_back(emb[label[i]][k]);
  const auto pred = predict_mask_traced(trainer.model(), FeatureMap(gw, gh, dim, ps, v), 40, 40);
  for (int i = 0; i < gw * gh; ++i) correct += (pred.patch_probability[i] > 0.5) == (label[i] == 0);
  CHECK(correct >= 95);
}

TEST_CASE("tmp checkpoint round trip") {
  TmpModel m(3);
  m.weights = {0.5, -1.25, 2.0};
  m.bias = 0.75;
  const auto path = std::filesystem::temp_directory_path() / "cleansplat_tmp.ttmp";
  write_tmp_checkpoint(path, m);
  CHECK(read_tmp_checkpoint(path) == m);
  std::filesystem::resize_file(path, 10);
  CHECK_THROWS_AS(read_tmp_checkpoint(path), TmpCheckpointError);
  std::filesystem::remove(path);
}
