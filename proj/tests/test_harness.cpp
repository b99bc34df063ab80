#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cleansplat/harness.hpp"
#include "cleansplat/png_io.hpp"
#include "cleansplat/render.hpp"

using namespace cleansplat;
namespace fs = std::filesystem;

namespace {

SceneSpec small_spec(Archetype a) {
  SceneSpec s = SceneSpec::preset(a);
  s.width = 48;
  s.height = 36;
  s.static_gaussians = 200;
  s.test_frames = 3;
  return s;
}

Eigen::Vector2d centroid(const BinaryMask& m) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.test(x, y)) c += Eigen::Vector2d(x, y);
  return c / static_cast<double>(m.count());
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cleansplat_harness_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("transient mover is visible and moving in every frame") {
  SceneSpec spec = SceneSpec::preset(Archetype::Transient);
  spec.train_frames = 60;
  const SyntheticScene s = generate_scene(spec, 7);
  const FrameSequence& seq = s.data.sequence;
  REQUIRE(seq.train.size() == 60);
  for (std::size_t i = 0; i < seq.train.size(); ++i) {
    const BinaryMask& m = *seq.frames[seq.train[i]].gt_mask;
    REQUIRE(m.count() > 0);
    if (i > 0) {
      const BinaryMask& prev = *seq.frames[seq.train[i - 1]].gt_mask;
      CHECK((centroid(m) - centroid(prev)).norm() > 1.0);
    }
  }
}

TEST_CASE("semi-transient mover halts for exactly K frames") {
  for (int k : {3, 8}) {
    SceneSpec spec = small_spec(Archetype::SemiTransient);
    spec.halt_frames = k;
    const SyntheticScene s = generate_scene(spec, 11);
    const MoverScript& m = s.movers.at(0);
    int zeros = 0, run = 0, longest = 0;
    for (std::size_t f = 1; f < m.positions.size(); ++f) {
      const double d = mover_displacement_px(m, f, s.data.sequence.frames[f].camera);
      if (d == 0.0) {
        ++zeros;
        longest = std::max(longest, ++run);
      } else {
        CHECK(d > 1.0);
        run = 0;
      }
    }
    CHECK(zeros == k);
    CHECK(longest == k);
  }
}

TEST_CASE("slow movers move less than a pixel per frame") {
  const SyntheticScene s = generate_scene(small_spec(Archetype::Slow), 3);
  for (std::size_t f = 1; f < s.movers[0].positions.size(); ++f) {
    const double d = mover_displacement_px(s.movers[0], f, s.data.sequence.frames[f].camera);
    CHECK(d > 0.0);
    CHECK(d < 1.0);
  }
}

TEST_CASE("test frames are clean and disjoint from train frames") {
  const SyntheticScene s = generate_scene(small_spec(Archetype::Transient), 5);
  const FrameSequence& seq = s.data.sequence;
  CHECK(seq.train.size() + seq.test.size() == seq.frames.size());
  for (std::size_t t : seq.test) {
    CHECK(std::find(seq.train.begin(), seq.train.end(), t) == seq.train.end());
    CHECK(seq.frames[t].gt_mask->none());
    CHECK(seq.frames[t].image == quantize8(render(*s.data.gt_static, seq.frames[t].camera).color));
  }
}

TEST_CASE("generation is bit-identical per seed") {
  const SceneSpec spec = small_spec(Archetype::AdversarialStatic);
  const SyntheticScene a = generate_scene(spec, 21);
  const SyntheticScene b = generate_scene(spec, 21);
  const SyntheticScene c = generate_scene(spec, 22);
  CHECK(a.data.init == b.data.init);
  CHECK(*a.data.gt_static == *b.data.gt_static);
  for (std::size_t i = 0; i < a.data.sequence.frames.size(); ++i) {
    CHECK(a.data.sequence.frames[i].image == b.data.sequence.frames[i].image);
    CHECK(*a.data.sequence.frames[i].gt_mask == *b.data.sequence.frames[i].gt_mask);
    CHECK(*a.data.sequence.frames[i].ids == *b.data.sequence.frames[i].ids);
  }
  CHECK_FALSE(a.data.init == c.data.init);
}

TEST_CASE("ground-truth masks match a mover-only render") {
  const SyntheticScene s = generate_scene(small_spec(Archetype::Transient), 9);
  const FrameSequence& seq = s.data.sequence;
  for (std::size_t i = 0; i < seq.train.size(); ++i) {
    const FrameRecord& fr = seq.frames[seq.train[i]];
    const Image alpha = render(s.movers[0].at_frame(i), fr.camera).alpha;
    BinaryMask expected(fr.camera.width, fr.camera.height);
    for (std::size_t p = 0; p < expected.pixel_count(); ++p) expected.set(p, alpha.data()[p] > 0.5);
    CHECK(*fr.gt_mask == expected);
    // The id map shows the mover only where the mover renders.
    BinaryMask mover_ids(fr.camera.width, fr.camera.height);
    for (std::size_t p = 0; p < mover_ids.pixel_count(); ++p) mover_ids.set(p, fr.ids->ids[p] == s.movers[0].instance);
    CHECK(mover_ids.count() > 0);
    for (std::size_t p = 0; p < mover_ids.pixel_count(); ++p)
      if (mover_ids.test(p)) CHECK(alpha.data()[p] > 0.0);
  }
}

TEST_CASE("halted movers read as static furniture to the feature oracle") {
  const SyntheticScene s = generate_scene(small_spec(Archetype::SemiTransient), 4);
  const SceneSemantics& sem = *s.data.semantics;
  const MoverScript& m = s.movers[0];
  for (std::size_t f = 0; f < m.halted.size(); ++f) {
    CHECK(sem.class_of(m.instance, f) == (m.halted[f] ? instance::kBox : instance::kMovingClass));
  }
  CHECK(s.data.stuff == std::set<std::uint16_t>{instance::kWall, instance::kFloor});
}

TEST_CASE("adversarial scenes under-sample the poster in the initial cloud") {
  const SyntheticScene s = generate_scene(small_spec(Archetype::AdversarialStatic), 2);
  CHECK(s.under_sampled_instance == instance::kPoster);
  const auto count = [](const std::vector<std::uint16_t>& l) { return std::count(l.begin(), l.end(), instance::kPoster); };
  CHECK(count(s.data.init_labels) * 4 < count(s.static_labels));
  CHECK(count(s.data.init_labels) > 0);
  CHECK(s.data.init_labels.size() == s.data.init.size());
}

TEST_CASE("evaluate and mask_eval") {
  const SyntheticScene s = generate_scene(small_spec(Archetype::Transient), 1);
  const FrameSequence& seq = s.data.sequence;
  const ImageReport r = evaluate(*s.data.gt_static, seq);
  CHECK(r.frames == seq.test);
  CHECK(r.mean_psnr == kPsnrCap);
  CHECK(r.mean_ssim == doctest::Approx(1.0));
  CHECK(evaluate(s.data.init, seq).mean_psnr < 30.0);

  std::vector<BinaryMask> gt, empty;
  for (std::size_t i : seq.train) {
    gt.push_back(*seq.frames[i].gt_mask);
    empty.emplace_back(seq.frames[i].camera.width, seq.frames[i].camera.height);
  }
  const MaskReport perfect = mask_eval(gt, seq);
  CHECK(perfect.mean_iou == 1.0);
  CHECK(perfect.mean_precision == 1.0);
  CHECK(perfect.mean_recall == 1.0);
  const MaskReport none = mask_eval(empty, seq);
  CHECK(none.mean_recall == 0.0);
  CHECK(none.mean_iou == 0.0);
  CHECK(none.mean_precision == 1.0);
  gt.pop_back();
  CHECK_THROWS_AS(mask_eval(gt, seq), EvaluationError);

  FrameSequence no_gt = seq;
  no_gt.frames[no_gt.train[0]].gt_mask.reset();
  CHECK_THROWS_AS(mask_eval(empty, no_gt), EvaluationError);
}

TEST_CASE("dataset round trip") {
  const SyntheticScene s = generate_scene(small_spec(Archetype::SemiTransient), 13);
  const fs::path dir = scratch_dir("roundtrip");
  write_scene(dir, s);
  CHECK(fs::exists(dir / "frames" / "0.png"));
  CHECK(fs::exists(dir / "idmaps" / "0.bin"));
  CHECK(fs::file_size(dir / "idmaps" / "0.bin") == 48u * 36u * 2u);
  const Dataset d = read_dataset(dir);
  REQUIRE(d.sequence.frames.size() == s.data.sequence.frames.size());
  CHECK(d.sequence.train == s.data.sequence.train);
  CHECK(d.sequence.test == s.data.sequence.test);
  for (std::size_t i = 0; i < d.sequence.frames.size(); ++i) {
    const auto& a = d.sequence.frames[i];
    const auto& b = s.data.sequence.frames[i];
    CHECK(a.image == b.image);
    CHECK(*a.gt_mask == *b.gt_mask);
    CHECK(*a.ids == *b.ids);
    CHECK(a.camera.rotation == b.camera.rotation);
    CHECK(a.camera.translation == b.camera.translation);
    CHECK(a.camera.fx == b.camera.fx);
    CHECK(a.camera.cx == b.camera.cx);
  }
  CHECK(d.init == s.data.init);
  CHECK(d.init_labels == s.data.init_labels);
  CHECK(*d.gt_static == *s.data.gt_static);
  CHECK(d.stuff == s.data.stuff);
  CHECK(d.semantics->instance_class == s.data.semantics->instance_class);
  CHECK(d.semantics->frame_overrides == s.data.semantics->frame_overrides);
  CHECK(d.semantics->seed == s.data.semantics->seed);
  CHECK(evaluate(*d.gt_static, d.sequence).mean_psnr == kPsnrCap);
  fs::remove_all(dir);
}

TEST_CASE("malformed datasets are rejected") {
  const SyntheticScene s = generate_scene(small_spec(Archetype::Transient), 13);
  const fs::path dir = scratch_dir("malformed");
  CHECK_THROWS_AS(read_dataset(dir), DatasetError);
  write_dataset(dir, s.data);
  {
    std::ofstream split(dir / "split.txt");
    split << "train 0 1 2\ntest 2 3\n";
  }
  CHECK_THROWS_AS(read_dataset(dir), DatasetError);
  {
    std::ofstream split(dir / "split.txt");
    split << "train 0 1 2\ntest 999\n";
  }
  CHECK_THROWS_AS(read_dataset(dir), DatasetError);
  {
    std::ofstream poses(dir / "poses.txt");
    poses << "0 1 0 0\n";
  }
  CHECK_THROWS_AS(read_dataset(dir), DatasetError);
  fs::remove_all(dir);
}

TEST_CASE("datasets without optional files still load") {
  const SyntheticScene s = generate_scene(small_spec(Archetype::Transient), 13);
  const fs::path dir = scratch_dir("minimal");
  write_dataset(dir, s.data);
  fs::remove_all(dir / "gt_masks");
  fs::remove_all(dir / "idmaps");
  fs::remove(dir / "instances.txt");
  const Dataset d = read_dataset(dir);
  CHECK_FALSE(d.semantics);
  CHECK_FALSE(d.sequence.frames[0].gt_mask);
  CHECK_FALSE(d.sequence.frames[0].ids);
  fs::remove_all(dir);
}

TEST_CASE("scene spec validation") {
  SceneSpec s;
  s.train_frames = 1;
  CHECK_THROWS_AS(generate_scene(s, 0), std::invalid_argument);
  s = SceneSpec::preset(Archetype::SemiTransient);
  s.halt_frames = s.train_frames;
  CHECK_THROWS_AS(generate_scene(s, 0), std::invalid_argument);
  CHECK(parse_archetype("semi_transient") == Archetype::SemiTransient);
  CHECK_FALSE(parse_archetype("bogus"));
}
