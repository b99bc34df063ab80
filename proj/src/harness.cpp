#include "cleansplat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "cleansplat/binio.hpp"
#include "cleansplat/png_io.hpp"
#include "cleansplat/render.hpp"

namespace cleansplat {

namespace {

constexpr double kOpaque = 3.0;  // opacity logit of scene content
constexpr double kThin = -4.6;   // log-scale along surface normals

double color_logit(double v) { return logit(std::clamp(v, 0.03, 0.97)); }

// Round-trips every parameter through float32 so that clouds written to
// checkpoints render exactly like the in-memory originals.
void round_to_float(GaussianCloud& cloud) {
  for (double& v : cloud.params()) v = static_cast<float>(v);
}

struct StaticScene {
  GaussianCloud cloud;
  std::vector<std::uint16_t> labels;
  std::vector<bool> poster_keep;  // init subsampling mask, all true off-poster
};

void add_disc(StaticScene& s, std::uint16_t label, const Eigen::Vector3d& mean,
              const Eigen::Vector3d& log_scale, const Eigen::Vector3d& rgb, bool keep = true) {
  s.cloud.add(mean, log_scale, Eigen::Quaterniond::Identity(), kOpaque,
              {color_logit(rgb.x()), color_logit(rgb.y()), color_logit(rgb.z())});
  s.labels.push_back(label);
  s.poster_keep.push_back(keep);
}

StaticScene build_static(const SceneSpec& spec, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  StaticScene s;
  const int box_count = 30;
  const int rest = spec.static_gaussians - box_count;
  const int wall_count = rest * 2 / 3;
  const int floor_count = rest - wall_count;

  // Wall: z = 5, x in [-3.6, 3.6], y in [-2.6, 1.0].
  {
    const double w = 7.2, h = 3.6;
    const int nx = std::max(1, static_cast<int>(std::lround(std::sqrt(wall_count * w / h))));
    const int ny = std::max(1, wall_count / nx);
    const double dx = w / nx, dy = h / ny;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const double x = -3.6 + (i + 0.5) * dx + 0.15 * dx * n(rng);
        const double y = -2.6 + (j + 0.5) * dy + 0.15 * dy * n(rng);
        const double shade = 0.55 + 0.12 * std::sin(1.3 * x + 0.7 * y) + 0.04 * n(rng);
        const Eigen::Vector3d rgb(shade + 0.06 * std::sin(0.9 * y - 0.4 * x + 1.0), shade,
                                  shade - 0.05 + 0.06 * std::cos(1.7 * x));
        add_disc(s, instance::kWall, {x, y, 5.0},
                 {std::log(0.75 * dx), std::log(0.75 * dy), kThin}, rgb);
      }
  }
  // Floor: y = 1, x in [-3, 3], z in [2.2, 5].
  {
    const double w = 6.0, d = 2.8;
    const int nx = std::max(1, static_cast<int>(std::lround(std::sqrt(floor_count * w / d))));
    const int nz = std::max(1, floor_count / nx);
    const double dx = w / nx, dz = d / nz;
    for (int k = 0; k < nz; ++k)
      for (int i = 0; i < nx; ++i) {
        const double x = -3.0 + (i + 0.5) * dx + 0.15 * dx * n(rng);
        const double z = 2.2 + (k + 0.5) * dz + 0.15 * dz * n(rng);
        const bool tile = (static_cast<int>(std::floor(x / 0.7)) + static_cast<int>(std::floor(z / 0.7))) % 2 == 0;
        const double base = tile ? 0.35 : 0.6;
        const Eigen::Vector3d rgb(base + 0.05 * std::sin(2.0 * z) + 0.03 * n(rng), base * 0.9 + 0.03 * n(rng),
                                  base * 0.75 + 0.03 * n(rng));
        add_disc(s, instance::kFloor, {x, 1.0, z}, {std::log(0.75 * dx), kThin, std::log(0.75 * dz)}, rgb);
      }
  }
  // Box face: z = 4.2, x in [1.0, 1.8], y in [0.35, 1.0].
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 6; ++i) {
      const double x = 1.0 + (i + 0.5) * 0.8 / 6;
      const double y = 0.35 + (j + 0.5) * 0.65 / 5;
      const Eigen::Vector3d rgb(0.15 + 0.03 * n(rng), 0.3 + 0.1 * j / 4.0, 0.75 + 0.03 * n(rng));
      add_disc(s, instance::kBox, {x, y, 4.2}, {std::log(0.11), std::log(0.11), kThin}, rgb);
    }
  // Poster: a sharp saturated checker just in front of the wall.
  if (spec.archetype == Archetype::AdversarialStatic) {
    const double pitch = 0.1;
    const int nx = 24, ny = 20;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const double x = -2.6 + (i + 0.5) * pitch;
        const double y = -2.05 + (j + 0.5) * pitch;
        const Eigen::Vector3d rgb = (i + j) % 2 == 0 ? Eigen::Vector3d(0.95, 0.95, 0.9) : Eigen::Vector3d(0.08, 0.08, 0.1);
        const bool keep = i % spec.poster_init_stride == 0 && j % spec.poster_init_stride == 0;
        add_disc(s, instance::kPoster, {x, y, 4.97}, {std::log(0.3 * pitch), std::log(0.3 * pitch), kThin}, rgb, keep);
      }
  }
  round_to_float(s.cloud);
  return s;
}

GaussianCloud build_blob(const SceneSpec& spec, int index, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  static const Eigen::Vector3d kHues[3] = {{0.9, 0.15, 0.1}, {0.95, 0.8, 0.1}, {0.7, 0.1, 0.8}};
  const Eigen::Vector3d hue = kHues[index % 3];
  GaussianCloud blob;
  for (int g = 0; g < spec.mover_gaussians; ++g) {
    Eigen::Vector3d offset(n(rng), n(rng), n(rng));
    offset *= 0.15;
    if (offset.norm() > 0.35) offset *= 0.35 / offset.norm();
    const double ls = std::log(0.12) + 0.1 * n(rng);
    const Eigen::Vector3d rgb = hue + 0.05 * Eigen::Vector3d(n(rng), n(rng), n(rng));
    blob.add(offset, {ls, ls, ls}, Eigen::Quaterniond::Identity(), 4.0,
             {color_logit(rgb.x()), color_logit(rgb.y()), color_logit(rgb.z())});
  }
  round_to_float(blob);
  return blob;
}

// Triangle wave over integer steps: 0, 1, ..., period, period-1, ..., 0, 1, ...
int ping_pong(int step, int period) {
  const int m = step % (2 * period);
  return m <= period ? m : 2 * period - m;
}

MoverScript build_mover(const SceneSpec& spec, int index, std::mt19937_64& rng) {
  MoverScript m;
  m.instance = static_cast<std::uint16_t>(instance::kFirstMover + index);
  m.blob = build_blob(spec, index, rng);
  const double z = 3.0 + 0.4 * index;
  const double y = -0.25;
  const int n = spec.train_frames;
  m.positions.resize(n);
  m.halted.assign(n, false);
  if (spec.archetype == Archetype::SemiTransient) {
    const int approach = (n - 1 - spec.halt_frames) / 2;
    int moved = 0;
    for (int f = 0; f < n; ++f) {
      const bool halt = f > approach && f <= approach + spec.halt_frames;
      if (f > 0 && !halt) ++moved;
      m.halted[f] = halt;
      m.positions[f] = {0.9 - spec.mover_step * moved, y, z};
    }
  } else {
    const double span = 2.2;
    const int period = std::max(1, static_cast<int>(std::lround(span / spec.mover_step)));
    const int phase = index * period / 2;
    for (int f = 0; f < n; ++f) {
      m.positions[f] = {1.1 - spec.mover_step * ping_pong(f + phase, period), y, z};
    }
  }
  for (auto& p : m.positions)
    for (int k = 0; k < 3; ++k) p[k] = static_cast<float>(p[k]);
  return m;
}

Camera frame_camera(const SceneSpec& spec, double x, double y) {
  Camera c;
  c.fx = c.fy = 0.9 * spec.width;
  c.cx = 0.5 * (spec.width - 1);
  c.cy = 0.5 * (spec.height - 1);
  c.width = spec.width;
  c.height = spec.height;
  c.translation = Eigen::Vector3d(-x, -y, 0.0);
  return c;
}

}  // namespace

std::string archetype_name(Archetype a) {
  switch (a) {
    case Archetype::Transient: return "transient";
    case Archetype::SemiTransient: return "semi_transient";
    case Archetype::Slow: return "slow";
    case Archetype::AdversarialStatic: return "adversarial_static";
  }
  return "unknown";
}

std::optional<Archetype> parse_archetype(const std::string& name) {
  for (Archetype a : {Archetype::Transient, Archetype::SemiTransient, Archetype::Slow,
                      Archetype::AdversarialStatic}) {
    if (archetype_name(a) == name) return a;
  }
  return std::nullopt;
}

void SceneSpec::validate() const {
  if (width < 16 || height < 16) throw std::invalid_argument("scene resolution must be at least 16x16");
  if (train_frames < 2) throw std::invalid_argument("scene needs at least 2 train frames");
  if (test_frames < 1) throw std::invalid_argument("scene needs at least 1 test frame");
  if (static_gaussians < 60) throw std::invalid_argument("static_gaussians must be at least 60");
  if (movers < 0 || movers > 3) throw std::invalid_argument("movers must be in [0, 3]");
  if (mover_gaussians < 1) throw std::invalid_argument("mover_gaussians must be positive");
  if (!(mover_step > 0.0)) throw std::invalid_argument("mover_step must be positive");
  if (archetype == Archetype::SemiTransient && (halt_frames < 1 || halt_frames > train_frames - 3)) {
    throw std::invalid_argument("halt_frames must leave at least one moving step on each side");
  }
  if (poster_init_stride < 1) throw std::invalid_argument("poster_init_stride must be positive");
  if (!(init_opacity > 0.0 && init_opacity < 1.0)) throw std::invalid_argument("init_opacity must be in (0, 1)");
  if (init_position_noise < 0.0 || init_color_noise < 0.0) throw std::invalid_argument("init noise must be >= 0");
}

SceneSpec SceneSpec::preset(Archetype archetype) {
  SceneSpec s;
  s.archetype = archetype;
  if (archetype == Archetype::SemiTransient) {
    s.train_frames = 26;
    s.halt_frames = 14;
    s.mover_step = 0.25;
  }
  if (archetype == Archetype::Slow) s.mover_step = 0.015;
  return s;
}

GaussianCloud MoverScript::at_frame(std::size_t frame) const {
  GaussianCloud c = blob;
  for (std::size_t i = 0; i < c.size(); ++i) c.mean(i) += positions.at(frame);
  return c;
}

BinaryMask transient_mask(const std::vector<MoverScript>& movers, std::size_t frame, const Camera& camera) {
  GaussianCloud all;
  for (const auto& m : movers) all.append(m.at_frame(frame));
  BinaryMask mask(camera.width, camera.height);
  if (all.empty()) return mask;
  const Image alpha = render(all, camera).alpha;
  for (std::size_t p = 0; p < mask.pixel_count(); ++p) mask.set(p, alpha.data()[p] > 0.5);
  return mask;
}

double mover_displacement_px(const MoverScript& mover, std::size_t frame, const Camera& camera) {
  if (frame == 0) return 0.0;
  const Eigen::Vector3d d = mover.positions.at(frame) - mover.positions.at(frame - 1);
  const double z = camera.to_camera(mover.positions[frame]).z();
  return d.norm() * camera.fx / z;
}

SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  SyntheticScene scene;
  scene.spec = spec;
  scene.seed = seed;

  StaticScene st = build_static(spec, rng);
  for (int k = 0; k < spec.movers; ++k) scene.movers.push_back(build_mover(spec, k, rng));
  if (spec.archetype == Archetype::AdversarialStatic) scene.under_sampled_instance = instance::kPoster;

  SceneSemantics sem;
  sem.seed = seed;
  for (std::uint16_t id : {instance::kWall, instance::kFloor, instance::kBox, instance::kPoster}) {
    sem.instance_class[id] = id;
  }
  for (const auto& m : scene.movers) {
    sem.instance_class[m.instance] = instance::kMovingClass;
    // A halted mover reads as ordinary static furniture.
    for (std::size_t f = 0; f < m.halted.size(); ++f) {
      if (m.halted[f]) sem.frame_overrides[{f, m.instance}] = instance::kBox;
    }
  }

  Dataset& data = scene.data;
  data.semantics = sem;
  data.stuff = {instance::kWall, instance::kFloor};
  data.gt_static = st.cloud;
  scene.static_labels = st.labels;

  std::vector<std::uint16_t> full_labels = st.labels;
  for (const auto& m : scene.movers) full_labels.insert(full_labels.end(), m.blob.size(), m.instance);

  const int n = spec.train_frames;
  for (int f = 0; f < n; ++f) {
    const double t = n > 1 ? static_cast<double>(f) / (n - 1) : 0.0;
    const Camera cam = frame_camera(spec, -0.25 + 0.5 * t, 0.0);
    GaussianCloud all = st.cloud;
    for (const auto& m : scene.movers) all.append(m.at_frame(f));
    const RenderOutput out = render(all, cam, {true});
    FrameRecord rec;
    rec.image = quantize8(out.color);
    rec.camera = cam;
    rec.gt_mask = transient_mask(scene.movers, f, cam);
    rec.ids = IdMap{cam.width, cam.height, render_labels(out, full_labels, instance::kBackground)};
    data.sequence.train.push_back(data.sequence.frames.size());
    data.sequence.frames.push_back(std::move(rec));
  }
  for (int j = 0; j < spec.test_frames; ++j) {
    const double t = spec.test_frames > 1 ? static_cast<double>(j) / (spec.test_frames - 1) : 0.5;
    const Camera cam = frame_camera(spec, -0.2 + 0.4 * t, 0.05);
    const RenderOutput out = render(st.cloud, cam, {true});
    FrameRecord rec;
    rec.image = quantize8(out.color);
    rec.camera = cam;
    rec.gt_mask = BinaryMask(cam.width, cam.height);
    rec.ids = IdMap{cam.width, cam.height, render_labels(out, st.labels, instance::kBackground)};
    data.sequence.test.push_back(data.sequence.frames.size());
    data.sequence.frames.push_back(std::move(rec));
  }

  // Initialization: perturbed ground truth, with the poster under-sampled.
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < st.cloud.size(); ++i) {
    if (!st.poster_keep[i]) continue;
    Eigen::Vector3d mean = st.cloud.mean(i);
    Eigen::Vector3d ls = st.cloud.log_scale(i);
    Eigen::Vector3d col = st.cloud.color_logit(i);
    if (st.labels[i] == instance::kPoster) {
      const double grow = std::log(static_cast<double>(spec.poster_init_stride));
      ls.x() += grow;
      ls.y() += grow;
      col.setZero();
    }
    mean += spec.init_position_noise * Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
    ls += 0.1 * Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
    col += spec.init_color_noise * Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
    data.init.add(mean, ls, Eigen::Quaterniond::Identity(), logit(spec.init_opacity), col);
    data.init_labels.push_back(st.labels[i]);
  }
  round_to_float(data.init);
  return scene;
}

ImageReport evaluate(const GaussianCloud& cloud, const FrameSequence& sequence) {
  if (sequence.test.empty()) throw EvaluationError("sequence has no test frames");
  ImageReport r;
  for (std::size_t idx : sequence.test) {
    const FrameRecord& fr = sequence.frames.at(idx);
    const Image img = quantize8(render(cloud, fr.camera).color);
    if (!img.same_shape(fr.image)) throw EvaluationError("test frame " + std::to_string(idx) + " size mismatch");
    r.frames.push_back(idx);
    r.psnr.push_back(psnr(fr.image, img));
    r.ssim.push_back(ssim(fr.image, img));
  }
  const double n = static_cast<double>(r.frames.size());
  for (std::size_t i = 0; i < r.frames.size(); ++i) {
    r.mean_psnr += r.psnr[i];
    r.mean_ssim += r.ssim[i];
  }
  r.mean_psnr /= n;
  r.mean_ssim /= n;
  return r;
}

MaskReport mask_eval(const std::vector<BinaryMask>& predicted, const FrameSequence& sequence) {
  if (predicted.size() != sequence.train.size()) {
    throw EvaluationError("expected " + std::to_string(sequence.train.size()) + " predicted masks, got " +
                          std::to_string(predicted.size()));
  }
  MaskReport r;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const std::size_t idx = sequence.train[i];
    const FrameRecord& fr = sequence.frames.at(idx);
    if (!fr.gt_mask) throw EvaluationError("missing ground-truth mask for frame " + std::to_string(idx));
    const BinaryMask& gt = *fr.gt_mask;
    const BinaryMask& p = predicted[i];
    if (!p.same_shape(gt)) throw EvaluationError("mask size mismatch on frame " + std::to_string(idx));
    const double inter = static_cast<double>((p & gt).count());
    const double np = static_cast<double>(p.count());
    const double ng = static_cast<double>(gt.count());
    r.frames.push_back(idx);
    r.iou.push_back(iou(p, gt));
    r.precision.push_back(np > 0 ? inter / np : 1.0);
    r.recall.push_back(ng > 0 ? inter / ng : 1.0);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, r.frames.size()));
  for (std::size_t i = 0; i < r.frames.size(); ++i) {
    r.mean_iou += r.iou[i];
    r.mean_precision += r.precision[i];
    r.mean_recall += r.recall[i];
  }
  r.mean_iou /= n;
  r.mean_precision /= n;
  r.mean_recall /= n;
  return r;
}

void write_id_map(const std::filesystem::path& path, const IdMap& ids) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  for (std::uint16_t v : ids.ids) binio::put_u16(out, v);
}

IdMap read_id_map(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  IdMap m{width, height, std::vector<std::uint16_t>(static_cast<std::size_t>(width) * height)};
  for (auto& v : m.ids) {
    if (!binio::get_u16(in, v)) throw DatasetError("truncated id map " + path.string());
  }
  return m;
}

namespace {

std::string frame_name(std::size_t idx, const char* ext) { return std::to_string(idx) + ext; }

void write_labels(const std::filesystem::path& path, const std::vector<std::uint16_t>& labels) {
  std::ofstream out(path);
  for (auto l : labels) out << l << '\n';
}

std::vector<std::uint16_t> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::vector<std::uint16_t> labels;
  unsigned v = 0;
  while (in >> v) labels.push_back(static_cast<std::uint16_t>(v));
  return labels;
}

std::vector<std::size_t> parse_indices(std::istringstream& ls) {
  std::vector<std::size_t> out;
  std::size_t v = 0;
  while (ls >> v) out.push_back(v);
  return out;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  const FrameSequence& seq = data.sequence;
  std::ofstream poses(dir / "poses.txt");
  poses << std::setprecision(17);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const FrameRecord& fr = seq.frames[i];
    const Camera& c = fr.camera;
    poses << i;
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) poses << ' ' << c.rotation(r, k);
      poses << ' ' << c.translation[r];
    }
    poses << ' ' << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy << ' ' << c.width << ' ' << c.height << '\n';
    write_png(dir / "frames" / frame_name(i, ".png"), fr.image);
    if (fr.gt_mask) write_mask_png(dir / "gt_masks" / frame_name(i, ".png"), *fr.gt_mask);
    if (fr.ids) write_id_map(dir / "idmaps" / frame_name(i, ".bin"), *fr.ids);
  }
  std::ofstream split(dir / "split.txt");
  split << "train";
  for (auto i : seq.train) split << ' ' << i;
  split << "\ntest";
  for (auto i : seq.test) split << ' ' << i;
  split << '\n';

  if (data.semantics) {
    std::ofstream inst(dir / "instances.txt");
    inst << "seed " << data.semantics->seed << '\n';
    for (const auto& [id, cls] : data.semantics->instance_class) {
      inst << "instance " << id << ' ' << cls << ' ' << (data.stuff.count(id) ? "stuff" : "thing") << '\n';
    }
    for (const auto& [key, cls] : data.semantics->frame_overrides) {
      inst << "override " << key.first << ' ' << key.second << ' ' << cls << '\n';
    }
  }
  if (!data.init.empty()) {
    write_checkpoint(dir / "init.gsck", data.init);
    write_labels(dir / "init_labels.txt", data.init_labels);
  }
  if (data.gt_static) write_checkpoint(dir / "gt_static.gsck", *data.gt_static);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DatasetError("dataset directory not found: " + dir.string());
  Dataset data;
  FrameSequence& seq = data.sequence;
  {
    std::ifstream poses(dir / "poses.txt");
    if (!poses) throw DatasetError("missing poses.txt in " + dir.string());
    std::string line;
    int lineno = 0;
    while (std::getline(poses, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
      std::istringstream ls(line);
      std::size_t idx = 0;
      Camera c;
      ls >> idx;
      for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) ls >> c.rotation(r, k);
        ls >> c.translation[r];
      }
      ls >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height;
      if (!ls) throw DatasetError("poses.txt line " + std::to_string(lineno) + ": expected 19 fields");
      if (idx != seq.frames.size()) {
        throw DatasetError("poses.txt line " + std::to_string(lineno) + ": frames must be numbered 0, 1, ...");
      }
      try {
        c.validate();
      } catch (const std::invalid_argument& e) {
        throw DatasetError("poses.txt line " + std::to_string(lineno) + ": " + e.what());
      }
      FrameRecord fr;
      fr.camera = c;
      fr.image = read_png(dir / "frames" / frame_name(idx, ".png"));
      if (fr.image.width() != c.width || fr.image.height() != c.height || fr.image.channels() != 3) {
        throw DatasetError("frame " + std::to_string(idx) + " does not match its camera size or is not RGB");
      }
      const fs::path mask = dir / "gt_masks" / frame_name(idx, ".png");
      if (fs::exists(mask)) fr.gt_mask = read_mask_png(mask);
      const fs::path ids = dir / "idmaps" / frame_name(idx, ".bin");
      if (fs::exists(ids)) fr.ids = read_id_map(ids, c.width, c.height);
      seq.frames.push_back(std::move(fr));
    }
  }
  {
    std::ifstream split(dir / "split.txt");
    if (!split) throw DatasetError("missing split.txt in " + dir.string());
    std::string line;
    while (std::getline(split, line)) {
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "train") {
        seq.train = parse_indices(ls);
      } else if (key == "test") {
        seq.test = parse_indices(ls);
      } else if (!key.empty()) {
        throw DatasetError("split.txt: unknown entry '" + key + "'");
      }
    }
    for (auto v : {&seq.train, &seq.test})
      for (std::size_t i : *v)
        if (i >= seq.frames.size()) throw DatasetError("split.txt references missing frame " + std::to_string(i));
    for (std::size_t i : seq.train)
      if (std::find(seq.test.begin(), seq.test.end(), i) != seq.test.end())
        throw DatasetError("frame " + std::to_string(i) + " is in both train and test splits");
  }
  if (fs::exists(dir / "instances.txt")) {
    std::ifstream in(dir / "instances.txt");
    SceneSemantics sem;
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "seed") {
        ls >> sem.seed;
      } else if (key == "instance") {
        unsigned id = 0, cls = 0;
        std::string kind;
        ls >> id >> cls >> kind;
        sem.instance_class[static_cast<std::uint16_t>(id)] = static_cast<std::uint16_t>(cls);
        if (kind == "stuff") data.stuff.insert(static_cast<std::uint16_t>(id));
      } else if (key == "override") {
        std::size_t f = 0;
        unsigned id = 0, cls = 0;
        ls >> f >> id >> cls;
        sem.frame_overrides[{f, static_cast<std::uint16_t>(id)}] = static_cast<std::uint16_t>(cls);
      } else if (!key.empty()) {
        throw DatasetError("instances.txt: unknown entry '" + key + "'");
      }
      if (!ls && !key.empty() && key != "seed") throw DatasetError("instances.txt: malformed line '" + line + "'");
    }
    data.semantics = sem;
  }
  if (fs::exists(dir / "init.gsck")) {
    data.init = read_checkpoint(dir / "init.gsck");
    if (fs::exists(dir / "init_labels.txt")) {
      data.init_labels = read_labels(dir / "init_labels.txt");
      if (data.init_labels.size() != data.init.size()) throw DatasetError("init_labels.txt does not match init.gsck");
    }
  }
  if (fs::exists(dir / "gt_static.gsck")) data.gt_static = read_checkpoint(dir / "gt_static.gsck");
  return data;
}

void write_scene(const std::filesystem::path& dir, const SyntheticScene& scene) {
  write_dataset(dir, scene.data);
  std::ofstream meta(dir / "scene.txt");
  meta << "archetype " << archetype_name(scene.spec.archetype) << "\nseed " << scene.seed << "\nunder_sampled_instance "
       << scene.under_sampled_instance << '\n';
  std::ofstream movers(dir / "movers.txt");
  movers << std::setprecision(9);
  for (const auto& m : scene.movers)
    for (std::size_t f = 0; f < m.positions.size(); ++f) {
      const auto& p = m.positions[f];
      movers << f << ' ' << m.instance << ' ' << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << (m.halted[f] ? 1 : 0)
             << '\n';
    }
}

}  // namespace cleansplat
