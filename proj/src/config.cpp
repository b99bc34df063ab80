#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "cleansplat/pipeline.hpp"

namespace cleansplat {

namespace {

int line_of(const YAML::Node& n) { return n.Mark().is_null() ? 0 : n.Mark().line + 1; }

std::string where(const std::string& source, int line) {
  return line > 0 ? source + ":" + std::to_string(line) : source;
}

// Reads the known keys of one mapping and rejects everything else.
class Section {
 public:
  Section(YAML::Node node, std::string path, const std::string& source)
      : node_(std::move(node)), path_(std::move(path)), source_(source) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw ConfigError(where(source_, line_of(node_)) + ": '" + label() + "' must be a mapping", line_of(node_));
    }
  }

  template <typename T>
  void get(const char* key, T& out, const char* type) {
    known_.insert(key);
    if (!node_ || !node_.IsMap()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    try {
      if (!v.IsScalar()) throw YAML::Exception(v.Mark(), "not a scalar");
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(source_, line_of(v)) + ": '" + qualified(key) + "' expects " + type, line_of(v));
    }
  }

  void get(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s, "a path");
    out = s;
  }

  Section child(const char* key) {
    known_.insert(key);
    return Section(node_ && node_.IsMap() ? node_[key] : YAML::Node(), qualified(key), source_);
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string k = kv.first.as<std::string>();
      if (!known_.count(k)) {
        throw ConfigError(where(source_, line_of(kv.first)) + ": unknown key '" + qualified(k) + "'",
                          line_of(kv.first));
      }
    }
  }

  [[noreturn]] void fail(const char* key, const std::string& what) const {
    const int line = node_ && node_.IsMap() && node_[key] ? line_of(node_[key]) : line_of(node_);
    throw ConfigError(where(source_, line) + ": '" + qualified(key) + "' " + what, line);
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  YAML::Node node_;
  std::string path_;
  const std::string& source_;
  std::set<std::string> known_;
};

constexpr const char* kReal = "a number";
constexpr const char* kInt = "an integer";
constexpr const char* kBool = "true or false";
constexpr const char* kText = "a string";

}  // namespace

void PipelineConfig::validate() const {
  scene.validate();
  train.validate();
  tmp.validate();
  tmr.validate();
  if (feature_backend != "oracle" && feature_backend != "file") {
    throw std::invalid_argument("features.backend must be 'oracle' or 'file'");
  }
  if (feature_backend == "file" && feature_dir.empty()) throw std::invalid_argument("features.dir is required for the file backend");
  if (segmenter_backend != "oracle" && segmenter_backend != "identity") {
    throw std::invalid_argument("segmenter.backend must be 'oracle' or 'identity'");
  }
  if (oracle.dim < 1 || oracle.patch_size < 1 || oracle.noise_sigma < 0.0) {
    throw std::invalid_argument("invalid oracle feature parameters");
  }
  if (train.propagation_iteration > train.total_iterations) {
    throw std::invalid_argument("train.propagation_iteration exceeds train.total_iterations");
  }
}

PipelineConfig parse_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(where(source, e.mark.line + 1) + ": " + e.msg, e.mark.line + 1);
  }
  PipelineConfig cfg;
  Section top(root, "", source);
  top.get("seed", cfg.seed, "a non-negative integer");
  top.get("data", cfg.data);
  top.get("output", cfg.output);

  {
    Section s = top.child("scene");
    std::string archetype = archetype_name(cfg.scene.archetype);
    s.get("archetype", archetype, kText);
    const auto a = parse_archetype(archetype);
    if (!a) s.fail("archetype", "must be one of transient, semi_transient, slow, adversarial_static");
    // Archetype presets first, then explicit overrides.
    cfg.scene = SceneSpec::preset(*a);
    s.get("width", cfg.scene.width, kInt);
    s.get("height", cfg.scene.height, kInt);
    s.get("train_frames", cfg.scene.train_frames, kInt);
    s.get("test_frames", cfg.scene.test_frames, kInt);
    s.get("static_gaussians", cfg.scene.static_gaussians, kInt);
    s.get("movers", cfg.scene.movers, kInt);
    s.get("mover_gaussians", cfg.scene.mover_gaussians, kInt);
    s.get("mover_step", cfg.scene.mover_step, kReal);
    s.get("halt_frames", cfg.scene.halt_frames, kInt);
    s.get("poster_init_stride", cfg.scene.poster_init_stride, kInt);
    s.get("init_position_noise", cfg.scene.init_position_noise, kReal);
    s.get("init_color_noise", cfg.scene.init_color_noise, kReal);
    s.get("init_opacity", cfg.scene.init_opacity, kReal);
    s.finish();
  }
  {
    Section s = top.child("features");
    s.get("backend", cfg.feature_backend, kText);
    s.get("dir", cfg.feature_dir);
    s.get("dim", cfg.oracle.dim, kInt);
    s.get("patch_size", cfg.oracle.patch_size, kInt);
    s.get("noise_sigma", cfg.oracle.noise_sigma, kReal);
    s.finish();
  }
  {
    Section s = top.child("segmenter");
    s.get("backend", cfg.segmenter_backend, kText);
    s.finish();
  }
  {
    Section s = top.child("train");
    TrainConfig& t = cfg.train;
    s.get("total_iterations", t.total_iterations, kInt);
    s.get("propagation_iteration", t.propagation_iteration, kInt);
    s.get("lambda_ssim", t.lambda_ssim, kReal);
    s.get("lambda_l1", t.lambda_l1, kReal);
    s.get("lambda_depth", t.lambda_depth, kReal);
    s.get("depth_loss_start", t.depth_loss_start, kInt);
    s.get("opacity_reset_interval", t.opacity_reset_interval, kInt);
    s.get("dilation", t.dilation, kInt);
    s.get("mask_threshold", t.mask_threshold, kReal);
    s.get("checkpoint_interval", t.checkpoint_interval, kInt);
    Section lr = s.child("learning_rates");
    lr.get("mean", t.learning_rates.mean, kReal);
    lr.get("log_scale", t.learning_rates.log_scale, kReal);
    lr.get("rotation", t.learning_rates.rotation, kReal);
    lr.get("opacity", t.learning_rates.opacity, kReal);
    lr.get("color", t.learning_rates.color, kReal);
    lr.finish();
    s.finish();
  }
  {
    Section s = top.child("tmp");
    s.get("start_iteration", cfg.tmp.start_iteration, kInt);
    s.get("pause_after_reset", cfg.tmp.pause_after_reset, kInt);
    s.get("learning_rate", cfg.tmp.learning_rate, kReal);
    s.get("lambda_prior", cfg.tmp.lambda_prior, kReal);
    s.get("use_consistency", cfg.tmp.use_consistency, kBool);
    s.finish();
  }
  {
    Section s = top.child("tmr");
    s.get("coverage_refine", cfg.tmr.coverage_refine, kReal);
    s.get("coverage_valid", cfg.tmr.coverage_valid, kReal);
    s.get("memory", cfg.tmr.memory, kInt);
    s.get("merge_iou", cfg.tmr.merge_iou, kReal);
    s.get("sr_threshold", cfg.tmr.sr_threshold, kReal);
    s.get("max_prompt_points", cfg.tmr.max_prompt_points, kInt);
    s.get("match_iou", cfg.tmr.match_iou, kReal);
    s.get("propagation_overlap", cfg.tmr.propagation_overlap, kReal);
    s.finish();
  }
  {
    Section s = top.child("finalize");
    std::string masks = mask_source_name(cfg.finalize_masks);
    s.get("masks", masks, kText);
    if (masks == "tmr") {
      cfg.finalize_masks = MaskSource::Tmr;
    } else if (masks == "tmp") {
      cfg.finalize_masks = MaskSource::Tmp;
    } else if (masks == "none") {
      cfg.finalize_masks = MaskSource::None;
    } else if (masks == "gt") {
      cfg.finalize_masks = MaskSource::GroundTruth;
    } else {
      s.fail("masks", "must be one of tmr, tmp, none, gt");
    }
    s.finish();
  }
  top.finish();
  cfg.tmr.dilation = cfg.train.dilation;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source + ": " + e.what(), 0);
  }
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string(), 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string config_to_yaml(const PipelineConfig& c) {
  std::ostringstream o;
  o << std::setprecision(17) << std::boolalpha;
  o << "seed: " << c.seed << '\n';
  const SceneSpec& s = c.scene;
  o << "scene:\n  archetype: " << archetype_name(s.archetype) << "\n  width: " << s.width << "\n  height: " << s.height
    << "\n  train_frames: " << s.train_frames << "\n  test_frames: " << s.test_frames
    << "\n  static_gaussians: " << s.static_gaussians << "\n  movers: " << s.movers
    << "\n  mover_gaussians: " << s.mover_gaussians << "\n  mover_step: " << s.mover_step
    << "\n  halt_frames: " << s.halt_frames << "\n  poster_init_stride: " << s.poster_init_stride
    << "\n  init_position_noise: " << s.init_position_noise << "\n  init_color_noise: " << s.init_color_noise
    << "\n  init_opacity: " << s.init_opacity << '\n';
  o << "features:\n  backend: " << c.feature_backend << "\n  dim: " << c.oracle.dim
    << "\n  patch_size: " << c.oracle.patch_size << "\n  noise_sigma: " << c.oracle.noise_sigma << '\n';
  o << "segmenter:\n  backend: " << c.segmenter_backend << '\n';
  const TrainConfig& t = c.train;
  o << "train:\n  total_iterations: " << t.total_iterations << "\n  propagation_iteration: " << t.propagation_iteration
    << "\n  lambda_ssim: " << t.lambda_ssim << "\n  lambda_l1: " << t.lambda_l1 << "\n  lambda_depth: " << t.lambda_depth
    << "\n  depth_loss_start: " << t.depth_loss_start << "\n  opacity_reset_interval: " << t.opacity_reset_interval
    << "\n  dilation: " << t.dilation << "\n  mask_threshold: " << t.mask_threshold
    << "\n  checkpoint_interval: " << t.checkpoint_interval << "\n  learning_rates:\n    mean: " << t.learning_rates.mean
    << "\n    log_scale: " << t.learning_rates.log_scale << "\n    rotation: " << t.learning_rates.rotation
    << "\n    opacity: " << t.learning_rates.opacity << "\n    color: " << t.learning_rates.color << '\n';
  o << "tmp:\n  start_iteration: " << c.tmp.start_iteration << "\n  pause_after_reset: " << c.tmp.pause_after_reset
    << "\n  learning_rate: " << c.tmp.learning_rate << "\n  lambda_prior: " << c.tmp.lambda_prior
    << "\n  use_consistency: " << c.tmp.use_consistency << '\n';
  o << "tmr:\n  coverage_refine: " << c.tmr.coverage_refine << "\n  coverage_valid: " << c.tmr.coverage_valid
    << "\n  memory: " << c.tmr.memory << "\n  merge_iou: " << c.tmr.merge_iou << "\n  sr_threshold: " << c.tmr.sr_threshold
    << "\n  max_prompt_points: " << c.tmr.max_prompt_points << "\n  match_iou: " << c.tmr.match_iou
    << "\n  propagation_overlap: " << c.tmr.propagation_overlap << '\n';
  o << "finalize:\n  masks: " << mask_source_name(c.finalize_masks) << '\n';
  return o.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream o;
  for (unsigned int i = 0; i < len; ++i) o << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return o.str();
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::string config_hash(const PipelineConfig& cfg) { return sha256_hex(config_to_yaml(cfg)); }

}  // namespace cleansplat
