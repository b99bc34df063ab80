#include "cleansplat/pipeline.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>

#include "cleansplat/png_io.hpp"
#include "cleansplat/render.hpp"

namespace cleansplat {

namespace fs = std::filesystem;
using nlohmann::json;

std::string mask_source_name(MaskSource s) {
  switch (s) {
    case MaskSource::Tmr: return "tmr";
    case MaskSource::Tmp: return "tmp";
    case MaskSource::None: return "none";
    case MaskSource::GroundTruth: return "gt";
  }
  return "unknown";
}

MissingStageError::MissingStageError(const std::string& stage, const fs::path& artifact)
    : PipelineError("missing output of stage '" + stage + "': " + artifact.string() + " (run `" + stage +
                    "` first)"),
      stage_(stage) {}

std::vector<TrainFrame> train_frames(const Dataset& data) {
  std::vector<TrainFrame> frames;
  for (std::size_t idx : data.sequence.train) {
    const FrameRecord& fr = data.sequence.frames.at(idx);
    frames.push_back({idx, fr.image, fr.camera});
  }
  if (frames.empty()) throw PipelineError("dataset has no train frames");
  return frames;
}

std::unique_ptr<FeatureProvider> make_feature_provider(const Dataset& data, const PipelineConfig& cfg) {
  if (cfg.feature_backend == "file") return std::make_unique<FileFeatureProvider>(cfg.feature_dir);
  if (!data.semantics) throw PipelineError("oracle features need instances.txt in the dataset");
  std::vector<IdMap> ids(data.sequence.frames.size());
  for (std::size_t idx : data.sequence.train) {
    const auto& fr = data.sequence.frames[idx];
    if (!fr.ids) throw PipelineError("oracle features need an id map for train frame " + std::to_string(idx));
    ids[idx] = *fr.ids;
  }
  return std::make_unique<OracleFeatureProvider>(std::move(ids), *data.semantics, cfg.oracle, cfg.seed);
}

std::unique_ptr<PromptableSegmenter> make_segmenter(const Dataset& data, const PipelineConfig& cfg) {
  if (cfg.segmenter_backend == "identity") return std::make_unique<IdentitySegmenter>();
  std::vector<IdMap> ids;
  for (std::size_t idx : data.sequence.train) {
    const auto& fr = data.sequence.frames[idx];
    if (!fr.ids) throw PipelineError("oracle segmenter needs an id map for train frame " + std::to_string(idx));
    ids.push_back(*fr.ids);
  }
  return std::make_unique<OracleSegmenter>(std::move(ids), data.stuff);
}

namespace {

void require_init(const Dataset& data) {
  if (data.init.empty()) throw PipelineError("dataset has no initial point cloud (init.gsck)");
}

const std::vector<std::uint16_t>* init_labels(const Dataset& data) {
  return data.init_labels.size() == data.init.size() ? &data.init_labels : nullptr;
}

}  // namespace

JointResult run_joint(const Dataset& data, const PipelineConfig& cfg, std::ostream* log) {
  require_init(data);
  const std::vector<TrainFrame> frames = train_frames(data);
  const auto features = make_feature_provider(data, cfg);
  const FeatureMap first = features->reference(frames[0].index, frames[0].image);

  TrainConfig tc = cfg.train;
  tc.total_iterations = cfg.train.propagation_iteration;
  tc.seed = cfg.seed;
  TmpTrainer trainer(TmpModel(first.dim()), cfg.tmp);
  const TrainResult r = train(frames, data.init, tc, nullptr, {&trainer, features.get(), init_labels(data)}, log);

  JointResult out;
  out.cloud = r.cloud;
  out.tmp = trainer.model();
  out.last_reset_iteration = r.last_reset_iteration;
  out.log = r.log;
  for (const TrainFrame& f : frames) {
    out.tmp_masks.push_back(tmp_binary_mask(out.tmp, features->reference(f.index, f.image), f.camera.width,
                                            f.camera.height, tc.mask_threshold));
  }
  return out;
}

std::vector<Image> train_residuals(const Dataset& data, const GaussianCloud& cloud) {
  std::vector<Image> out;
  for (std::size_t idx : data.sequence.train) {
    const FrameRecord& fr = data.sequence.frames[idx];
    out.push_back(abs_residual(fr.image, render(cloud, fr.camera).color));
  }
  return out;
}

RefineResult run_refine(const Dataset& data, const std::vector<BinaryMask>& tmp_masks, const GaussianCloud& cloud,
                        const PipelineConfig& cfg) {
  if (tmp_masks.size() != data.sequence.train.size()) throw PipelineError("one TMP mask per train frame required");
  const auto segmenter = make_segmenter(data, cfg);
  TmrConfig tmr = cfg.tmr;
  tmr.dilation = cfg.train.dilation;
  return refine_masks(tmp_masks, train_residuals(data, cloud), *segmenter, tmr);
}

TrainResult run_finalize(const Dataset& data, const std::vector<BinaryMask>* masks, const PipelineConfig& cfg,
                         std::ostream* log) {
  require_init(data);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  return train(train_frames(data), data.init, tc, masks, {}, log);
}

Image mask_overlay(const Image& image, const BinaryMask& mask) {
  Image out = image;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      if (!mask.test(x, y)) continue;
      out.at(x, y, 0) = 0.5 * image.at(x, y, 0);
      out.at(x, y, 1) = 0.5 * image.at(x, y, 1) + 0.5;
      out.at(x, y, 2) = 0.5 * image.at(x, y, 2);
    }
  return out;
}

Image residual_heatmap(const Image& residual) {
  Image out(residual.width(), residual.height(), 3);
  for (int y = 0; y < residual.height(); ++y)
    for (int x = 0; x < residual.width(); ++x) {
      const double t = std::clamp(residual.at(x, y) / 0.5, 0.0, 1.0) * 3.0;
      out.at(x, y, 0) = std::min(t, 1.0);
      out.at(x, y, 1) = std::clamp(t - 1.0, 0.0, 1.0);
      out.at(x, y, 2) = std::clamp(t - 2.0, 0.0, 1.0);
    }
  return out;
}

// ---- on-disk stages ---------------------------------------------------------

namespace {

std::vector<fs::path> files_under(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(p)) {
    out.push_back(p);
  } else if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Manifest paths are relative to the artifact or dataset directory so that
// moving a run does not change its manifests.
std::string manifest_path(const fs::path& f, const PipelineConfig& cfg) {
  for (const auto& [prefix, root] : {std::pair<std::string, fs::path>{"output", cfg.output}, {"data", cfg.data}}) {
    if (root.empty()) continue;
    const fs::path rel = f.lexically_normal().lexically_relative(root.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return prefix + "/" + rel.generic_string();
  }
  return f.generic_string();
}

json file_list(const std::vector<fs::path>& roots, const PipelineConfig& cfg) {
  json list = json::array();
  for (const auto& r : roots)
    for (const auto& f : files_under(r))
      list.push_back({{"path", manifest_path(f, cfg)}, {"sha256", file_sha256(f)}});
  return list;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_manifest(const fs::path& path, const std::string& stage, const PipelineConfig& cfg,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  json m;
  m["stage"] = stage;
  m["config_hash"] = config_hash(cfg);
  m["seed"] = cfg.seed;
  m["inputs"] = file_list(inputs, cfg);
  m["outputs"] = file_list(outputs, cfg);
  write_json(path, m);
}

Dataset load_dataset(const PipelineConfig& cfg) {
  if (!fs::exists(cfg.data / "poses.txt")) throw MissingStageError("generate", cfg.data / "poses.txt");
  return read_dataset(cfg.data);
}

std::vector<fs::path> dataset_inputs(const PipelineConfig& cfg) {
  std::vector<fs::path> in{cfg.data / "poses.txt", cfg.data / "split.txt", cfg.data / "frames"};
  for (const char* extra : {"instances.txt", "init.gsck", "init_labels.txt", "idmaps", "gt_masks"})
    if (fs::exists(cfg.data / extra)) in.push_back(cfg.data / extra);
  return in;
}

fs::path mask_file(const fs::path& dir, std::size_t frame) { return dir / (std::to_string(frame) + ".png"); }

std::vector<BinaryMask> read_frame_masks(const fs::path& dir, const Dataset& data, const std::string& stage) {
  std::vector<BinaryMask> masks;
  for (std::size_t idx : data.sequence.train) {
    const fs::path p = mask_file(dir, idx);
    if (!fs::exists(p)) throw MissingStageError(stage, p);
    masks.push_back(read_mask_png(p));
  }
  return masks;
}

void write_frame_masks(const fs::path& dir, const Dataset& data, const std::vector<BinaryMask>& masks) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < masks.size(); ++i) write_mask_png(mask_file(dir, data.sequence.train[i]), masks[i]);
}

GaussianCloud read_stage_cloud(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) throw MissingStageError(stage, path);
  return read_checkpoint(path);
}

void reset_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

json image_report_json(const ImageReport& r) {
  return {{"frames", r.frames}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"mean_psnr", r.mean_psnr},
          {"mean_ssim", r.mean_ssim}};
}

json mask_report_json(const MaskReport& r) {
  return {{"frames", r.frames},           {"iou", r.iou},
          {"precision", r.precision},     {"recall", r.recall},
          {"mean_iou", r.mean_iou},       {"mean_precision", r.mean_precision},
          {"mean_recall", r.mean_recall}};
}

}  // namespace

void stage_generate(const PipelineConfig& cfg) {
  const SyntheticScene scene = generate_scene(cfg.scene, cfg.seed);
  fs::create_directories(cfg.data);
  for (const char* sub : {"frames", "gt_masks", "idmaps"}) fs::remove_all(cfg.data / sub);
  write_scene(cfg.data, scene);
  write_manifest(cfg.data / "manifests" / "generate.json", "generate", cfg, {},
                 {cfg.data / "frames", cfg.data / "poses.txt", cfg.data / "split.txt", cfg.data / "gt_masks",
                  cfg.data / "idmaps", cfg.data / "instances.txt", cfg.data / "init.gsck",
                  cfg.data / "init_labels.txt", cfg.data / "gt_static.gsck", cfg.data / "scene.txt",
                  cfg.data / "movers.txt"});
  spdlog::info("generated {} scene ({} frames) in {}", archetype_name(cfg.scene.archetype),
               scene.data.sequence.frames.size(), cfg.data.string());
}

void stage_train(const PipelineConfig& cfg) {
  const Dataset data = load_dataset(cfg);
  const StagePaths out{cfg.output};
  reset_dir(out.root / "train");
  PipelineConfig run = cfg;
  run.train.checkpoint_dir = out.root / "train" / "checkpoints";
  std::ofstream log(out.root / "train" / "train_log.txt");
  const JointResult r = run_joint(data, run, &log);
  write_checkpoint(out.joint_cloud(), r.cloud);
  write_tmp_checkpoint(out.tmp_model(), r.tmp);
  write_frame_masks(out.tmp_masks(), data, r.tmp_masks);
  write_manifest(out.manifest("train"), "train", cfg, dataset_inputs(cfg), {out.root / "train"});
  spdlog::info("stage 1 finished at iteration {}", cfg.train.propagation_iteration);
}

void stage_refine(const PipelineConfig& cfg) {
  const Dataset data = load_dataset(cfg);
  const StagePaths out{cfg.output};
  const GaussianCloud cloud = read_stage_cloud(out.joint_cloud(), "train");
  const std::vector<BinaryMask> tmp_masks = read_frame_masks(out.tmp_masks(), data, "train");
  const RefineResult r = run_refine(data, tmp_masks, cloud, cfg);
  reset_dir(out.refine_dir());
  write_mask_tree(out.refine_dir(), r.objects);
  {
    std::ofstream kept(out.refine_dir() / "kept.txt");
    for (auto l : r.kept_labels) kept << l << '\n';
  }
  write_frame_masks(out.refined_masks(), data, r.masks);
  write_manifest(out.manifest("refine"), "refine", cfg,
                 {out.joint_cloud(), out.tmp_masks(), cfg.data / "frames"}, {out.refine_dir()});
  spdlog::info("refine kept {} of {} tracked objects", r.kept_labels.size(), r.objects.size());
}

void stage_finalize(const PipelineConfig& cfg) {
  const Dataset data = load_dataset(cfg);
  const StagePaths out{cfg.output};
  std::optional<std::vector<BinaryMask>> masks;
  std::vector<fs::path> inputs = dataset_inputs(cfg);
  switch (cfg.finalize_masks) {
    case MaskSource::Tmr:
      masks = read_frame_masks(out.refined_masks(), data, "refine");
      inputs.push_back(out.refined_masks());
      break;
    case MaskSource::Tmp:
      masks = read_frame_masks(out.tmp_masks(), data, "train");
      inputs.push_back(out.tmp_masks());
      break;
    case MaskSource::GroundTruth: {
      std::vector<BinaryMask> gt;
      for (std::size_t idx : data.sequence.train) {
        const auto& m = data.sequence.frames[idx].gt_mask;
        if (!m) throw PipelineError("finalize.masks = gt but frame " + std::to_string(idx) + " has no gt mask");
        gt.push_back(*m);
      }
      masks = std::move(gt);
      break;
    }
    case MaskSource::None:
      break;
  }
  reset_dir(out.root / "finalize");
  PipelineConfig run = cfg;
  run.train.checkpoint_dir = out.root / "finalize" / "checkpoints";
  std::ofstream log(out.root / "finalize" / "train_log.txt");
  const TrainResult r = run_finalize(data, masks ? &*masks : nullptr, run, &log);
  write_checkpoint(out.final_cloud(), r.cloud);
  write_manifest(out.manifest("finalize"), "finalize", cfg, inputs, {out.root / "finalize"});
  spdlog::info("stage 2 finished after {} iterations", cfg.train.total_iterations);
}

void stage_eval(const PipelineConfig& cfg, const std::optional<fs::path>& cloud_path) {
  const Dataset data = load_dataset(cfg);
  const StagePaths out{cfg.output};
  const fs::path cp = cloud_path ? *cloud_path : out.final_cloud();
  const GaussianCloud cloud = read_stage_cloud(cp, "finalize");
  json report;
  report["config_hash"] = config_hash(cfg);
  report["cloud_sha256"] = file_sha256(cp);
  const ImageReport img = evaluate(cloud, data.sequence);
  report["image"] = image_report_json(img);
  std::vector<fs::path> inputs{cp};

  const bool has_gt = std::all_of(data.sequence.train.begin(), data.sequence.train.end(),
                                  [&](std::size_t i) { return data.sequence.frames[i].gt_mask.has_value(); });
  if (has_gt) {
    json masks = json::object();
    for (const auto& [name, dir, stage] : {std::tuple{"tmp", out.tmp_masks(), "train"},
                                           std::tuple{"tmr", out.refined_masks(), "refine"}}) {
      if (!fs::is_directory(dir)) continue;
      masks[name] = mask_report_json(mask_eval(read_frame_masks(dir, data, stage), data.sequence));
      inputs.push_back(dir);
    }
    report["masks"] = masks;
  }
  write_json(out.report(), report);
  write_manifest(out.manifest("eval"), "eval", cfg, inputs, {out.report()});
  spdlog::info("held-out PSNR {:.2f} dB, SSIM {:.4f}", img.mean_psnr, img.mean_ssim);
}

void stage_export_viz(const PipelineConfig& cfg) {
  const Dataset data = load_dataset(cfg);
  const StagePaths out{cfg.output};
  fs::path mask_dir = out.refined_masks();
  if (!fs::is_directory(mask_dir)) mask_dir = out.tmp_masks();
  if (!fs::is_directory(mask_dir)) throw MissingStageError("train", out.tmp_masks());
  const std::vector<BinaryMask> masks = read_frame_masks(mask_dir, data, "train");
  fs::path cloud_path = out.final_cloud();
  if (!fs::exists(cloud_path)) cloud_path = out.joint_cloud();
  const GaussianCloud cloud = read_stage_cloud(cloud_path, "train");
  const std::vector<Image> residuals = train_residuals(data, cloud);
  reset_dir(out.overlay());
  reset_dir(out.residual());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const std::size_t idx = data.sequence.train[i];
    write_png(mask_file(out.overlay(), idx), mask_overlay(data.sequence.frames[idx].image, masks[i]));
    write_png(mask_file(out.residual(), idx), residual_heatmap(residuals[i]));
  }
  write_manifest(out.manifest("export-viz"), "export-viz", cfg, {mask_dir, cloud_path},
                 {out.overlay(), out.residual()});
}

}  // namespace cleansplat
