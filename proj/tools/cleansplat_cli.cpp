#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "cleansplat/pipeline.hpp"

using namespace cleansplat;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kMissingStage = 3 };

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string spec;
  std::string cloud;
  std::string masks;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

PipelineConfig effective_config(const Options& o, bool generating) {
  PipelineConfig cfg = o.config.empty() ? parse_config("", "defaults") : load_config(o.config);
  if (!o.spec.empty()) {
    const auto a = parse_archetype(o.spec);
    if (!a) throw ConfigError("unknown scene spec '" + o.spec + "'", 0);
    if (a != cfg.scene.archetype) cfg.scene = SceneSpec::preset(*a);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (generating && !o.out.empty()) cfg.data = o.out;
  if (!generating && !o.out.empty()) cfg.output = o.out;
  if (!o.data.empty()) cfg.data = o.data;
  if (!o.masks.empty()) {
    if (o.masks == "tmr") cfg.finalize_masks = MaskSource::Tmr;
    else if (o.masks == "tmp") cfg.finalize_masks = MaskSource::Tmp;
    else if (o.masks == "none") cfg.finalize_masks = MaskSource::None;
    else if (o.masks == "gt") cfg.finalize_masks = MaskSource::GroundTruth;
    else throw ConfigError("--masks must be one of tmr, tmp, none, gt", 0);
  }
  if (cfg.data.empty()) throw ConfigError("no dataset directory: set `data` in the config or pass --data", 0);
  if (cfg.output.empty()) cfg.output = cfg.data / "run";
  if (cfg.feature_backend == "file" && !std::filesystem::is_directory(cfg.feature_dir)) {
    throw ConfigError("features.dir does not exist: " + cfg.feature_dir.string(), 0);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transient-robust Gaussian splatting pipeline"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "YAML pipeline config")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_flag("-q,--quiet", o.quiet, "Only print warnings and errors");
  };
  auto staged = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("-d,--data", o.data, "Dataset directory");
    sub->add_option("-o,--out", o.out, "Output directory for stage artifacts (default <data>/run)");
  };

  CLI::App* gen = app.add_subcommand("generate", "Render a synthetic dataset");
  common(gen);
  gen->add_option("--spec", o.spec, "Scene archetype: transient, semi_transient, slow, adversarial_static");
  gen->add_option("-o,--out", o.out, "Dataset directory to write");
  CLI::App* train = app.add_subcommand("train", "Stage 1: joint Gaussian and transient-predictor training");
  staged(train);
  CLI::App* refine = app.add_subcommand("refine", "Refine, propagate and filter the stage-1 transient masks");
  staged(refine);
  CLI::App* fin = app.add_subcommand("finalize", "Stage 2: fresh training with fixed transient masks");
  staged(fin);
  fin->add_option("--masks", o.masks, "Mask source: tmr, tmp, none, gt");
  CLI::App* eval = app.add_subcommand("eval", "Score a cloud on the held-out views and write report.json");
  staged(eval);
  eval->add_option("--cloud", o.cloud, "Checkpoint to score (default: finalize output)");
  CLI::App* viz = app.add_subcommand("export-viz", "Write mask overlays and residual heatmaps");
  staged(viz);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (o.quiet) spdlog::set_level(spdlog::level::warn);
    const bool generating = gen->parsed();
    const PipelineConfig cfg = effective_config(o, generating);
    if (generating) {
      stage_generate(cfg);
    } else if (train->parsed()) {
      stage_train(cfg);
    } else if (refine->parsed()) {
      stage_refine(cfg);
    } else if (fin->parsed()) {
      stage_finalize(cfg);
    } else if (eval->parsed()) {
      stage_eval(cfg, o.cloud.empty() ? std::nullopt : std::optional<std::filesystem::path>(o.cloud));
    } else if (viz->parsed()) {
      stage_export_viz(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const MissingStageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
