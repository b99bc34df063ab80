#include <doctest.h>

#include <filesystem>

#include "cleansplat/pipeline.hpp"

using namespace cleansplat;
namespace fs = std::filesystem;

namespace {

int error_line(const std::string& text) {
  try {
    parse_config(text, "cfg.yaml");
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

std::string error_text(const std::string& text) {
  try {
    parse_config(text, "cfg.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("empty config keeps defaults") {
  const PipelineConfig c = parse_config("");
  const PipelineConfig d;
  CHECK(c.seed == d.seed);
  CHECK(c.train.total_iterations == d.train.total_iterations);
  CHECK(c.oracle.patch_size == 8);
  CHECK(c.finalize_masks == MaskSource::Tmr);
  CHECK(config_hash(c) == config_hash(d));
}

TEST_CASE("values are read from every section") {
  const PipelineConfig c = parse_config(R"(
seed: 42
data: /tmp/d
scene:
  archetype: semi_transient
  halt_frames: 5
features:
  patch_size: 6
train:
  total_iterations: 900
  propagation_iteration: 600
  learning_rates:
    color: 0.01
tmp:
  use_consistency: false
tmr:
  memory: 7
finalize:
  masks: gt
)");
  CHECK(c.seed == 42);
  CHECK(c.data == "/tmp/d");
  CHECK(c.scene.archetype == Archetype::SemiTransient);
  CHECK(c.scene.halt_frames == 5);
  CHECK(c.scene.train_frames == SceneSpec::preset(Archetype::SemiTransient).train_frames);
  CHECK(c.oracle.patch_size == 6);
  CHECK(c.train.total_iterations == 900);
  CHECK(c.train.learning_rates.color == 0.01);
  CHECK_FALSE(c.tmp.use_consistency);
  CHECK(c.tmr.memory == 7);
  CHECK(c.tmr.dilation == c.train.dilation);
  CHECK(c.finalize_masks == MaskSource::GroundTruth);
}

TEST_CASE("errors carry the offending line") {
  CHECK(error_line("seed: 1\ntrain:\n  total_iterations: 10\n  bogus: 3\n") == 4);
  CHECK(error_line("seed: 1\ntrain:\n  learning_rates:\n    colour: 0.1\n") == 4);
  CHECK(error_line("seed: 1\n\ntmp:\n  learning_rate: fast\n") == 4);
  CHECK(error_line("finalize:\n  masks: maybe\n") == 2);
  CHECK(error_line("scene:\n  archetype: ghost\n") == 2);
  CHECK(error_line("train: [1, 2]\n") == 1);
  CHECK(error_line("seed: [\n") > 0);
  CHECK(error_text("seed: 1\nwhat: 2\n") == "cfg.yaml:2: unknown key 'what'");
  CHECK(error_text("tmr:\n  memroy: 3\n") == "cfg.yaml:2: unknown key 'tmr.memroy'");
}

TEST_CASE("semantic validation failures are config errors") {
  CHECK(error_line("train:\n  total_iterations: 10\n  propagation_iteration: 20\n") == 0);
  CHECK(error_line("features:\n  backend: file\n") == 0);
  CHECK(error_line("segmenter:\n  backend: magic\n") == 0);
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.yaml"), ConfigError);
}

TEST_CASE("canonical yaml round trips and hashes ignore paths") {
  PipelineConfig c = parse_config("seed: 9\nscene:\n  archetype: adversarial_static\ntrain:\n  lambda_depth: 0.125\n");
  const PipelineConfig back = parse_config(config_to_yaml(c));
  CHECK(config_to_yaml(back) == config_to_yaml(c));
  CHECK(config_hash(back) == config_hash(c));

  PipelineConfig moved = c;
  moved.data = "/elsewhere";
  moved.output = "/other";
  CHECK(config_hash(moved) == config_hash(c));
  PipelineConfig changed = c;
  changed.seed = 10;
  CHECK(config_hash(changed) != config_hash(c));
  changed = c;
  changed.tmp.lambda_prior = 0.2;
  CHECK(config_hash(changed) != config_hash(c));
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("shipped config loads") {
  const PipelineConfig c = load_config(fs::path(CLEANSPLAT_SOURCE_DIR) / "configs" / "desk.yaml");
  CHECK(c.scene.archetype == Archetype::SemiTransient);
  CHECK(c.train.propagation_iteration == 2500);
  CHECK(c.tmp.learning_rate == 0.005);
}
