import math

import numpy as np
import pytest

import cleansplat as cs

SMALL = """
seed: 5
scene:
  archetype: transient
  width: 32
  height: 24
  train_frames: 5
  test_frames: 2
  static_gaussians: 80
  mover_gaussians: 8
train:
  total_iterations: 30
  propagation_iteration: 20
  depth_loss_start: 10
  opacity_reset_interval: 0
  checkpoint_interval: 0
tmp:
  start_iteration: 5
  pause_after_reset: 5
"""


def one_gaussian():
    # mean, log scale, quaternion (w, x, y, z), opacity logit, color logits
    return np.array([[0.0, 0.0, 3.0, -1.5, -1.5, -1.5, 1.0, 0.0, 0.0, 0.0, 2.0, 3.0, -3.0, -3.0]])


def test_render_shapes_and_values():
    cam = cs.Camera(16, 12, 14.0, 14.0, 7.5, 5.5)
    color, depth, alpha = cs.render(one_gaussian(), cam)
    assert color.shape == (12, 16, 3)
    assert depth.shape == (12, 16)
    assert alpha.shape == (12, 16)
    assert 0.0 < alpha.max() <= 1.0
    peak = np.unravel_index(np.argmax(alpha), alpha.shape)
    assert color[peak][0] > color[peak][1]
    assert cs.psnr(color, color) == 99.0
    assert cs.ssim(color, color) == pytest.approx(1.0)


def test_bad_arrays_are_rejected():
    cam = cs.Camera(4, 4, 4.0, 4.0, 1.5, 1.5)
    with pytest.raises(ValueError):
        cs.render(np.zeros((2, 5)), cam)


def test_png_and_checkpoint_round_trip(tmp_path):
    img = np.linspace(0.0, 1.0, 4 * 3 * 3).reshape(4, 3, 3)
    cs.write_png(tmp_path / "a.png", img)
    back = cs.read_png(tmp_path / "a.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12
    params = one_gaussian()
    cs.write_checkpoint(tmp_path / "c.gsck", params)
    assert np.array_equal(cs.read_checkpoint(tmp_path / "c.gsck"), params)


def test_indicator_solution():
    assert cs.optimal_transient_probability(0.2, 0.1) == 1.0
    assert cs.optimal_transient_probability(0.05, 0.1) == 0.0


def test_config_errors():
    with pytest.raises(cs.ConfigError) as err:
        cs.parse_config("seed: 1\nbogus: 2\n", "x.yaml")
    assert "x.yaml:2" in str(err.value)


def test_pipeline_stages(tmp_path):
    cfg = cs.parse_config(SMALL)
    cfg.data = tmp_path / "data"
    cfg.output = tmp_path / "run"
    assert cfg.archetype == "transient"
    assert len(cfg.hash()) == 64
    cs.generate(cfg)
    with pytest.raises(cs.MissingStageError):
        cs.refine(cfg)
    cs.train(cfg)
    cs.refine(cfg)
    cs.finalize(cfg)
    cs.evaluate(cfg)
    report = (tmp_path / "run" / "report.json").read_text()
    assert '"mean_psnr"' in report
    cs.evaluate(cfg, tmp_path / "data" / "gt_static.gsck")
    assert '"mean_psnr": 99.0' in (tmp_path / "run" / "report.json").read_text()
    masks = sorted((tmp_path / "data" / "gt_masks").glob("*.png"))
    assert masks and cs.read_mask_png(masks[0]).dtype == np.bool_
    assert math.isfinite(cs.read_png(tmp_path / "data" / "frames" / "0.png").sum())
