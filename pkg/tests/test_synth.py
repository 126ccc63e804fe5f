import itertools
import json

import numpy as np
import pytest

from lafs.decoder import DecodeParams, Mode, decode
from lafs.geometry import RotatedBox, quad_iou
from lafs.maps import normalize_gaps, component_gaps
from lafs.synth import (
    CapacityError,
    ConfidenceMode,
    ConfigError,
    NoiseConfig,
    NoiseModel,
    SceneConfig,
    config_hash,
    generate_scene,
    load_config,
    parse_config,
    preset,
    simulate_predictions,
    suite,
)


def test_zero_boxes():
    assert generate_scene(SceneConfig(n_boxes=0)) == []


def test_scene_is_deterministic():
    cfg = SceneConfig(n_boxes=6, seed=42)
    assert generate_scene(cfg) == generate_scene(cfg)
    assert generate_scene(cfg) != generate_scene(SceneConfig(n_boxes=6, seed=43))


@pytest.mark.parametrize("seed", range(5))
def test_boxes_disjoint_and_inside(seed):
    cfg = SceneConfig(height=512, width=512, n_boxes=3, seed=seed)
    boxes = generate_scene(cfg)
    assert len(boxes) == 3
    for a, b in itertools.combinations(boxes, 2):
        assert quad_iou(a, b) == 0.0
    for b in boxes:
        x0, y0, x1, y1 = b.aabb()
        assert x0 >= 0 and y0 >= 0 and x1 <= 512 and y1 <= 512


def test_capacity_error():
    with pytest.raises(CapacityError):
        generate_scene(SceneConfig(height=64, width=64, n_boxes=20, seed=0))


def test_bad_scene_config():
    with pytest.raises(ConfigError):
        SceneConfig(size_range=(10, 5))
    with pytest.raises(ConfigError):
        NoiseConfig(amplitude=-1)


def test_noise_free_predictions():
    boxes = generate_scene(SceneConfig(n_boxes=3, seed=1))
    sim = simulate_predictions(boxes, NoiseConfig(model=NoiseModel.NONE), 256, 256)
    np.testing.assert_array_equal(sim.geo_pred.data, sim.geo_gt.data)
    pos = sim.score.channel(0) > 0
    assert (sim.conf.data[pos] == 1).all()
    assert (sim.conf.data[~pos] == 0).all()


def test_amplitude_zero_decodes_exactly():
    scene, _ = preset("zoned", 2)
    noise = NoiseConfig(amplitude=0, angle_amplitude=0)
    boxes = generate_scene(scene)
    sim = simulate_predictions(boxes, noise, scene.height, scene.width)
    for mode in Mode:
        out = decode(sim.score, sim.geo_pred, sim.conf, DecodeParams(mode=mode))
        assert len(out) == len(boxes)
        assert all(max(quad_iou(p, g) for p in out) >= 0.99 for g in boxes)


@pytest.mark.parametrize("name", ["zoned", "degraded", "uniform"])
def test_maps_bit_identical(name):
    scene, noise = preset(name, 5)
    boxes = generate_scene(scene)
    a = simulate_predictions(boxes, noise, scene.height, scene.width)
    b = simulate_predictions(boxes, noise, scene.height, scene.width, threads=4)
    for field in ("score", "geo_pred", "geo_gt", "conf"):
        assert getattr(a, field).data.tobytes() == getattr(b, field).data.tobytes()


def test_oracle_confidence_satisfies_normalization():
    sim = suite("zoned", seeds=(6,))[0]
    gaps = component_gaps(sim.geo_pred, sim.geo_gt)
    for i in range(len(sim.boxes)):
        r = sim.labels == i
        for ch in range(5):
            want = normalize_gaps(gaps[r][:, ch])
            np.testing.assert_allclose(sim.conf.data[r][:, ch], want, atol=1e-6)
            assert sim.conf.data[r][:, ch].max() == pytest.approx(1.0)


def test_degraded_confidence_stays_in_range():
    sim = suite("degraded", seeds=(1,))[0]
    assert sim.conf.data.min() >= 0 and sim.conf.data.max() <= 1
    oracle = suite("zoned", seeds=(1,))[0]
    assert not np.array_equal(sim.conf.data, oracle.conf.data)
    np.testing.assert_array_equal(sim.geo_pred.data, oracle.geo_pred.data)


def test_zone_noise_is_smaller():
    # inside its zone a channel's error is far below the amplitude
    sim = suite("zoned", seeds=(0,))[0]
    gaps = component_gaps(sim.geo_pred, sim.geo_gt)
    pos = sim.labels >= 0
    assert gaps[pos].max() <= 6.0 + 1e-4
    assert gaps[pos][:, :4].min() < 0.3


def test_preset_names():
    with pytest.raises(ConfigError):
        preset("nope")
    scene, noise = preset("degraded", 4)
    assert scene.n_boxes == 7 and noise.confidence_mode is ConfidenceMode.DEGRADED


def test_parse_config_overrides():
    scene, noise = parse_config({"preset": "uniform", "seed": 3, "scene": {"n_boxes": 2}, "noise": {"amplitude": 1.5}})
    assert scene.n_boxes == 2 and scene.seed == 3
    assert noise.model is NoiseModel.UNIFORM and noise.amplitude == 1.5


@pytest.mark.parametrize(
    "doc",
    [{"bogus": 1}, {"scene": {"colour": 1}}, {"seed": "x"}, {"preset": "nope"}, {"noise": {"bias": 2}}, []],
)
def test_parse_config_errors(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_load_config_json_and_toml(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 9, "scene": {"n_boxes": 4}}))
    (tmp_path / "c.toml").write_text("seed = 9\n[scene]\nn_boxes = 4\n")
    a = load_config(tmp_path / "c.json")
    b = load_config(tmp_path / "c.toml")
    assert a == b
    assert config_hash(*a) == config_hash(*b)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_scene_boxes_are_rotated_boxes():
    boxes = generate_scene(SceneConfig(n_boxes=2, seed=8))
    assert all(isinstance(b, RotatedBox) for b in boxes)
    assert all(16 <= b.h <= 40 and 2 * b.h - 1e-9 <= b.w <= 6 * b.h + 1e-9 for b in boxes)
