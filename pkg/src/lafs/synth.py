"""Synthetic scenes and simulated network outputs.

A scene is a list of pairwise-disjoint rotated boxes on a blank canvas.  The
simulator stands in for a trained network: it produces the ground-truth score
and geometry maps, a noisy geometry prediction, and a confidence map.

Noise model, per instance and geometry channel: every channel owns a planted
zone, a rectangle in the instance's normalized frame ((0, 0) is the box's
top-left corner, (1, 1) its bottom-right).  Inside its zone a channel is
predicted with a small zero-mean error ``zone_scale * a * U(-1, 1)``.
Elsewhere the error is ``a * (bias * s + (1 - bias) * U(-1, 1))`` where ``s``
is a random sign drawn once per instance and channel, so errors outside the
zone share a systematic part and do not average away.  With ``bias = 0`` this
is plain i.i.d. uniform noise.  Errors are bounded by ``a`` in every case and
predicted distances are clamped at 0.

Every random draw comes from a Philox generator keyed by (seed, instance,
stream), so results do not depend on evaluation order or thread count.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import RotatedBox, quad_iou
from .maps import (
    DEFAULT_SHRINK,
    DenseMap,
    generate_conf_map,
    generate_geo_map,
    generate_score_map,
    instance_labels,
    pixel_centers,
)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

MAX_RETRIES = 1000

# (u0, v0, u1, v1) in the normalized instance frame, channel order d_t, d_b, d_l, d_r, theta.
# All lie inside the default shrunk core [0.3, 0.7]^2.  Top and bottom are best
# predicted from the opposite half, left and right likewise, the angle from the middle.
DEFAULT_ZONES = (
    (0.4, 0.5875, 0.6, 0.6625),
    (0.4, 0.3375, 0.6, 0.4125),
    (0.5875, 0.4, 0.6625, 0.6),
    (0.3375, 0.4, 0.4125, 0.6),
    (0.475, 0.4, 0.525, 0.6),
)


class CapacityError(RuntimeError):
    """The requested boxes could not be packed onto the canvas."""


class ConfigError(ValueError):
    """Invalid scene or noise configuration."""


class NoiseModel(str, Enum):
    NONE = "none"
    UNIFORM = "uniform"
    ZONED = "zoned"


class ConfidenceMode(str, Enum):
    ORACLE = "oracle"
    DEGRADED = "degraded"


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class SceneConfig:
    height: int = 256
    width: int = 256
    n_boxes: int = 5
    size_range: tuple[float, float] = (16.0, 40.0)  # box height (short side) in pixels
    aspect_range: tuple[float, float] = (2.0, 6.0)  # width / height
    angle_range: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    min_separation: float = 4.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "size_range", tuple(map(float, self.size_range)))
        object.__setattr__(self, "aspect_range", tuple(map(float, self.aspect_range)))
        object.__setattr__(self, "angle_range", tuple(map(float, self.angle_range)))
        if self.height < 1 or self.width < 1:
            raise ConfigError("canvas must be at least 1x1")
        if self.n_boxes < 0:
            raise ConfigError("n_boxes must be >= 0")
        for name in ("size_range", "aspect_range", "angle_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} is empty: {lo} > {hi}")
        if self.size_range[0] <= 0 or self.aspect_range[0] <= 0:
            raise ConfigError("sizes and aspects must be positive")
        if self.min_separation < 0:
            raise ConfigError("min_separation must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class NoiseConfig:
    model: NoiseModel = NoiseModel.ZONED
    amplitude: float = 6.0  # pixels, distance channels
    angle_amplitude: float = 0.08  # radians
    zones: tuple = DEFAULT_ZONES
    zone_scale: float = 0.05
    bias: float = 0.8
    confidence_mode: ConfidenceMode = ConfidenceMode.ORACLE
    degradation: float = 0.6
    shrink_ratio: float = DEFAULT_SHRINK
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model", NoiseModel(self.model))
        object.__setattr__(self, "confidence_mode", ConfidenceMode(self.confidence_mode))
        object.__setattr__(self, "zones", tuple(tuple(map(float, z)) for z in self.zones))
        if self.amplitude < 0 or self.angle_amplitude < 0 or self.zone_scale < 0:
            raise ConfigError("noise amplitudes must be >= 0")
        if len(self.zones) != 5 or any(len(z) != 4 or z[0] > z[2] or z[1] > z[3] for z in self.zones):
            raise ConfigError("zones must be five (u0, v0, u1, v1) rectangles")
        if not 0 <= self.bias <= 1:
            raise ConfigError("bias must be in [0, 1]")
        if not 0 <= self.degradation <= 1:
            raise ConfigError("degradation must be in [0, 1]")
        if not 0 <= self.shrink_ratio < 0.5:
            raise ConfigError("shrink_ratio must be in [0, 0.5)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Simulation:
    boxes: list
    score: DenseMap
    geo_pred: DenseMap
    geo_gt: DenseMap
    conf: DenseMap
    labels: np.ndarray  # owning instance per positive score pixel, -1 elsewhere


def generate_scene(cfg: SceneConfig) -> list[RotatedBox]:
    """Place ``n_boxes`` boxes inside the canvas, at least ``min_separation`` apart."""
    rng = _rng(cfg.seed, 0)
    boxes: list[RotatedBox] = []
    padded: list[RotatedBox] = []
    retries = 0
    while len(boxes) < cfg.n_boxes:
        h = rng.uniform(*cfg.size_range)
        w = h * rng.uniform(*cfg.aspect_range)
        theta = rng.uniform(*cfg.angle_range)
        cx = rng.uniform(0, cfg.width)
        cy = rng.uniform(0, cfg.height)
        box = RotatedBox(cx, cy, w, h, theta)
        pad = RotatedBox(cx, cy, w + cfg.min_separation, h + cfg.min_separation, theta)
        x0, y0, x1, y1 = box.aabb()
        fits = x0 >= 0 and y0 >= 0 and x1 <= cfg.width and y1 <= cfg.height
        if fits and all(quad_iou(pad, other) == 0.0 for other in padded):
            boxes.append(box)
            padded.append(pad)
            continue
        retries += 1
        if retries > MAX_RETRIES:
            raise CapacityError(f"placed {len(boxes)} of {cfg.n_boxes} boxes after {MAX_RETRIES} retries")
    return boxes


def in_zone(u, v, zone) -> np.ndarray:
    u0, v0, u1, v1 = zone
    return (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)


def _instance_noise(i: int, box: RotatedBox, xs, ys, cfg: NoiseConfig) -> np.ndarray:
    """Additive error for one instance's pixels, shape (n, 5)."""
    rng = _rng(cfg.seed, i, 0)
    n = xs.size
    sign = rng.choice([-1.0, 1.0], size=5)
    u = rng.uniform(-1.0, 1.0, size=(n, 5))
    amp = np.array([cfg.amplitude] * 4 + [cfg.angle_amplitude])
    xi = cfg.bias * sign + (1 - cfg.bias) * u
    if cfg.model is NoiseModel.ZONED:
        lu, lv = box.local_coords(xs, ys)
        nu, nv = lu / box.w + 0.5, lv / box.h + 0.5
        for ch, zone in enumerate(cfg.zones):
            z = in_zone(nu, nv, zone)
            xi[z, ch] = cfg.zone_scale * u[z, ch]
    return xi * amp


def simulate_predictions(boxes: Sequence[RotatedBox], cfg: NoiseConfig, h: int, w: int, threads: int = 1) -> Simulation:
    score = generate_score_map(boxes, h, w, cfg.shrink_ratio)
    geo_gt = generate_geo_map(boxes, score)
    labels = instance_labels(boxes, h, w, cfg.shrink_ratio)
    pred = geo_gt.data.astype(np.float64)

    if cfg.model is not NoiseModel.NONE:
        xs, ys = pixel_centers(h, w)
        regions = [labels == i for i in range(len(boxes))]

        def job(i):
            r = regions[i]
            return _instance_noise(i, boxes[i], xs[r], ys[r], cfg)

        noises = _map(job, range(len(boxes)), threads)
        for r, noise in zip(regions, noises):
            pred[r] += noise
        pred[:, :, :4] = np.maximum(pred[:, :, :4], 0.0)
    geo_pred = DenseMap(pred)

    conf = generate_conf_map(geo_pred, geo_gt, score, boxes)
    if cfg.confidence_mode is ConfidenceMode.DEGRADED:
        conf = degrade_confidence(conf, labels, cfg)
    return Simulation(list(boxes), score, geo_pred, geo_gt, conf, labels)


def degrade_confidence(conf: DenseMap, labels: np.ndarray, cfg: NoiseConfig) -> DenseMap:
    """Blend oracle confidence with uniform noise: (1 - d) * conf + d * U(0, 1).

    The blend stays inside [0, 1] without clamping, so no artificial ties at 1
    are created.  Background pixels stay 0.
    """
    d = cfg.degradation
    out = conf.data.astype(np.float64)
    for i in range(int(labels.max()) + 1 if labels.size else 0):
        r = labels == i
        rng = _rng(cfg.seed, i, 1)
        out[r] = (1 - d) * out[r] + d * rng.uniform(0.0, 1.0, size=(int(r.sum()), out.shape[2]))
    return DenseMap(np.clip(out, 0.0, 1.0))


def _map(fn, items, threads):
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- presets and suites -------------------------------------------------------

SUITE_SEEDS = tuple(range(10))


def preset(name: str, seed: int = 0) -> tuple[SceneConfig, NoiseConfig]:
    """Named scene/noise pairs.

    ``zoned``     planted per-channel zones, oracle confidence
    ``degraded``  same scenes, confidence blended with noise
    ``uniform``   location-independent noise, oracle confidence
    ``clean``     noiseless predictions
    """
    scene = SceneConfig(n_boxes=3 + seed % 6, seed=seed)
    noise = {
        "zoned": NoiseConfig(seed=seed),
        "degraded": NoiseConfig(confidence_mode=ConfidenceMode.DEGRADED, seed=seed),
        "uniform": NoiseConfig(model=NoiseModel.UNIFORM, seed=seed),
        "clean": NoiseConfig(model=NoiseModel.NONE, seed=seed),
    }
    if name not in noise:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(noise)}")
    return scene, noise[name]


def suite(name: str = "zoned", seeds: Sequence[int] = SUITE_SEEDS, threads: int = 1) -> list[Simulation]:
    out = []
    for s in seeds:
        scene, noise = preset(name, s)
        out.append(simulate_predictions(generate_scene(scene), noise, scene.height, scene.width, threads))
    return out


# -- config documents ---------------------------------------------------------

def _build(cls, raw: dict, base):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return replace(base, **raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from exc


def parse_config(doc: dict) -> tuple[SceneConfig, NoiseConfig]:
    """Build configs from a document with optional ``preset``, ``seed``, ``scene`` and ``noise`` keys.

    Explicit ``scene``/``noise`` entries override the preset's fields.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - {"preset", "seed", "scene", "noise"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    try:
        scene, noise = preset(doc.get("preset", "zoned"), seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    scene = _build(SceneConfig, dict(doc.get("scene", {})), scene)
    noise = _build(NoiseConfig, dict(doc.get("noise", {})), noise)
    return scene, noise


def load_config(path) -> tuple[SceneConfig, NoiseConfig]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        doc = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(doc)


def config_to_dict(scene: SceneConfig, noise: NoiseConfig) -> dict:
    def plain(obj):
        d = asdict(obj)
        return {k: (v.value if isinstance(v, Enum) else v) for k, v in d.items()}

    return {"scene": plain(scene), "noise": plain(noise)}


def config_hash(scene: SceneConfig, noise: NoiseConfig) -> str:
    blob = json.dumps(config_to_dict(scene, noise), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
