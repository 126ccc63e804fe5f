"""Dense score/geometry/confidence maps, target generation and file I/O.

Maps are stored channel-last as float32 arrays of shape (H, W, C).  Pixel
(row, col) is represented by its center point (col + 0.5, row + 0.5).

Geometry channels are ordered (d_t, d_b, d_l, d_r, theta); confidence maps
use the same order.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import RotatedBox, angle_gap

GEO_CHANNELS = ("d_t", "d_b", "d_l", "d_r", "theta")
THETA = 4

LMAP_MAGIC = b"LMAP"
LMAP_VERSION = 1
_HEADER = struct.Struct("<4sIIII")

DEFAULT_SHRINK = 0.3


class MapFormatError(ValueError):
    """Malformed LMAP file or box list."""


class AmbiguityError(ValueError):
    """A positive pixel is claimed by more than one box."""


@dataclass(frozen=True)
class DenseMap:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"expected a non-empty (H, W, C) array, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("map contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def channel(self, i: int) -> np.ndarray:
        return self.data[:, :, i]


def pixel_centers(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs + 0.5, ys + 0.5


def instance_labels(boxes: Sequence[RotatedBox], h: int, w: int, shrink_ratio: float = 0.0) -> np.ndarray:
    """Index of the box owning each pixel center, -1 for background.

    Raises AmbiguityError when two (shrunk) boxes claim the same pixel.
    """
    xs, ys = pixel_centers(h, w)
    labels = np.full((h, w), -1, dtype=np.int32)
    for i, box in enumerate(boxes):
        inside = box.contains(xs, ys, shrink_ratio)
        if np.any(inside & (labels >= 0)):
            raise AmbiguityError(f"box {i} overlaps an earlier box")
        labels[inside] = i
    return labels


def generate_score_map(
    boxes: Sequence[RotatedBox], h: int, w: int, shrink_ratio: float = DEFAULT_SHRINK
) -> DenseMap:
    if not 0 <= shrink_ratio < 0.5:
        raise ValueError(f"shrink_ratio must be in [0, 0.5), got {shrink_ratio}")
    xs, ys = pixel_centers(h, w)
    score = np.zeros((h, w), dtype=bool)
    for box in boxes:
        score |= box.contains(xs, ys, shrink_ratio)
    return DenseMap(score.astype(np.float32))


def generate_geo_map(boxes: Sequence[RotatedBox], score: DenseMap) -> DenseMap:
    """Ground-truth geometry at every positive score pixel, zeros elsewhere."""
    h, w = score.height, score.width
    xs, ys = pixel_centers(h, w)
    positive = score.channel(0) > 0
    owners = np.zeros((h, w), dtype=np.int32)
    geo = np.zeros((h, w, 5), dtype=np.float64)
    for box in boxes:
        inside = box.contains(xs, ys) & positive
        owners += inside
        u, v = box.local_coords(xs[inside], ys[inside])
        geo[inside, 0] = v + box.h / 2
        geo[inside, 1] = box.h / 2 - v
        geo[inside, 2] = u + box.w / 2
        geo[inside, 3] = box.w / 2 - u
        geo[inside, THETA] = box.theta
    if np.any(owners > 1):
        raise AmbiguityError("positive pixel lies inside more than one box")
    if np.any(positive & (owners == 0)):
        raise ValueError("positive pixel lies outside every box")
    # pixel centers exactly on a boundary give -0.0 or tiny negatives from rounding
    geo[:, :, :4] = np.maximum(geo[:, :, :4], 0.0)
    return DenseMap(geo)


def component_gaps(pred: DenseMap, gt: DenseMap) -> np.ndarray:
    """Per-pixel |pred - gt| per channel; the angle channel uses the folded angle gap."""
    p = pred.data.astype(np.float64)
    g = gt.data.astype(np.float64)
    gaps = np.abs(p - g)
    gaps[:, :, THETA] = angle_gap(p[:, :, THETA], g[:, :, THETA])
    return gaps


def normalize_gaps(gaps: np.ndarray) -> np.ndarray:
    """Turn the gaps of one instance/channel into confidences in [0, 1].

    The smallest gap maps to 1 and the largest to 0.  When all gaps are equal
    every pixel gets confidence 1.
    """
    lo, hi = gaps.min(), gaps.max()
    if hi == lo:
        return np.ones_like(gaps)
    return 1.0 - (gaps - lo) / (hi - lo)


def generate_conf_map(
    pred: DenseMap,
    gt: DenseMap,
    mask: DenseMap,
    boxes: Sequence[RotatedBox],
    full_box: bool = False,
) -> DenseMap:
    """Confidence targets from prediction gaps, normalized per instance and channel.

    Instances are the GT ``boxes``.  The supervised region of an instance is
    its pixels with positive ``mask``, or all of its pixels when ``full_box``.
    Everything outside the region is 0.
    """
    if pred.shape != gt.shape or pred.shape[:2] != mask.shape[:2]:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    h, w = mask.height, mask.width
    xs, ys = pixel_centers(h, w)
    positive = mask.channel(0) > 0
    gaps = component_gaps(pred, gt)
    conf = np.zeros((h, w, pred.channels), dtype=np.float64)
    for box in boxes:
        region = box.contains(xs, ys)
        if not full_box:
            region &= positive
        if not region.any():
            continue
        inst = gaps[region]
        for c in range(inst.shape[1]):
            inst[:, c] = normalize_gaps(inst[:, c])
        conf[region] = inst
    return DenseMap(conf)


def write_map(m: DenseMap, path) -> None:
    h, w, c = m.shape
    payload = m.data.astype("<f4", copy=False).tobytes(order="C")
    _atomic_write(Path(path), _HEADER.pack(LMAP_MAGIC, LMAP_VERSION, h, w, c) + payload)


def read_map(path) -> DenseMap:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MapFormatError(f"{path}: truncated header")
    magic, version, h, w, c = _HEADER.unpack_from(raw)
    if magic != LMAP_MAGIC:
        raise MapFormatError(f"{path}: bad magic {magic!r}")
    if version != LMAP_VERSION:
        raise MapFormatError(f"{path}: unsupported version {version}")
    if min(h, w, c) < 1:
        raise MapFormatError(f"{path}: empty dimensions {h}x{w}x{c}")
    expected = h * w * c * 4
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise MapFormatError(f"{path}: payload is {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype="<f4").reshape(h, w, c)
    if not np.all(np.isfinite(data)):
        raise MapFormatError(f"{path}: non-finite values in payload")
    return DenseMap(data.astype(np.float32))


def boxes_to_json(boxes: Iterable[RotatedBox]) -> str:
    return json.dumps([b.to_dict() for b in boxes], indent=1) + "\n"


def write_boxes(boxes: Iterable[RotatedBox], path) -> None:
    _atomic_write(Path(path), boxes_to_json(boxes).encode("utf-8"))


def read_boxes(path) -> list[RotatedBox]:
    try:
        items = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(items, list):
            raise TypeError("top level is not an array")
        boxes = [RotatedBox.from_dict(d) for d in items]
    except (ValueError, TypeError, KeyError) as exc:
        raise MapFormatError(f"{path}: bad box list: {exc}") from exc
    if not all(math.isfinite(b.area) for b in boxes):
        raise MapFormatError(f"{path}: non-finite box")
    return boxes


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
