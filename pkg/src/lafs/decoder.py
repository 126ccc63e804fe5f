"""Turning dense maps into boxes.

Pipeline: every pixel above the score threshold becomes a candidate box;
candidates are grouped greedily by IoU with a seed; each group is reduced to
one box.  Three reductions are available:

``lafs``
    For each of the five components pick the top-k candidates by that
    component's confidence and merge them with confidence weights.  The angle
    is merged first; boundaries are then realized as line coordinates in the
    frame rotated by the merged angle about the seed point.
``baseline``
    The seed's own box (all components from a single location).
``constrained``
    Like ``lafs``, but a candidate may supply a boundary only if it lies
    closer to that boundary than ``constraint_ratio`` times the adjacent edge.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .geometry import BoxComponents, Point, RotatedBox, box_from_components, quad_iou
from .maps import DenseMap

log = logging.getLogger(__name__)

# channel indices, shared with the map layout
TOP, BOTTOM, LEFT, RIGHT, THETA = range(5)


class Mode(str, Enum):
    LAFS = "lafs"
    BASELINE = "baseline"
    CONSTRAINED = "constrained"


@dataclass(frozen=True)
class DecodeParams:
    score_thresh: float = 0.8
    group_iou_thresh: float = 0.5
    k: int = 2
    mode: Mode = Mode.LAFS
    constraint_ratio: float = 1 / 3

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0 < self.score_thresh < 1:
            raise ValueError(f"score_thresh must be in (0, 1), got {self.score_thresh}")
        if not 0 < self.group_iou_thresh < 1:
            raise ValueError(f"group_iou_thresh must be in (0, 1), got {self.group_iou_thresh}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.constraint_ratio <= 0:
            raise ValueError("constraint_ratio must be positive")


@dataclass(frozen=True)
class Candidate:
    point: Point
    components: BoxComponents
    comp_conf: tuple[float, float, float, float, float]
    cls_score: float
    box: RotatedBox
    index: int  # row-major pixel index, the final tie-break everywhere

    @classmethod
    def at(cls, point, components, comp_conf, cls_score=1.0, index=0) -> "Candidate":
        p = Point(float(point[0]), float(point[1]))
        comp = components if isinstance(components, BoxComponents) else BoxComponents(*map(float, components))
        return cls(p, comp, tuple(float(c) for c in comp_conf), float(cls_score), box_from_components(p, comp), int(index))


def extract_candidates(score: DenseMap, geo: DenseMap, conf: DenseMap, params: DecodeParams) -> list[Candidate]:
    """One candidate per pixel with score >= threshold, best score first.

    Negative distances in ``geo`` are clamped to 0.
    """
    h, w = score.height, score.width
    if geo.shape != (h, w, 5) or conf.shape != (h, w, 5):
        raise ValueError(f"map shapes disagree: score {score.shape}, geo {geo.shape}, conf {conf.shape}")
    flat_score = score.channel(0).ravel()
    idx = np.flatnonzero(flat_score >= params.score_thresh)
    if idx.size == 0:
        return []
    s = flat_score[idx]
    order = np.lexsort((idx, -s.astype(np.float64)))
    idx = idx[order]
    g = geo.data.reshape(-1, 5)[idx].astype(np.float64)
    g[:, :4] = np.maximum(g[:, :4], 0.0)
    c = conf.data.reshape(-1, 5)[idx].astype(np.float64)
    rows, cols = np.divmod(idx, w)
    out = []
    for j, pix in enumerate(idx.tolist()):
        p = Point(float(cols[j]) + 0.5, float(rows[j]) + 0.5)
        comp = BoxComponents(*g[j].tolist())
        out.append(Candidate(p, comp, tuple(c[j].tolist()), float(flat_score[pix]), box_from_components(p, comp), pix))
    return out


def group_candidates(cands: Sequence[Candidate], group_iou_thresh: float) -> list[list[Candidate]]:
    """Greedy IoU clustering.

    The best unassigned candidate seeds a group and absorbs every unassigned
    candidate whose box overlaps the seed's by more than the threshold.  Each
    group lists its seed first, then members in input order.
    """
    n = len(cands)
    if n == 0:
        return []
    boxes = np.array([c.box.aabb() for c in cands])
    free = np.ones(n, dtype=bool)
    groups = []
    for s in range(n):
        if not free[s]:
            continue
        free[s] = False
        x0, y0, x1, y1 = boxes[s]
        near = np.flatnonzero(
            free & (boxes[:, 0] < x1) & (boxes[:, 2] > x0) & (boxes[:, 1] < y1) & (boxes[:, 3] > y0)
        )
        seed_box = cands[s].box
        members = [j for j in near.tolist() if quad_iou(seed_box, cands[j].box) > group_iou_thresh]
        free[members] = False
        groups.append([cands[s]] + [cands[j] for j in members])
    return groups


def weighted_merge(values: Sequence[float], weights: Sequence[float]) -> float:
    """Confidence-weighted mean; falls back to the plain mean when all weights are 0."""
    total = math.fsum(weights)
    if total <= 0:
        return math.fsum(values) / len(values)
    return math.fsum(w * v for w, v in zip(weights, values)) / total


def _rank_key(channel: int):
    return lambda c: (-c.comp_conf[channel], -c.cls_score, c.index)


def top_k(group: Sequence[Candidate], channel: int, k: int) -> list[Candidate]:
    return sorted(group, key=_rank_key(channel))[:k]


def _boundary_coord(c: Candidate, channel: int, seed: Point, theta: float) -> float:
    # the candidate's point in the frame rotated by -theta about the seed
    dx, dy = c.point.x - seed.x, c.point.y - seed.y
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    x = seed.x + cos_t * dx + sin_t * dy
    y = seed.y - sin_t * dx + cos_t * dy
    d = c.components
    if channel == TOP:
        return y - d.d_t
    if channel == BOTTOM:
        return y + d.d_b
    if channel == LEFT:
        return x - d.d_l
    return x + d.d_r


def lafs_merge(group: Sequence[Candidate], k: int, constraint_ratio: Optional[float] = None) -> Optional[RotatedBox]:
    """Fuse a candidate group into one box, component by component.

    ``group[0]`` is the seed: its point is the rotation center and, in
    constrained mode, its box defines the neighbor bands.  ``k`` larger than
    the group is clamped.  Returns None when the merged box is degenerate.
    """
    if not group:
        raise ValueError("empty group")
    if k < 1:
        raise ValueError("k must be >= 1")
    seed = group[0]
    sp = seed.point

    chosen = top_k(group, THETA, k)
    theta = weighted_merge([c.components.theta for c in chosen], [c.comp_conf[THETA] for c in chosen])

    if constraint_ratio is not None:
        sd = seed.components
        seed_lines = (sp.y - sd.d_t, sp.y + sd.d_b, sp.x - sd.d_l, sp.x + sd.d_r)
        seed_h, seed_w = sd.d_t + sd.d_b, sd.d_l + sd.d_r

    coords = []
    for ch in (TOP, BOTTOM, LEFT, RIGHT):
        pool = group
        if constraint_ratio is not None:
            pool = _neighbors(group, ch, sp, theta, seed_lines[ch], seed_h if ch in (TOP, BOTTOM) else seed_w, constraint_ratio)
        chosen = top_k(pool, ch, k)
        coords.append(
            weighted_merge([_boundary_coord(c, ch, sp, theta) for c in chosen], [c.comp_conf[ch] for c in chosen])
        )
    y_t, y_b, x_l, x_r = coords
    if not (x_l < x_r and y_t < y_b):
        return None
    mx, my = (x_l + x_r) / 2 - sp.x, (y_t + y_b) / 2 - sp.y
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    return RotatedBox(sp.x + cos_t * mx - sin_t * my, sp.y + sin_t * mx + cos_t * my, x_r - x_l, y_b - y_t, theta)


def _neighbors(group, channel, seed: Point, theta, line, edge, ratio):
    """Candidates within ``ratio * edge`` of the seed's boundary line.

    Falls back to the single closest candidate when the band is empty.
    """
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    def dist(c):
        dx, dy = c.point.x - seed.x, c.point.y - seed.y
        if channel in (TOP, BOTTOM):
            return abs(seed.y - sin_t * dx + cos_t * dy - line)
        return abs(seed.x + cos_t * dx + sin_t * dy - line)

    limit = ratio * edge
    dists = [dist(c) for c in group]
    pool = [c for c, d in zip(group, dists) if d < limit]
    if pool:
        return pool
    best = min(range(len(group)), key=lambda i: (dists[i], _rank_key(channel)(group[i])))
    return [group[best]]


def merge_group(group: Sequence[Candidate], params: DecodeParams) -> Optional[RotatedBox]:
    if params.mode is Mode.BASELINE:
        return group[0].box
    ratio = params.constraint_ratio if params.mode is Mode.CONSTRAINED else None
    return lafs_merge(group, params.k, ratio)


@dataclass
class DecodeResult:
    boxes: list[RotatedBox]
    n_candidates: int
    n_groups: int
    n_discarded: int


def decode_detailed(
    score: DenseMap, geo: DenseMap, conf: DenseMap, params: DecodeParams = DecodeParams(), threads: int = 1
) -> DecodeResult:
    cands = extract_candidates(score, geo, conf, params)
    groups = group_candidates(cands, params.group_iou_thresh)
    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            merged = list(pool.map(lambda g: merge_group(g, params), groups))
    else:
        merged = [merge_group(g, params) for g in groups]
    boxes = [b for b in merged if b is not None]
    discarded = len(merged) - len(boxes)
    if discarded:
        log.warning("discarded %d degenerate merged boxes", discarded)
    return DecodeResult(boxes, len(cands), len(groups), discarded)


def decode(
    score: DenseMap, geo: DenseMap, conf: DenseMap, params: DecodeParams = DecodeParams(), threads: int = 1
) -> list[RotatedBox]:
    return decode_detailed(score, geo, conf, params, threads).boxes
