"""Detection matching, recall/precision/Hmean, and best-feature location statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import RotatedBox, quad_iou

TABLE_THRESHOLDS = (0.5, 0.6, 0.7, 0.8)
GRID = 32


@dataclass(frozen=True)
class Counts:
    tp: int
    fp: int
    fn: int

    @property
    def n_pred(self) -> int:
        return self.tp + self.fp

    @property
    def n_gt(self) -> int:
        return self.tp + self.fn

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class Scores:
    recall: float
    precision: float
    hmean: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, c: Counts) -> "Scores":
        # vacuous success when there is nothing to find and nothing predicted
        recall = c.tp / c.n_gt if c.n_gt else 1.0
        precision = c.tp / c.n_pred if c.n_pred else (1.0 if c.n_gt == 0 else 0.0)
        # 2PR / (P + R) rewritten over counts, which avoids rounding drift
        if c.n_pred + c.n_gt == 0:
            hmean = 1.0
        else:
            hmean = 2 * c.tp / (c.n_pred + c.n_gt)
        return cls(recall, precision, hmean, c.tp, c.fp, c.fn)


def iou_matrix(preds: Sequence[RotatedBox], gts: Sequence[RotatedBox]) -> np.ndarray:
    m = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            m[i, j] = quad_iou(p, g)
    return m


def match(preds: Sequence[RotatedBox], gts: Sequence[RotatedBox], iou_thresh: float, ious=None) -> list[tuple[int, int]]:
    """Greedy one-to-one matching on IoU >= threshold.

    Pairs are taken in order of descending IoU, ties by lower pred index then
    lower gt index.  Returns (pred_index, gt_index) pairs.
    """
    if not 0 < iou_thresh < 1:
        raise ValueError(f"iou_thresh must be in (0, 1), got {iou_thresh}")
    if ious is None:
        ious = iou_matrix(preds, gts)
    pi, gi = np.nonzero(ious >= iou_thresh)
    pairs = sorted(zip(pi.tolist(), gi.tolist()), key=lambda t: (-ious[t[0], t[1]], t[0], t[1]))
    used_p, used_g, out = set(), set(), []
    for p, g in pairs:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        out.append((p, g))
    return out


def count(preds, gts, thresholds: Iterable[float] = TABLE_THRESHOLDS) -> dict[float, Counts]:
    ious = iou_matrix(preds, gts)
    out = {}
    for t in thresholds:
        tp = len(match(preds, gts, t, ious))
        out[t] = Counts(tp, len(preds) - tp, len(gts) - tp)
    return out


def report(preds, gts, thresholds: Iterable[float] = TABLE_THRESHOLDS) -> dict[float, Scores]:
    return {t: Scores.from_counts(c) for t, c in count(preds, gts, thresholds).items()}


def report_many(pairs: Iterable[tuple[Sequence[RotatedBox], Sequence[RotatedBox]]], thresholds=TABLE_THRESHOLDS) -> dict[float, Scores]:
    """Pool counts over several images, then score once."""
    thresholds = tuple(thresholds)
    total = {t: Counts(0, 0, 0) for t in thresholds}
    for preds, gts in pairs:
        for t, c in count(preds, gts, thresholds).items():
            total[t] = total[t] + c
    return {t: Scores.from_counts(c) for t, c in total.items()}


def mean_best_iou(preds: Sequence[RotatedBox], gts: Sequence[RotatedBox]) -> float:
    """Average over GT boxes of the best IoU achieved by any prediction."""
    if not gts:
        return 1.0 if not preds else 0.0
    if not preds:
        return 0.0
    return float(iou_matrix(preds, gts).max(axis=0).mean())


def report_to_json(rep: dict[float, Scores]) -> str:
    return json.dumps({f"{t:.2f}": asdict(s) for t, s in sorted(rep.items())}, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> dict[float, Scores]:
    return {float(k): Scores(**v) for k, v in json.loads(text).items()}


# -- best-feature location statistics ----------------------------------------

def normalized_position(box: RotatedBox, x: float, y: float) -> tuple[float, float]:
    """Position of an image point in the box frame scaled to [0, 1]^2 (u rightward, v downward)."""
    u, v = box.local_coords(x, y)
    return float(u) / box.w + 0.5, float(v) / box.h + 0.5


def grid_cell(u: float, v: float, grid: int = GRID) -> tuple[int, int]:
    """(row, col) of the grid cell containing normalized point (u, v)."""
    col = min(grid - 1, max(0, math.floor(u * grid)))
    row = min(grid - 1, max(0, math.floor(v * grid)))
    return row, col


def feature_location_stats(instances, grid: int = GRID) -> np.ndarray:
    """Histogram of where each instance's most confident pixel sits, per channel.

    ``instances`` yields (box, conf, mask) with conf an (H, W, C) array and
    mask an (H, W) boolean array selecting the instance's pixels.  Returns an
    int array of shape (C, grid, grid).  Among pixels tied at the maximum the
    one landing in the lowest row-major cell wins.
    """
    hist = None
    for box, conf, mask in instances:
        conf = np.asarray(conf)
        if hist is None:
            hist = np.zeros((conf.shape[-1], grid, grid), dtype=np.int64)
        rows, cols = np.nonzero(np.asarray(mask))
        if rows.size == 0:
            raise ValueError("instance has an empty region")
        for ch in range(conf.shape[-1]):
            vals = conf[rows, cols, ch]
            best = np.flatnonzero(vals == vals.max())
            cells = [grid_cell(*normalized_position(box, cols[i] + 0.5, rows[i] + 0.5), grid) for i in best]
            r, c = min(cells)
            hist[ch, r, c] += 1
    if hist is None:
        hist = np.zeros((5, grid, grid), dtype=np.int64)
    return hist


def histogram_to_json(hist: np.ndarray) -> str:
    return json.dumps(hist.tolist()) + "\n"


def histogram_to_csv(hist: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "row", "col", "count"])
    for ch, r, c in zip(*np.nonzero(hist)):
        w.writerow([int(ch), int(r), int(c), int(hist[ch, r, c])])
    return buf.getvalue()


def cell_overlaps(row: int, col: int, region, grid: int = GRID) -> bool:
    """Whether grid cell (row, col) intersects a normalized (u0, v0, u1, v1) rectangle."""
    u0, v0, u1, v1 = region
    return col / grid <= u1 and (col + 1) / grid >= u0 and row / grid <= v1 and (row + 1) / grid >= v0


def mass_in_regions(hist: np.ndarray, regions) -> float:
    """Fraction of histogram counts falling in cells that touch each channel's region."""
    inside = total = 0
    for ch, region in enumerate(regions):
        for r, c in zip(*np.nonzero(hist[ch])):
            n = int(hist[ch, r, c])
            total += n
            if cell_overlaps(int(r), int(c), region, hist.shape[-1]):
                inside += n
    return inside / total if total else 0.0
