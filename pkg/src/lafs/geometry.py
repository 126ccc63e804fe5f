"""Rotated rectangle algebra.

Angle convention: image coordinates have x to the right and y down.  A box
with angle ``theta`` is the axis-aligned rectangle rotated about its center by

    x' = cx + cos(theta) * (x - cx) - sin(theta) * (y - cy)
    y' = cy + sin(theta) * (x - cx) + cos(theta) * (y - cy)

which is the standard counter-clockwise math rotation written on (x, y).  On
screen (y down) a positive angle therefore turns the box clockwise.  Angles
are normalized to ``[-pi/2, pi/2)``; ``theta`` and ``theta + pi`` describe the
same rectangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

HALF_PI = math.pi / 2


class InvalidInputError(ValueError):
    """Raised when a geometric primitive receives non-finite or negative input."""


class Point(NamedTuple):
    x: float
    y: float


def normalize_angle(theta: float) -> float:
    """Wrap an angle into ``[-pi/2, pi/2)``."""
    t = (theta + HALF_PI) % math.pi - HALF_PI
    # float modulo can land exactly on the open end
    if t >= HALF_PI:
        t -= math.pi
    return t


def angle_gap(a, b):
    """Unsigned difference of two box angles, folded into ``[0, pi/2]``.

    Works on scalars and arrays alike.
    """
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) % math.pi
    out = np.minimum(d, math.pi - d)
    return float(out) if out.ndim == 0 else out


def rotate_point(p: Point, center: Point, angle: float) -> Point:
    """Rotate ``p`` about ``center``; positive angles turn +x toward +y."""
    if not all(math.isfinite(v) for v in (p[0], p[1], center[0], center[1], angle)):
        raise InvalidInputError("rotate_point needs finite inputs")
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = p[0] - center[0], p[1] - center[1]
    return Point(center[0] + c * dx - s * dy, center[1] + s * dx + c * dy)


@dataclass(frozen=True)
class BoxComponents:
    """Distances from a point to the four box boundaries plus the box angle."""

    d_t: float
    d_b: float
    d_l: float
    d_r: float
    theta: float

    def __post_init__(self):
        vals = (self.d_t, self.d_b, self.d_l, self.d_r, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"non-finite box components: {vals}")
        if min(vals[:4]) < 0:
            raise InvalidInputError(f"negative boundary distance: {vals[:4]}")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.d_t, self.d_b, self.d_l, self.d_r, self.theta)


@dataclass(frozen=True)
class RotatedBox:
    """Rotated rectangle in canonical form (center, extents, angle).

    ``w`` is the extent along the box's own x axis (left to right) and ``h``
    along its y axis (top to bottom).  ``theta`` is normalized on construction.
    """

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"non-finite box: {vals}")
        if self.w < 0 or self.h < 0:
            raise InvalidInputError(f"negative box extent: w={self.w}, h={self.h}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def center(self) -> Point:
        return Point(self.cx, self.cy)

    @property
    def area(self) -> float:
        return self.w * self.h

    def quad(self) -> np.ndarray:
        """Vertices as a (4, 2) array: top-left, top-right, bottom-right, bottom-left.

        The order is clockwise on screen, starting top-left in the box frame.
        """
        c, s = math.cos(self.theta), math.sin(self.theta)
        hw, hh = self.w / 2, self.h / 2
        local = ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh))
        return np.array(
            [(self.cx + c * u - s * v, self.cy + s * u + c * v) for u, v in local],
            dtype=np.float64,
        )

    @classmethod
    def from_quad(cls, vertices: Sequence[Sequence[float]]) -> "RotatedBox":
        """Inverse of :meth:`quad` for a rectangle given in the same vertex order."""
        q = np.asarray(vertices, dtype=np.float64).reshape(4, 2)
        if not np.all(np.isfinite(q)):
            raise InvalidInputError("non-finite quad vertices")
        cx, cy = q.mean(axis=0)
        top = q[1] - q[0]
        side = q[3] - q[0]
        theta = math.atan2(top[1], top[0])
        return cls(float(cx), float(cy), float(np.hypot(*top)), float(np.hypot(*side)), theta)

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h, "theta": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "RotatedBox":
        return cls(float(d["cx"]), float(d["cy"]), float(d["w"]), float(d["h"]), float(d.get("theta", 0.0)))

    def local_coords(self, xs, ys):
        """Map image points into the box frame, origin at the box center."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx = np.asarray(xs, dtype=np.float64) - self.cx
        dy = np.asarray(ys, dtype=np.float64) - self.cy
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, xs, ys, shrink_ratio: float = 0.0):
        """Vectorized point-in-box test, boundary inclusive.

        With ``shrink_ratio`` r each boundary moves inward by r times the box
        extent perpendicular to it.
        """
        u, v = self.local_coords(xs, ys)
        hw = self.w * (0.5 - shrink_ratio)
        hh = self.h * (0.5 - shrink_ratio)
        return (np.abs(u) <= hw) & (np.abs(v) <= hh)

    def aabb(self) -> tuple[float, float, float, float]:
        q = self.quad()
        return (float(q[:, 0].min()), float(q[:, 1].min()), float(q[:, 0].max()), float(q[:, 1].max()))


def box_from_components(p: Point, c: BoxComponents) -> RotatedBox:
    """Box seen from point ``p``: boundaries at the given distances in the box frame."""
    if not (math.isfinite(p[0]) and math.isfinite(p[1])):
        raise InvalidInputError(f"non-finite point: {p}")
    ox = (c.d_r - c.d_l) / 2
    oy = (c.d_b - c.d_t) / 2
    cos_t, sin_t = math.cos(c.theta), math.sin(c.theta)
    return RotatedBox(
        p[0] + cos_t * ox - sin_t * oy,
        p[1] + sin_t * ox + cos_t * oy,
        c.d_l + c.d_r,
        c.d_t + c.d_b,
        c.theta,
    )


def polygon_area(poly: Sequence[Sequence[float]]) -> float:
    """Signed shoelace area; positive for the vertex order produced by RotatedBox.quad."""
    n = len(poly)
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return acc / 2


def clip_convex(subject: list, clip: list) -> list:
    """Sutherland-Hodgman clipping of ``subject`` by a convex, positively oriented ``clip``."""
    output = subject
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = output
        output = []
        m = len(inp)
        for j in range(m):
            px, py = inp[j - 1]
            qx, qy = inp[j]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sq >= 0:
                if sp < 0:
                    t = sp / (sp - sq)
                    output.append((px + t * (qx - px), py + t * (qy - py)))
                output.append((qx, qy))
            elif sp >= 0:
                t = sp / (sp - sq)
                output.append((px + t * (qx - px), py + t * (qy - py)))
    return output


def _oriented(q: np.ndarray) -> list:
    pts = [(float(x), float(y)) for x, y in q]
    if polygon_area(pts) < 0:
        pts.reverse()
    return pts


def quad_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Exact IoU of two rotated rectangles; 0 when either has zero area."""
    area_a, area_b = a.area, b.area
    if area_a <= 0 or area_b <= 0:
        return 0.0
    qa, qb = a.quad(), b.quad()
    if (
        qa[:, 0].max() <= qb[:, 0].min()
        or qb[:, 0].max() <= qa[:, 0].min()
        or qa[:, 1].max() <= qb[:, 1].min()
        or qb[:, 1].max() <= qa[:, 1].min()
    ):
        return 0.0
    inter_poly = clip_convex(_oriented(qa), _oriented(qb))
    if len(inter_poly) < 3:
        return 0.0
    inter = abs(polygon_area(inter_poly))
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))
