"""Oriented 3D boxes, point-cloud cropping, sampling, masks and rotated-box IoU.

Boxes rotate about the vertical axis only.  In a box's own frame the size
``w`` spans local x, ``l`` spans local y and ``h`` spans local z; local x
points along ``(cos yaw, sin yaw)`` in the world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, EmptyInputError

TEMPLATE_FG = 0.8
TEMPLATE_BG = 0.2
SEARCH_LEVEL = 0.5


def normalize_angle(theta: float) -> float:
    """Map an angle to [-pi, pi)."""
    r = math.remainder(float(theta), 2.0 * math.pi)
    return -math.pi if r >= math.pi else r


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    yaw: float
    w: float
    l: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.yaw, self.w, self.l, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box parameters {vals}")
        if min(self.w, self.l, self.h) <= 0:
            raise ValueError(f"box sizes must be positive, got {(self.w, self.l, self.h)}")
        for name in ("x", "y", "z", "w", "l", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def size(self) -> np.ndarray:
        return np.array([self.w, self.l, self.h])

    @property
    def volume(self) -> float:
        return self.w * self.l * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw, self.w, self.l, self.h])

    @classmethod
    def from_array(cls, a) -> "Box3D":
        a = [float(v) for v in a]
        if len(a) != 7:
            raise ValueError(f"a box needs 7 parameters, got {len(a)}")
        return cls(*a)

    def translated(self, t) -> "Box3D":
        return Box3D(self.x + t[0], self.y + t[1], self.z + t[2], self.yaw, self.w, self.l, self.h)

    def bev_corners(self) -> np.ndarray:
        """4x2 corners, counter-clockwise."""
        return _rect_corners(self.x, self.y, self.yaw, self.w, self.l)


def _rect_corners(cx, cy, yaw, w, l) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.array([[w, l], [-w, l], [-w, -l], [w, -l]]) * 0.5
    return np.stack([cx + c * local[:, 0] - s * local[:, 1],
                     cy + s * local[:, 0] + c * local[:, 1]], axis=1)


def to_canonical(points: np.ndarray, box: Box3D) -> np.ndarray:
    """World coordinates -> the box's yaw-aligned frame centred at the box."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy, dz = p[:, 0] - box.x, p[:, 1] - box.y, p[:, 2] - box.z
    return np.stack([c * dx + s * dy, -s * dx + c * dy, dz], axis=1)


def from_canonical(points: np.ndarray, box: Box3D) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return np.stack([box.x + c * p[:, 0] - s * p[:, 1],
                     box.y + s * p[:, 0] + c * p[:, 1],
                     box.z + p[:, 2]], axis=1)


def box_to_canonical(box: Box3D, ref: Box3D) -> Box3D:
    """Express ``box`` in the canonical frame of ``ref``."""
    x, y, z = to_canonical(box.center[None], ref)[0]
    return Box3D(x, y, z, box.yaw - ref.yaw, box.w, box.l, box.h)


def box_from_canonical(box: Box3D, ref: Box3D) -> Box3D:
    x, y, z = from_canonical(box.center[None], ref)[0]
    return Box3D(x, y, z, box.yaw + ref.yaw, box.w, box.l, box.h)


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Boolean flag per point; points on the boundary count as inside."""
    local = to_canonical(points, box)
    return ((np.abs(local[:, 0]) <= box.w / 2)
            & (np.abs(local[:, 1]) <= box.l / 2)
            & (np.abs(local[:, 2]) <= box.h / 2))


def apply_box_offset(box: Box3D, offset) -> Box3D:
    """Move ``box`` by a canonical-frame offset ``(dx, dy, dz, dyaw)``; size is kept."""
    dx, dy, dz, dyaw = (float(v) for v in offset)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return Box3D(box.x + c * dx - s * dy, box.y + s * dx + c * dy, box.z + dz,
                 box.yaw + dyaw, box.w, box.l, box.h)


# ------------------------------------------------------------------ sampling


def farthest_point_sample(points: np.ndarray, n: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest-point sampling.

    Ties go to the lowest index.  When the cloud has fewer than ``n`` points
    the selection is repeated cyclically in selection order.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    count = len(p)
    if count == 0:
        raise EmptyInputError("farthest_point_sample on an empty cloud")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 <= seed_index < count:
        raise IndexError(f"seed_index {seed_index} outside [0, {count})")
    m = min(n, count)
    sel = np.empty(m, dtype=np.int64)
    sel[0] = seed_index
    d = ((p - p[seed_index]) ** 2).sum(axis=1)
    d[seed_index] = -np.inf
    for i in range(1, m):
        j = int(np.argmax(d))
        sel[i] = j
        d = np.minimum(d, ((p - p[j]) ** 2).sum(axis=1))
        d[sel[: i + 1]] = -np.inf
    if m < n:
        sel = sel[np.arange(n) % m]
    return sel


@dataclass
class RegionSample:
    """Fixed-size point sample in the canonical frame of ``origin_box``."""

    points: np.ndarray
    origin_box: Box3D
    degenerate: bool = False
    source_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    mask: np.ndarray | None = None

    def __len__(self):
        return len(self.points)


def crop_mask(points: np.ndarray, box: Box3D, enlarge: float, limit_height: bool = False) -> np.ndarray:
    """Survivor flags: BEV inside the box grown by ``enlarge`` on w and l."""
    local = to_canonical(points, box)
    keep = ((np.abs(local[:, 0]) <= (box.w + enlarge) / 2)
            & (np.abs(local[:, 1]) <= (box.l + enlarge) / 2))
    if limit_height:
        keep &= np.abs(local[:, 2]) <= box.h / 2
    return keep


def crop_region(points: np.ndarray, box: Box3D, enlarge: float, n_out: int,
                rng_seed: int | None = None, limit_height: bool = False) -> RegionSample:
    """Crop, move to the box's canonical frame and resample to exactly ``n_out`` points.

    With no survivors the sample is ``n_out`` copies of the origin and
    ``degenerate`` is set.
    """
    if n_out < 1:
        raise ValueError(f"n_out must be >= 1, got {n_out}")
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    survivors = np.flatnonzero(crop_mask(p, box, enlarge, limit_height))
    if len(survivors) == 0:
        return RegionSample(np.zeros((n_out, 3)), box, degenerate=True,
                            source_indices=np.full(n_out, -1, dtype=np.int64))
    local = to_canonical(p[survivors], box)
    seed = 0 if rng_seed is None else int(np.random.default_rng(rng_seed).integers(len(survivors)))
    idx = farthest_point_sample(local, n_out, seed)
    return RegionSample(local[idx], box, source_indices=survivors[idx])


def merge_regions(a: RegionSample, b: RegionSample, n_out: int) -> RegionSample:
    """Object-centric union of two samples, resampled to ``n_out``.

    Both samples are already canonical to boxes around the same target, so
    their points are pooled as-is; the result takes ``b``'s origin box.
    """
    if a.degenerate and b.degenerate:
        return RegionSample(np.zeros((n_out, 3)), b.origin_box, degenerate=True)
    if a.degenerate:
        pts = b.points
    elif b.degenerate:
        pts = a.points
    else:
        pts = np.concatenate([b.points, a.points])
    idx = farthest_point_sample(pts, n_out, 0)
    return RegionSample(pts[idx], b.origin_box)


def build_masks(region: RegionSample, prev_box: Box3D, kind: str,
                fg: float = TEMPLATE_FG, bg: float = TEMPLATE_BG,
                search_level: float = SEARCH_LEVEL) -> np.ndarray:
    """Nx1 foreground prior: template points get fg/bg by containment, search a constant."""
    n = len(region.points)
    if kind == "search":
        return np.full((n, 1), search_level)
    if kind != "template":
        raise ContractError(f"mask kind must be 'template' or 'search', got {kind!r}")
    world = from_canonical(region.points, region.origin_box)
    inside = points_in_box(world, prev_box)
    return np.where(inside, fg, bg).reshape(n, 1)


# ----------------------------------------------------------------------- IoU


def _clip_polygon(subject: list, clip: np.ndarray) -> list:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    out = subject
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
            prev, sp = cur, sc
    return out


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _polygon_area(poly: list) -> float:
    if len(poly) < 3:
        return 0.0
    s = 0.0
    for i in range(len(poly)):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % len(poly)]
        s += x1 * y2 - x2 * y1
    return abs(s) * 0.5


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    ox, oy = a.x, a.y
    pa = _rect_corners(0.0, 0.0, a.yaw, a.w, a.l)
    pb = _rect_corners(b.x - ox, b.y - oy, b.yaw, b.w, b.l)
    return _polygon_area(_clip_polygon([tuple(v) for v in pb], pa))


def iou3d(a: Box3D, b: Box3D) -> float:
    """Oriented-box IoU: exact BEV polygon overlap times vertical overlap."""
    if a == b:
        return 1.0  # clipping a rotated box against itself can lose the last ulp
    if tuple(b.as_array()) < tuple(a.as_array()):
        a, b = b, a
    dz = min(a.z + a.h / 2, b.z + b.h / 2) - max(a.z - a.h / 2, b.z - b.h / 2)
    if dz <= 0:
        return 0.0
    reach = 0.5 * (math.hypot(a.w, a.l) + math.hypot(b.w, b.l))
    if math.hypot(a.x - b.x, a.y - b.y) > reach:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    union = a.volume + b.volume - inter
    return float(min(1.0, max(0.0, inter / union)))


def center_distance(a: Box3D, b: Box3D) -> float:
    return float(np.linalg.norm(a.center - b.center))
