"""Synthetic multi-category tracking sequences and their directory format.

Directory layout of one sequence::

    meta.json        {"category": ..., "num_frames": ..., "seed": ...}
    frame_0000.csv   one "x,y,z" line per point, 9 significant digits
    gt.csv           one "x,y,z,yaw,w,l,h" line per frame

Generated point coordinates sit on a 1e-6 m grid, so for scenes within
1000 m of the origin the 9-digit text form round-trips exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import Box3D, from_canonical

SHAPES = ("cuboid-shell", "cylinder+sphere", "thin-slab", "L-bracket")
MOTIONS = ("constant-velocity", "stop-and-go", "weaving")
FRAME_DT = 0.1
CLUTTER_CUBE = 20.0
_INSET = 0.98  # visible surface sits strictly inside the annotated box


@dataclass(frozen=True)
class CategorySpec:
    name: str
    shape: str
    size_min: tuple  # (w, l, h) metres
    size_max: tuple
    motion: str
    speed: tuple = (1.0, 1.0)  # m/s
    weave_amplitude: tuple = (0.2, 0.4)  # rad
    period: tuple = (6, 12)  # frames, weaving or stop-and-go cycle
    density: float = 10.0  # points per m^2 of surface
    dropout: float = 0.0
    noise: float = 0.0
    clutter: int = 0
    jitter: float = 0.0  # per-frame shape deformation, fraction of radius

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape kind {self.shape!r}")
        if self.motion not in MOTIONS:
            raise ValueError(f"unknown motion model {self.motion!r}")
        if any(a > b for a, b in zip(self.size_min, self.size_max)) or min(self.size_min) <= 0:
            raise ValueError("size ranges must satisfy 0 < min <= max")
        if self.speed[0] > self.speed[1] or self.speed[0] < 0:
            raise ValueError("speed range must satisfy 0 <= min <= max")
        if self.density <= 0 or self.noise < 0 or not 0 <= self.dropout < 1 or self.clutter < 0:
            raise ValueError("density > 0, noise >= 0, dropout in [0, 1), clutter >= 0 required")


@dataclass
class Frame:
    points: np.ndarray  # (N, 3)
    box: Box3D


@dataclass
class Sequence:
    category: str
    frames: list
    seed: int = 0

    def __len__(self):
        return len(self.frames)


@dataclass
class Dataset:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def categories(self) -> list[str]:
        seen = []
        for s in self.train + self.test:
            if s.category not in seen:
                seen.append(s.category)
        return seen


DESK_CATEGORIES = (
    CategorySpec("car", "cuboid-shell", (1.6, 3.8, 1.4), (2.0, 4.6, 1.7), "constant-velocity",
                 speed=(4.0, 8.0), density=6.0, dropout=0.2, noise=0.02, clutter=400),
    CategorySpec("pedestrian", "cylinder+sphere", (0.5, 0.5, 1.6), (0.8, 0.8, 1.9), "weaving",
                 speed=(1.0, 2.0), weave_amplitude=(0.2, 0.5), period=(8, 16), density=40.0,
                 dropout=0.1, noise=0.01, clutter=400, jitter=0.15),
    CategorySpec("cyclist", "thin-slab", (0.5, 1.6, 1.5), (0.7, 1.9, 1.8), "weaving",
                 speed=(3.0, 5.0), weave_amplitude=(0.1, 0.3), period=(10, 20), density=25.0,
                 dropout=0.1, noise=0.015, clutter=400),
    CategorySpec("van", "L-bracket", (1.9, 4.6, 1.9), (2.2, 5.4, 2.4), "stop-and-go",
                 speed=(3.0, 7.0), period=(4, 8), density=5.0, dropout=0.2, noise=0.02, clutter=400),
)


# ------------------------------------------------------------------ shapes


def _box_surface(rng, dims, offset, n) -> np.ndarray:
    """``n`` points uniform on the surface of an axis-aligned box."""
    w, l, h = dims
    areas = np.array([l * h, l * h, w * h, w * h, w * l, w * l])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, (n, 3)) * np.array([w, l, h])
    axis = face // 2
    sign = np.where(face % 2 == 0, 0.5, -0.5)
    u[np.arange(n), axis] = sign * np.array([w, l, h])[axis]
    return u + np.asarray(offset)


def _box_area(dims) -> float:
    w, l, h = dims
    return 2 * (w * l + w * h + l * h)


def _sample_shape(spec: CategorySpec, size, rng) -> np.ndarray:
    w, l, h = (s * _INSET for s in size)
    if spec.shape == "cuboid-shell":
        return _box_surface(rng, (w, l, h), (0, 0, 0), rng.poisson(spec.density * _box_area((w, l, h))))
    if spec.shape == "thin-slab":
        dims = (0.35 * w, l, h)
        return _box_surface(rng, dims, (0, 0, 0), rng.poisson(spec.density * _box_area(dims)))
    if spec.shape == "L-bracket":
        base = (w, l, 0.45 * h)
        cabin = (w, 0.35 * l, 0.55 * h)
        nb = rng.poisson(spec.density * _box_area(base))
        nc = rng.poisson(spec.density * _box_area(cabin))
        return np.concatenate([
            _box_surface(rng, base, (0, 0, -h / 2 + base[2] / 2), nb),
            _box_surface(rng, cabin, (0, l / 2 - cabin[1] / 2, h / 2 - cabin[2] / 2), nc),
        ])
    # cylinder body with a spherical head; jitter deforms both radii per frame
    scale = float(np.clip(1.0 + spec.jitter * rng.normal(), 0.7, 1.2))
    radius = 0.4 * min(w, l) * scale
    head = min(0.12 * h, 0.4 * min(w, l)) * scale
    body_h = h - 2 * head
    n_body = rng.poisson(spec.density * 2 * math.pi * radius * body_h)
    n_head = rng.poisson(spec.density * 4 * math.pi * head * head)
    phi = rng.uniform(0, 2 * math.pi, n_body)
    body = np.stack([radius * np.cos(phi), radius * np.sin(phi),
                     rng.uniform(-h / 2, -h / 2 + body_h, n_body)], axis=1)
    v = rng.normal(size=(n_head, 3))
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
    sphere = v * head + np.array([0.0, 0.0, h / 2 - head])
    return np.concatenate([body, sphere])


# -------------------------------------------------------------- trajectory


def _trajectory(spec: CategorySpec, length: int, rng):
    """Per-frame ground-plane centers and headings."""
    heading0 = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(*spec.speed)
    start = rng.uniform(-5.0, 5.0, 2)
    step = speed * FRAME_DT
    t = np.arange(length)
    if spec.motion == "constant-velocity":
        heading = np.full(length, heading0)
        direction = np.array([math.cos(heading0), math.sin(heading0)])
        xy = start[None, :] + (step * t)[:, None] * direction[None, :]
        return xy, heading
    period = rng.integers(spec.period[0], spec.period[1] + 1)
    phase = rng.uniform(0, 2 * math.pi)
    if spec.motion == "weaving":
        amp = rng.uniform(*spec.weave_amplitude)
        heading = heading0 + amp * np.sin(2 * math.pi * t / period + phase)
        moving = np.ones(length)
    else:
        heading = np.full(length, heading0)
        moving = (np.sin(2 * math.pi * t / period + phase) >= 0).astype(float)
    xy = np.empty((length, 2))
    xy[0] = start
    for i in range(1, length):
        d = step * moving[i - 1]
        xy[i] = xy[i - 1] + d * np.array([math.cos(heading[i - 1]), math.sin(heading[i - 1])])
    return xy, heading


def generate_sequence(spec: CategorySpec, length: int, seed: int) -> Sequence:
    """A pure function of ``(spec, length, seed)``."""
    if length < 2:
        raise ValueError(f"a sequence needs at least 2 frames, got {length}")
    rng = np.random.default_rng(seed)
    size = rng.uniform(spec.size_min, spec.size_max)
    xy, heading = _trajectory(spec, length, rng)
    mid = xy.mean(axis=0)
    half = CLUTTER_CUBE / 2
    clutter = np.column_stack([
        rng.uniform(mid[0] - half, mid[0] + half, spec.clutter),
        rng.uniform(mid[1] - half, mid[1] + half, spec.clutter),
        rng.uniform(0.0, CLUTTER_CUBE, spec.clutter),
    ])
    frames = []
    for i in range(length):
        # the box's long side l follows the direction of travel
        box = Box3D(xy[i, 0], xy[i, 1], size[2] / 2, heading[i] - math.pi / 2, *size)
        local = _sample_shape(spec, size, rng)
        if spec.noise > 0:
            local = local + rng.normal(0.0, spec.noise, local.shape)
        if spec.dropout > 0:
            local = local[rng.random(len(local)) >= spec.dropout]
        pts = np.concatenate([from_canonical(local, box), clutter])
        frames.append(Frame(np.round(pts, 6), box))
    return Sequence(spec.name, frames, int(seed))


def sequence_seed(seed: int, category_index: int, split: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, category_index, split, index]).generate_state(1)[0])


def make_desk_dataset(seed: int = 0, n_train: int = 64, n_test: int = 16, length: int = 10,
                      categories=DESK_CATEGORIES) -> Dataset:
    ds = Dataset()
    for ci, spec in enumerate(categories):
        for i in range(n_train):
            ds.train.append(generate_sequence(spec, length, sequence_seed(seed, ci, 0, i)))
        for i in range(n_test):
            ds.test.append(generate_sequence(spec, length, sequence_seed(seed, ci, 1, i)))
    return ds


# ------------------------------------------------------------------- files


def write_sequence(seq: Sequence, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"category": seq.category, "num_frames": len(seq.frames), "seed": int(seq.seed)}
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    for i, fr in enumerate(seq.frames):
        lines = "".join(f"{x:.9g},{y:.9g},{z:.9g}\n" for x, y, z in fr.points.tolist())
        (d / f"frame_{i:04d}.csv").write_text(lines)
    gt = "".join(",".join(repr(float(v)) for v in fr.box.as_array()) + "\n" for fr in seq.frames)
    (d / "gt.csv").write_text(gt)


def _parse_rows(path: Path, width: int) -> np.ndarray:
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(path, reason=f"cannot read ({exc.strerror})") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise FormatError(path, lineno, f"expected {width} fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise FormatError(path, lineno, f"non-numeric field in {line!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(path, lineno, "non-finite value")
        rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(-1, width)


def read_sequence(directory) -> Sequence:
    d = Path(directory)
    meta_path = d / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
        category, n, seed = meta["category"], int(meta["num_frames"]), int(meta["seed"])
    except OSError as exc:
        raise FormatError(meta_path, reason=f"cannot read ({exc.strerror})") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(meta_path, 1, f"bad metadata ({exc})") from None
    gt_path = d / "gt.csv"
    gt = _parse_rows(gt_path, 7)
    if len(gt) != n:
        raise FormatError(gt_path, len(gt) + 1, f"expected {n} boxes, found {len(gt)}")
    frames = []
    for i in range(n):
        try:
            box = Box3D.from_array(gt[i])
        except ValueError as exc:
            raise FormatError(gt_path, i + 1, str(exc)) from None
        frames.append(Frame(_parse_rows(d / f"frame_{i:04d}.csv", 3), box))
    return Sequence(category, frames, seed)


def write_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    for split, seqs in (("train", ds.train), ("test", ds.test)):
        counts: dict[str, int] = {}
        for seq in seqs:
            k = counts.get(seq.category, 0)
            counts[seq.category] = k + 1
            write_sequence(seq, root / split / f"{seq.category}_{k:03d}")


def read_split(root, split: str) -> list:
    base = Path(root) / split
    if not base.is_dir():
        raise FormatError(base, reason="missing split directory")
    return [read_sequence(p) for p in sorted(base.iterdir()) if p.is_dir()]


def read_dataset(root) -> Dataset:
    return Dataset(read_split(root, "train"), read_split(root, "test"))
