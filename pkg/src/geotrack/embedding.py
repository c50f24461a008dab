"""Point grouping and the PointNet-style patch/positional embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError
from .geometry import farthest_point_sample
from .numerics import Tensor


@dataclass
class Neighborhoods:
    center_index: np.ndarray  # (g,) indices into the region
    members: np.ndarray  # (g, k) indices into the region
    centers: np.ndarray  # (g, 3)
    offsets: np.ndarray  # (g, k, 3), member minus center


def group_points(points: np.ndarray, g: int, k: int) -> Neighborhoods:
    """FPS centers (seed 0) and their k nearest points, ties to the lower index."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(p)
    if g > n:
        raise ConfigError(f"group count {g} exceeds region size {n}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    k = min(k, n)
    ci = farthest_point_sample(p, g, 0)
    centers = p[ci]
    d2 = ((centers[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1)
    members = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return Neighborhoods(ci, members, centers, p[members] - centers[:, None, :])


@dataclass
class TokenBatch:
    tokens: Tensor  # (G, d)
    centers: np.ndarray  # (G, 3)
    region_kind: str


@dataclass
class PatchEmbedParams:
    w1: Tensor  # (3, d/2)
    b1: Tensor
    w2: Tensor  # (d/2, d)
    b2: Tensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "PatchEmbedParams":
        half = dim // 2
        return cls(
            Tensor(rng.normal(0, 1 / np.sqrt(3), (3, half)), requires_grad=True),
            Tensor(np.zeros(half), requires_grad=True),
            Tensor(rng.normal(0, 1 / np.sqrt(half), (half, dim)), requires_grad=True),
            Tensor(np.zeros(dim), requires_grad=True),
        )


@dataclass
class PositionalParams:
    w1: Tensor  # (3, d)
    b1: Tensor
    w2: Tensor  # (d, d)
    b2: Tensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "PositionalParams":
        return cls(
            Tensor(rng.normal(0, 1 / np.sqrt(3), (3, dim)), requires_grad=True),
            Tensor(np.zeros(dim), requires_grad=True),
            Tensor(rng.normal(0, 1 / np.sqrt(dim), (dim, dim)), requires_grad=True),
            Tensor(np.zeros(dim), requires_grad=True),
        )


def patch_embed(offsets: np.ndarray, p: PatchEmbedParams) -> Tensor:
    """Shared per-point MLP 3 -> d/2 -> d, max-pooled over each neighborhood."""
    x = Tensor._wrap(np.asarray(offsets, dtype=np.float64))
    h = nx.relu(x @ p.w1 + p.b1)
    return nx.tmax(h @ p.w2 + p.b2, axis=1)


def positional_embed(centers: np.ndarray, p: PositionalParams) -> Tensor:
    c = Tensor._wrap(np.asarray(centers, dtype=np.float64))
    return nx.gelu(c @ p.w1 + p.b1) @ p.w2 + p.b2


def embed_region(hoods: Neighborhoods, patch: PatchEmbedParams, pos: PositionalParams,
                 kind: str) -> TokenBatch:
    tokens = patch_embed(hoods.offsets, patch) + positional_embed(hoods.centers, pos)
    return TokenBatch(tokens, hoods.centers, kind)
