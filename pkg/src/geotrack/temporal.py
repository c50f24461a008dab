"""Temporal token propagation and dynamic mask weighting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numerics import Tensor, as_tensor


@dataclass
class TemporalToken:
    initial: Tensor  # (1, d), learned
    carried: Tensor | None = None  # previous frame's encoder output for row 0

    def reset(self) -> None:
        self.carried = None


def propagate_temporal_token(tok: TemporalToken) -> Tensor:
    """Input token for the current frame: the learned token plus the carried output."""
    if tok.carried is None:
        return tok.initial
    return tok.initial + tok.carried


@dataclass
class MaskWeights:
    beta_t: Tensor  # (G_t, 1)
    beta_s: Tensor  # (G_s, 1)

    @classmethod
    def init(cls, g_template: int, g_search: int, trainable: bool = True) -> "MaskWeights":
        return cls(Tensor(np.ones((g_template, 1)), requires_grad=trainable),
                   Tensor(np.ones((g_search, 1)), requires_grad=trainable))


def apply_dynamic_mask(tokens: Tensor, mask, beta) -> Tensor:
    """``tokens + mask * beta``, the G x 1 product broadcast across channels."""
    mask, beta = as_tensor(mask), as_tensor(beta)
    g = tokens.shape[0]
    if mask.shape != (g, 1) or beta.shape != (g, 1):
        raise DimensionError(
            f"dynamic mask: tokens {tokens.shape}, mask {mask.shape}, beta {beta.shape}")
    return tokens + mask * beta
