"""Assembled tracker network: embedding, dynamic masks, temporal token, encoder, head."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .config import ModelConfig
from .embedding import Neighborhoods, PatchEmbedParams, PositionalParams, embed_region, group_points
from .encoder import (AdapterParams, EncoderParams, MoGEParams, TokenSplit, TransformerLayerParams,
                      encoder_forward)
from .geometry import Box3D, RegionSample, build_masks, crop_region, merge_regions
from .numerics import Tensor
from .temporal import MaskWeights, TemporalToken, apply_dynamic_mask, propagate_temporal_token

HEAD_OUTPUTS = 5  # score logit, dx, dy, dz, dyaw

_TAG_BACKBONE, _TAG_EMBED, _TAG_ADAPTER, _TAG_MOGE, _TAG_HEAD, _TAG_TEMPORAL = range(6)


@dataclass
class HeadParams:
    w1: Tensor  # (d, d)
    b1: Tensor
    w2: Tensor  # (d, 5)
    b2: Tensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "HeadParams":
        return cls(
            Tensor(rng.normal(0, 1 / np.sqrt(dim), (dim, dim)), requires_grad=True),
            Tensor(np.zeros(dim), requires_grad=True),
            Tensor(rng.normal(0, 0.01, (dim, HEAD_OUTPUTS)), requires_grad=True),
            Tensor(np.zeros(HEAD_OUTPUTS), requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def head_forward(search_tokens: Tensor, p: HeadParams) -> Tensor:
    """Per search token: (score logit, dx, dy, dz, dyaw)."""
    return nx.relu(search_tokens @ p.w1 + p.b1) @ p.w2 + p.b2


# -------------------------------------------------------------- regions


def template_region(cfg: ModelConfig, points: np.ndarray, box: Box3D) -> RegionSample:
    region = crop_region(points, box, cfg.template_enlarge, cfg.template_points, limit_height=True)
    region.mask = build_masks(region, box, "template", cfg.mask_fg, cfg.mask_bg)
    return region


def merged_template(cfg: ModelConfig, first: RegionSample, prev: RegionSample) -> RegionSample:
    region = merge_regions(first, prev, cfg.template_points)
    region.mask = build_masks(region, region.origin_box, "template", cfg.mask_fg, cfg.mask_bg)
    return region


def search_region(cfg: ModelConfig, points: np.ndarray, ref_box: Box3D) -> RegionSample:
    region = crop_region(points, ref_box, cfg.search_enlarge, cfg.search_points)
    region.mask = build_masks(region, ref_box, "search", search_level=cfg.mask_search)
    return region


@dataclass
class FrameInputs:
    template: RegionSample
    search: RegionSample
    t_hoods: Neighborhoods
    s_hoods: Neighborhoods

    @property
    def t_mask(self) -> np.ndarray:
        return self.template.mask[self.t_hoods.center_index]

    @property
    def s_mask(self) -> np.ndarray:
        return self.search.mask[self.s_hoods.center_index]


@dataclass
class FrameOutput:
    head_out: Tensor  # (G_s, 5)
    centers: np.ndarray  # (G_s, 3) canonical search-token centers
    temporal_out: Tensor  # (1, d)
    gates: dict = field(default_factory=dict)  # layer -> (1 + G_s, M)
    aux: list = field(default_factory=list)


class TrackerModel:
    """Owns every parameter; the backbone is frozen unless ``full_finetune``."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        d = cfg.dim
        backbone_trainable = cfg.full_finetune

        self.layers = [
            TransformerLayerParams.init(d, cfg.num_heads, self._rng(_TAG_BACKBONE, i), cfg.backbone_gain,
                                        trainable=backbone_trainable)
            for i in range(1, cfg.num_layers + 1)
        ]
        self.patch = PatchEmbedParams.init(d, self._rng(_TAG_EMBED, 0))
        self.pos = PositionalParams.init(d, self._rng(_TAG_EMBED, 1))
        self.adapters = {
            i: (AdapterParams.init(d, cfg.adapter_rank, self._rng(_TAG_ADAPTER, i, 1)),
                AdapterParams.init(d, cfg.adapter_rank, self._rng(_TAG_ADAPTER, i, 2)))
            for i in cfg.resolved_adapter_layers()
        }
        self.moge = {
            i: MoGEParams.init(d, cfg.num_experts, cfg.hidden, cfg.top_k, self._rng(_TAG_MOGE, i))
            for i in cfg.resolved_moge_layers()
        }
        self.head = HeadParams.init(d, self._rng(_TAG_HEAD, 0))

        if cfg.use_temporal_token:
            t0 = self._rng(_TAG_TEMPORAL, 0).normal(0, 0.02, (1, d))
            self.t0 = Tensor(t0, requires_grad=True)
        else:
            self.t0 = Tensor(np.zeros((1, d)))
        self.masks = MaskWeights.init(cfg.g_template, cfg.g_search,
                                      trainable=cfg.mask_mode == "dynamic_beta")
        self.mask_levels = Tensor([[cfg.mask_fg], [cfg.mask_bg], [cfg.mask_search]],
                                  requires_grad=cfg.mask_mode == "fully_learnable")
        self.encoder = EncoderParams(self.layers, self.adapters, self.moge)
        self.split = TokenSplit(cfg.g_template, cfg.g_search)

    def _rng(self, *tags) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.cfg.init_seed, *tags]))

    # ---------------------------------------------------------- parameters

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in self.patch.__dict__.items():
            out[f"embed.patch.{name}"] = t
        for name, t in self.pos.__dict__.items():
            out[f"embed.pos.{name}"] = t
        if self.cfg.use_temporal_token:
            out["temporal.t0"] = self.t0
        if self.cfg.mask_mode == "dynamic_beta":
            out["mask.beta_t"] = self.masks.beta_t
            out["mask.beta_s"] = self.masks.beta_s
        elif self.cfg.mask_mode == "fully_learnable":
            out["mask.levels"] = self.mask_levels
        for i, layer in enumerate(self.layers, start=1):
            for name, t in layer.tensors().items():
                out[f"backbone.{i}.{name}"] = t
        for i, (a1, a2) in self.adapters.items():
            for j, ad in ((1, a1), (2, a2)):
                for name, t in ad.tensors().items():
                    out[f"adapter.{i}.{j}.{name}"] = t
        for i, m in self.moge.items():
            for name, t in m.tensors().items():
                out[f"moge.{i}.{name}"] = t
        for name, t in self.head.tensors().items():
            out[f"head.{name}"] = t
        return out

    def frozen_names(self) -> list[str]:
        return [n for n, t in self.named_parameters().items() if not t.requires_grad]

    def tunable_names(self) -> list[str]:
        return [n for n, t in self.named_parameters().items() if t.requires_grad]

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    # ------------------------------------------------------------- forward

    def prepare(self, template: RegionSample, search: RegionSample) -> FrameInputs:
        cfg = self.cfg
        return FrameInputs(template, search,
                           group_points(template.points, cfg.g_template, cfg.group_neighbors),
                           group_points(search.points, cfg.g_search, cfg.group_neighbors))

    def _masked(self, tokens: Tensor, mask: np.ndarray, kind: str) -> Tensor:
        mode = self.cfg.mask_mode
        if mode == "none":
            return tokens
        if mode == "fixed":
            return tokens + mask
        if mode == "dynamic_beta":
            beta = self.masks.beta_t if kind == "template" else self.masks.beta_s
            return apply_dynamic_mask(tokens, mask, beta)
        # fully learnable: the fg/bg/search levels themselves are parameters
        onehot = np.zeros((len(mask), 3))
        if kind == "template":
            onehot[:, 0] = mask[:, 0] == self.cfg.mask_fg
            onehot[:, 1] = 1.0 - onehot[:, 0]
        else:
            onehot[:, 2] = 1.0
        return tokens + Tensor._wrap(onehot) @ self.mask_levels

    def forward(self, inputs: FrameInputs, carried: Tensor | None = None,
                trace: bool = False) -> FrameOutput:
        t_tok = embed_region(inputs.t_hoods, self.patch, self.pos, "template").tokens
        s_tok = embed_region(inputs.s_hoods, self.patch, self.pos, "search").tokens
        t_tok = self._masked(t_tok, inputs.t_mask, "template")
        s_tok = self._masked(s_tok, inputs.s_mask, "search")
        if self.cfg.use_temporal_token:
            temporal_in = propagate_temporal_token(TemporalToken(self.t0, carried))
        else:
            temporal_in = self.t0
        f0 = nx.concat([temporal_in, t_tok, s_tok], axis=0)
        gates: dict | None = {} if trace else None
        aux: list | None = [] if self.cfg.load_balance_weight > 0 else None
        temporal_out, _, search_out = encoder_forward(f0, self.split, self.encoder, self.cfg.ln_eps,
                                                      gates, aux)
        return FrameOutput(head_forward(search_out, self.head), inputs.s_hoods.centers,
                           temporal_out, gates or {}, aux or [])
