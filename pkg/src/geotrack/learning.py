"""Localization head surrogate, losses, parameter partition, AdamW and the clip training loop."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .config import ModelConfig, TrainConfig
from .errors import ConfigError
from .geometry import (Box3D, apply_box_offset, box_to_canonical, normalize_angle, points_in_box)
from .model import TrackerModel, merged_template, search_region, template_region
from .numerics import Tensor

log = logging.getLogger(__name__)


@dataclass
class Prediction:
    box: Box3D
    confidence: float


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def localize(head_out, centers: np.ndarray, prev_box: Box3D) -> Prediction:
    """Score-weighted vote of per-token center and yaw offsets.

    ``centers`` are canonical to ``prev_box``; the result is in world frame.
    """
    out = head_out.data if isinstance(head_out, Tensor) else np.asarray(head_out, dtype=np.float64)
    logits = out[:, 0]
    z = logits - logits.max()
    a = np.exp(z)
    a /= a.sum()
    votes = centers + out[:, 1:4]
    center = a @ votes
    dyaw = float(a @ out[:, 4])
    box = apply_box_offset(prev_box, (center[0], center[1], center[2], dyaw))
    return Prediction(box, _sigmoid(float(logits.max())))


def token_targets(centers: np.ndarray, gt_canonical: Box3D):
    """Labels (token center inside the target) and regression targets per token."""
    labels = points_in_box(centers, gt_canonical).astype(np.float64)
    reg = np.empty((len(centers), 4))
    reg[:, :3] = gt_canonical.center[None, :] - centers
    reg[:, 3] = gt_canonical.yaw
    return labels, reg


@dataclass
class LossParts:
    total: Tensor
    cls: Tensor
    reg: Tensor


def compute_loss(head_out: Tensor, centers: np.ndarray, gt_canonical: Box3D,
                 lambda_cls: float = 1.0, lambda_reg: float = 1.0, delta: float = 1.0) -> LossParts:
    """BCE on per-token scores plus Huber on positive tokens' offsets.

    Without positive tokens the regression term is zero.
    """
    labels, reg = token_targets(centers, gt_canonical)
    cls = nx.bce_with_logits(head_out[:, 0], labels).mean()
    pos = np.flatnonzero(labels)
    if len(pos):
        diff = nx.huber(head_out[pos, 1:5], reg[pos], delta)
        reg_loss = diff.sum() * (1.0 / len(pos))
    else:
        reg_loss = Tensor._wrap(np.zeros(()))
    return LossParts(cls * lambda_cls + reg_loss * lambda_reg, cls, reg_loss)


# ---------------------------------------------------------------- parameters


def partition_parameters(model: TrackerModel) -> tuple[set, set]:
    params = model.named_parameters()
    frozen = {n for n, t in params.items() if not t.requires_grad}
    return frozen, set(params) - frozen


def count_tunable(model: TrackerModel) -> int:
    return int(sum(t.size for t in model.named_parameters().values() if t.requires_grad))


def closed_form_tunable(cfg: ModelConfig) -> dict:
    """Tunable parameter count by component, from the config alone."""
    d, r, m, h = cfg.dim, cfg.adapter_rank, cfg.num_experts, cfg.hidden
    parts = {
        "adapters": 2 * len(cfg.resolved_adapter_layers()) * (2 * d * r + d),
        "moge": len(cfg.resolved_moge_layers()) * (d * m + m * (2 * d * h + d + h)),
        "temporal_token": d if cfg.use_temporal_token else 0,
        "mask_beta": cfg.g_template + cfg.g_search if cfg.mask_mode == "dynamic_beta" else 0,
        "mask_levels": 3 if cfg.mask_mode == "fully_learnable" else 0,
        "head": d * d + d + 5 * d + 5,
        "embedding": (3 * (d // 2) + d // 2 + (d // 2) * d + d) + (3 * d + d + d * d + d),
        "backbone": cfg.num_layers * (4 * (d * d + d) + 4 * d + 8 * d * d + 5 * d) if cfg.full_finetune else 0,
    }
    parts["total"] = sum(parts.values())
    return parts


def parameter_hashes(model: TrackerModel, names=None) -> dict:
    params = model.named_parameters()
    names = params if names is None else names
    return {n: hashlib.sha256(params[n].data.tobytes()).hexdigest() for n in names}


# ----------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: dict, state: AdamState, cfg: TrainConfig, lr: float | None = None) -> None:
    """AdamW: bias-corrected moments, decoupled weight decay; replaces ``.data``."""
    lr = cfg.lr if lr is None else lr
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        p.data = p.data - lr * update - lr * cfg.weight_decay * p.data


# ------------------------------------------------------------------ training


@dataclass
class Clip:
    sequence: object  # synthdata.Sequence
    start: int


def make_clips(sequences, clip_length: int) -> list:
    clips = []
    for seq in sequences:
        for s in range(len(seq.frames) - clip_length + 1):
            clips.append(Clip(seq, s))
    return clips


def jitter_box(box: Box3D, rng: np.random.Generator, cfg: TrainConfig) -> Box3D:
    dx, dy = rng.normal(0.0, cfg.jitter_xy, 2)
    dz = rng.normal(0.0, cfg.jitter_z)
    dyaw = rng.normal(0.0, cfg.jitter_yaw)
    return apply_box_offset(box, (dx, dy, dz, dyaw))


def clip_loss(model: TrackerModel, clip: Clip, tcfg: TrainConfig, rng: np.random.Generator,
              bptt: bool | None = None) -> tuple[Tensor, float, float]:
    """Sum of per-frame losses over one clip, with the temporal token carried forward.

    The first frame of the clip only provides the template.
    """
    mcfg = model.cfg
    bptt = tcfg.temporal_bptt if bptt is None else bptt
    frames = clip.sequence.frames[clip.start: clip.start + tcfg.clip_length]
    first_tmpl = template_region(mcfg, frames[0].points, frames[0].box)
    carried = None
    total = cls_sum = reg_sum = None
    for t in range(1, len(frames)):
        ref = jitter_box(frames[t - 1].box, rng, tcfg)
        if mcfg.template_mode == "first":
            tmpl = first_tmpl
        else:
            tmpl = template_region(mcfg, frames[t - 1].points, ref)
            if mcfg.template_mode == "merged":
                tmpl = merged_template(mcfg, first_tmpl, tmpl)
        search = search_region(mcfg, frames[t].points, ref)
        out = model.forward(model.prepare(tmpl, search), carried)
        gt = box_to_canonical(frames[t].box, ref)
        parts = compute_loss(out.head_out, out.centers, gt, tcfg.lambda_cls, tcfg.lambda_reg,
                             tcfg.huber_delta)
        frame_loss = parts.total
        for a in out.aux:
            frame_loss = frame_loss + a * mcfg.load_balance_weight
        total = frame_loss if total is None else total + frame_loss
        cls_sum = parts.cls.item() + (cls_sum or 0.0)
        reg_sum = parts.reg.item() + (reg_sum or 0.0)
        if mcfg.use_temporal_token:
            carried = out.temporal_out if bptt else out.temporal_out.detach()
    return total, cls_sum, reg_sum


@dataclass
class TrainResult:
    log: list  # (step, loss, loss_cls, loss_reg)
    state: AdamState

    def csv_lines(self) -> list[str]:
        return ["step,loss,loss_cls,loss_reg"] + [
            f"{s},{l:.10g},{c:.10g},{r:.10g}" for s, l, c, r in self.log]


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Rate for 1-based ``step``: linear warmup, then constant or cosine decay."""
    lr = cfg.lr * min(1.0, step / cfg.warmup_steps) if cfg.warmup_steps else cfg.lr
    if cfg.lr_schedule == "cosine" and cfg.steps > 0:
        lr *= 0.5 * (1.0 + math.cos(math.pi * (step - 1) / cfg.steps))
    return lr


def train(sequences, model: TrackerModel, cfg: TrainConfig, on_step=None) -> TrainResult:
    """One optimizer step per batch of seeded-shuffled clips."""
    clips = make_clips(sequences, cfg.clip_length)
    if not clips:
        raise ConfigError("training set has no clip of the configured length")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    order = rng.permutation(len(clips))
    cursor = 0
    tunable = {n: t for n, t in model.named_parameters().items() if t.requires_grad}
    state = AdamState()
    result = TrainResult([], state)
    for step in range(1, cfg.steps + 1):
        for t in tunable.values():
            t.grad = None
        loss_sum = cls_sum = reg_sum = 0.0
        for _ in range(cfg.batch_size):
            if cursor == len(order):
                order, cursor = rng.permutation(len(clips)), 0
            clip = clips[order[cursor]]
            cursor += 1
            with nx.use_tape(nx.Tape()):
                loss, c, r = clip_loss(model, clip, cfg, rng)
                loss = loss * (1.0 / cfg.batch_size)
                nx.backward(loss)
            loss_sum += loss.item()
            cls_sum += c / cfg.batch_size
            reg_sum += r / cfg.batch_size
        optimizer_step(tunable, state, cfg, learning_rate(cfg, step))
        result.log.append((step, loss_sum, cls_sum, reg_sum))
        if on_step is not None:
            on_step(step, loss_sum)
        if step % 100 == 0:
            log.info("step %d loss %.4f", step, loss_sum)
    return result


def smoothed(values, window: int) -> float:
    v = np.asarray(values[-window:], dtype=np.float64)
    return float(v.mean())


def normalize_yaw_error(a: float, b: float) -> float:
    return abs(normalize_angle(a - b))
