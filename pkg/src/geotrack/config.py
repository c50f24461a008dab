"""Model, training and run configuration.

A run config is one flat JSON object; every key belongs to exactly one of
``ModelConfig`` or ``TrainConfig`` (plus the optional ``preset`` key), and
missing keys keep their defaults.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import ConfigError

LayerSpec = Union[str, list]

MASK_MODES = ("fixed", "dynamic_beta", "fully_learnable", "none")
TEMPLATE_MODES = ("first", "previous", "merged")


@dataclass
class ModelConfig:
    num_layers: int = 4
    dim: int = 64
    num_heads: int = 4
    adapter_rank: int = 16
    num_experts: int = 8
    top_k: int = 4
    expert_hidden: int | None = None  # None -> ceil(dim / 8)
    adapter_layers: LayerSpec = "all"
    moge_layers: LayerSpec = "even"
    layer_index_base: int = 1
    template_points: int = 128
    search_points: int = 128
    template_groups: int | None = 64  # None -> one token per sampled point
    search_groups: int | None = 64
    group_neighbors: int = 32
    use_adapters: bool = True
    use_moge: bool = True
    use_temporal_token: bool = True
    mask_mode: str = "dynamic_beta"
    mask_fg: float = 0.8
    mask_bg: float = 0.2
    mask_search: float = 0.5
    full_finetune: bool = False
    template_mode: str = "previous"
    search_enlarge: float = 2.0
    template_enlarge: float = 1.0
    backbone_gain: float = 0.02
    ln_eps: float = 1e-5
    load_balance_weight: float = 0.0
    init_seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def hidden(self) -> int:
        return self.expert_hidden if self.expert_hidden is not None else math.ceil(self.dim / 8)

    @property
    def g_template(self) -> int:
        return self.template_groups if self.template_groups is not None else self.template_points

    @property
    def g_search(self) -> int:
        return self.search_groups if self.search_groups is not None else self.search_points

    def resolved_adapter_layers(self) -> tuple[int, ...]:
        if not self.use_adapters:
            return ()
        return resolve_layers(self.adapter_layers, self.num_layers, self.layer_index_base)

    def resolved_moge_layers(self) -> tuple[int, ...]:
        if not self.use_moge:
            return ()
        return resolve_layers(self.moge_layers, self.num_layers, self.layer_index_base)

    def validate(self) -> None:
        if self.num_layers < 1 or self.dim < 1:
            raise ConfigError("num_layers and dim must be positive")
        if self.dim % self.num_heads:
            raise ConfigError(f"num_heads={self.num_heads} does not divide dim={self.dim}")
        if self.dim % 2:
            raise ConfigError(f"dim must be even, got {self.dim}")
        if not 1 <= self.adapter_rank < self.dim:
            raise ConfigError(f"adapter_rank must be in [1, dim), got {self.adapter_rank}")
        if not 1 <= self.top_k <= self.num_experts:
            raise ConfigError(f"top_k must be in [1, num_experts], got {self.top_k}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.template_mode not in TEMPLATE_MODES:
            raise ConfigError(f"template_mode must be one of {TEMPLATE_MODES}, got {self.template_mode!r}")
        if self.layer_index_base not in (0, 1):
            raise ConfigError("layer_index_base must be 0 or 1")
        if self.g_template > self.template_points or self.g_search > self.search_points:
            raise ConfigError("group count exceeds the sampled point count")
        if self.group_neighbors < 1:
            raise ConfigError("group_neighbors must be >= 1")
        self.resolved_adapter_layers()
        self.resolved_moge_layers()


def resolve_layers(spec: LayerSpec, num_layers: int, base: int = 1) -> tuple[int, ...]:
    """Named or explicit placement -> sorted 1-based layer numbers.

    ``even``/``odd`` are judged in the ``base`` indexing, so with base 0 the
    "even" layers are 1-based layers 1, 3, 5, ...
    """
    if isinstance(spec, str):
        idx = range(base, base + num_layers)
        if spec == "all":
            chosen = list(idx)
        elif spec == "even":
            chosen = [i for i in idx if i % 2 == 0]
        elif spec == "odd":
            chosen = [i for i in idx if i % 2 == 1]
        elif spec == "last":
            chosen = [base + num_layers - 1]
        elif spec == "none":
            chosen = []
        else:
            raise ConfigError(f"unknown layer placement {spec!r}")
    else:
        chosen = [int(i) for i in spec]
        for i in chosen:
            if not base <= i < base + num_layers:
                raise ConfigError(f"layer index {i} outside [{base}, {base + num_layers - 1}]")
    return tuple(sorted({i - base + 1 for i in chosen}))


@dataclass
class TrainConfig:
    clip_length: int = 3
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0
    lr_schedule: str = "cosine"  # constant | cosine (decays to zero at the last step)
    steps: int = 2000
    batch_size: int = 1
    lambda_cls: float = 1.0
    lambda_reg: float = 1.0
    huber_delta: float = 1.0
    temporal_bptt: bool = True
    jitter_xy: float = 0.3
    jitter_z: float = 0.05
    jitter_yaw: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.clip_length < 2:
            raise ConfigError(f"clip_length must be >= 2, got {self.clip_length}")
        if self.lr < 0 or self.beta1 < 0 or self.beta2 < 0 or self.adam_eps <= 0:
            raise ConfigError("learning rate and moment parameters must be non-negative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")


PRESETS = {
    "desk": {},
    "large": {"num_layers": 12, "dim": 384, "num_heads": 6, "adapter_rank": 72,
              "template_groups": None, "search_groups": None, "group_neighbors": 8},
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    preset: str = "desk"

    def to_dict(self) -> dict:
        d = {"preset": self.preset}
        d.update(dataclasses.asdict(self.model))
        d.update(dataclasses.asdict(self.train))
        return d


_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
assert not _MODEL_KEYS & _TRAIN_KEYS


def run_config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    preset = raw.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    model_kw = dict(PRESETS[preset])
    train_kw = {}
    for key, value in raw.items():
        if key in _MODEL_KEYS:
            model_kw[key] = value
        elif key in _TRAIN_KEYS:
            train_kw[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return RunConfig(ModelConfig(**model_kw), TrainConfig(**train_kw), preset)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return run_config_from_dict(raw)


def model_config_from_dict(raw: dict) -> ModelConfig:
    unknown = set(raw) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    return ModelConfig(**raw)
