"""Frozen transformer blocks with gated two-path adapters and geometry-expert layers."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError
from .numerics import Tensor


def _t(arr, trainable: bool) -> Tensor:
    return Tensor(arr, requires_grad=trainable)


@dataclass
class TransformerLayerParams:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ff1_w: Tensor  # (d, 4d)
    ff1_b: Tensor
    ff2_w: Tensor  # (4d, d)
    ff2_b: Tensor
    num_heads: int = 1

    @classmethod
    def init(cls, dim: int, num_heads: int, rng: np.random.Generator, gain: float = 0.02,
             trainable: bool = False) -> "TransformerLayerParams":
        if dim % num_heads:
            raise ConfigError(f"{num_heads} heads do not divide d={dim}")

        def w(*shape):
            return _t(rng.normal(0.0, gain, shape), trainable)

        def zeros(n):
            return _t(np.zeros(n), trainable)

        return cls(
            _t(np.ones(dim), trainable), zeros(dim),
            w(dim, dim), zeros(dim), w(dim, dim), zeros(dim), w(dim, dim), zeros(dim),
            w(dim, dim), zeros(dim),
            _t(np.ones(dim), trainable), zeros(dim),
            w(dim, 4 * dim), zeros(4 * dim), w(4 * dim, dim), zeros(dim),
            num_heads=num_heads,
        )

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "num_heads"}


@dataclass
class AdapterParams:
    w_dn: Tensor  # (d, r)
    w_up: Tensor  # (r, d)
    w_s: Tensor  # (d, 1)

    @classmethod
    def init(cls, dim: int, rank: int, rng: np.random.Generator, scale: float = 0.02) -> "AdapterParams":
        # zero up-projection: the adapted layer starts exactly at the frozen one
        return cls(
            Tensor(rng.normal(0.0, scale, (dim, rank)), requires_grad=True),
            Tensor(np.zeros((rank, dim)), requires_grad=True),
            Tensor(rng.normal(0.0, scale, (dim, 1)), requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"w_dn": self.w_dn, "w_up": self.w_up, "w_s": self.w_s}


@dataclass
class MoGEParams:
    w_router: Tensor  # (d, M)
    w1: Tensor  # (M, d, h)
    b1: Tensor  # (M, 1, h)
    w2: Tensor  # (M, h, d)
    b2: Tensor  # (M, 1, d)
    top_k: int = 1

    @classmethod
    def init(cls, dim: int, num_experts: int, hidden: int, top_k: int,
             rng: np.random.Generator, router_scale: float = 0.02) -> "MoGEParams":
        if not 1 <= top_k <= num_experts:
            raise ConfigError(f"top_k={top_k} outside [1, {num_experts}]")
        return cls(
            Tensor(rng.normal(0.0, router_scale, (dim, num_experts)), requires_grad=True),
            Tensor(rng.normal(0.0, 1 / np.sqrt(dim), (num_experts, dim, hidden)), requires_grad=True),
            Tensor(np.zeros((num_experts, 1, hidden)), requires_grad=True),
            Tensor(np.zeros((num_experts, hidden, dim)), requires_grad=True),
            Tensor(np.zeros((num_experts, 1, dim)), requires_grad=True),
            top_k=top_k,
        )

    @property
    def num_experts(self) -> int:
        return self.w_router.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_router": self.w_router, "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass(frozen=True)
class TokenSplit:
    """Row layout ``[temporal | template | search]``; the temporal token is row 0."""

    n_template: int
    n_search: int

    @property
    def total(self) -> int:
        return 1 + self.n_template + self.n_search

    @property
    def routed_rows(self) -> np.ndarray:
        return np.concatenate([[0], np.arange(1 + self.n_template, self.total)])


# ------------------------------------------------------------------ pieces


def adapter_forward(f: Tensor, p: AdapterParams) -> Tensor:
    """Gated adapter: ReLU(F W_s) scales GeLU(F W_dn) W_up row-wise."""
    gate = nx.relu(f @ p.w_s)
    return gate * (nx.gelu(f @ p.w_dn) @ p.w_up)


def mhsa(x: Tensor, layer: TransformerLayerParams) -> Tensor:
    t, d = x.shape
    h = layer.num_heads
    dh = d // h

    def heads(z):
        return z.reshape(t, h, dh).transpose(1, 0, 2)

    q = heads(x @ layer.wq + layer.bq)
    k = heads(x @ layer.wk + layer.bk)
    v = heads(x @ layer.wv + layer.bv)
    att = nx.softmax_lastdim((q @ nx.swap_last(k)) * (1.0 / np.sqrt(dh)))
    out = (att @ v).transpose(1, 0, 2).reshape(t, d)
    return out @ layer.wo + layer.bo


def ffn(x: Tensor, layer: TransformerLayerParams) -> Tensor:
    return nx.gelu(x @ layer.ff1_w + layer.ff1_b) @ layer.ff2_w + layer.ff2_b


def router_topk(z: Tensor, w_router: Tensor, k: int) -> Tensor:
    """S x M gates: softmax over each row's K largest logits, zeros elsewhere."""
    if not 1 <= k <= w_router.shape[1]:
        raise ConfigError(f"K={k} outside [1, M={w_router.shape[1]}]")
    return nx.topk_softmax(z @ w_router, k)


def experts_forward(z: Tensor, p: MoGEParams) -> Tensor:
    """Every expert on every row: (M, S, d)."""
    s, d = z.shape
    hidden = nx.gelu(z.reshape(1, s, d) @ p.w1 + p.b1)
    return hidden @ p.w2 + p.b2


def moge_forward(z: Tensor, p: MoGEParams, trace: list | None = None) -> Tensor:
    """Gate-weighted sum of expert outputs per row.

    Inactive experts carry an exact zero gate, so they receive no gradient.
    """
    gates = router_topk(z, p.w_router, p.top_k)
    if trace is not None:
        trace.append(gates.data.copy())
    mixed = gates.transpose(1, 0).reshape(p.num_experts, z.shape[0], 1) * experts_forward(z, p)
    return mixed.sum(axis=0)


def load_balance_loss(z: Tensor, p: MoGEParams) -> Tensor:
    """Switch-style auxiliary loss M * sum_m f_m * P_m (off by default)."""
    logits = z @ p.w_router
    probs = nx.softmax_lastdim(logits)
    chosen = np.zeros(probs.shape)
    np.put_along_axis(chosen, nx.topk_indices(logits.data, p.top_k), 1.0, axis=-1)
    frac = chosen.mean(axis=0) / p.top_k
    return (probs.mean(axis=0) * frac).sum() * float(p.num_experts)


def transformer_block_forward(f: Tensor, layer: TransformerLayerParams,
                              ad1: AdapterParams | None = None, ad2: AdapterParams | None = None,
                              moge: MoGEParams | None = None, split: TokenSplit | None = None,
                              eps: float = 1e-5, trace: list | None = None,
                              aux: list | None = None) -> Tensor:
    if split is not None and f.shape[0] != split.total:
        raise ContractError(f"token split {split} does not match {f.shape[0]} rows")
    if moge is not None and split is None:
        raise ContractError("a geometry-expert layer needs the token split")

    x = nx.layer_norm(f, layer.ln1_g, layer.ln1_b, eps)
    f_hat = mhsa(x, layer) + f
    if ad1 is not None:
        f_hat = f_hat + adapter_forward(x, ad1)
    y = nx.layer_norm(f_hat, layer.ln2_g, layer.ln2_b, eps)
    out = ffn(y, layer) + f_hat
    if ad2 is not None:
        out = out + adapter_forward(y, ad2)

    if moge is None:
        return out
    rows = split.routed_rows
    z = out[rows]
    z_new = z + moge_forward(z, moge, trace)
    if aux is not None:
        aux.append(load_balance_loss(z, moge))
    t0 = 1 + split.n_template
    return nx.concat([z_new[0:1], out[1:t0], z_new[1:]], axis=0)


@dataclass
class EncoderParams:
    layers: list  # TransformerLayerParams, 1-based layer i at index i-1
    adapters: dict  # layer number -> (AdapterParams, AdapterParams)
    moge: dict  # layer number -> MoGEParams


def encoder_forward(f0: Tensor, split: TokenSplit, params: EncoderParams, eps: float = 1e-5,
                    trace: dict | None = None, aux: list | None = None):
    """Run all blocks; returns ``(temporal 1xd, template Gt x d, search Gs x d)``.

    ``trace``, when given, collects router gates per expert layer.
    """
    num = len(params.layers)
    for i in list(params.adapters) + list(params.moge):
        if not 1 <= i <= num:
            raise ConfigError(f"placement layer {i} outside [1, {num}]")
    if f0.shape[0] != split.total:
        raise ContractError(f"F0 has {f0.shape[0]} rows, split expects {split.total}")
    f = f0
    for i, layer in enumerate(params.layers, start=1):
        ad1, ad2 = params.adapters.get(i, (None, None))
        gates = [] if trace is not None and i in params.moge else None
        f = transformer_block_forward(f, layer, ad1, ad2, params.moge.get(i), split, eps, gates, aux)
        if gates:
            trace[i] = gates[0]
    t0 = 1 + split.n_template
    return f[0:1], f[1:t0], f[t0:]
