"""The eleven acceptance criteria, one test each.

Every test records a one-line verdict; the lines are printed as they happen
(visible with ``-s``) and again in the terminal summary.
"""

import math
import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from geotrack import numerics as nx
from geotrack.checkpoint import save_checkpoint
from geotrack.config import ModelConfig, TrainConfig, run_config_from_dict
from geotrack.embedding import PatchEmbedParams, PositionalParams, patch_embed, positional_embed
from geotrack.encoder import (AdapterParams, MoGEParams, TransformerLayerParams, adapter_forward,
                              ffn, mhsa, moge_forward, router_topk, transformer_block_forward)
from geotrack.evaluation import Tracker, evaluate, evaluate_baseline
from geotrack.geometry import Box3D, farthest_point_sample, iou3d
from geotrack.learning import (Clip, clip_loss, closed_form_tunable, compute_loss, count_tunable,
                               parameter_hashes, smoothed, train)
from geotrack.model import HeadParams, TrackerModel, head_forward
from geotrack.numerics import Tensor
from geotrack.synthdata import make_desk_dataset, write_dataset
from geotrack.temporal import TemporalToken, apply_dynamic_mask, propagate_temporal_token

import gradcheck
import oracles
from conftest import ACCEPTANCE, TINY
from test_encoder import dense_mixture

PUBLISHED_TUNABLE = 5.30e6  # published count for the full-size tracker
DESK_SEED = 0

# Golden numbers from the first green run (seed 0, single core).
GOLDEN_FULL_SUCCESS = 79.3
GOLDEN_HEAD_ONLY_SUCCESS = 76.5
GOLDEN_STATIC_SUCCESS = 28.01


def verdict(cid, ok, detail):
    ACCEPTANCE.append((cid, bool(ok), detail))
    print(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# ------------------------------------------------------------ shared runs


@pytest.fixture(scope="module")
def desk():
    return make_desk_dataset(DESK_SEED)


def _train_and_eval(desk, cfg, with_experts=False, on_500=None):
    model = TrackerModel(cfg)
    frozen = model.frozen_names()
    before = parameter_hashes(model, frozen)
    at_500 = {}

    def hook(step, _loss):
        if step == 500:
            at_500.update(parameter_hashes(model, frozen))

    start = time.perf_counter()
    result = train(desk.train, model, TrainConfig(), on_step=hook)
    train_seconds = time.perf_counter() - start
    report = evaluate(model, desk.test, with_experts=with_experts)
    return SimpleNamespace(model=model, result=result, report=report, before=before, at_500=at_500,
                           after=parameter_hashes(model, frozen),
                           seconds=time.perf_counter() - start, train_seconds=train_seconds)


@pytest.fixture(scope="module")
def full_run(desk):
    return _train_and_eval(desk, ModelConfig(), with_experts=True)


@pytest.fixture(scope="module")
def head_only_run(desk):
    cfg = ModelConfig(use_adapters=False, use_moge=False, use_temporal_token=False, mask_mode="fixed")
    return _train_and_eval(desk, cfg)


# ------------------------------------------------------------ criterion 1


def _p(r, *shape, scale=1.0):
    return Tensor(r.normal(0, scale, shape), requires_grad=True)


def _randomized(tensors, r, scale):
    for t in tensors:
        t.data = r.normal(0, scale, t.shape)
    return list(tensors)


def _op_cases(r):
    """(name, loss builder, params) for every differentiable op, drawn from ``r``."""
    a, b = _p(r, 4, 3), _p(r, 4, 3)
    w43 = r.normal(size=(4, 3))
    r_33 = r.normal(size=(3, 3))
    w83 = r.normal(size=(8, 3))
    x3, y3 = _p(r, 2, 3, 4), _p(r, 4, 3)
    w233 = r.normal(size=(2, 3, 3))
    g3, b3 = _p(r, 3), _p(r, 3, scale=0.1)
    labels = (r.uniform(size=(4, 3)) > 0.5).astype(float)
    target = r.normal(size=(4, 3))
    cases = [
        ("add", lambda: ((a + b) * w43).sum(), [a, b]),
        ("sub", lambda: ((a - b) * w43).sum(), [a, b]),
        ("mul", lambda: (a * b * w43).sum(), [a, b]),
        ("div", lambda: (a / (nx.exp(b) + 1.0) * w43).sum(), [a, b]),
        ("neg", lambda: (nx.neg(a) * w43).sum(), [a]),
        ("exp", lambda: (nx.exp(a * 0.5) * w43).sum(), [a]),
        ("relu", lambda: (nx.relu(a) * w43).sum(), [a]),
        ("gelu", lambda: (nx.gelu(a) * w43).sum(), [a]),
        ("sigmoid", lambda: (nx.sigmoid(a) * w43).sum(), [a]),
        ("sum", lambda: (nx.tsum(a * w43, axis=1) * b[:, 0]).sum(), [a, b]),
        ("mean", lambda: (nx.mean(a * b, axis=0) * w43[0]).sum(), [a, b]),
        ("max", lambda: (nx.tmax(a + b, axis=1) * w43[:, 0]).sum(), [a, b]),
        ("reshape", lambda: (a.reshape(3, 4) @ b.reshape(4, 3)).sum(), [a, b]),
        ("transpose", lambda: ((a.transpose(1, 0) @ b) * r_33).sum(), [a, b]),
        ("take", lambda: (nx.take(a, np.array([0, 2, 2, 1])) * b).sum(), [a, b]),
        ("concat", lambda: (nx.concat([a, b * 2.0], axis=0) * w83).sum(), [a, b]),
        ("matmul", lambda: ((x3 @ y3) * w233).sum(), [x3, y3]),
        ("softmax", lambda: (nx.softmax_lastdim(a) * w43).sum(), [a]),
        ("topk_softmax", lambda: (nx.topk_softmax(a, 2) * w43).sum(), [a]),
        ("layer_norm", lambda: (nx.layer_norm(a, g3, b3) * w43).sum(), [a, g3, b3]),
        ("bce", lambda: (nx.bce_with_logits(a * 2.0, labels) * w43).sum(), [a]),
        ("huber", lambda: (nx.huber(a * 2.0 + b, target) * w43).sum(), [a, b]),
    ]

    d = 4
    patch, pos = PatchEmbedParams.init(d, r), PositionalParams.init(d, r)
    _randomized([patch.b1, patch.b2, pos.b1, pos.b2], r, 0.1)
    offsets, centers = r.normal(size=(3, 5, 3)), r.normal(size=(3, 3))
    wd = r.normal(size=(3, d))
    layer = TransformerLayerParams.init(d, 2, r, gain=0.3)
    _randomized([layer.ln1_b, layer.bq, layer.bo, layer.ff1_b], r, 0.1)
    ad1, ad2 = AdapterParams.init(d, 2, r), AdapterParams.init(d, 2, r)
    _randomized([*ad1.tensors().values(), *ad2.tensors().values()], r, 0.3)
    moge = MoGEParams.init(d, 4, 3, 2, r)
    _randomized(moge.tensors().values(), r, 0.5)
    f = _p(r, 3, d)
    head = HeadParams.init(d, r)
    _randomized(head.tensors().values(), r, 0.3)
    beta = _p(r, 3, 1)
    mask = r.uniform(size=(3, 1))
    t0, carried = _p(r, 1, d), _p(r, 1, d)
    gt = Box3D(0.1, 0.0, 0.0, 0.2, 1.5, 1.5, 1.5)
    cls_centers = r.uniform(-1, 1, size=(3, 3))
    r_34, r_35 = r.normal(size=(3, 4)), r.normal(size=(3, 5))
    cases += [
        ("patch_embed", lambda: (patch_embed(offsets, patch) * wd).sum(), list(patch.__dict__.values())),
        ("positional_embed", lambda: (positional_embed(centers, pos) * wd).sum(), list(pos.__dict__.values())),
        ("adapter", lambda: (adapter_forward(f, ad1) * wd).sum(), [f, *ad1.tensors().values()]),
        ("mhsa", lambda: (mhsa(f, layer) * wd).sum(), [f]),
        ("ffn", lambda: (ffn(f, layer) * wd).sum(), [f]),
        ("block", lambda: (transformer_block_forward(f, layer, ad1, ad2) * wd).sum(),
         [f, *ad1.tensors().values(), *ad2.tensors().values()]),
        ("router", lambda: (router_topk(f, moge.w_router, 2) * r_34).sum(), [f, moge.w_router]),
        ("moge", lambda: (moge_forward(f, moge) * wd).sum(), [f, *moge.tensors().values()]),
        ("dynamic_mask", lambda: (apply_dynamic_mask(f, mask, beta) * wd).sum(), [f, beta]),
        ("temporal", lambda: (propagate_temporal_token(TemporalToken(t0, carried)) * wd[:1]).sum(), [t0, carried]),
        ("head", lambda: (head_forward(f, head) * r_35).sum(), [f, *head.tensors().values()]),
        ("loss", lambda: compute_loss(head_forward(f, head), cls_centers, gt).total, [f, *head.tensors().values()]),
    ]
    return cases


def test_criterion_1_gradient_suite(tiny_data):
    start = time.perf_counter()
    errors = {}
    for seed in range(4):
        r = np.random.default_rng(seed)
        for name, build, params in _op_cases(r):
            fixed = np.random.default_rng([seed, 7])
            errors[(name, seed)] = gradcheck.check(build, params, fixed, max_coords=60)
    # the end-to-end clip loss over every tunable of a small tracker
    for seed in range(4):
        cfg = replace(ModelConfig(**TINY), num_layers=2, adapter_layers="all", moge_layers="all", init_seed=seed)
        model = TrackerModel(cfg)
        _randomized([t for n, t in model.named_parameters().items() if n.startswith(("adapter.", "moge."))],
                    np.random.default_rng(seed), 0.2)
        seq = tiny_data.train[seed % len(tiny_data.train)]
        tunables = [t for t in model.named_parameters().values() if t.requires_grad]

        def loss(model=model, seq=seq, seed=seed):
            return clip_loss(model, Clip(seq, 0), TrainConfig(clip_length=3), np.random.default_rng(seed))[0]

        errors[("clip_loss", seed)] = gradcheck.check(loss, tunables, np.random.default_rng(seed), max_coords=40)
    seconds = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = len(errors) >= 100 and errors[worst] < 1e-4 and seconds < 60
    verdict(1, ok, f"{len(errors)} cases, worst rel err {errors[worst]:.2e} ({worst[0]}), {seconds:.1f} s")


# ------------------------------------------------------------ criterion 2


def test_criterion_2_frozen_backbone(full_run):
    n = len(full_run.before)
    ok = n > 0 and full_run.at_500 == full_run.before and full_run.after == full_run.before
    verdict(2, ok, f"{n} frozen tensors hashed before, at step 500 and after "
                   f"{len(full_run.result.log)} steps: {'unchanged' if ok else 'CHANGED'}")


# ------------------------------------------------------------ criterion 3


def test_criterion_3_baseline_reduction(desk):
    cfg = ModelConfig()
    adapted = TrackerModel(cfg)
    for name, t in adapted.named_parameters().items():
        if name.startswith(("adapter.", "moge.", "mask.beta")):
            t.data = np.zeros(t.shape)
    plain = TrackerModel(replace(cfg, use_adapters=False, use_moge=False, mask_mode="none"))
    seq = desk.test[0]
    same = True
    carried_a = carried_p = None
    from geotrack.model import search_region, template_region
    for prev, cur in zip(seq.frames, seq.frames[1:4]):
        inputs = adapted.prepare(template_region(cfg, prev.points, prev.box), search_region(cfg, cur.points, prev.box))
        with nx.no_grad():
            a = adapted.forward(inputs, carried_a)
            p = plain.forward(inputs, carried_p)
        same &= a.head_out.data.tobytes() == p.head_out.data.tobytes()
        same &= a.temporal_out.data.tobytes() == p.temporal_out.data.tobytes()
        carried_a, carried_p = a.temporal_out, p.temporal_out
    verdict(3, same, "zeroed adapters, experts and beta reproduce the plain frozen encoder bitwise over 3 frames")


# ------------------------------------------------------------ criterion 4


def test_criterion_4_routing():
    r = np.random.default_rng(4)
    rows_checked, worst_gate = 0, 0.0
    while rows_checked < 10_000:
        m = int(r.integers(1, 9))
        k = int(r.integers(1, m + 1))
        z, w = r.normal(size=(100, 6)), r.normal(size=(6, m))
        gates = router_topk(Tensor(z), Tensor(w), k).data
        logits = z @ w
        picked = nx.topk_indices(logits, k)
        for row, grow, idx in zip(logits, gates, picked):
            chosen, expected = oracles.topk_full_sort(row.tolist(), k)
            assert set(idx.tolist()) == chosen
            assert set(np.flatnonzero(grow).tolist()) <= chosen
            worst_gate = max(worst_gate, float(np.abs(grow - expected).max()))
        rows_checked += len(z)
    worst_dense, instances = 0.0, 0
    for s in (1, 2, 5, 16):
        for d in (1, 2, 7, 16):
            for m in range(1, 9):
                p = MoGEParams.init(d, m, int(r.integers(1, 5)), m, r)
                _randomized(p.tensors().values(), r, 0.5)
                z = r.normal(size=(s, d))
                worst_dense = max(worst_dense, float(np.abs(moge_forward(Tensor(z), p).data - dense_mixture(z, p)).max()))
                instances += 1
    ok = worst_gate < 1e-9 and worst_dense < 1e-9
    verdict(4, ok, f"{rows_checked} router rows (max gate err {worst_gate:.1e}); "
                   f"{instances} K=M mixtures (max err {worst_dense:.1e})")


# ------------------------------------------------------------ criterion 5


def test_criterion_5_temporal_contract(tiny_data):
    r = np.random.default_rng(5)
    t0, prev = r.normal(size=(1, 16)), r.normal(size=(1, 16))
    identity = propagate_temporal_token(TemporalToken(Tensor(t0), Tensor(prev))).data.tobytes() == (t0 + prev).tobytes()
    t0_tensor = Tensor(t0)
    first = propagate_temporal_token(TemporalToken(t0_tensor)) is t0_tensor

    model = TrackerModel(ModelConfig(**TINY))
    seq = tiny_data.test[0]
    tr = Tracker(model)
    tr.init(seq.frames[0].points, seq.frames[0].box)
    a = tr.step(seq.frames[1].points)
    for f in seq.frames[2:]:
        tr.step(f.points)
    tr.reset()
    again = tr.step(seq.frames[1].points)
    restored = again.box == a.box and again.confidence == a.confidence
    ok = identity and first and restored
    verdict(5, ok, f"sum identity exact={identity}, first-frame token is the initial token={first}, "
                   f"reset restores the first step={restored}")


# ------------------------------------------------------------ criterion 6


def test_criterion_6_geometry():
    r = np.random.default_rng(6)
    worst_mc = 0.0
    for _ in range(50):
        a = Box3D(*r.uniform(-1, 1, 3), r.uniform(-math.pi, math.pi), *r.uniform(0.5, 3, 3))
        b = Box3D(*(a.center + r.uniform(-1, 1, 3)), r.uniform(-math.pi, math.pi), *r.uniform(0.5, 3, 3))
        worst_mc = max(worst_mc, abs(iou3d(a, b) - oracles.monte_carlo_iou(a, b, 1_000_000, r)))
    third = iou3d(Box3D(0, 0, 0, 0, 1, 1, 1), Box3D(0.5, 0, 0, 0, 1, 1, 1))
    octagon = iou3d(Box3D(0, 0, 0, 0, 1, 1, 1), Box3D(0, 0, 0, math.pi / 4, 1, 1, 1))
    fps_ok, fps_cases = True, 0
    for n_points in list(range(1, 40)) + list(range(40, 201, 8)) + [200]:
        pts = r.normal(size=(n_points, 3))
        for n in {1, max(1, n_points // 3), n_points, n_points + 5}:
            fps_ok &= farthest_point_sample(pts, n).tolist() == oracles.greedy_fps_vectorized(pts, n)
            fps_cases += 1
    ok = worst_mc < 0.01 and abs(third - 1 / 3) < 1e-12 and abs(octagon - 0.7071) < 0.01 and fps_ok
    verdict(6, ok, f"50 pairs max |iou - MC| {worst_mc:.4f}; 1/3 case {third:.6f}; 45 deg case {octagon:.4f}; "
                   f"FPS equals greedy on {fps_cases} clouds up to 200 points: {fps_ok}")


# ------------------------------------------------------------ criterion 7


def test_criterion_7_desk_learning(desk, full_run):
    static = evaluate_baseline(desk.test, "static").success()
    success = full_run.report.success()
    losses = [row[1] for row in full_run.result.log]
    initial, final = float(np.mean(losses[:10])), smoothed(losses, 50)
    ok = success >= static + 15 and final < 0.5 * initial and full_run.seconds < 15 * 60
    verdict(7, ok, f"Success {success:.2f} vs static {static:.2f} (gate {static + 15:.2f}); "
                   f"loss {initial:.3f} -> {final:.3f}; {len(losses)} steps, {full_run.seconds:.0f} s")


# ------------------------------------------------------------ criterion 8


def test_criterion_8_component_toggle(full_run, head_only_run):
    full, head = full_run.report.success(), head_only_run.report.success()
    verdict(8, full >= head, f"full model {full:.2f} vs frozen backbone + head only {head:.2f}")


# ------------------------------------------------------------ criterion 9


def test_criterion_9_expert_histogram(desk, full_run):
    hist = full_run.report.expert_histogram
    layers = sorted(full_run.model.moge)
    rows = [(c, layer, sum(hist[c][layer])) for c in hist for layer in hist[c]]
    ok = (set(hist) == {"car", "pedestrian", "cyclist", "van"}
          and all(sorted(hist[c]) == layers for c in hist)
          and all(abs(s - 1.0) < 1e-9 for _, _, s in rows))
    worst = max(abs(s - 1.0) for _, _, s in rows)
    verdict(9, ok, f"{len(rows)} (category, layer) rows over layers {layers}, max |sum - 1| {worst:.1e}")


# ------------------------------------------------------------ criterion 10


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(desk, full_run, tmp_path):
    write_dataset(desk, tmp_path / "a")
    write_dataset(make_desk_dataset(DESK_SEED), tmp_path / "b")
    data_same = _tree(tmp_path / "a") == _tree(tmp_path / "b")

    run = run_config_from_dict({"steps": 50})
    for name in ("a.ckpt", "b.ckpt"):
        model = TrackerModel(run.model)
        train(desk.train, model, run.train)
        save_checkpoint(model, tmp_path / name)
    ckpt_same = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    again = evaluate(full_run.model, desk.test, with_experts=True)
    report_same = again.to_json() == full_run.report.to_json()
    ok = data_same and ckpt_same and report_same
    verdict(10, ok, f"datasets identical={data_same}, checkpoints (50 desk steps) identical={ckpt_same}, "
                    f"reports identical={report_same}")


# ------------------------------------------------------------ criterion 11


def test_criterion_11_tunable_accounting():
    configs = [ModelConfig(), ModelConfig(**TINY),
               ModelConfig(adapter_layers="odd", moge_layers=[1, 4], mask_mode="fully_learnable"),
               ModelConfig(use_moge=False, use_temporal_token=False, mask_mode="fixed"),
               ModelConfig(full_finetune=True, num_layers=2)]
    matches = all(count_tunable(TrackerModel(c)) == closed_form_tunable(c)["total"] for c in configs)
    large = run_config_from_dict({"preset": "large"}).model
    parts = closed_form_tunable(large)
    total = parts["total"]
    built = count_tunable(TrackerModel(large))
    breakdown = ", ".join(f"{k} {v:,}" for k, v in parts.items() if k != "total" and v)
    verdict(11, matches and built == total,
            f"closed form matches {len(configs)} configs; large preset {total / 1e6:.3f}M "
            f"vs published {PUBLISHED_TUNABLE / 1e6:.2f}M ({breakdown})")
