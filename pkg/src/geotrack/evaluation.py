"""One-pass tracking, Success/Precision, reference trackers and expert-usage statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from .errors import UndefinedMetricError
from .geometry import Box3D, center_distance, iou3d, normalize_angle
from .learning import Prediction, localize
from .model import TrackerModel, merged_template, search_region, template_region

PRECISION_MAX_DIST = 2.0
PRECISION_STEPS = 201


# ------------------------------------------------------------------ metrics


def success_metric(ious) -> float:
    """Area under the IoU-threshold curve, which equals 100 x mean IoU."""
    v = np.clip(np.asarray(list(ious), dtype=np.float64), 0.0, 1.0)
    if v.size == 0:
        raise UndefinedMetricError("success of an empty IoU list")
    return float(100.0 * v.mean())


def precision_metric(dists) -> float:
    """Normalized area under fraction(dist <= tau) for tau in [0, 2] m, 201-point trapezoid."""
    v = np.asarray(list(dists), dtype=np.float64)
    if v.size == 0:
        raise UndefinedMetricError("precision of an empty distance list")
    taus = np.linspace(0.0, PRECISION_MAX_DIST, PRECISION_STEPS)
    frac = (v[None, :] <= taus[:, None]).mean(axis=1)
    area = np.sum((frac[1:] + frac[:-1]) * 0.5 * np.diff(taus))
    return float(100.0 * area / PRECISION_MAX_DIST)


# ------------------------------------------------------------------ tracking


@dataclass
class TrackerState:
    prev_box: Box3D
    first_template: object = None
    template: object = None
    carried: object = None
    frame_index: int = 1
    initial_box: Box3D | None = None

    def reset(self) -> None:
        self.prev_box = self.initial_box
        self.template = self.first_template
        self.carried = None
        self.frame_index = 1


# (frame_index, prev_box) -> predicted box; bypasses the network
Localizer = Callable[[int, Box3D], Box3D]


class Tracker:
    """Online tracker; sees ground truth only through ``init``."""

    def __init__(self, model: TrackerModel | None, localizer: Localizer | None = None):
        if model is None and localizer is None:
            raise ValueError("either a model or a localizer is required")
        self.model = model
        self.localizer = localizer
        self.state: TrackerState | None = None
        self.propagations = 0

    def init(self, points: np.ndarray, box: Box3D) -> None:
        tmpl = template_region(self.model.cfg, points, box) if self.model is not None else None
        self.state = TrackerState(box, tmpl, tmpl, None, 1, box)

    def reset(self) -> None:
        self.state.reset()

    def step(self, points: np.ndarray, gates: dict | None = None) -> Prediction:
        st = self.state
        st.frame_index += 1
        if self.model is None:
            pred = Prediction(self.localizer(st.frame_index, st.prev_box), 1.0)
            st.prev_box = pred.box
            return pred
        cfg = self.model.cfg
        search = search_region(cfg, points, st.prev_box)
        with nx.no_grad():
            out = self.model.forward(self.model.prepare(st.template, search), st.carried,
                                     trace=gates is not None)
        if gates is not None:
            for layer, g in out.gates.items():
                gates.setdefault(layer, []).append(g)
        if self.localizer is not None:
            pred = Prediction(self.localizer(st.frame_index, st.prev_box), 1.0)
        else:
            pred = localize(out.head_out, out.centers, st.prev_box)
        if cfg.use_temporal_token:
            if st.carried is not None:
                self.propagations += 1
            st.carried = out.temporal_out.detach()
        if cfg.template_mode == "previous":
            st.template = template_region(cfg, points, pred.box)
        elif cfg.template_mode == "merged":
            st.template = merged_template(cfg, st.first_template, template_region(cfg, points, pred.box))
        st.prev_box = pred.box
        return pred


def track_sequence(model: TrackerModel | None, clouds, first_box: Box3D,
                   localizer: Localizer | None = None, gates: dict | None = None) -> list:
    """Predictions for frames 2..T; only the first box is ground truth."""
    tracker = Tracker(model, localizer)
    tracker.init(clouds[0], first_box)
    return [tracker.step(pc, gates) for pc in clouds[1:]]


def track(model, seq, localizer=None, gates=None) -> list:
    return track_sequence(model, [f.points for f in seq.frames], seq.frames[0].box, localizer, gates)


# ----------------------------------------------------------------- baselines


def static_box_baseline(seq) -> list:
    b = seq.frames[0].box
    return [b for _ in seq.frames[1:]]


def constant_velocity_baseline(seq) -> list:
    """Extrapolates the displacement between the first two ground-truth boxes.

    Reads ground truth for frames 1 and 2, so it is a reference anchor rather
    than a protocol-compliant tracker; frame 2 is returned as given.
    """
    b0, b1 = seq.frames[0].box, seq.frames[1].box
    step = b1.center - b0.center
    dyaw = normalize_angle(b1.yaw - b0.yaw)
    out = [b1]
    prev = b1
    for _ in seq.frames[2:]:
        prev = Box3D(*(prev.center + step), prev.yaw + dyaw, prev.w, prev.l, prev.h)
        out.append(prev)
    return out


def baselines(seq) -> dict:
    return {"static": static_box_baseline(seq), "constant_velocity": constant_velocity_baseline(seq)}


# -------------------------------------------------------------------- report


@dataclass
class SequenceRecord:
    category: str
    seed: int
    ious: list
    distances: list


@dataclass
class EvalReport:
    records: list = field(default_factory=list)
    expert_histogram: dict = field(default_factory=dict)  # category -> layer -> list[M]

    def categories(self) -> list[str]:
        seen = []
        for r in self.records:
            if r.category not in seen:
                seen.append(r.category)
        return seen

    def _pool(self, category=None):
        recs = [r for r in self.records if category is None or r.category == category]
        ious = [v for r in recs for v in r.ious]
        dists = [v for r in recs for v in r.distances]
        return ious, dists

    def success(self, category=None) -> float:
        return success_metric(self._pool(category)[0])

    def precision(self, category=None) -> float:
        return precision_metric(self._pool(category)[1])

    def to_dict(self) -> dict:
        per_cat = {}
        for c in self.categories():
            ious, _ = self._pool(c)
            per_cat[c] = {"success": self.success(c), "precision": self.precision(c),
                          "num_frames": len(ious)}
        return {
            "mean": {"success": self.success(), "precision": self.precision(),
                     "num_frames": len(self._pool()[0])},
            "categories": per_cat,
            "sequences": [{"category": r.category, "seed": r.seed, "ious": r.ious,
                           "distances": r.distances} for r in self.records],
            "expert_histogram": {c: {str(k): list(v) for k, v in layers.items()}
                                 for c, layers in self.expert_histogram.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def histogram_csv(self) -> str:
        return histogram_to_csv(self.expert_histogram)


def score_boxes(seq, boxes) -> SequenceRecord:
    gts = [f.box for f in seq.frames[1:]]
    return SequenceRecord(seq.category, seq.seed,
                          [iou3d(p, g) for p, g in zip(boxes, gts)],
                          [center_distance(p, g) for p, g in zip(boxes, gts)])


def evaluate(model, sequences, localizer_factory=None, with_experts: bool = False) -> EvalReport:
    """Track every sequence; ``localizer_factory(seq)`` swaps in a test double."""
    report = EvalReport()
    sums: dict = {}
    for seq in sequences:
        gates: dict | None = {} if with_experts else None
        loc = localizer_factory(seq) if localizer_factory is not None else None
        preds = track(model, seq, loc, gates)
        report.records.append(score_boxes(seq, [p.box for p in preds]))
        if gates:
            _accumulate(sums, seq.category, gates)
    if with_experts:
        report.expert_histogram = _normalize(sums)
    return report


def evaluate_baseline(sequences, name: str) -> EvalReport:
    fn = {"static": static_box_baseline, "constant_velocity": constant_velocity_baseline}[name]
    return EvalReport([score_boxes(s, fn(s)) for s in sequences])


# ----------------------------------------------------------------- experts


def _accumulate(sums: dict, category: str, gates: dict) -> None:
    per_layer = sums.setdefault(category, {})
    for layer, mats in gates.items():
        total = sum(m.sum(axis=0) for m in mats)
        per_layer[layer] = per_layer.get(layer, 0.0) + total


def _normalize(sums: dict) -> dict:
    return {c: {layer: (v / v.sum()).tolist() for layer, v in sorted(layers.items())}
            for c, layers in sums.items()}


def expert_histogram_from_gates(gates_by_category: dict) -> dict:
    """``{category: {layer: [gate matrices]}}`` -> normalized activation fractions."""
    sums: dict = {}
    for c, gates in gates_by_category.items():
        _accumulate(sums, c, gates)
    return _normalize(sums)


def expert_stats(model: TrackerModel, sequences) -> dict:
    """Gate-weighted expert activation fractions per (category, layer)."""
    if not model.moge:
        raise ValueError("model has no geometry-expert layer")
    sums: dict = {}
    for seq in sequences:
        gates: dict = {}
        track(model, seq, gates=gates)
        _accumulate(sums, seq.category, gates)
    return _normalize(sums)


def histogram_to_csv(hist: dict) -> str:
    lines = ["category,layer,expert,fraction"]
    for c, layers in hist.items():
        for layer, fracs in layers.items():
            for e, f in enumerate(fracs):
                lines.append(f"{c},{layer},{e},{f:.17g}")
    return "\n".join(lines) + "\n"
