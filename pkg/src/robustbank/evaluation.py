"""Slice and scan-level evaluation plus loss-surface export.

Scan diagnoses come from majority voting over slice predictions; exact vote
ties resolve to the positive (disease) class. Macro F1 averages the per-class
F1 scores with zero-denominator classes scored 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import robust_loss
from .errors import DimensionMismatch, MissingManifestEntry, UnlabeledInput
from .featurebank import FeatureBank, ScanManifest
from .mlp import TrainedModel, forward, predict_proba


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass
class EvalReport:
    slice_confusion: ConfusionCounts
    scan_confusion: ConfusionCounts
    slice_macro_f1: float
    scan_macro_f1: float
    slice_per_class: dict[str, ClassMetrics]
    scan_per_class: dict[str, ClassMetrics]
    num_slices: int
    num_scans: int
    tie_rule: str = "positive"

    def as_dict(self) -> dict:
        return {
            "slice": {
                "confusion": self.slice_confusion.as_dict(),
                "macro_f1": self.slice_macro_f1,
                "per_class": {k: v.as_dict() for k, v in self.slice_per_class.items()},
                "num_slices": self.num_slices,
            },
            "scan": {
                "confusion": self.scan_confusion.as_dict(),
                "macro_f1": self.scan_macro_f1,
                "per_class": {k: v.as_dict() for k, v in self.scan_per_class.items()},
                "num_scans": self.num_scans,
                "vote_tie_rule": self.tie_rule,
            },
        }


def predict_slices(
    model: TrainedModel, bank: FeatureBank
) -> list[tuple[int, int, float]]:
    """Per-record (scan_id, predicted label, probability); p >= 0.5 -> 1."""
    if bank.feature_dim != model.feature_dim:
        raise DimensionMismatch(
            f"bank dim {bank.feature_dim} != model dim {model.feature_dim}"
        )
    p = predict_proba(model, bank.features)
    return [
        (int(s), int(prob >= 0.5), float(prob))
        for s, prob in zip(bank.scan_ids, p)
    ]


def aggregate_scans(slice_preds: list[tuple[int, int]]) -> dict[int, int]:
    """Majority vote per scan; exact tie -> 1."""
    if not slice_preds:
        raise ValueError("no slice predictions to aggregate")
    votes: dict[int, list[int]] = {}
    for item in slice_preds:
        scan_id, label = item[0], item[1]
        votes.setdefault(scan_id, []).append(label)
    return {
        scan: 1 if 2 * sum(v) >= len(v) else 0 for scan, v in votes.items()
    }


def confusion(preds: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    p = np.asarray(preds)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (t == 1))),
        fp=int(np.sum((p == 1) & (t == 0))),
        tn=int(np.sum((p == 0) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
    )


def _f1(tp: int, fp: int, fn: int) -> ClassMetrics:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (
        2 * precision * recall / (precision + recall) if precision + recall else 0.0
    )
    return ClassMetrics(precision, recall, f1)


def per_class_metrics(c: ConfusionCounts) -> dict[str, ClassMetrics]:
    return {
        "positive": _f1(c.tp, c.fp, c.fn),
        "negative": _f1(c.tn, c.fn, c.fp),
    }


def macro_f1(c: ConfusionCounts) -> float:
    """Unweighted mean of positive-class and negative-class F1."""
    if c.total == 0:
        raise ValueError("empty confusion counts")
    m = per_class_metrics(c)
    return 0.5 * (m["positive"].f1 + m["negative"].f1)


def evaluate(
    model: TrainedModel, bank: FeatureBank, manifest: ScanManifest
) -> EvalReport:
    """Slice metrics vs slice labels; scan metrics vs manifest labels."""
    if not bank.labeled:
        raise UnlabeledInput("evaluate requires a labeled bank")
    preds = predict_slices(model, bank)
    slice_labels = np.array([p[1] for p in preds])
    slice_conf = confusion(slice_labels, bank.labels)

    scan_pred = aggregate_scans([(s, l) for s, l, _ in preds])
    scan_ids = sorted(scan_pred)
    scan_truth = []
    for scan in scan_ids:
        if scan not in manifest.entries or manifest.entries[scan][1] is None:
            raise MissingManifestEntry(f"scan {scan} missing from manifest")
        scan_truth.append(manifest.entries[scan][1])
    scan_conf = confusion(
        np.array([scan_pred[s] for s in scan_ids]), np.array(scan_truth)
    )

    return EvalReport(
        slice_confusion=slice_conf,
        scan_confusion=scan_conf,
        slice_macro_f1=macro_f1(slice_conf),
        scan_macro_f1=macro_f1(scan_conf),
        slice_per_class=per_class_metrics(slice_conf),
        scan_per_class=per_class_metrics(scan_conf),
        num_slices=len(bank),
        num_scans=len(scan_ids),
    )


def _bank_cvar_loss(
    params, features: np.ndarray, labels: np.ndarray, alpha: float
) -> float:
    logits, _ = forward(params, features, "eval")
    losses = robust_loss.bce_per_sample(logits, labels)
    return robust_loss.cvar_lambda_search(losses, alpha).value


def loss_surface(
    model: TrainedModel,
    bank: FeatureBank,
    alpha: float,
    grid_half_width: float,
    grid_points: int,
    seed: int,
) -> list[tuple[float, float, float]]:
    """CVaR loss on a 2-D slice of parameter space along two random directions.

    Directions are filter-normalized: each tensor's direction block is rescaled
    to the corresponding parameter tensor's norm, so offsets are comparable
    across tensors of different scale.
    """
    if not bank.labeled:
        raise UnlabeledInput("loss_surface requires a labeled bank")
    if grid_points < 3 or grid_points % 2 == 0:
        raise ValueError(f"grid_points must be odd and >= 3, got {grid_points}")
    tensors = model.params.trainable_tensors()

    def draw_direction(rng: np.random.Generator) -> list[np.ndarray]:
        for _ in range(10):
            d = [rng.standard_normal(t.shape) for t in tensors]
            norms = [np.linalg.norm(b) for b in d]
            if all(nz > 0 for nz, t in zip(norms, tensors) if t.size > 0):
                return [
                    b * (np.linalg.norm(t) / nz if nz > 0 else 0.0)
                    for b, nz, t in zip(d, norms, tensors)
                ]
        raise ValueError("could not draw a non-degenerate direction in 10 attempts")

    rng = np.random.default_rng(seed)
    d1 = draw_direction(rng)
    d2 = draw_direction(rng)

    X = bank.features.astype(np.float64)
    y = bank.labels.astype(np.float64)
    offsets = np.linspace(-grid_half_width, grid_half_width, grid_points)
    probe = model.params.copy()
    probe_tensors = probe.trainable_tensors()
    rows = []
    for u in offsets:
        for v in offsets:
            for pt, base, b1, b2 in zip(probe_tensors, tensors, d1, d2):
                pt[...] = base + u * b1 + v * b2
            rows.append((float(u), float(v), _bank_cvar_loss(probe, X, y, alpha)))
    return rows


def write_loss_surface_csv(rows: list[tuple[float, float, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["u", "v", "loss"])
        for u, v, loss in rows:
            w.writerow([f"{u:.17g}", f"{v:.17g}", f"{loss:.17g}"])
