"""Teacher-student pipeline: train teacher, pseudo-label, train student."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, LabeledInputRejected
from .featurebank import FeatureBank, merge_banks
from .mlp import TrainedModel, predict_proba
from .optimizer import TrainConfig, train


@dataclass
class PseudoLabelStats:
    total_unlabeled: int
    labeled_positive: int
    labeled_negative: int
    discarded_low_confidence: int
    threshold_used: Optional[float]

    def as_dict(self) -> dict:
        return {
            "total_unlabeled": self.total_unlabeled,
            "labeled_positive": self.labeled_positive,
            "labeled_negative": self.labeled_negative,
            "discarded_low_confidence": self.discarded_low_confidence,
            "threshold_used": self.threshold_used,
        }


@dataclass
class DistillReport:
    teacher: TrainedModel
    student: TrainedModel
    stats: PseudoLabelStats
    pseudo_bank: FeatureBank
    student_set_size: int

    def as_dict(self) -> dict:
        return {
            "pseudo_label_stats": self.stats.as_dict(),
            "student_set_size": self.student_set_size,
            "teacher_epochs": len(self.teacher.history),
            "student_epochs": len(self.student.history),
        }


def pseudo_label(
    model: TrainedModel,
    unlabeled: FeatureBank,
    threshold: Optional[float] = None,
    scan_consistent: bool = False,
) -> tuple[FeatureBank, PseudoLabelStats]:
    """Label each slice by the teacher's prediction (p >= 0.5 -> positive).

    With a confidence threshold, slices whose max(p, 1-p) falls below it are
    discarded. ``scan_consistent`` replaces slice labels by each scan's
    majority vote (ties -> positive) after thresholding.
    """
    if unlabeled.labeled:
        raise LabeledInputRejected("pseudo_label expects an unlabeled bank")
    if threshold is not None and not (0.5 < threshold < 1.0):
        raise ValueError(f"threshold must be in (0.5, 1), got {threshold}")
    n = len(unlabeled)
    if n == 0:
        empty = FeatureBank(
            unlabeled.feature_dim,
            np.zeros(0, dtype=np.uint64),
            np.zeros((0, unlabeled.feature_dim), dtype=np.float32),
            np.zeros(0, dtype=np.uint8),
        )
        return empty, PseudoLabelStats(0, 0, 0, 0, threshold)
    if unlabeled.feature_dim != model.feature_dim:
        raise DimensionMismatch(
            f"bank dim {unlabeled.feature_dim} != model dim {model.feature_dim}"
        )
    p = predict_proba(model, unlabeled.features)
    labels = (p >= 0.5).astype(np.uint8)
    if threshold is None:
        keep = np.ones(n, dtype=bool)
    else:
        keep = np.maximum(p, 1.0 - p) >= threshold
    if scan_consistent:
        for scan in np.unique(unlabeled.scan_ids[keep]):
            members = keep & (unlabeled.scan_ids == scan)
            votes = labels[members]
            labels[members] = 1 if 2 * votes.sum() >= votes.size else 0
    out = FeatureBank(
        unlabeled.feature_dim,
        unlabeled.scan_ids[keep],
        unlabeled.features[keep],
        labels[keep],
    )
    kept = labels[keep]
    stats = PseudoLabelStats(
        total_unlabeled=n,
        labeled_positive=int(kept.sum()),
        labeled_negative=int(kept.size - kept.sum()),
        discarded_low_confidence=int(n - kept.size),
        threshold_used=threshold,
    )
    return out, stats


def distill(
    labeled: FeatureBank,
    unlabeled: FeatureBank,
    teacher_cfg: TrainConfig,
    student_cfg: TrainConfig,
    threshold: Optional[float] = None,
) -> DistillReport:
    """Full teacher -> pseudo-label -> student pipeline."""
    if labeled.feature_dim != unlabeled.feature_dim:
        raise DimensionMismatch(
            f"labeled dim {labeled.feature_dim} != unlabeled dim {unlabeled.feature_dim}"
        )
    teacher = train(labeled, teacher_cfg)
    pseudo, stats = pseudo_label(teacher, unlabeled, threshold)
    student_set = merge_banks(labeled, pseudo) if len(pseudo) else labeled
    student = train(student_set, student_cfg)
    return DistillReport(teacher, student, stats, pseudo, len(student_set))
