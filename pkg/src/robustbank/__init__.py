"""Distributionally robust binary classification over embedding banks."""

from .featurebank import (
    FeatureBank,
    SampleRecord,
    ScanManifest,
    SynthConfig,
    merge_banks,
    read_bank,
    split_bank,
    synth_bank,
    write_bank,
)
from .mlp import TrainedModel, load_model, predict_proba, save_model
from .optimizer import TrainConfig, train
from .distill import distill, pseudo_label
from .evaluation import evaluate, loss_surface, macro_f1

__all__ = [
    "FeatureBank",
    "SampleRecord",
    "ScanManifest",
    "SynthConfig",
    "TrainConfig",
    "TrainedModel",
    "distill",
    "evaluate",
    "load_model",
    "loss_surface",
    "macro_f1",
    "merge_banks",
    "predict_proba",
    "pseudo_label",
    "read_bank",
    "save_model",
    "split_bank",
    "synth_bank",
    "train",
    "write_bank",
]
