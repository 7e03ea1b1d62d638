"""Shared fixtures: a tiny local encoder checkpoint and a synthetic scan tree.

The real ViT-L/14 checkpoint is too large to ship with the test suite, so the
tests exercise the pipeline against a randomly initialized miniature encoder
saved in the same checkpoint layout. Its projection head still emits 768-dim
embeddings, so the written banks match the production feature width.
"""

import csv

import numpy as np
import pytest
import torch
from PIL import Image
from transformers import (
    CLIPImageProcessor,
    CLIPVisionConfig,
    CLIPVisionModelWithProjection,
)


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "tiny-clip"
    torch.manual_seed(0)
    config = CLIPVisionConfig(
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=2,
        num_attention_heads=2,
        image_size=32,
        patch_size=16,
        projection_dim=768,
    )
    model = CLIPVisionModelWithProjection(config)
    model.save_pretrained(path)
    processor = CLIPImageProcessor(
        size={"shortest_edge": 32},
        crop_size={"height": 32, "width": 32},
    )
    processor.save_pretrained(path)
    return str(path)


def make_slice(path, seed, size=(48, 48), mode="L"):
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 256, size=(size[1], size[0]), dtype=np.uint8)
    if mode == "RGB":
        data = np.stack([data] * 3, axis=-1)
    Image.fromarray(data, mode=mode).save(path)


@pytest.fixture
def scan_tree(tmp_path):
    """3 scans x 4 slices of random grayscale PNGs, plus a labels CSV."""
    root = tmp_path / "scans"
    names = ["scan_a", "scan_b", "scan_c"]
    for i, name in enumerate(names):
        d = root / name
        d.mkdir(parents=True)
        for j in range(4):
            make_slice(d / f"slice_{j:03d}.png", seed=100 * i + j)
    labels = tmp_path / "labels.csv"
    with open(labels, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scan_name", "label"])
        for i, name in enumerate(names):
            w.writerow([name, i % 2])
    return root, labels
