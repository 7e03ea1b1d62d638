"""Frozen CLIP image-encoder feature extraction over scan directories.

Layout contract: ``root/`` contains one subdirectory per scan; each holds the
scan's slice images (PNG/JPEG). Scans are assigned ids by lexicographic rank
of their directory names, and slices are processed in sorted filename order,
so output banks are deterministic for fixed inputs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from transformers import CLIPImageProcessor, CLIPVisionModelWithProjection

from .bankio import write_fbank, write_manifest

log = logging.getLogger(__name__)

DEFAULT_CHECKPOINT = "openai/clip-vit-large-patch14"
SLICE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class ExtractionError(Exception):
    pass


class UndecodableImage(ExtractionError):
    def __init__(self, path):
        super().__init__(f"undecodable image: {path}")
        self.path = path


class IncompleteLabels(ExtractionError):
    pass


class EmptyScanTree(ExtractionError):
    pass


@dataclass
class ScanEntry:
    scan_id: int
    name: str
    label: Optional[int]
    slices: list[Path]


@dataclass
class ExtractReport:
    num_scans: int
    num_slices: int
    feature_dim: int
    labeled: bool
    skipped: list[str] = field(default_factory=list)


def discover_scans(root: Path, labels_csv: Optional[Path] = None) -> list[ScanEntry]:
    """Enumerate scan subdirectories and their slice images in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise EmptyScanTree(f"not a directory: {root}")
    scan_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not scan_dirs:
        raise EmptyScanTree(f"no scan subdirectories under {root}")

    labels: Optional[dict[str, int]] = None
    if labels_csv is not None:
        labels = read_labels(labels_csv)
        missing = [d.name for d in scan_dirs if d.name not in labels]
        if missing:
            raise IncompleteLabels(
                f"labels CSV {labels_csv} does not cover scans: {missing} "
                "(mixed labeled/unlabeled banks are forbidden)"
            )

    entries = []
    for scan_id, d in enumerate(scan_dirs):
        slices = sorted(
            p for p in d.iterdir()
            if p.is_file() and p.suffix.lower() in SLICE_SUFFIXES
        )
        if not slices:
            raise EmptyScanTree(f"scan directory has no slice images: {d}")
        entries.append(
            ScanEntry(scan_id, d.name, None if labels is None else labels[d.name], slices)
        )
    return entries


def read_labels(path: Path) -> dict[str, int]:
    labels: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if rows and rows[0][:2] == ["scan_name", "label"]:
        rows = rows[1:]
    for row in rows:
        if not row:
            continue
        name, value = row[0].strip(), row[1].strip()
        label = int(value)
        if label not in (0, 1):
            raise IncompleteLabels(f"label for {name} must be 0 or 1, got {value}")
        if name in labels:
            raise IncompleteLabels(f"duplicate label row for scan {name}")
        labels[name] = label
    return labels


def load_encoder(checkpoint: str = DEFAULT_CHECKPOINT, device: str = "auto"):
    """Load the frozen image encoder + its published preprocessing."""
    if device == "auto":
        device = "cuda" if torch.cuda.is_available() else "cpu"
    model = CLIPVisionModelWithProjection.from_pretrained(checkpoint)
    model.to(device).eval()
    for p in model.parameters():
        p.requires_grad_(False)
    processor = CLIPImageProcessor.from_pretrained(checkpoint)
    return model, processor, device


def load_slice(path: Path) -> Image.Image:
    """Decode a slice image, replicating grayscale to three channels."""
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        raise UndecodableImage(path) from exc


@torch.no_grad()
def embed_images(model, processor, device, images: list[Image.Image]) -> np.ndarray:
    inputs = processor(images=images, return_tensors="pt").to(device)
    embeds = model(**inputs).image_embeds
    return embeds.cpu().numpy().astype(np.float32)


def extract(
    root: Path,
    out: Path,
    labels_csv: Optional[Path] = None,
    checkpoint: str = DEFAULT_CHECKPOINT,
    batch_size: int = 32,
    device: str = "auto",
    skip_undecodable: bool = False,
) -> ExtractReport:
    """Run the frozen encoder over a scan tree and write .fbank + manifest."""
    if batch_size < 1:
        raise ExtractionError(f"batch_size must be >= 1, got {batch_size}")
    entries = discover_scans(root, labels_csv)
    model, processor, device = load_encoder(checkpoint, device)
    feature_dim = int(model.config.projection_dim)

    scan_ids: list[int] = []
    labels: list[int] = []
    chunks: list[np.ndarray] = []
    skipped: list[str] = []

    pending_imgs: list[Image.Image] = []
    pending_meta: list[ScanEntry] = []

    def flush():
        if not pending_imgs:
            return
        chunks.append(embed_images(model, processor, device, pending_imgs))
        for entry in pending_meta:
            scan_ids.append(entry.scan_id)
            if entry.label is not None:
                labels.append(entry.label)
        pending_imgs.clear()
        pending_meta.clear()

    for entry in entries:
        for slice_path in entry.slices:
            try:
                img = load_slice(slice_path)
            except UndecodableImage:
                if not skip_undecodable:
                    raise
                log.warning("skipping undecodable image %s", slice_path)
                skipped.append(str(slice_path))
                continue
            pending_imgs.append(img)
            pending_meta.append(entry)
            if len(pending_imgs) == batch_size:
                flush()
    flush()

    if not chunks:
        raise EmptyScanTree(f"no decodable slice images under {root}")
    features = np.concatenate(chunks, axis=0)
    labeled = labels_csv is not None

    out = Path(out)
    write_fbank(
        out,
        feature_dim,
        np.asarray(scan_ids, dtype=np.uint64),
        features,
        np.asarray(labels, dtype=np.uint8) if labeled else None,
    )
    write_manifest(
        out.parent / (out.name + ".manifest.csv"),
        {e.scan_id: (e.name, e.label) for e in entries},
    )
    return ExtractReport(len(entries), len(scan_ids), feature_dim, labeled, skipped)
