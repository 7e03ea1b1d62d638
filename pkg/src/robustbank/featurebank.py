"""Embedding dataset model, binary on-disk format, synthetic generation, splits.

A feature bank is an ordered collection of per-slice embedding records with an
optional label per record and a scan-id grouping key. Banks are either fully
labeled or fully unlabeled; mixed banks are rejected everywhere.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptySplit,
    MixedLabels,
    NonFiniteFeature,
    Truncated,
    UnlabeledInput,
    UnsupportedVersion,
)

MAGIC = b"FBNK"
VERSION = 1
_HEADER = struct.Struct("<4sIIQB")  # magic, version, feature_dim, num_records, has_labels


@dataclass(frozen=True)
class SampleRecord:
    """One slice embedding: scan grouping key, optional binary label, feature vector."""

    scan_id: int
    label: Optional[int]
    feature: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (
            self.scan_id == other.scan_id
            and self.label == other.label
            and np.array_equal(self.feature, other.feature)
        )


class FeatureBank:
    """Ordered set of slice records sharing one feature dimension.

    Internally stored as parallel arrays (scan_ids u64, labels u8 or None,
    features n x d float32) for cheap slicing; ``record(i)`` and iteration
    expose the per-record view.
    """

    def __init__(
        self,
        feature_dim: int,
        scan_ids: np.ndarray,
        features: np.ndarray,
        labels: Optional[np.ndarray] = None,
    ):
        if feature_dim <= 0:
            raise ValueError(f"feature_dim must be positive, got {feature_dim}")
        scan_ids = np.ascontiguousarray(scan_ids, dtype=np.uint64)
        features = np.ascontiguousarray(features, dtype=np.float32)
        n = scan_ids.shape[0]
        if features.shape != (n, feature_dim):
            raise DimensionMismatch(
                f"features shape {features.shape} != ({n}, {feature_dim})"
            )
        if not np.isfinite(features).all():
            bad = int(np.argwhere(~np.isfinite(features).all(axis=1))[0, 0])
            raise NonFiniteFeature(bad, -1)
        if labels is not None:
            labels = np.ascontiguousarray(labels, dtype=np.uint8)
            if labels.shape != (n,):
                raise MixedLabels(f"labels shape {labels.shape} != ({n},)")
            if n and not np.isin(labels, (0, 1)).all():
                raise ValueError("labels must be 0 or 1")
        self.feature_dim = feature_dim
        self.scan_ids = scan_ids
        self.features = features
        self.labels = labels

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def __len__(self) -> int:
        return self.scan_ids.shape[0]

    def record(self, i: int) -> SampleRecord:
        label = int(self.labels[i]) if self.labeled else None
        return SampleRecord(int(self.scan_ids[i]), label, self.features[i])

    def __iter__(self) -> Iterator[SampleRecord]:
        return (self.record(i) for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, FeatureBank):
            return NotImplemented
        if self.feature_dim != other.feature_dim or self.labeled != other.labeled:
            return False
        if not np.array_equal(self.scan_ids, other.scan_ids):
            return False
        if self.labeled and not np.array_equal(self.labels, other.labels):
            return False
        return np.array_equal(self.features, other.features)

    def scan_id_set(self) -> set[int]:
        return set(int(s) for s in np.unique(self.scan_ids))

    @classmethod
    def from_records(cls, feature_dim: int, records: list[SampleRecord]) -> "FeatureBank":
        n = len(records)
        has_labels = [r.label is not None for r in records]
        if any(has_labels) and not all(has_labels):
            raise MixedLabels("bank mixes labeled and unlabeled records")
        labeled = all(has_labels) if n else False
        scan_ids = np.array([r.scan_id for r in records], dtype=np.uint64)
        features = (
            np.stack([r.feature for r in records]).astype(np.float32)
            if n
            else np.zeros((0, feature_dim), dtype=np.float32)
        )
        labels = (
            np.array([r.label for r in records], dtype=np.uint8) if labeled else None
        )
        return cls(feature_dim, scan_ids, features, labels)


@dataclass
class ScanManifest:
    """Maps scan_id to a human-readable name and (for labeled data) its label."""

    entries: dict[int, tuple[str, Optional[int]]] = field(default_factory=dict)

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["scan_id", "name", "label"])
            for scan_id in sorted(self.entries):
                name, label = self.entries[scan_id]
                w.writerow([scan_id, name, "" if label is None else label])

    @classmethod
    def read(cls, path) -> "ScanManifest":
        entries: dict[int, tuple[str, Optional[int]]] = {}
        with open(path, newline="", encoding="utf-8") as f:
            r = csv.reader(f)
            header = next(r)
            if header != ["scan_id", "name", "label"]:
                raise ValueError(f"unexpected manifest header {header}")
            for row in r:
                scan_id, name, label = row
                entries[int(scan_id)] = (name, int(label) if label != "" else None)
        return cls(entries)


@dataclass
class SynthConfig:
    """Knobs for the two-Gaussian-cluster synthetic bank generator."""

    num_scans_per_class: int
    slices_per_scan: tuple[int, int]
    feature_dim: int
    class_separation: float
    noise_sigma: float
    label_noise_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_scans_per_class <= 0:
            raise ValueError("num_scans_per_class must be positive")
        lo, hi = self.slices_per_scan
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid slices_per_scan range ({lo}, {hi})")
        if self.feature_dim <= 0:
            raise ValueError("feature_dim must be positive")
        if not (np.isfinite(self.class_separation) and self.class_separation >= 0):
            raise ValueError("class_separation must be finite and nonnegative")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma > 0):
            raise ValueError("noise_sigma must be finite and positive")
        if not (0 <= self.label_noise_rate < 1):
            raise ValueError("label_noise_rate must be in [0, 1)")


def write_bank(bank: FeatureBank, path) -> None:
    """Serialize ``bank`` to the little-endian .fbank format."""
    n = len(bank)
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(MAGIC, VERSION, bank.feature_dim, n, 1 if bank.labeled else 0)
        )
        f.write(bank.scan_ids.astype("<u8").tobytes())
        if bank.labeled:
            f.write(bank.labels.astype("u1").tobytes())
        f.write(bank.features.astype("<f4").tobytes())


def read_bank(path) -> FeatureBank:
    """Parse an .fbank file, rejecting malformed or truncated input."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise Truncated(_HEADER.size, len(data), 0)
    magic, version, dim, n, has_labels = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(magic, 0)
    if version != VERSION:
        raise UnsupportedVersion(version)
    if dim <= 0:
        raise ValueError(f"feature_dim must be positive, got {dim}")
    if has_labels not in (0, 1):
        raise ValueError(f"has_labels flag must be 0 or 1, got {has_labels}")
    offset = _HEADER.size

    def take(count: int) -> bytes:
        nonlocal offset
        if len(data) - offset < count:
            raise Truncated(count, len(data) - offset, offset)
        chunk = data[offset : offset + count]
        offset += count
        return chunk

    scan_ids = np.frombuffer(take(8 * n), dtype="<u8")
    labels = None
    if has_labels:
        raw = np.frombuffer(take(n), dtype="u1")
        if n and not np.isin(raw, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        labels = raw
    feat_offset = offset
    features = np.frombuffer(take(4 * n * dim), dtype="<f4").reshape(n, dim)
    finite = np.isfinite(features)
    if not finite.all():
        flat = int(np.argwhere(~finite)[0, 0] * dim + np.argwhere(~finite)[0, 1])
        record_index = flat // dim
        raise NonFiniteFeature(record_index, feat_offset + 4 * flat)
    return FeatureBank(dim, scan_ids.copy(), features.copy(), None if labels is None else labels.copy())


def synth_bank(config: SynthConfig) -> tuple[FeatureBank, ScanManifest]:
    """Generate a two-cluster Gaussian bank plus its manifest, seeded."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    lo, hi = config.slices_per_scan
    dim = config.feature_dim
    means = np.zeros((2, dim))
    means[1, 0] = config.class_separation

    scan_ids: list[np.ndarray] = []
    feats: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    manifest = ScanManifest()
    scan_id = 0
    for cls in (0, 1):
        for _ in range(config.num_scans_per_class):
            count = int(rng.integers(lo, hi + 1))
            label = cls
            if config.label_noise_rate > 0 and rng.random() < config.label_noise_rate:
                label = 1 - label
            block = means[cls] + config.noise_sigma * rng.standard_normal((count, dim))
            scan_ids.append(np.full(count, scan_id, dtype=np.uint64))
            feats.append(block.astype(np.float32))
            labels.append(np.full(count, label, dtype=np.uint8))
            manifest.entries[scan_id] = (f"scan_{scan_id:05d}", label)
            scan_id += 1
    bank = FeatureBank(
        dim,
        np.concatenate(scan_ids),
        np.concatenate(feats),
        np.concatenate(labels),
    )
    return bank, manifest


def split_bank(
    bank: FeatureBank, fraction: float, seed: int
) -> tuple[FeatureBank, FeatureBank]:
    """Scan-grouped split: every slice of a scan lands on one side."""
    if len(bank) == 0:
        raise EmptySplit("cannot split an empty bank")
    if not (0 < fraction < 1):
        raise ValueError(f"fraction must be in (0,1), got {fraction}")
    scans = np.unique(bank.scan_ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(scans))
    n_first = int(round(fraction * len(scans)))
    if n_first == 0 or n_first == len(scans):
        raise EmptySplit(
            f"fraction {fraction} leaves an empty side for {len(scans)} scans"
        )
    first_scans = set(int(s) for s in scans[order[:n_first]])
    mask = np.array([int(s) in first_scans for s in bank.scan_ids])

    def subset(m: np.ndarray) -> FeatureBank:
        return FeatureBank(
            bank.feature_dim,
            bank.scan_ids[m],
            bank.features[m],
            bank.labels[m] if bank.labeled else None,
        )

    return subset(mask), subset(~mask)


def merge_banks(a: FeatureBank, b: FeatureBank) -> FeatureBank:
    """Concatenate two labeled banks of equal dimension (a's records first)."""
    if a.feature_dim != b.feature_dim:
        raise DimensionMismatch(
            f"feature_dim {a.feature_dim} != {b.feature_dim}"
        )
    if not (a.labeled and b.labeled):
        raise UnlabeledInput("merge_banks requires both banks labeled")
    return FeatureBank(
        a.feature_dim,
        np.concatenate([a.scan_ids, b.scan_ids]),
        np.concatenate([a.features, b.features]),
        np.concatenate([a.labels, b.labels]),
    )
