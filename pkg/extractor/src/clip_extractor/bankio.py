"""Writers (and a validating reader) for the .fbank / manifest wire formats.

The formats are the extraction pipeline's contract with downstream training
tools: little-endian binary bank ("FBNK" magic, version 1) plus a UTF-8 CSV
manifest with header scan_id,name,label.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MAGIC = b"FBNK"
VERSION = 1
_HEADER = struct.Struct("<4sIIQB")

PAPER_FAITHFUL_DIM = 768


class BankFormatError(Exception):
    pass


def write_fbank(
    path,
    feature_dim: int,
    scan_ids: np.ndarray,
    features: np.ndarray,
    labels: Optional[np.ndarray] = None,
) -> None:
    scan_ids = np.ascontiguousarray(scan_ids, dtype="<u8")
    features = np.ascontiguousarray(features, dtype="<f4")
    n = scan_ids.shape[0]
    if features.shape != (n, feature_dim):
        raise BankFormatError(
            f"features shape {features.shape} != ({n}, {feature_dim})"
        )
    if not np.isfinite(features).all():
        raise BankFormatError("non-finite feature values")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, feature_dim, n, 0 if labels is None else 1))
        f.write(scan_ids.tobytes())
        if labels is not None:
            f.write(np.ascontiguousarray(labels, dtype="u1").tobytes())
        f.write(features.tobytes())


def write_manifest(path, entries: dict[int, tuple[str, Optional[int]]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["scan_id", "name", "label"])
        for scan_id in sorted(entries):
            name, label = entries[scan_id]
            w.writerow([scan_id, name, "" if label is None else label])


@dataclass
class BankReport:
    feature_dim: int
    num_records: int
    has_labels: bool
    slice_counts: dict[int, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def verify_bank(path) -> BankReport:
    """Validate magic/version/dimension/finiteness; summarize per-scan counts."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise BankFormatError(f"Truncated: header needs {_HEADER.size} bytes")
    magic, version, dim, n, has_labels = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BankFormatError(f"BadMagic: {magic!r}")
    if version != VERSION:
        raise BankFormatError(f"UnsupportedVersion: {version}")
    expected = _HEADER.size + 8 * n + (n if has_labels else 0) + 4 * n * dim
    if len(data) < expected:
        raise BankFormatError(
            f"Truncated: expected {expected} bytes, found {len(data)}"
        )
    offset = _HEADER.size
    scan_ids = np.frombuffer(data, dtype="<u8", count=n, offset=offset)
    offset += 8 * n + (n if has_labels else 0)
    features = np.frombuffer(data, dtype="<f4", count=n * dim, offset=offset)
    if not np.isfinite(features).all():
        raise BankFormatError("NonFiniteFeature: bank contains NaN/Inf values")
    report = BankReport(dim, n, bool(has_labels))
    uniq, counts = np.unique(scan_ids, return_counts=True)
    report.slice_counts = {int(s): int(c) for s, c in zip(uniq, counts)}
    if dim != PAPER_FAITHFUL_DIM:
        report.warnings.append(
            f"feature_dim {dim} differs from the ViT-L/14 embedding width "
            f"{PAPER_FAITHFUL_DIM}"
        )
    return report
