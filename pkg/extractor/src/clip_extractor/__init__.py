"""Frozen CLIP image-encoder extraction into .fbank feature banks."""

from .bankio import (
    BankFormatError,
    BankReport,
    verify_bank,
    write_fbank,
    write_manifest,
)
from .extract import (
    DEFAULT_CHECKPOINT,
    EmptyScanTree,
    ExtractionError,
    ExtractReport,
    IncompleteLabels,
    ScanEntry,
    UndecodableImage,
    discover_scans,
    extract,
    load_encoder,
    load_slice,
    read_labels,
)

__all__ = [
    "BankFormatError",
    "BankReport",
    "verify_bank",
    "write_fbank",
    "write_manifest",
    "DEFAULT_CHECKPOINT",
    "EmptyScanTree",
    "ExtractionError",
    "ExtractReport",
    "IncompleteLabels",
    "ScanEntry",
    "UndecodableImage",
    "discover_scans",
    "extract",
    "load_encoder",
    "load_slice",
    "read_labels",
]
