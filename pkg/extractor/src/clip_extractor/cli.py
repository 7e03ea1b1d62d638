"""Command-line interface: `clipbank extract` and `clipbank verify`."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bankio import BankFormatError, verify_bank
from .extract import DEFAULT_CHECKPOINT, ExtractionError, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clipbank",
        description="Extract frozen CLIP image-encoder features into .fbank banks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser("extract", help="embed a scan directory tree")
    p_extract.add_argument("--root", type=Path, required=True,
                           help="directory with one subdirectory per scan")
    p_extract.add_argument("--labels", type=Path, default=None,
                           help="CSV scan_name,label covering every scan")
    p_extract.add_argument("--out", type=Path, required=True,
                           help="output .fbank path (manifest written alongside)")
    p_extract.add_argument("--batch", type=int, default=32)
    p_extract.add_argument("--checkpoint", default=DEFAULT_CHECKPOINT)
    p_extract.add_argument("--device", default="auto")
    p_extract.add_argument("--skip-undecodable", action="store_true",
                           help="warn and skip undecodable images instead of aborting")

    p_verify = sub.add_parser("verify", help="validate a .fbank file")
    p_verify.add_argument("bank", type=Path)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            report = extract(
                args.root,
                args.out,
                labels_csv=args.labels,
                checkpoint=args.checkpoint,
                batch_size=args.batch,
                device=args.device,
                skip_undecodable=args.skip_undecodable,
            )
            print(
                f"wrote {args.out}: {report.num_slices} records from "
                f"{report.num_scans} scans, feature_dim {report.feature_dim}, "
                f"{'labeled' if report.labeled else 'unlabeled'}"
            )
            if report.skipped:
                print(f"skipped {len(report.skipped)} undecodable image(s)")
        else:
            report = verify_bank(args.bank)
            print(
                f"{args.bank}: valid, feature_dim {report.feature_dim}, "
                f"{report.num_records} records, "
                f"{'labeled' if report.has_labels else 'unlabeled'}"
            )
            for scan_id in sorted(report.slice_counts):
                print(f"  scan {scan_id}: {report.slice_counts[scan_id]} slices")
            for warning in report.warnings:
                print(f"warning: {warning}")
    except (ExtractionError, BankFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
