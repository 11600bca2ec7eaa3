"""Command-line surface: export a checkpoint, verify an exported directory."""

from __future__ import annotations

import argparse
import sys

from .convert import ExportError, export, verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bertexport",
        description="Convert a pretrained BERT checkpoint to the neutral "
                    "manifest + float32 tensor format.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="convert a checkpoint")
    p.add_argument("--model", required=True,
                   help="local checkpoint directory or hub id (e.g. bert-base-uncased)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("verify", help="check an exported directory")
    p.add_argument("--dir", required=True, help="exported directory")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            out = export(args.model, args.out)
            report = verify(out)
            print(f"exported to {out}: {report}")
            return 0 if report.ok else 1
        report = verify(args.dir)
        print(report)
        return 0 if report.ok else 1
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
