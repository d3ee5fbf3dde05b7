"""Command-line front end for the embedding exporter."""

from __future__ import annotations

import argparse
import sys

from .export import ExportRequest, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cte-export",
        description="Encode token sequences with a frozen encoder into a CTE1 store.",
    )
    parser.add_argument("--mode", choices=("document", "marked"), required=True)
    parser.add_argument("--input", required=True,
                        help="JSON-lines: {doc_id, sentences} or {key, tokens}")
    parser.add_argument("--output", required=True, help="CTE1 store path")
    parser.add_argument("--encoder", default="bert-base-cased",
                        help="model name or local path (must be available offline)")
    parser.add_argument("--max-subwords", type=int, default=512)
    parser.add_argument("--stride", type=int, default=128)
    parser.add_argument("--batch-size", type=int, default=8)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    request = ExportRequest(
        mode=args.mode,
        input_path=args.input,
        output_path=args.output,
        encoder=args.encoder,
        max_subwords=args.max_subwords,
        stride=args.stride,
        batch_size=args.batch_size,
    )
    try:
        count = export(request)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {count} record(s) to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
