"""Exporter command line: export encoder embeddings, verify exported files.

Exit codes: 0 success, 1 data error, 2 usage error, 3 model load failure.
"""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportError, ExportJob, ModelLoadError, export, verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloneadapt-export",
        description="Export pretrained-encoder program embeddings in the "
        "cloneadapt binary embedding format (raw, un-normalized).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="embed a corpus with a pretrained encoder")
    p.add_argument("--model", required=True, help="model name or local path")
    p.add_argument("--corpus", required=True, help="JSONL corpus file")
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--pooling", default="cls", choices=["cls", "mean"])
    p.add_argument("--max-length", type=int, default=512)
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("verify", help="check an exported embedding file")
    p.add_argument("path")
    p.set_defaults(func=cmd_verify)
    return parser


def cmd_export(args) -> int:
    job = ExportJob(
        corpus_path=args.corpus,
        model_name=args.model,
        output_path=args.out,
        pooling=args.pooling,
        max_sequence_length=args.max_length,
        batch_size=args.batch_size,
    )
    summary = export(job)
    print(
        f"exported {summary.n_programs} programs, dim {summary.dim}, "
        f"pooling {summary.pooling}, {summary.truncated} truncated"
    )
    return 0


def cmd_verify(args) -> int:
    report = verify(args.path)
    if report.ok:
        print(f"ok: {report.n} rows, dim {report.dim}")
        return 0
    for problem in report.problems:
        print(f"problem: {problem}", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except ModelLoadError as e:
        print(f"model load failure: {e}", file=sys.stderr)
        return 3
    except (ExportError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
