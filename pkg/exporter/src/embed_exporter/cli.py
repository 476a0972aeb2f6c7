"""Command line: embed a manifest with a named frozen model."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ManifestError, ModelLoadError
from .export import export_embeddings
from .manifest import read_manifest
from .models import MODELS, load_model

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Embed manifest rows and write a GCEB file.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="embed a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True,
                   help=f"one of: {', '.join(sorted(MODELS))}")
    p.add_argument("--out", required=True)
    p.add_argument("--sidecar", help="defaults to <out>.ids.jsonl")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    return parser


def _fail(error: BaseException, code: int) -> int:
    payload = {
        "stage": "export",
        "error": type(error).__name__,
        "message": str(error),
    }
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rows = read_manifest(args.manifest)
        encoder = load_model(args.model)
        result = export_embeddings(
            rows, encoder, args.out,
            sidecar=args.sidecar, batch_size=args.batch_size)
    except (ManifestError, ModelLoadError, FileNotFoundError,
            IsADirectoryError, PermissionError) as exc:
        return _fail(exc, EXIT_DATA)
    except ValueError as exc:
        return _fail(exc, EXIT_USAGE)
    print(f"exported {len(result.written)} rows (dim {result.dim}) to {args.out}")
    if result.skipped:
        ids = [row_id for row_id, _ in result.skipped]
        return _fail(
            ManifestError(f"skipped undecodable rows: {', '.join(ids)}"),
            EXIT_DATA)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
