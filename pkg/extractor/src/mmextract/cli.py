"""mmextract: turn an (id, image, caption) manifest into an MMF1 feature file."""

from __future__ import annotations

import argparse
import logging
import sys

from .encoders import DEFAULT_MODEL_ID, make_encoder
from .extract import extract
from .manifest import read_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmextract",
        description="Extract paired image/text embeddings into an MMF1 file.")
    parser.add_argument("--input", required=True,
                        help="CSV or JSONL manifest: id, image_path, text"
                             " and optional labels (semicolon-separated in CSV)")
    parser.add_argument("--output", required=True, help="MMF1 output path")
    parser.add_argument("--model", default=DEFAULT_MODEL_ID,
                        help="encoder model id (default: %(default)s)")
    parser.add_argument("--backend", choices=("clip", "stub"), default="clip",
                        help="stub emits deterministic pseudo-features for "
                             "dry-runs without model weights")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--dim", type=int, default=768,
                        help="feature width of the stub backend")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        samples = read_manifest(args.input)
        if not samples:
            print("error: input manifest is empty", file=sys.stderr)
            return 1
        encoder = make_encoder(args.backend, args.model, args.device,
                               args.batch_size, args.dim)
        stats = extract(samples, encoder, args.output)
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{stats.written} records written to {args.output}"
          + (f", {len(stats.skipped_ids)} skipped" if stats.skipped_ids else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
