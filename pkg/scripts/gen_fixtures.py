#!/usr/bin/env python3
"""Regenerate the checked-in binary test fixtures (deterministic)."""

from pathlib import Path

from semimm.data import write_features, write_label_manifest
from semimm.synthetic import cross_predictable

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    records, class_names = cross_predictable(
        32, dim=768, latent_dim=6, num_classes=4, seed=2024, id_prefix="demo")
    write_features(records, FIXTURE_DIR / "demo.mmf1")
    write_label_manifest(FIXTURE_DIR / "demo_labels.jsonl", class_names,
                         {r.id: r.labels.tolist() for r in records})
    print(f"wrote {FIXTURE_DIR / 'demo.mmf1'} "
          f"({(FIXTURE_DIR / 'demo.mmf1').stat().st_size} bytes) "
          f"and demo_labels.jsonl")


if __name__ == "__main__":
    main()
