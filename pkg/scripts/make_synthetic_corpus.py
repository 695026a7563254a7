#!/usr/bin/env python3
"""Generate synthetic corpora, labeled datasets, and annotation exports.

Examples:
    python scripts/make_synthetic_corpus.py --n 1000 --seed 7 --out corpus.jsonl
    python scripts/make_synthetic_corpus.py --n 400 --seed 7 --kind dataset --out labels.jsonl
    python scripts/make_synthetic_corpus.py --n 200 --seed 7 --kind annotations --out ann.jsonl
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from aspectsent import synth


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--kind", choices=["corpus", "dataset", "annotations"], default="corpus")
    parser.add_argument("--days", type=int, default=60)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    if args.kind == "corpus":
        records = synth.make_corpus_records(args.n, args.seed, days=args.days)
    elif args.kind == "dataset":
        records = synth.make_dataset_records(args.n, args.seed, days=args.days)
    else:
        records = synth.make_annotation_records(args.n, args.seed)
    synth.write_jsonl(args.out, records)
    print(f"wrote {len(records)} {args.kind} records to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
