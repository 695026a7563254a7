#!/usr/bin/env python3
"""Run the whole pipeline end to end on synthetic data.

Generates a corpus and a labeled dataset, then drives the CLI through
ingest, split, train, eval, infer, series, granger, and compare-groups,
leaving all artifacts in the output directory. Useful as a live smoke test
and as a template for running on real data.

    python scripts/run_synthetic_pipeline.py --out-dir /tmp/aspectsent-demo
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from aspectsent import synth
from aspectsent.cli import main as cli


def run(argv: list[str]) -> None:
    print("+ aspectsent " + " ".join(argv))
    code = cli(argv)
    if code != 0:
        raise SystemExit(code)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    corpus_path = out / "corpus.jsonl"
    dataset_path = out / "dataset.jsonl"
    keywords_path = out / "keywords.txt"
    synth.write_jsonl(corpus_path, synth.make_corpus_records(args.n, args.seed))
    synth.write_jsonl(dataset_path, synth.make_dataset_records(max(400, args.n // 2), args.seed + 1))
    keywords_path.write_text("china\nwuhan\n", encoding="utf-8")

    run(["ingest", "--corpus", str(corpus_path), "--keywords", str(keywords_path),
         "--out", str(out / "filtered.jsonl"), "--lang", "en",
         "--date-start", "2020-01-22", "--date-end", "2020-03-21",
         "--sample-rate", "0.4", "--seed", str(args.seed)])
    run(["split", "--dataset", str(dataset_path), "--out-dir", str(out / "splits"),
         "--seed", str(args.seed)])
    run(["train", "--train", str(out / "splits" / "train.jsonl"),
         "--dev", str(out / "splits" / "dev.jsonl"),
         "--params-out", str(out / "params.json"),
         "--epochs", "60", "--lr", "0.5", "--dim", "2048",
         "--train-seed", str(args.seed)])
    run(["eval", "--params", str(out / "params.json"),
         "--dataset", str(out / "splits" / "test.jsonl"),
         "--out", str(out / "eval_report.csv")])
    run(["infer", "--params", str(out / "params.json"),
         "--corpus", str(out / "filtered.jsonl"),
         "--out", str(out / "predictions.jsonl")])
    run(["series", "--predictions", str(out / "predictions.jsonl"),
         "--select", "count", "--out", str(out / "daily_count.csv")])
    run(["series", "--predictions", str(out / "predictions.jsonl"),
         "--select", "aspect:Politics", "--out", str(out / "politics_prop.csv")])
    run(["series", "--predictions", str(out / "predictions.jsonl"),
         "--select", "aspect:Measures", "--out", str(out / "measures_prop.csv")])
    run(["granger", "--x", str(out / "politics_prop.csv"),
         "--y", str(out / "measures_prop.csv"), "--lag", "1",
         "--out", str(out / "granger.csv")])
    run(["compare-groups", "--predictions", str(out / "predictions.jsonl"),
         "--group-a", "bots", "--group-b", "users", "--mode", "aspect-proportion",
         "--out", str(out / "bots_vs_users.csv")])

    print(f"pipeline artifacts in {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
