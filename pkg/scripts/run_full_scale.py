#!/usr/bin/env python3
"""Full-scale benchmark harness over user-supplied snapshots.

Feeds two flat-file snapshots (and optionally a precomputed embedding table)
through the complete workflow — dataset preparation, bundle training,
prediction on each task's held-out test set, and evaluation — then writes
per-task reports comparable to an external results table.

With no --table, sequences are one-hot encoded (cheap, weaker).  To use
embeddings from an external model, export them once as a TSV/binary table
covering every train and test id and pass --table/--tag; prediction then
reads query vectors from the same table.

Example:
    python3 scripts/run_full_scale.py \
        --earlier sprot_2018.tsv --later sprot_2020.tsv \
        --earlier-date 2018-01-01 --later-date 2020-06-01 \
        --table esm_embeddings.bin --out runs/full
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ecann.cli import EXIT_OK, main as ecann_main  # noqa: E402
from ecann.core import Task  # noqa: E402
from ecann.dataset import parse_flatfile  # noqa: E402


def run(argv) -> int:
    code = ecann_main(argv)
    if code != EXIT_OK:
        print(f"step failed (exit {code}): {' '.join(argv)}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--earlier", required=True, help="earlier snapshot flat file")
    parser.add_argument("--later", required=True, help="later snapshot flat file")
    parser.add_argument("--earlier-date", required=True)
    parser.add_argument("--later-date", required=True)
    parser.add_argument("--cutoff", default=None)
    parser.add_argument("--table", default=None,
                        help="precomputed embedding table (TSV or binary)")
    parser.add_argument("--tag", default=None, help="tag for imported TSV tables")
    parser.add_argument("--max-len", type=int, default=1000,
                        help="one-hot truncation length when no table is given")
    parser.add_argument("--tune", action="store_true",
                        help="grid-tune the routing policy on a validation tail")
    parser.add_argument("--min-f1", type=float, default=None,
                        help="fail if any task's headline F1 drops below this")
    parser.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)

    out = Path(args.out)
    prep, train_dir = out / "prep", out / "train"

    prepare = [
        "prepare-dataset", "--earlier", args.earlier, "--later", args.later,
        "--earlier-date", args.earlier_date, "--later-date", args.later_date,
        "--out", str(prep),
    ]
    if args.cutoff:
        prepare += ["--cutoff", args.cutoff]
    if run(prepare) != EXIT_OK:
        return 1

    train = [
        "train", "--train", str(prep / "enzyme-or-not.train.tsv"),
        "--max-len", str(args.max_len), "--out", str(train_dir),
    ]
    if args.table:
        train += ["--table", args.table]
        if args.tag:
            train += ["--tag", args.tag]
    if args.tune:
        train += ["--tune"]
    if run(train) != EXIT_OK:
        return 1
    bundle = train_dir / "bundle"

    summary = {}
    for task in Task:
        gold = prep / f"{task.value}.test.tsv"
        records, _ = parse_flatfile(gold)
        if not records:
            print(f"[{task.value}] empty test split, skipped")
            continue
        fasta = out / f"{task.value}.fasta"
        fasta.write_text("".join(f">{r.id}\n{r.seq}\n" for r in records),
                         encoding="utf-8")
        preds = out / f"{task.value}.predictions.tsv"
        predict = ["predict", "--bundle", str(bundle), "--fasta", str(fasta),
                   "--out", str(preds)]
        if args.table:
            predict += ["--vectors", args.table]
        if run(predict) not in (EXIT_OK, 2):  # 2 = some rows failed, still scored
            return 1
        evaluate = [
            "evaluate", "--task", task.value, "--pred", str(preds),
            "--gold", str(gold), "--out", str(out / f"eval-{task.value}"),
        ]
        if task is Task.EC_NUMBER:
            evaluate += ["--train", str(prep / "ec-number.train.tsv")]
        if args.min_f1 is not None:
            evaluate += ["--min-f1", str(args.min_f1)]
        code = run(evaluate)
        summary[task.value] = {"n_test": len(records), "exit": code}
        if code != EXIT_OK and args.min_f1 is None:
            return 1

    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n",
                                      encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return 1 if any(entry["exit"] != EXIT_OK for entry in summary.values()) else 0


if __name__ == "__main__":
    raise SystemExit(main())
