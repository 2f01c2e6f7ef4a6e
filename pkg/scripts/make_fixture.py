#!/usr/bin/env python3
"""Write a small synthetic protein corpus for exercising the CLI end to end.

Generates two raw snapshot flat files (an earlier and a later release of the
same evolving corpus, with planted duplicates, changed sequences, and novel
records), plus a FASTA of the later snapshot's sequences for prediction runs.

Example:
    python3 scripts/make_fixture.py --out /tmp/fixture --families 20 --seed 3
    ecann prepare-dataset --earlier /tmp/fixture/earlier.tsv \
        --later /tmp/fixture/later.tsv --earlier-date 2018-01-01 \
        --later-date 2020-06-01 --out /tmp/fixture/prep
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ecann.dataset import preprocess, write_flatfile  # noqa: E402
from ecann.demo import make_demo_records  # noqa: E402


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--families", type=int, default=20,
                        help="number of protein families to synthesize")
    args = parser.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    earlier_raw, later_raw = make_demo_records(seed=args.seed,
                                               n_families=args.families)
    write_flatfile(earlier_raw, out / "earlier.tsv")
    write_flatfile(later_raw, out / "later.tsv")

    later_clean = preprocess(later_raw).records
    fasta = out / "queries.fasta"
    fasta.write_text("".join(f">{r.id}\n{r.seq}\n" for r in later_clean),
                     encoding="utf-8")

    n_enzymes = sum(r.is_enzyme for r in preprocess(earlier_raw).records)
    print(f"wrote {out}/earlier.tsv ({len(earlier_raw)} raw rows, "
          f"{n_enzymes} enzymes after cleaning)")
    print(f"wrote {out}/later.tsv ({len(later_raw)} raw rows)")
    print(f"wrote {fasta} ({len(later_clean)} query sequences)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
