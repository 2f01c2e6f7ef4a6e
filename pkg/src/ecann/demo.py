"""Synthetic snapshot pairs for demos, smoke runs, and end-to-end tests.

The generator plants protein "families": a base sequence plus mutated
variants that share the family's annotation.  The earlier snapshot
holds the first variants; the later snapshot keeps them and adds new
variants (near-duplicates of known families) plus a few novel families,
some carrying EC numbers never seen before.  That mirrors how real
snapshot pairs behave: most new sequences are homologous to old ones,
a few are genuinely new, and a few bring new labels.
"""
from __future__ import annotations

import random
from datetime import date, timedelta

from .core import ProteinRecord, parse_ec
from .dataset import Snapshot, preprocess

# Standard residues only; ambiguity codes stay out of generated data.
_RESIDUES = "ACDEFGHIKLMNPQRSTVWY"

EC_POOL = (
    "1.1.1.1",
    "1.1.1.2",
    "1.10.3.2",
    "1.14.-.-",
    "1.14.11.38",
    "2.3.1.12",
    "2.3.1.41",
    "2.7.11.1",
    "3.1.3.16",
    "3.2.1.4",
    "3.5.2.6",
    "4.2.1.11",
    "5.3.1.9",
    "6.1.1.3",
    "7.1.1.2",
)

# Labels that only ever appear in the later snapshot.
NOVEL_EC_POOL = ("6.2.1.3", "4.6.1.1")


def _random_seq(rng: random.Random, lo: int = 60, hi: int = 180) -> str:
    return "".join(rng.choice(_RESIDUES) for _ in range(rng.randint(lo, hi)))


def _mutate(seq: str, rng: random.Random, rate: float = 0.04, indels: bool = True) -> str:
    out = []
    for ch in seq:
        r = rng.random()
        if r < rate:
            out.append(rng.choice(_RESIDUES))
        elif indels and r < rate + 0.005:
            if rng.random() < 0.5:
                out.append(ch)
                out.append(rng.choice(_RESIDUES))
            # else: deletion, drop the residue
        else:
            out.append(ch)
    return "".join(out) if out else seq


def _day(rng: random.Random, start: date, end: date) -> date:
    span = (end - start).days
    return start + timedelta(days=rng.randint(0, span))


def make_demo_records(
    seed: int = 0, n_families: int = 40
) -> tuple[list[ProteinRecord], list[ProteinRecord]]:
    """Raw (earlier, later) record lists; run them through preprocess()."""
    rng = random.Random(seed)
    earlier: list[ProteinRecord] = []
    later: list[ProteinRecord] = []

    def build(rec_id: str, seq: str, ecs: tuple[str, ...], when: date) -> ProteinRecord:
        return ProteinRecord(
            id=rec_id,
            name=rec_id.lower(),
            seq=seq,
            is_enzyme=bool(ecs),
            ecs=tuple(parse_ec(e) for e in ecs),
            date_integrated=when,
            date_sequence_update=when,
        )

    for fam in range(n_families):
        base = _random_seq(rng)
        if rng.random() < 0.6:
            n_ecs = rng.choices([1, 2, 3], weights=[0.8, 0.15, 0.05])[0]
            ecs = tuple(rng.sample(EC_POOL, n_ecs))
        else:
            ecs = ()
        variants = [base] + [
            _mutate(base, rng) for _ in range(rng.randint(0, 2))
        ]
        for v, seq in enumerate(variants):
            rec = build(
                f"F{fam:03d}V{v}", seq, ecs, _day(rng, date(2010, 1, 1), date(2017, 12, 31))
            )
            earlier.append(rec)
            later.append(rec)
        for v in range(rng.randint(0, 2)):
            seq = _mutate(base, rng)
            later.append(
                build(
                    f"F{fam:03d}N{v}",
                    seq,
                    ecs,
                    _day(rng, date(2018, 3, 1), date(2020, 4, 1)),
                )
            )

    # Novel families, two of which carry labels unseen in the earlier snapshot.
    for i, ec in enumerate(NOVEL_EC_POOL):
        later.append(
            build(
                f"NOVEL{i}",
                _random_seq(rng),
                (ec,),
                _day(rng, date(2018, 3, 1), date(2020, 4, 1)),
            )
        )
    for i in range(3):
        later.append(
            build(
                f"NOVELN{i}",
                _random_seq(rng),
                (),
                _day(rng, date(2018, 3, 1), date(2020, 4, 1)),
            )
        )

    # A couple of earlier-only records: deletions between snapshots.
    removed = {earlier[3].id, earlier[11].id}
    later = [rec for rec in later if rec.id not in removed]
    return earlier, later


def make_demo_snapshots(seed: int = 0, n_families: int = 40) -> tuple[Snapshot, Snapshot]:
    earlier_raw, later_raw = make_demo_records(seed=seed, n_families=n_families)
    earlier = preprocess(earlier_raw)
    later = preprocess(later_raw)
    return (
        Snapshot(tag="demo-2018-02", released=date(2018, 2, 28), records=earlier.records),
        Snapshot(tag="demo-2020-04", released=date(2020, 4, 30), records=later.records),
    )
