#!/usr/bin/env python3
"""Benchmark the retrieval and ranking cores on synthetic Gaussian clusters.

Measures (a) approximate nearest-neighbor recall against exhaustive search
and (b) top-1 accuracy of the shortlisted one-vs-all label ranker against a
full one-vs-all linear-SVM oracle, reporting the negative-sample budget each
consumed.  Useful for sizing negative_budget/shortlist_size before a real run.

Example:
    python3 scripts/benchmark_components.py --labels 200 --per-label 10 \
        --dim 32 --sigma 0.5 --budget 2000 --shortlist 700
"""

import argparse
import datetime as dt
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ecann.agents import EcRanker, EcRankerParams, RankingMode  # noqa: E402
from ecann.ann import AnnIndex, AnnParams, brute_force_knn  # noqa: E402
from ecann.core import LabelDictionary, ProteinRecord, parse_ec  # noqa: E402
from ecann.embedding import EmbeddingTable  # noqa: E402
from ecann.linear import decision_many, train_l2svm  # noqa: E402

DAY = dt.date(2015, 1, 1)


def ec_text(i: int) -> str:
    return f"{1 + i % 7}.{1 + (i // 7) % 20}.{1 + i // 140}.{1 + i}"


def ann_benchmark(args, rng) -> None:
    points = rng.normal(size=(args.ann_points, args.dim))
    ids = [f"p{i}" for i in range(len(points))]
    table = EmbeddingTable(tag="bench", dim=args.dim,
                           vectors=dict(zip(ids, points)))
    t0 = time.monotonic()
    index = AnnIndex.build(table, AnnParams(m=16, ef_construction=200,
                                            ef_search=args.ef_search, seed=0))
    build_s = time.monotonic() - t0
    n_queries, k = min(200, len(points)), 10
    t0 = time.monotonic()
    hits = 0
    for qi in range(n_queries):
        got = {rid for rid, _ in index.search(points[qi], k=k)}
        want = {rid for rid, _ in brute_force_knn(table, points[qi], k=k)}
        hits += len(got & want)
    query_s = time.monotonic() - t0
    print(f"[ann] {len(points)} pts dim {args.dim}: recall@{k} "
          f"{hits / (n_queries * k):.4f}, build {build_s:.1f}s, "
          f"{1000 * query_s / n_queries:.1f} ms/query")


def ranker_benchmark(args, rng) -> None:
    n = args.labels * args.per_label
    centers = rng.normal(size=(args.labels, args.dim))
    records, vectors = [], {}
    X = np.empty((n, args.dim))
    y = np.empty(n, dtype=int)
    k = 0
    for i in range(args.labels):
        for _ in range(args.per_label):
            rid = f"P{k}"
            vec = centers[i] + rng.normal(size=args.dim) * args.sigma
            vectors[rid], X[k], y[k] = vec, vec, i
            records.append(ProteinRecord(
                id=rid, name=rid, seq="ACDEFGHIKL", is_enzyme=True,
                ecs=(parse_ec(ec_text(i)),),
                date_integrated=DAY, date_sequence_update=DAY))
            k += 1
    table = EmbeddingTable(tag="bench", dim=args.dim, vectors=vectors)
    label_dict = LabelDictionary(parse_ec(ec_text(i)) for i in range(args.labels))
    queries = np.stack([centers[i] + rng.normal(size=args.dim) * args.sigma
                        for i in range(args.labels)])

    params = EcRankerParams(
        ann=AnnParams(m=16, ef_construction=200, ef_search=args.ef_search, seed=0),
        negative_budget=args.budget, shortlist_size=args.shortlist)
    t0 = time.monotonic()
    ranker = EcRanker.train(records, table, label_dict, params)
    train_s = time.monotonic() - t0
    negatives = sum(ranker.negatives_used.values())
    oracle_budget = args.labels * (n - args.per_label)

    t0 = time.monotonic()
    hits = sum(
        ranker.rank(queries[i], RankingMode.PREDICTION, count_hint=1)[0][0]
        == parse_ec(ec_text(i))
        for i in range(args.labels))
    rank_s = time.monotonic() - t0
    print(f"[ranker] {args.labels} labels x {args.per_label}: top-1 "
          f"{hits / args.labels:.4f}, train {train_s:.1f}s, rank {rank_s:.1f}s, "
          f"negatives {negatives} ({negatives / oracle_budget:.1%} of exhaustive)")

    if args.oracle:
        t0 = time.monotonic()
        models = [train_l2svm(X[y == i], X[y != i], C=1.0, max_iter=60, tol=0.1)
                  for i in range(args.labels)]
        decisions = np.stack([decision_many(m, queries) for m in models])
        acc = float(np.mean(np.argmax(decisions, axis=0) == np.arange(args.labels)))
        print(f"[oracle] full one-vs-all: top-1 {acc:.4f}, "
              f"train {time.monotonic() - t0:.1f}s, negatives {oracle_budget}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--labels", type=int, default=200)
    parser.add_argument("--per-label", type=int, default=10)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--sigma", type=float, default=0.5,
                        help="within-cluster noise scale")
    parser.add_argument("--budget", type=int, default=2000,
                        help="sampled-negative budget per label")
    parser.add_argument("--shortlist", type=int, default=700)
    parser.add_argument("--ef-search", type=int, default=300)
    parser.add_argument("--ann-points", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--no-oracle", dest="oracle", action="store_false",
                        help="skip the exhaustive one-vs-all comparison")
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    ann_benchmark(args, rng)
    ranker_benchmark(args, rng)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
