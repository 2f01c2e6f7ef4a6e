"""Trained annotation bundles: fit the full stack, persist it, serve queries.

A bundle is a self-contained directory.  ``manifest.json`` carries the
format tag, the embedding recipe, the integration policy, all training
parameters, and a sha256 digest per artifact file; the artifacts are the
training records (flat file), the embedding table, the count model, the
EC ranker, and the label dictionary.  Nothing in the directory encodes
wall-clock time, so rebuilding from the same inputs reproduces every
byte.

The enzyme gate and the k-mer alignment index hold no fitted state
beyond the stored records and vectors, so they are rebuilt on load
instead of serialized.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .agents import (
    CountModelParams,
    EcRanker,
    EcRankerParams,
    EnzymeGate,
    EnzymeGateParams,
    FunctionCountModel,
    RankingMode,
)
from .alignment import AlignmentParams, Hit, KmerIndex
from .ann import AnnParams
from .core import LabelDictionary, Prediction, ProteinRecord
from .dataset import parse_flatfile, validation_split, write_flatfile
from .embedding import (
    EmbeddingTable,
    ONE_HOT_TAG,
    load_embedding_table,
    one_hot_encode,
    one_hot_table,
    save_embedding_table,
)
from .gbdt import GbdtParams
from .integrate import (
    AgentOutputs,
    IntegrationPolicy,
    PolicyGrid,
    TuneResult,
    greedy_tune,
    integrate,
)

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "ec-annotation-bundle"
BUNDLE_VERSION = 1

MANIFEST_FILE = "manifest.json"
RECORDS_FILE = "records.tsv"
EMBEDDINGS_FILE = "embeddings.bin"
COUNTS_FILE = "counts.json"
LABELS_FILE = "labels.tsv"
RANKER_FILES = ("ranker_index.bin", "ranker_classifiers.bin", "ranker_meta.json")

ARTIFACT_FILES = (RECORDS_FILE, EMBEDDINGS_FILE, COUNTS_FILE, LABELS_FILE) + RANKER_FILES


class BundleError(RuntimeError):
    """Bundle construction, persistence, or annotation failure."""


@dataclass(frozen=True)
class BundleParams:
    """Everything needed to fit the stack from records alone."""

    max_len: int = 1000  # one-hot window; ignored for externally built tables
    gate: EnzymeGateParams = EnzymeGateParams()
    counts: CountModelParams = CountModelParams()
    ranker: EcRankerParams = EcRankerParams()
    alignment: AlignmentParams = AlignmentParams()

    def to_dict(self) -> dict:
        return {
            "max_len": self.max_len,
            "gate": dataclasses.asdict(self.gate),
            "counts": dataclasses.asdict(self.counts),
            "ranker": dataclasses.asdict(self.ranker),
            "alignment": dataclasses.asdict(self.alignment),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "BundleParams":
        gate = dict(payload["gate"])
        gate["ann"] = AnnParams(**gate["ann"])
        counts = dict(payload["counts"])
        ranker = dict(payload["ranker"])
        ranker["ann"] = AnnParams(**ranker["ann"])
        return cls(
            max_len=int(payload["max_len"]),
            gate=EnzymeGateParams(**gate),
            counts=CountModelParams(
                sp=GbdtParams(**counts["sp"]), mp=GbdtParams(**counts["mp"])
            ),
            ranker=EcRankerParams(**ranker),
            alignment=AlignmentParams(**payload["alignment"]),
        )


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class _Stack:
    """The fitted pieces shared by training and annotation."""

    gate: EnzymeGate
    counts: FunctionCountModel
    ranker: EcRanker
    label_dict: LabelDictionary
    aligner: KmerIndex


def _fit_stack(
    records: Sequence[ProteinRecord],
    table: EmbeddingTable,
    params: BundleParams,
) -> _Stack:
    enzymes = [rec for rec in records if rec.is_enzyme]
    if not enzymes:
        raise BundleError("training set has no enzymes; nothing to rank")
    label_dict = LabelDictionary(ec for rec in enzymes for ec in rec.ecs)
    gate = EnzymeGate.train(records, table, params.gate)
    counts = FunctionCountModel.train(enzymes, table, params.counts)
    ranker = EcRanker.train(enzymes, table, label_dict, params.ranker)
    aligner = KmerIndex.build(records, params.alignment)
    return _Stack(gate=gate, counts=counts, ranker=ranker,
                  label_dict=label_dict, aligner=aligner)


class Annotator:
    """A loaded bundle: embeds queries, runs every route, integrates."""

    def __init__(
        self,
        records: Sequence[ProteinRecord],
        table: EmbeddingTable,
        stack: _Stack,
        policy: IntegrationPolicy,
        params: BundleParams,
    ):
        self.records = tuple(records)
        self.table = table
        self._stack = stack
        self.policy = policy
        self.params = params

    @property
    def label_dict(self) -> LabelDictionary:
        return self._stack.label_dict

    def embed(self, seq: str) -> np.ndarray:
        if self.table.tag != ONE_HOT_TAG:
            raise BundleError(
                f"bundle embeds with {self.table.tag!r}; query vectors must be supplied"
            )
        return one_hot_encode(seq, self.params.max_len)

    def agent_outputs(self, vec: np.ndarray) -> AgentOutputs:
        is_enzyme, confidence = self._stack.gate.predict(vec)
        count = self._stack.counts.predict(vec)
        ranked = tuple(self._stack.ranker.rank(vec, RankingMode.RECOMMENDATION))
        return AgentOutputs(
            is_enzyme=is_enzyme,
            enzyme_confidence=confidence,
            count=count,
            ranked_ecs=ranked,
        )

    def best_hit(self, seq: str) -> Optional[Hit]:
        """Top-ranked raw hit; the policy's identity gate is applied later."""
        hits = self._stack.aligner.align_all(seq)
        return hits[0] if hits else None

    def annotate_one(
        self,
        query_id: str,
        seq: str,
        mode: RankingMode = RankingMode.PREDICTION,
        vector: Optional[np.ndarray] = None,
    ) -> Prediction:
        if not query_id:
            raise BundleError("query id must be non-empty")
        if not seq:
            raise BundleError(f"query {query_id!r}: sequence must be non-empty")
        vec = self.embed(seq) if vector is None else np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.table.dim,):
            raise BundleError(
                f"query {query_id!r}: vector shape {vec.shape} != ({self.table.dim},)"
            )
        outputs = self.agent_outputs(vec)
        return integrate(query_id, outputs, self.best_hit(seq), self.policy, mode)

    def annotate(
        self,
        queries: Sequence[tuple[str, str]],
        mode: RankingMode = RankingMode.PREDICTION,
        vectors: Optional[Mapping[str, np.ndarray]] = None,
    ) -> list[Prediction]:
        seen: set[str] = set()
        for query_id, _ in queries:
            if query_id in seen:
                raise BundleError(f"duplicate query id {query_id!r}")
            seen.add(query_id)
        return [
            self.annotate_one(
                query_id, seq, mode,
                vector=None if vectors is None else vectors.get(query_id),
            )
            for query_id, seq in queries
        ]

    # ----- persistence ----------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_flatfile(self.records, directory / RECORDS_FILE)
        save_embedding_table(self.table, directory / EMBEDDINGS_FILE)
        self._stack.counts.save(directory / COUNTS_FILE)
        self._stack.label_dict.save(directory / LABELS_FILE)
        self._stack.ranker.save(directory)
        manifest = {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "embedding_tag": self.table.tag,
            "policy": self.policy.to_dict(),
            "params": self.params.to_dict(),
            "artifacts": {
                name: _sha256(directory / name) for name in ARTIFACT_FILES
            },
        }
        (directory / MANIFEST_FILE).write_text(
            json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="ascii",
        )

    @classmethod
    def load(cls, directory: str | Path) -> "Annotator":
        directory = Path(directory)
        manifest_path = directory / MANIFEST_FILE
        if not manifest_path.is_file():
            raise BundleError(f"no {MANIFEST_FILE} in {directory}")
        manifest = json.loads(manifest_path.read_text(encoding="ascii"))
        if (manifest.get("format") != BUNDLE_FORMAT
                or manifest.get("version") != BUNDLE_VERSION):
            raise BundleError("unrecognized bundle format")
        for name, want in manifest["artifacts"].items():
            path = directory / name
            if not path.is_file():
                raise BundleError(f"bundle artifact missing: {name}")
            got = _sha256(path)
            if got != want:
                raise BundleError(
                    f"bundle artifact corrupt: {name} digest {got[:12]}… != manifest"
                )
        params = BundleParams.from_dict(manifest["params"])
        policy = IntegrationPolicy.from_dict(manifest["policy"])
        records, rejects = parse_flatfile(directory / RECORDS_FILE)
        if rejects:
            raise BundleError(f"bundle records file has {len(rejects)} bad rows")
        table = load_embedding_table(directory / EMBEDDINGS_FILE)
        if table.tag != manifest["embedding_tag"]:
            raise BundleError(
                f"embedding tag mismatch: table {table.tag!r} "
                f"!= manifest {manifest['embedding_tag']!r}"
            )
        stack = _Stack(
            gate=EnzymeGate.train(records, table, params.gate),
            counts=FunctionCountModel.load(directory / COUNTS_FILE),
            ranker=EcRanker.load(directory),
            label_dict=LabelDictionary.load(directory / LABELS_FILE),
            aligner=KmerIndex.build(records, params.alignment),
        )
        return cls(records=records, table=table, stack=stack,
                   policy=policy, params=params)


def annotate_to_tsv(
    annotator: Annotator,
    pairs: Sequence[tuple[str, str]],
    mode: RankingMode = RankingMode.PREDICTION,
    vectors: Optional[Mapping[str, np.ndarray]] = None,
) -> tuple[str, int]:
    """Render annotations for (id, seq) pairs as prediction-table text.

    A query that cannot be answered becomes a per-row error entry
    instead of aborting the batch; the failure count is returned so
    callers can set their exit status.  Batch and service output share
    this exact renderer, so equal inputs give equal bytes.
    """
    from .metrics import PREDICTION_COLUMNS, prediction_row

    lines = ["\t".join(PREDICTION_COLUMNS)]
    n_failed = 0
    for query_id, seq in pairs:
        try:
            pred = annotator.annotate_one(
                query_id, seq, mode,
                vector=None if vectors is None else vectors.get(query_id),
            )
            lines.append(prediction_row(pred))
        except Exception as exc:  # noqa: BLE001 - row isolation is the contract
            n_failed += 1
            log.warning("query %r failed: %s", query_id, exc)
            lines.append("\t".join([query_id, "", "", "", "", f"error: {exc}"]))
    return "\n".join(lines) + "\n", n_failed


def train_bundle(
    records: Sequence[ProteinRecord],
    params: BundleParams = BundleParams(),
    table: Optional[EmbeddingTable] = None,
    policy: Optional[IntegrationPolicy] = None,
    tune_grid: Optional[PolicyGrid] = None,
    validation_fraction: float = 0.1,
) -> tuple[Annotator, Optional[TuneResult]]:
    """Fit the full stack; optionally tune the policy on a date holdout.

    With ``tune_grid`` set, a temporary stack fitted on the
    chronologically earlier part scores every policy on the held-out
    tail, and the winning policy ships with a final stack refitted on
    all records.  ``policy`` short-circuits tuning.
    """
    if not records:
        raise BundleError("cannot train a bundle on zero records")
    if policy is not None and tune_grid is not None:
        raise BundleError("pass either a fixed policy or a tuning grid, not both")
    if table is None:
        table = one_hot_table(records, params.max_len)

    tune_result: Optional[TuneResult] = None
    if tune_grid is not None:
        fit_part, held_out = validation_split(records, validation_fraction)
        if not held_out:
            raise BundleError("validation split is empty; need >= 2 records to tune")
        sub_table = EmbeddingTable(
            tag=table.tag, dim=table.dim,
            vectors={rec.id: table.get(rec.id) for rec in fit_part},
        )
        trial = _fit_stack(fit_part, sub_table, params)
        probe = Annotator(fit_part, sub_table, trial,
                          IntegrationPolicy(), params)
        outputs_by_id: dict[str, AgentOutputs] = {}
        hits_by_id: dict[str, Optional[Hit]] = {}
        for rec in held_out:
            vec = table.get(rec.id)
            outputs_by_id[rec.id] = probe.agent_outputs(vec)
            hits_by_id[rec.id] = probe.best_hit(rec.seq)
        tune_result = greedy_tune(held_out, outputs_by_id, hits_by_id, tune_grid)
        chosen = tune_result.policy
        log.info("tuned policy %s (validation F1 %.4f)",
                 chosen.to_dict(), tune_result.objective)
    else:
        chosen = policy if policy is not None else IntegrationPolicy()

    stack = _fit_stack(records, table, params)
    return Annotator(records, table, stack, chosen, params), tune_result
