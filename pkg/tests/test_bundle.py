"""Bundle round-trip, integrity, and self-annotation tests."""

import json

import numpy as np
import pytest

from ecann.agents import CountModelParams, EcRankerParams, EnzymeGateParams, RankingMode
from ecann.ann import AnnParams
from ecann.bundle import (
    ARTIFACT_FILES,
    Annotator,
    BundleError,
    BundleParams,
    MANIFEST_FILE,
    train_bundle,
)
from ecann.core import PredictionSource, format_ec
from ecann.demo import make_demo_snapshots
from ecann.embedding import EmbeddingTable
from ecann.gbdt import GbdtParams
from ecann.integrate import IntegrationPolicy, PolicyGrid

_FAST_GBDT = GbdtParams(n_estimators=20, max_depth=3, min_child_weight=0.5,
                        subsample=1.0)

TEST_PARAMS = BundleParams(
    max_len=192,
    gate=EnzymeGateParams(),
    counts=CountModelParams(sp=_FAST_GBDT, mp=_FAST_GBDT),
    ranker=EcRankerParams(
        ann=AnnParams(m=12, ef_construction=80, ef_search=80),
        negative_budget=60, shortlist_size=60, svm_max_iter=300,
    ),
)


@pytest.fixture(scope="module")
def corpus():
    earlier, _ = make_demo_snapshots(seed=3, n_families=20)
    return earlier.records


@pytest.fixture(scope="module")
def annotator(corpus):
    built, tune_result = train_bundle(corpus, TEST_PARAMS)
    assert tune_result is None
    return built


@pytest.fixture(scope="module")
def saved_dir(annotator, tmp_path_factory):
    directory = tmp_path_factory.mktemp("bundle") / "model"
    annotator.save(directory)
    return directory


class TestSelfAnnotation:
    def test_training_queries_come_back_exactly(self, annotator, corpus):
        """Every training record aligns to itself at identity 1.0, and the
        default policy puts alignment first, so the self-test is exact."""
        preds = annotator.annotate([(f"q-{rec.id}", rec.seq) for rec in corpus])
        by_id = {p.id: p for p in preds}
        for rec in corpus:
            pred = by_id[f"q-{rec.id}"]
            assert pred.source is PredictionSource.ALIGNMENT
            assert pred.is_enzyme == rec.is_enzyme
            assert pred.ec_set == {format_ec(ec) for ec in rec.ecs}
            assert all(score == 1.0 for _, score in pred.ranked_ecs)

    def test_agents_route_answers_when_alignment_is_off(self, annotator, corpus):
        agents_only = Annotator(
            annotator.records, annotator.table, annotator._stack,
            IntegrationPolicy(precedence=(PredictionSource.AGENTS,)),
            annotator.params,
        )
        pred = agents_only.annotate_one("q", corpus[0].seq)
        assert pred.source is PredictionSource.AGENTS
        assert pred.is_enzyme is not None

    def test_recommendation_mode_widens_the_ranking(self, annotator, corpus):
        enzyme = next(rec for rec in corpus if rec.is_enzyme)
        agents_only = Annotator(
            annotator.records, annotator.table, annotator._stack,
            IntegrationPolicy(precedence=(PredictionSource.AGENTS,)),
            annotator.params,
        )
        narrow = agents_only.annotate_one("q", enzyme.seq)
        wide = agents_only.annotate_one("q", enzyme.seq,
                                        mode=RankingMode.RECOMMENDATION)
        if narrow.is_enzyme:
            assert len(wide.ranked_ecs) >= len(narrow.ranked_ecs)

    def test_duplicate_query_ids_rejected(self, annotator, corpus):
        seq = corpus[0].seq
        with pytest.raises(BundleError, match="duplicate"):
            annotator.annotate([("q", seq), ("q", seq)])

    def test_empty_inputs_rejected(self, annotator):
        with pytest.raises(BundleError, match="non-empty"):
            annotator.annotate_one("", "ACDEF")
        with pytest.raises(BundleError, match="non-empty"):
            annotator.annotate_one("q", "")

    def test_vector_shape_must_match_the_table(self, annotator, corpus):
        with pytest.raises(BundleError, match="shape"):
            annotator.annotate_one("q", corpus[0].seq, vector=np.zeros(7))


class TestPersistence:
    def test_round_trip_preserves_predictions(self, annotator, saved_dir, corpus):
        again = Annotator.load(saved_dir)
        assert again.policy == annotator.policy
        assert again.params == annotator.params
        queries = [(f"q-{rec.id}", rec.seq) for rec in corpus[:10]]
        assert again.annotate(queries) == annotator.annotate(queries)

    def test_resave_is_byte_identical(self, saved_dir, tmp_path):
        again = Annotator.load(saved_dir)
        other = tmp_path / "resaved"
        again.save(other)
        for name in ARTIFACT_FILES + (MANIFEST_FILE,):
            assert (other / name).read_bytes() == (saved_dir / name).read_bytes(), name

    def test_manifest_has_exactly_the_declared_fields(self, saved_dir):
        # no timestamp or host fields: rebuilds must be byte-identical
        manifest = json.loads((saved_dir / MANIFEST_FILE).read_text())
        assert set(manifest) == {
            "format", "version", "embedding_tag", "policy", "params", "artifacts",
        }
        assert set(manifest["artifacts"]) == set(ARTIFACT_FILES)

    def test_tampered_artifact_is_detected(self, annotator, tmp_path):
        target = tmp_path / "tampered"
        annotator.save(target)
        path = target / "counts.json"
        path.write_bytes(path.read_bytes() + b" ")
        with pytest.raises(BundleError, match="corrupt"):
            Annotator.load(target)

    def test_missing_artifact_is_detected(self, annotator, tmp_path):
        target = tmp_path / "incomplete"
        annotator.save(target)
        (target / "labels.tsv").unlink()
        with pytest.raises(BundleError, match="missing"):
            Annotator.load(target)

    def test_unrecognized_manifest_rejected(self, tmp_path):
        target = tmp_path / "foreign"
        target.mkdir()
        (target / MANIFEST_FILE).write_text('{"format": "other", "version": 9}')
        with pytest.raises(BundleError, match="format"):
            Annotator.load(target)

    def test_loading_a_non_bundle_directory_fails(self, tmp_path):
        with pytest.raises(BundleError, match="manifest"):
            Annotator.load(tmp_path)


class TestTraining:
    def test_no_enzymes_is_an_error(self, corpus):
        non_enzymes = [rec for rec in corpus if not rec.is_enzyme]
        with pytest.raises(BundleError, match="no enzymes"):
            train_bundle(non_enzymes, TEST_PARAMS)

    def test_zero_records_is_an_error(self):
        with pytest.raises(BundleError, match="zero records"):
            train_bundle([], TEST_PARAMS)

    def test_policy_and_grid_are_mutually_exclusive(self, corpus):
        with pytest.raises(BundleError, match="not both"):
            train_bundle(corpus, TEST_PARAMS,
                         policy=IntegrationPolicy(), tune_grid=PolicyGrid())

    def test_tuning_returns_a_grid_policy_and_scoreboard(self, corpus):
        grid = PolicyGrid(identities=(0.4, 0.9), thresholds=(0.5,),
                          precedences=(
                              (PredictionSource.ALIGNMENT, PredictionSource.AGENTS),
                              (PredictionSource.ALIGNMENT,),
                              (PredictionSource.AGENTS,),
                          ))
        built, tune_result = train_bundle(corpus, TEST_PARAMS, tune_grid=grid)
        assert tune_result is not None
        assert len(tune_result.scoreboard) == len(grid.policies())
        assert built.policy == tune_result.policy
        singles = {
            precedence: max(
                score for policy, score in tune_result.scoreboard
                if policy.precedence == precedence
            )
            for precedence in ((PredictionSource.ALIGNMENT,),
                               (PredictionSource.AGENTS,))
        }
        assert tune_result.objective >= max(singles.values())

    def test_external_table_tag_requires_explicit_vectors(self, corpus):
        rng = np.random.default_rng(0)
        table = EmbeddingTable(
            tag="external-test", dim=8,
            vectors={rec.id: rng.normal(size=8) for rec in corpus},
        )
        built, _ = train_bundle(corpus, TEST_PARAMS, table=table)
        with pytest.raises(BundleError, match="vectors must be supplied"):
            built.annotate_one("q", corpus[0].seq)
        pred = built.annotate_one("q", corpus[0].seq,
                                  vector=table.get(corpus[0].id))
        assert pred.id == "q"
