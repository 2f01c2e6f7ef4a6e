import datetime

import pytest
from hypothesis import given, strategies as st

from ecann.core import (
    AMINO_ACIDS,
    ECNumber,
    ECParseError,
    LabelDictionary,
    Prediction,
    PredictionSource,
    ProteinRecord,
    build_label_dictionary,
    format_ec,
    format_ec_list,
    normalize_sequence,
    parse_ec,
    parse_ec_list,
)


def make_record(rec_id="P1", seq="MKV", ecs=(), is_enzyme=None, day=1):
    if is_enzyme is None:
        is_enzyme = bool(ecs)
    return ProteinRecord(
        id=rec_id,
        name=rec_id.lower(),
        seq=seq,
        is_enzyme=is_enzyme,
        ecs=tuple(parse_ec(e) for e in ecs),
        date_integrated=datetime.date(2017, 1, day),
        date_sequence_update=datetime.date(2017, 1, day),
    )


class TestParseEc:
    def test_complete_code_round_trips(self):
        ec = parse_ec("1.14.11.38")
        assert ec.levels == (1, 14, 11, 38)
        assert format_ec(ec) == "1.14.11.38"
        assert ec.is_complete()
        assert ec.completeness() == 4

    def test_partial_code_with_dashes(self):
        ec = parse_ec("1.14.-.-")
        assert ec.levels == (1, 14, None, None)
        assert ec.completeness() == 2
        assert not ec.is_complete()

    def test_short_input_padded_with_unknowns(self):
        assert format_ec(parse_ec("3.5.2")) == "3.5.2.-"
        assert format_ec(parse_ec("7")) == "7.-.-.-"

    def test_whitespace_tolerated(self):
        assert format_ec(parse_ec("  2.3.1.41 ")) == "2.3.1.41"

    def test_preliminary_code_rejected_with_distinct_error(self):
        with pytest.raises(ECParseError, match="preliminary"):
            parse_ec("1.1.1.n5")

    def test_garbage_component_rejected(self):
        with pytest.raises(ECParseError, match="bad EC component"):
            parse_ec("1.a.1.1")

    def test_zero_and_negative_rejected(self):
        with pytest.raises(ECParseError):
            parse_ec("0.1.1.1")
        with pytest.raises(ECParseError):
            parse_ec("1.-2.1.1")

    def test_top_class_range_enforced(self):
        parse_ec("7.1.1.1")
        with pytest.raises(ECParseError, match="1..7"):
            parse_ec("8.1.1.1")

    def test_too_many_components_rejected(self):
        with pytest.raises(ECParseError):
            parse_ec("1.2.3.4.5")

    def test_empty_rejected(self):
        with pytest.raises(ECParseError):
            parse_ec("   ")

    def test_known_level_after_unknown_rejected(self):
        with pytest.raises(ECParseError, match="prefix"):
            parse_ec("1.-.1.-")

    def test_ec_is_hashable_and_equal_by_value(self):
        assert parse_ec("1.1.1.1") == parse_ec("1.1.1.1")
        assert len({parse_ec("1.1.1.1"), parse_ec("1.1.1.1")}) == 1


@given(
    known=st.integers(min_value=0, max_value=4),
    top=st.integers(min_value=1, max_value=7),
    rest=st.lists(st.integers(min_value=1, max_value=9999), min_size=3, max_size=3),
)
def test_parse_preserves_prefix_completeness(known, top, rest):
    levels = [top] + rest
    parts = [str(levels[i]) if i < known else "-" for i in range(4)]
    ec = parse_ec(".".join(parts))
    assert ec.completeness() == known
    # Known levels form a prefix by construction of the type.
    seen_unknown = False
    for lvl in ec.levels:
        if lvl is None:
            seen_unknown = True
        else:
            assert not seen_unknown
    assert parse_ec(format_ec(ec)) == ec


@given(
    pattern=st.lists(st.booleans(), min_size=4, max_size=4),
    top=st.integers(min_value=1, max_value=7),
    rest=st.lists(st.integers(min_value=1, max_value=500), min_size=3, max_size=3),
)
def test_non_prefix_patterns_always_rejected(pattern, top, rest):
    values = [top] + rest
    parts = [str(values[i]) if keep else "-" for i, keep in enumerate(pattern)]
    text = ".".join(parts)
    # Valid iff once a '-' appears no later part is known.
    seen_unknown = False
    valid = True
    for keep in pattern:
        if not keep:
            seen_unknown = True
        elif seen_unknown:
            valid = False
    if valid:
        assert format_ec(parse_ec(text)) == text
    else:
        with pytest.raises(ECParseError):
            parse_ec(text)


class TestEcList:
    def test_semicolon_with_optional_whitespace(self):
        ecs = parse_ec_list("1.1.1.1; 2.3.1.41 ;3.5.2.6")
        assert [format_ec(e) for e in ecs] == ["1.1.1.1", "2.3.1.41", "3.5.2.6"]

    def test_blank_and_dash_yield_empty(self):
        assert parse_ec_list("") == ()
        assert parse_ec_list(" - ") == ()

    def test_round_trip(self):
        text = "1.1.1.1;2.3.1.41"
        assert format_ec_list(parse_ec_list(text)) == text


class TestNormalizeSequence:
    def test_plain_sequence_unchanged(self):
        assert normalize_sequence("mkvA") == "MKVA"

    def test_unknown_characters_mapped_to_x_with_warning(self, caplog):
        import logging

        with caplog.at_level(logging.WARNING, logger="ecann.core"):
            out = normalize_sequence("MK*V", "P7")
        assert out == "MKXV"
        assert any("P7" in rec.message for rec in caplog.records)

    def test_alphabet_has_25_symbols(self):
        assert len(AMINO_ACIDS) == 25
        assert len(set(AMINO_ACIDS)) == 25

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            normalize_sequence("  ")


class TestProteinRecord:
    def test_function_count_follows_ec_list(self):
        rec = make_record(ecs=("1.1.1.1", "2.3.1.41"))
        assert rec.is_enzyme and rec.function_count == 2

    def test_non_enzyme_has_zero_count(self):
        rec = make_record(is_enzyme=False)
        assert rec.function_count == 0

    def test_enzyme_without_ecs_rejected(self):
        with pytest.raises(ValueError, match="1..8"):
            make_record(is_enzyme=True)

    def test_non_enzyme_with_ecs_rejected(self):
        with pytest.raises(ValueError, match="non-enzyme"):
            make_record(ecs=("1.1.1.1",), is_enzyme=False)

    def test_more_than_eight_ecs_rejected(self):
        ecs = tuple(f"1.1.1.{i}" for i in range(1, 10))
        with pytest.raises(ValueError):
            make_record(ecs=ecs)

    def test_sequence_outside_alphabet_rejected(self):
        with pytest.raises(ValueError, match="alphabet"):
            make_record(seq="MK*V")


class TestLabelDictionary:
    def test_lexicographic_dense_labels(self):
        records = [
            make_record("A", ecs=("1.1.1.2",)),
            make_record("B", ecs=("1.1.1.1",)),
        ]
        d = build_label_dictionary(records)
        assert len(d) == 2
        assert d.label_of(parse_ec("1.1.1.1")) == 0
        assert d.label_of(parse_ec("1.1.1.2")) == 1

    def test_lexicographic_means_text_order(self):
        # "1.10.x" sorts before "1.2.x" as text; the convention is fixed.
        d = LabelDictionary([parse_ec("1.2.1.1"), parse_ec("1.10.1.1")])
        assert d.label_of(parse_ec("1.10.1.1")) == 0

    def test_incomplete_ecs_are_first_class_labels(self):
        d = LabelDictionary([parse_ec("1.14.-.-"), parse_ec("1.14.11.38")])
        assert len(d) == 2
        assert parse_ec("1.14.-.-") in d

    def test_duplicates_collapse(self):
        d = LabelDictionary([parse_ec("1.1.1.1"), parse_ec("1.1.1.1")])
        assert len(d) == 1

    def test_unknown_lookup_raises(self):
        d = LabelDictionary([parse_ec("1.1.1.1")])
        with pytest.raises(KeyError):
            d.label_of(parse_ec("2.1.1.1"))
        with pytest.raises(KeyError):
            d.ec_of(5)

    def test_save_load_round_trip(self, tmp_path):
        d = LabelDictionary([parse_ec("1.1.1.2"), parse_ec("1.1.1.1"), parse_ec("7.1.-.-")])
        path = tmp_path / "labels.tsv"
        d.save(path)
        text = path.read_text()
        assert text.splitlines()[0] == "1.1.1.1\t0"
        loaded = LabelDictionary.load(path)
        assert loaded == d

    def test_load_rejects_non_dense_labels(self, tmp_path):
        path = tmp_path / "labels.tsv"
        path.write_text("1.1.1.1\t0\n1.1.1.2\t2\n")
        with pytest.raises(ValueError, match="dense"):
            LabelDictionary.load(path)


@given(st.lists(st.tuples(st.integers(1, 7), st.integers(1, 40)), min_size=1, max_size=30))
def test_label_dictionary_is_a_bijection(pairs):
    ecs = [parse_ec(f"{a}.{b}.1.1") for a, b in pairs]
    d = LabelDictionary(ecs)
    # label_of and ec_of invert each other over the whole range.
    for label in range(len(d)):
        assert d.label_of(d.ec_of(label)) == label
    texts = [format_ec(d.ec_of(i)) for i in range(len(d))]
    assert texts == sorted(texts)
    assert len(set(texts)) == len(texts)


class TestPrediction:
    def test_ranked_ecs_must_be_sorted(self):
        good = Prediction(
            id="P1",
            is_enzyme=True,
            ranked_ecs=((parse_ec("1.1.1.1"), 0.9), (parse_ec("2.1.1.1"), 0.3)),
            source=PredictionSource.AGENTS,
        )
        assert good.function_count == 2
        with pytest.raises(ValueError, match="sorted"):
            Prediction(
                id="P1",
                is_enzyme=True,
                ranked_ecs=((parse_ec("1.1.1.1"), 0.3), (parse_ec("2.1.1.1"), 0.9)),
                source=PredictionSource.AGENTS,
            )

    def test_scores_bounded(self):
        with pytest.raises(ValueError, match="outside"):
            Prediction(
                id="P1",
                is_enzyme=True,
                ranked_ecs=((parse_ec("1.1.1.1"), 1.5),),
                source=PredictionSource.AGENTS,
            )

    def test_abstention_carries_no_ecs(self):
        pred = Prediction(id="P1", is_enzyme=None, ranked_ecs=(), source=PredictionSource.EXTERNAL)
        assert pred.abstained_on_ec()
        with pytest.raises(ValueError, match="abstention"):
            Prediction(
                id="P1",
                is_enzyme=None,
                ranked_ecs=((parse_ec("1.1.1.1"), 0.5),),
                source=PredictionSource.EXTERNAL,
            )
