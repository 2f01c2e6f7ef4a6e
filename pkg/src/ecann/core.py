"""Core domain types: EC numbers, protein records, labels, predictions.

Everything here is immutable after construction and hashable where it
makes sense, so the types are safe to share between threads and to use
as dictionary keys.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

logger = logging.getLogger(__name__)

# 20 standard residues plus ambiguity/rare codes (B, Z, X, U, O).
AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWYBZXUO"
AA_INDEX = {aa: i for i, aa in enumerate(AMINO_ACIDS)}

# EC top-level classes run 1..7 (oxidoreductases through translocases).
EC_TOP_CLASSES = 7
EC_LEVELS = 4
UNKNOWN_LEVEL = "-"

# Multifunctional annotation is bounded: at most eight EC numbers per protein.
MAX_FUNCTIONS = 8

# Multiple EC numbers on one record are separated by semicolons,
# optionally padded with whitespace.
EC_DELIMITER = ";"

_INT_RE = re.compile(r"^[0-9]+$")
_PRELIMINARY_RE = re.compile(r"^n[0-9]+$", re.IGNORECASE)


class ECParseError(ValueError):
    """Raised when an EC string cannot be parsed into a valid code."""


@dataclass(frozen=True)
class ECNumber:
    """A four-level EC code; ``None`` marks an unknown trailing level.

    Known levels must form a prefix: once a level is unknown, all deeper
    levels are unknown too ("1.14.-.-" is valid, "1.-.14.-" is not).
    """

    levels: tuple[Optional[int], Optional[int], Optional[int], Optional[int]]

    def __post_init__(self) -> None:
        if len(self.levels) != EC_LEVELS:
            raise ECParseError(f"EC code needs {EC_LEVELS} levels, got {len(self.levels)}")
        seen_unknown = False
        for depth, lvl in enumerate(self.levels, start=1):
            if lvl is None:
                seen_unknown = True
                continue
            if seen_unknown:
                raise ECParseError(
                    f"level {depth} is known but a shallower level is unknown; "
                    "known levels must form a prefix"
                )
            if not isinstance(lvl, int) or isinstance(lvl, bool) or lvl < 1:
                raise ECParseError(f"level {depth} must be a positive integer, got {lvl!r}")
            if depth == 1 and lvl > EC_TOP_CLASSES:
                raise ECParseError(
                    f"top-level class must be in 1..{EC_TOP_CLASSES}, got {lvl}"
                )

    @property
    def text(self) -> str:
        return format_ec(self)

    def completeness(self) -> int:
        """Number of known levels, 0..4."""
        return sum(1 for lvl in self.levels if lvl is not None)

    def is_complete(self) -> bool:
        return self.levels[-1] is not None

    def __str__(self) -> str:
        return format_ec(self)


def parse_ec(text: str) -> ECNumber:
    """Parse an EC string such as "1.14.11.38" or "3.5.2.-".

    Fewer than four components are padded with unknowns ("3.5.2" means
    "3.5.2.-").  Preliminary codes like "1.1.1.n5" are rejected: they
    name provisional entries, not positions in the hierarchy.
    """
    cleaned = text.strip()
    if not cleaned:
        raise ECParseError("empty EC string")
    parts = cleaned.split(".")
    if len(parts) > EC_LEVELS:
        raise ECParseError(f"EC code has at most {EC_LEVELS} components: {text!r}")
    levels: list[Optional[int]] = []
    for depth, part in enumerate(parts, start=1):
        part = part.strip()
        if part == UNKNOWN_LEVEL or part == "":
            levels.append(None)
        elif _PRELIMINARY_RE.match(part):
            raise ECParseError(
                f"preliminary EC component {part!r} at level {depth} is not supported"
            )
        elif _INT_RE.match(part):
            levels.append(int(part))
        else:
            raise ECParseError(f"bad EC component {part!r} at level {depth} in {text!r}")
    while len(levels) < EC_LEVELS:
        levels.append(None)
    return ECNumber(tuple(levels))  # type: ignore[arg-type]


def format_ec(ec: ECNumber) -> str:
    """Canonical dotted form, unknown levels rendered as "-"."""
    return ".".join(UNKNOWN_LEVEL if lvl is None else str(lvl) for lvl in ec.levels)


def parse_ec_list(text: str) -> tuple[ECNumber, ...]:
    """Parse a semicolon-separated list of EC codes; blanks yield ()."""
    cleaned = text.strip()
    if not cleaned or cleaned == UNKNOWN_LEVEL:
        return ()
    return tuple(parse_ec(part) for part in cleaned.split(EC_DELIMITER) if part.strip())


def format_ec_list(ecs: Sequence[ECNumber]) -> str:
    return EC_DELIMITER.join(format_ec(ec) for ec in ecs)


def normalize_sequence(seq: str, record_id: str = "?") -> str:
    """Uppercase a sequence and map characters outside the alphabet to X.

    Out-of-alphabet characters are tolerated (logged, not rejected) so
    that a handful of odd residues cannot sink an entire snapshot.
    """
    cleaned = seq.strip().upper()
    if not cleaned:
        raise ValueError(f"record {record_id}: empty sequence")
    if all(ch in AA_INDEX for ch in cleaned):
        return cleaned
    mapped = []
    n_bad = 0
    for ch in cleaned:
        if ch in AA_INDEX:
            mapped.append(ch)
        else:
            mapped.append("X")
            n_bad += 1
    logger.warning("record %s: mapped %d unknown sequence character(s) to X", record_id, n_bad)
    return "".join(mapped)


@dataclass(frozen=True)
class ProteinRecord:
    """One protein entry from a snapshot flat file."""

    id: str
    name: str
    seq: str
    is_enzyme: bool
    ecs: tuple[ECNumber, ...]
    date_integrated: date
    date_sequence_update: date

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("record id must be non-empty")
        if not self.seq:
            raise ValueError(f"record {self.id}: sequence must be non-empty")
        bad = {ch for ch in self.seq if ch not in AA_INDEX}
        if bad:
            raise ValueError(
                f"record {self.id}: sequence characters outside alphabet: {sorted(bad)!r}"
            )
        if self.is_enzyme:
            if not 1 <= len(self.ecs) <= MAX_FUNCTIONS:
                raise ValueError(
                    f"record {self.id}: enzyme needs 1..{MAX_FUNCTIONS} EC numbers, "
                    f"got {len(self.ecs)}"
                )
        elif self.ecs:
            raise ValueError(f"record {self.id}: non-enzyme cannot carry EC numbers")

    @property
    def function_count(self) -> int:
        """Number of EC numbers; 0 for non-enzymes."""
        return len(self.ecs)


class Task(str, Enum):
    """The three annotation tasks, in increasing difficulty."""

    ENZYME = "enzyme-or-not"
    FUNCTION_COUNT = "function-count"
    EC_NUMBER = "ec-number"


class PredictionSource(str, Enum):
    """Which route produced a prediction."""

    ALIGNMENT = "alignment"
    AGENTS = "agents"
    # External tool output loaded through the benchmarking adapter.
    EXTERNAL = "external"


@dataclass(frozen=True)
class Prediction:
    """Final annotation for one query sequence.

    ``is_enzyme`` is None when an external tool abstained on the query;
    the pipeline itself always commits to True or False.  ``ranked_ecs``
    holds (EC, score) pairs sorted by descending score.
    """

    id: str
    is_enzyme: Optional[bool]
    ranked_ecs: tuple[tuple[ECNumber, float], ...]
    source: PredictionSource

    def __post_init__(self) -> None:
        scores = [score for _, score in self.ranked_ecs]
        for score in scores:
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"prediction {self.id}: score {score} outside [0, 1]")
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(f"prediction {self.id}: ranked_ecs must be sorted by score")
        if self.is_enzyme is None and self.ranked_ecs:
            raise ValueError(f"prediction {self.id}: abstention cannot carry EC numbers")

    @property
    def function_count(self) -> int:
        return len(self.ranked_ecs)

    @property
    def ec_set(self) -> frozenset[str]:
        return frozenset(format_ec(ec) for ec, _ in self.ranked_ecs)

    def abstained_on_ec(self) -> bool:
        """True when the producer made no EC-level claim for this query."""
        if self.is_enzyme is None:
            return True
        return bool(self.is_enzyme) and not self.ranked_ecs


class LabelDictionary:
    """Bijection between distinct EC codes and dense integer labels.

    Labels are assigned in lexicographic order of the canonical EC text,
    so the mapping is a pure function of the EC set.
    """

    def __init__(self, ecs: Iterable[ECNumber]):
        texts = sorted({format_ec(ec) for ec in ecs})
        self._label_to_ec: tuple[ECNumber, ...] = tuple(parse_ec(t) for t in texts)
        self._ec_to_label: dict[str, int] = {t: i for i, t in enumerate(texts)}

    def __len__(self) -> int:
        return len(self._label_to_ec)

    def __contains__(self, ec: ECNumber) -> bool:
        return format_ec(ec) in self._ec_to_label

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelDictionary):
            return NotImplemented
        return self._label_to_ec == other._label_to_ec

    def label_of(self, ec: ECNumber) -> int:
        try:
            return self._ec_to_label[format_ec(ec)]
        except KeyError:
            raise KeyError(f"EC {format_ec(ec)} not in label dictionary") from None

    def ec_of(self, label: int) -> ECNumber:
        if not 0 <= label < len(self._label_to_ec):
            raise KeyError(f"label {label} outside 0..{len(self._label_to_ec) - 1}")
        return self._label_to_ec[label]

    def ecs(self) -> Iterator[ECNumber]:
        return iter(self._label_to_ec)

    def save(self, path: str | Path) -> None:
        """Two-column tab-separated text (ec, label), sorted by label."""
        lines = [f"{format_ec(ec)}\t{i}" for i, ec in enumerate(self._label_to_ec)]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LabelDictionary":
        ecs: list[ECNumber] = []
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no + 1}: expected 2 columns, got {len(parts)}")
            ec, label = parse_ec(parts[0]), int(parts[1])
            if label != len(ecs):
                raise ValueError(f"{path}:{line_no + 1}: labels must be dense and sorted")
            ecs.append(ec)
        loaded = cls(ecs)
        if [format_ec(e) for e in loaded._label_to_ec] != [format_ec(e) for e in ecs]:
            raise ValueError(f"{path}: entries are not in canonical lexicographic order")
        return loaded


def build_label_dictionary(records: Iterable[ProteinRecord]) -> LabelDictionary:
    """Collect every EC (complete or not) from the records into a dictionary."""
    return LabelDictionary(ec for rec in records for ec in rec.ecs)
