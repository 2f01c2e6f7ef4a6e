"""Confusion-count metrics and task-level evaluation.

The confusion vocabulary has six cells.  Besides the usual four, UP and
UN count gold-positive and gold-negative queries on which a tool made
no call at all; abstentions lower accuracy and recall but never count
against precision.  Metrics with a zero denominator are reported as an
explicit undefined marker (``None``), never silently as zero; macro
averages treat undefined per-class values as zero contributions while
keeping the class in the denominator.

Two macro-F1 flavours are reported side by side because they genuinely
differ: ``m_f1_perclass`` averages per-class F1 scores, while
``m_f1_harmonic`` is the harmonic mean of macro-precision and
macro-recall.  Published comparison tables usually show the per-class
average, which is the smaller of the two on imbalanced label sets.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .core import (
    ECNumber,
    LabelDictionary,
    MAX_FUNCTIONS,
    Prediction,
    PredictionSource,
    ProteinRecord,
    Task,
    format_ec,
    format_ec_list,
    parse_ec_list,
)

UNDEFINED = "undefined"  # rendering of None metric values in reports


@dataclass(frozen=True)
class ConfusionCounts:
    """Six-cell confusion counts; up/un are abstentions on gold +/-."""

    tp: int
    fp: int
    tn: int
    fn: int
    up: int = 0
    un: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "tn", "fn", "up", "un"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn + self.up + self.un

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.tn + other.tn,
            self.fn + other.fn,
            self.up + other.up,
            self.un + other.un,
        )


@dataclass(frozen=True)
class BinaryReport:
    """Point metrics from one set of confusion counts; None = undefined."""

    acc: Optional[float]
    ppv: Optional[float]
    npv: Optional[float]
    recall: Optional[float]
    f1: Optional[float]

    def rows(self) -> list[tuple[str, Optional[float]]]:
        return [
            ("acc", self.acc),
            ("ppv", self.ppv),
            ("npv", self.npv),
            ("recall", self.recall),
            ("f1", self.f1),
        ]


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


def binary_metrics(counts: ConfusionCounts) -> BinaryReport:
    """Accuracy, precision, NPV, recall, F1 from six-cell counts.

    Abstentions land in the denominators of accuracy and recall only.
    """
    acc = _ratio(counts.tp + counts.tn, counts.total)
    ppv = _ratio(counts.tp, counts.tp + counts.fp)
    npv = _ratio(counts.tn, counts.tn + counts.fn)
    recall = _ratio(counts.tp, counts.tp + counts.fn + counts.up)
    if ppv is None or recall is None or ppv + recall == 0:
        f1 = None
    else:
        f1 = 2 * ppv * recall / (ppv + recall)
    return BinaryReport(acc=acc, ppv=ppv, npv=npv, recall=recall, f1=f1)


@dataclass(frozen=True)
class MacroReport:
    """Unweighted averages over per-class binary reports.

    ``n_undefined`` counts (metric, class) pairs whose per-class value
    was undefined and therefore contributed zero to the average.
    """

    classes: tuple[str, ...]
    per_class: Mapping[str, tuple[ConfusionCounts, BinaryReport]]
    m_acc: Optional[float]
    m_ppv: Optional[float]
    m_npv: Optional[float]
    m_recall: Optional[float]
    m_f1_perclass: Optional[float]
    m_f1_harmonic: Optional[float]
    n_undefined: int

    def rows(self) -> list[tuple[str, Optional[float]]]:
        return [
            ("m_acc", self.m_acc),
            ("m_ppv", self.m_ppv),
            ("m_npv", self.m_npv),
            ("m_recall", self.m_recall),
            ("m_f1_perclass", self.m_f1_perclass),
            ("m_f1_harmonic", self.m_f1_harmonic),
        ]


def macro_metrics(per_class: Mapping[str, ConfusionCounts]) -> MacroReport:
    """Average per-class metrics without weighting by class size."""
    classes = tuple(per_class.keys())
    if not classes:
        return MacroReport((), {}, None, None, None, None, None, None, 0)
    detailed = {c: (per_class[c], binary_metrics(per_class[c])) for c in classes}
    sums = {"acc": 0.0, "ppv": 0.0, "npv": 0.0, "recall": 0.0, "f1": 0.0}
    n_undefined = 0
    for _, report in detailed.values():
        for name, value in report.rows():
            if value is None:
                n_undefined += 1
            else:
                sums[name] += value
    k = len(classes)
    m_ppv = sums["ppv"] / k
    m_recall = sums["recall"] / k
    if m_ppv + m_recall == 0:
        harmonic = None
    else:
        harmonic = 2 * m_ppv * m_recall / (m_ppv + m_recall)
    return MacroReport(
        classes=classes,
        per_class=detailed,
        m_acc=sums["acc"] / k,
        m_ppv=m_ppv,
        m_npv=sums["npv"] / k,
        m_recall=m_recall,
        m_f1_perclass=sums["f1"] / k,
        m_f1_harmonic=harmonic,
        n_undefined=n_undefined,
    )


# --------------------------------------------------------------------------
# Task-level evaluation


@dataclass(frozen=True)
class Task1Report:
    counts: ConfusionCounts
    metrics: BinaryReport
    n_records: int

    def rows(self) -> list[tuple[str, object]]:
        c = self.counts
        head: list[tuple[str, object]] = [
            ("task", Task.ENZYME.value),
            ("n_records", self.n_records),
            ("tp", c.tp),
            ("fp", c.fp),
            ("tn", c.tn),
            ("fn", c.fn),
            ("up", c.up),
            ("un", c.un),
        ]
        return head + list(self.metrics.rows())


@dataclass(frozen=True)
class Task2Report:
    macro: MacroReport
    n_records: int

    def rows(self) -> list[tuple[str, object]]:
        head: list[tuple[str, object]] = [
            ("task", Task.FUNCTION_COUNT.value),
            ("n_records", self.n_records),
            ("n_classes", len(self.macro.classes)),
        ]
        return head + list(self.macro.rows())


@dataclass(frozen=True)
class Task3Report:
    macro: MacroReport
    micro_accuracy: Optional[float]
    micro_f1: Optional[float]
    n_included: int
    n_excluded: int

    def rows(self) -> list[tuple[str, object]]:
        head: list[tuple[str, object]] = [
            ("task", Task.EC_NUMBER.value),
            ("n_included", self.n_included),
            ("n_excluded", self.n_excluded),
            ("n_classes", len(self.macro.classes)),
            ("micro_accuracy", self.micro_accuracy),
            ("micro_f1", self.micro_f1),
        ]
        return head + list(self.macro.rows())


TaskReport = Task1Report | Task2Report | Task3Report


def _pair_by_id(
    predictions: Sequence[Prediction], gold: Sequence[ProteinRecord]
) -> list[tuple[Prediction, ProteinRecord]]:
    by_id = {p.id: p for p in predictions}
    if len(by_id) != len(predictions):
        raise ValueError("duplicate prediction ids")
    gold_ids = {g.id for g in gold}
    missing = sorted(gold_ids - by_id.keys())
    extra = sorted(by_id.keys() - gold_ids)
    if missing or extra:
        raise ValueError(
            f"prediction/gold id mismatch: {len(missing)} gold ids without "
            f"predictions (e.g. {missing[:3]}), {len(extra)} predictions "
            f"without gold (e.g. {extra[:3]})"
        )
    return [(by_id[g.id], g) for g in gold]


def _count_of(pred: Prediction) -> Optional[int]:
    """Predicted function count; None when the tool abstained."""
    if pred.is_enzyme is None:
        return None
    if pred.is_enzyme is False:
        return 0
    return pred.function_count


def evaluate_enzyme_task(
    predictions: Sequence[Prediction], gold: Sequence[ProteinRecord]
) -> Task1Report:
    """Binary enzyme-or-not evaluation over all gold records."""
    pairs = _pair_by_id(predictions, gold)
    tp = fp = tn = fn = up = un = 0
    for pred, rec in pairs:
        if pred.is_enzyme is None:
            if rec.is_enzyme:
                up += 1
            else:
                un += 1
        elif pred.is_enzyme and rec.is_enzyme:
            tp += 1
        elif pred.is_enzyme and not rec.is_enzyme:
            fp += 1
        elif not pred.is_enzyme and rec.is_enzyme:
            fn += 1
        else:
            tn += 1
    counts = ConfusionCounts(tp, fp, tn, fn, up, un)
    return Task1Report(counts=counts, metrics=binary_metrics(counts), n_records=len(pairs))


def evaluate_function_count_task(
    predictions: Sequence[Prediction], gold: Sequence[ProteinRecord]
) -> Task2Report:
    """Macro-averaged one-vs-rest evaluation of the function count.

    Scored over gold enzymes only.  A prediction of "non-enzyme" counts
    as claiming zero functions, which is simply wrong for every class;
    an abstention contributes UP/UN cells instead.
    """
    pairs = [(p, g) for p, g in _pair_by_id(predictions, gold) if g.is_enzyme]
    observed: set[int] = set()
    for pred, rec in pairs:
        observed.add(rec.function_count)
        predicted = _count_of(pred)
        if predicted is not None and 1 <= predicted <= MAX_FUNCTIONS:
            observed.add(predicted)
    per_class: dict[str, ConfusionCounts] = {}
    for cls in sorted(observed):
        tp = fp = tn = fn = up = un = 0
        for pred, rec in pairs:
            gold_has = rec.function_count == cls
            predicted = _count_of(pred)
            if predicted is None:
                if gold_has:
                    up += 1
                else:
                    un += 1
            elif predicted == cls and gold_has:
                tp += 1
            elif predicted == cls:
                fp += 1
            elif gold_has:
                fn += 1
            else:
                tn += 1
        per_class[str(cls)] = ConfusionCounts(tp, fp, tn, fn, up, un)
    return Task2Report(macro=macro_metrics(per_class), n_records=len(pairs))


def ec_set_confusion(
    predictions: Sequence[Prediction], gold: Sequence[ProteinRecord]
) -> tuple[int, int, int]:
    """Micro (tp, fp, fn) over (record, EC) pairs with exact 4-level match.

    Abstentions are treated as empty predictions here: every gold EC of
    an abstained record becomes a miss.  Non-enzyme gold records simply
    contribute false positives for any EC claimed on them.
    """
    tp = fp = fn = 0
    for pred, rec in _pair_by_id(predictions, gold):
        gold_set = {format_ec(ec) for ec in rec.ecs}
        pred_set = set() if pred.is_enzyme is None else set(pred.ec_set)
        tp += len(pred_set & gold_set)
        fp += len(pred_set - gold_set)
        fn += len(gold_set - pred_set)
    return tp, fp, fn


def micro_ec_f1(
    predictions: Sequence[Prediction], gold: Sequence[ProteinRecord]
) -> float:
    """Micro-F1 over exact EC matches; 0.0 when nothing is predicted or gold."""
    tp, fp, fn = ec_set_confusion(predictions, gold)
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def evaluate_ec_task(
    predictions: Sequence[Prediction],
    gold: Sequence[ProteinRecord],
    label_dict: LabelDictionary,
) -> Task3Report:
    """EC assignment evaluation over gold enzymes.

    Gold records carrying any EC absent from the training label
    dictionary are excluded up front: no classifier trained on that
    dictionary can ever emit them, so scoring them measures the
    dictionary, not the model.  Micro accuracy requires exact set
    equality of predicted and gold EC sets; the macro table gives
    per-EC credit one class at a time.
    """
    enzyme_gold = [g for g in gold if g.is_enzyme]
    included = [g for g in enzyme_gold if all(ec in label_dict for ec in g.ecs)]
    n_excluded = len(enzyme_gold) - len(included)
    preds_by_id = {p.id: p for p in predictions}
    missing = [g.id for g in included if g.id not in preds_by_id]
    if missing:
        raise ValueError(f"no prediction for gold ids (e.g. {missing[:3]})")
    pairs = [(preds_by_id[g.id], g) for g in included]

    n_correct = 0
    classes: set[str] = set()
    for pred, rec in pairs:
        gold_set = {format_ec(ec) for ec in rec.ecs}
        classes.update(gold_set)
        if not pred.abstained_on_ec():
            classes.update(pred.ec_set)
            if set(pred.ec_set) == gold_set:
                n_correct += 1
    per_class: dict[str, ConfusionCounts] = {}
    for cls in sorted(classes):
        tp = fp = tn = fn = up = un = 0
        for pred, rec in pairs:
            gold_has = any(format_ec(ec) == cls for ec in rec.ecs)
            if pred.abstained_on_ec():
                if gold_has:
                    up += 1
                else:
                    un += 1
                continue
            pred_has = cls in pred.ec_set
            if pred_has and gold_has:
                tp += 1
            elif pred_has:
                fp += 1
            elif gold_has:
                fn += 1
            else:
                tn += 1
        per_class[cls] = ConfusionCounts(tp, fp, tn, fn, up, un)

    included_preds = [p for p, _ in pairs]
    micro_acc = None if not pairs else n_correct / len(pairs)
    micro = micro_ec_f1(included_preds, included) if pairs else None
    return Task3Report(
        macro=macro_metrics(per_class),
        micro_accuracy=micro_acc,
        micro_f1=micro,
        n_included=len(pairs),
        n_excluded=n_excluded,
    )


def evaluate_task(
    predictions: Sequence[Prediction],
    gold: Sequence[ProteinRecord],
    task: Task,
    label_dict: Optional[LabelDictionary] = None,
) -> TaskReport:
    if task is Task.ENZYME:
        return evaluate_enzyme_task(predictions, gold)
    if task is Task.FUNCTION_COUNT:
        return evaluate_function_count_task(predictions, gold)
    if task is Task.EC_NUMBER:
        if label_dict is None:
            raise ValueError("EC-number evaluation needs the training label dictionary")
        return evaluate_ec_task(predictions, gold, label_dict)
    raise ValueError(f"unknown task {task!r}")


# --------------------------------------------------------------------------
# Prediction I/O


_TRUE = {"1", "true", "t", "yes"}
_FALSE = {"0", "false", "f", "no"}
_BLANK = {"", "-", "na", "none"}

PREDICTION_COLUMNS = ("id", "is_enzyme", "function_count", "ecs", "scores", "source")


def prediction_row(pred: Prediction) -> str:
    """One prediction as a canonical six-column tab-separated line."""
    enzyme = "" if pred.is_enzyme is None else ("1" if pred.is_enzyme else "0")
    ecs = format_ec_list([ec for ec, _ in pred.ranked_ecs])
    scores = ";".join(f"{s:.6g}" for _, s in pred.ranked_ecs)
    return "\t".join(
        [pred.id, enzyme, str(pred.function_count), ecs, scores, pred.source.value]
    )


def write_predictions_tsv(predictions: Sequence[Prediction], path: str | Path) -> None:
    """Write predictions in the canonical six-column tab-separated layout."""
    lines = ["\t".join(PREDICTION_COLUMNS)] + [prediction_row(p) for p in predictions]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_enzyme_field(raw: str, where: str) -> Optional[bool]:
    token = raw.strip().lower()
    if token in _BLANK:
        return None
    if token in _TRUE:
        return True
    if token in _FALSE:
        return False
    raise ValueError(f"{where}: cannot interpret enzyme flag {raw!r}")


def load_external_predictions(path: str | Path) -> list[Prediction]:
    """Read tool output as id / enzyme-flag-or-blank / EC-list-or-blank.

    Blank fields are abstentions.  The canonical six-column layout
    written by :func:`write_predictions_tsv` round-trips through this
    reader; minimal three-column files from external tools load the
    same way.  A row listing ECs with a blank enzyme flag implicitly
    claims "enzyme".
    """
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        return []
    start = 0
    header: Optional[list[str]] = None
    first = [c.strip().lower() for c in lines[0].split("\t")]
    if first and first[0] in {"id", "#id"}:
        header = first
        start = 1
    predictions: list[Prediction] = []
    for line_no, line in enumerate(lines[start:], start=start + 1):
        cols = line.split("\t")
        where = f"{path}:{line_no}"
        if header is not None:
            row = dict(zip(header, cols))
            rec_id = row.get("id", "").strip()
            enzyme_raw = row.get("is_enzyme", row.get("isenzyme", ""))
            ec_raw = row.get("ecs", row.get("ec", ""))
            score_raw = row.get("scores", "")
        elif len(cols) >= 4:
            # Headerless canonical layout: id, flag, count, ecs[, scores[, source]].
            rec_id, enzyme_raw, ec_raw = cols[0].strip(), cols[1], cols[3]
            score_raw = cols[4] if len(cols) > 4 else ""
        else:
            rec_id = cols[0].strip()
            enzyme_raw = cols[1] if len(cols) > 1 else ""
            ec_raw = cols[2] if len(cols) > 2 else ""
            score_raw = ""
        if not rec_id:
            raise ValueError(f"{where}: missing id")
        is_enzyme = _parse_enzyme_field(enzyme_raw, where)
        ecs = parse_ec_list(ec_raw) if ec_raw.strip().lower() not in _BLANK else ()
        if ecs and is_enzyme is None:
            is_enzyme = True
        if ecs and is_enzyme is False:
            raise ValueError(f"{where}: row claims non-enzyme but lists EC numbers")
        if ecs:
            if score_raw.strip():
                scores = [float(tok) for tok in score_raw.split(";")]
                if len(scores) != len(ecs):
                    raise ValueError(f"{where}: {len(ecs)} ECs but {len(scores)} scores")
            else:
                scores = [1.0] * len(ecs)
            ranked = sorted(zip(ecs, scores), key=lambda pair: -pair[1])
        else:
            ranked = []
        predictions.append(
            Prediction(
                id=rec_id,
                is_enzyme=is_enzyme,
                ranked_ecs=tuple(ranked),
                source=PredictionSource.EXTERNAL,
            )
        )
    return predictions


# --------------------------------------------------------------------------
# Report rendering


def _fmt(value: object) -> str:
    if value is None:
        return UNDEFINED
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def report_to_tsv(report: TaskReport) -> str:
    lines = [f"{name}\t{_fmt(value)}" for name, value in report.rows()]
    macro = getattr(report, "macro", None)
    if macro is not None:
        lines.append("")
        lines.append("class\ttp\tfp\ttn\tfn\tup\tun\tppv\trecall\tf1")
        for cls in macro.classes:
            counts, rep = macro.per_class[cls]
            lines.append(
                "\t".join(
                    [
                        cls,
                        str(counts.tp),
                        str(counts.fp),
                        str(counts.tn),
                        str(counts.fn),
                        str(counts.up),
                        str(counts.un),
                        _fmt(rep.ppv),
                        _fmt(rep.recall),
                        _fmt(rep.f1),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


def format_report_table(report: TaskReport) -> str:
    """Human-readable two-column table of the headline numbers."""
    rows = report.rows()
    width = max(len(name) for name, _ in rows)
    lines = [f"{name.ljust(width)}  {_fmt(value)}" for name, value in rows]
    return "\n".join(lines)
