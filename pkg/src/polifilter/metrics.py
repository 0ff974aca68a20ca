"""Classification and explainability scoring.

Classification is scored per (paragraph, label): a gold label counts once
per paragraph no matter how many annotations carry it, and a predicted
label counts once no matter how many verdicts produced it.
"""

from __future__ import annotations

import csv
import io
import random
import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .corpus import Annotation, Label12, Paragraph
from .errors import ParagraphTooShort

Counts = Tuple[int, int, int]

BIN_LABELS = ("50 - 100", "10 - 50", "less than 10")


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return _ratio(2 * p * r, p + r)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ClassScore:
    label: Label12
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class AverageScores:
    micro: PRF
    macro: PRF
    weighted: PRF


def class_score(label: Label12, tp: int, fp: int, fn: int) -> ClassScore:
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return ClassScore(label, tp, fp, fn, p, r, _f1(p, r), tp + fn)


def match_predictions(paragraph: Paragraph, predicted_labels: Iterable[Label12]) -> Dict[Label12, Counts]:
    """(tp, fp, fn) for every label that is gold or predicted in this paragraph."""
    gold = set(paragraph.gold_labels)
    pred = set(predicted_labels)
    return {
        label: (int(label in gold and label in pred), int(label in pred and label not in gold),
                int(label in gold and label not in pred))
        for label in gold | pred
    }


def aggregate(
    per_paragraph_counts: Iterable[Mapping[Label12, Counts]],
    labels: Optional[Sequence[Label12]] = None,
) -> Tuple[List[ClassScore], AverageScores]:
    """Per-class scores plus micro, macro and weighted averages.

    ``labels`` fixes the class universe (default: all twelve). Every class
    in it enters the macro mean, including classes never seen.
    """
    universe = list(labels) if labels is not None else list(Label12)
    totals = {label: [0, 0, 0] for label in universe}
    for counts in per_paragraph_counts:
        for label, (tp, fp, fn) in counts.items():
            if label not in totals:
                raise ValueError(f"label {label} outside the scoring universe")
            row = totals[label]
            row[0] += tp
            row[1] += fp
            row[2] += fn
    scores = [class_score(label, *totals[label]) for label in universe]

    tp = sum(s.tp for s in scores)
    fp = sum(s.fp for s in scores)
    fn = sum(s.fn for s in scores)
    micro_p, micro_r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    micro = PRF(micro_p, micro_r, _f1(micro_p, micro_r))

    n = len(scores)
    macro = PRF(
        _ratio(sum(s.precision for s in scores), n),
        _ratio(sum(s.recall for s in scores), n),
        _ratio(sum(s.f1 for s in scores), n),
    )
    support = sum(s.support for s in scores)
    weighted = PRF(
        _ratio(sum(s.precision * s.support for s in scores), support),
        _ratio(sum(s.recall * s.support for s in scores), support),
        _ratio(sum(s.f1 * s.support for s in scores), support),
    )
    return scores, AverageScores(micro, macro, weighted)


def score_label_sets(
    paragraphs: Sequence[Paragraph], predicted: Mapping[str, Iterable[Label12]]
) -> Tuple[List[ClassScore], AverageScores]:
    """Score a mapping of paragraph_id -> predicted labels; absent ids predict nothing."""
    return aggregate(match_predictions(p, predicted.get(p.paragraph_id, ())) for p in paragraphs)


def classification_table(scores: Sequence[ClassScore], averages: AverageScores) -> dict:
    support = sum(s.support for s in scores)

    def prf(x: PRF) -> dict:
        return {"precision": x.precision, "recall": x.recall, "f1": x.f1}

    return {
        "classes": [
            {
                "label": s.label.value, "precision": s.precision, "recall": s.recall, "f1": s.f1,
                "support": s.support, "tp": s.tp, "fp": s.fp, "fn": s.fn,
            }
            for s in scores
        ],
        "averages": {
            "micro": prf(averages.micro),
            "macro": prf(averages.macro),
            "weighted": prf(averages.weighted),
        },
        "support": support,
    }


def render_classification(table: dict) -> str:
    """Text rendering of a :func:`classification_table` in the P/R/F1/Support layout."""
    lines = [f"{'Class':<36}{'P':>6}{'R':>6}{'F1':>6}{'Support':>9}", "-" * 63]
    for row in table["classes"]:
        lines.append(
            f"{row['label']:<36}{row['precision']:>6.2f}{row['recall']:>6.2f}{row['f1']:>6.2f}{row['support']:>9}"
        )
    lines.append("-" * 63)
    for name in ("micro", "macro", "weighted"):
        avg = table["averages"][name]
        title = f"{name.capitalize()} Average"
        lines.append(
            f"{title:<36}{avg['precision']:>6.2f}{avg['recall']:>6.2f}{avg['f1']:>6.2f}{table['support']:>9}"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# String similarity


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over code points, two rolling rows."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def norm_levenshtein(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    return levenshtein(a, b) / longest if longest else 0.0


_WORD = re.compile(r"[^\W_]+")


def words(text: str) -> set:
    """Lowercased alphanumeric runs."""
    return set(_WORD.findall(text.lower()))


def word_overlap(a: str, b: str) -> float:
    """Jaccard similarity of the two word sets; 0 when both are empty."""
    wa, wb = words(a), words(b)
    union = wa | wb
    return len(wa & wb) / len(union) if union else 0.0


# --------------------------------------------------------------------------
# Explainability


@dataclass(frozen=True)
class ExplainabilityRecord:
    paragraph_id: str
    gold_len: int
    reason_len: int
    norm_levenshtein: float
    overlap: float


def explain(paragraph_id: str, gold: str, reason: str) -> ExplainabilityRecord:
    return ExplainabilityRecord(
        paragraph_id, len(gold), len(reason), norm_levenshtein(gold, reason), word_overlap(gold, reason)
    )


def pair_reasons(paragraph: Paragraph, verdicts, accepted_only: bool = True) -> List[Tuple[Annotation, str]]:
    """Pair each verdict with the same-label gold annotation it overlaps most.

    ``verdicts`` may be pipeline verdicts or any objects exposing ``label``,
    ``reason`` and ``accepted``. Verdicts whose label has no gold annotation
    are skipped. Ties go to the earliest annotation.
    """
    pairs = []
    for v in verdicts:
        if accepted_only and not v.accepted:
            continue
        candidates = [a for a in paragraph.annotations if a.label == v.label]
        if not candidates:
            continue
        # max() keeps the first of equal maxima
        best = max(candidates, key=lambda a: word_overlap(a.reason_text, v.reason))
        pairs.append((best, v.reason))
    return pairs


@dataclass(frozen=True)
class OverlapBins:
    high: float
    mid: float
    low: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.high, self.mid, self.low)

    def rounded(self) -> Tuple[float, float, float]:
        return tuple(round(x, 1) for x in self.as_tuple())


def overlap_bin(overlap: float) -> int:
    """0 for [0.5, 1], 1 for [0.1, 0.5), 2 for [0, 0.1)."""
    if overlap >= 0.5:
        return 0
    if overlap >= 0.1:
        return 1
    return 2


def overlap_bins(records: Iterable) -> OverlapBins:
    """Percentage of records per overlap bin. Accepts records or bare floats."""
    counts = [0, 0, 0]
    for r in records:
        value = r.overlap if isinstance(r, ExplainabilityRecord) else float(r)
        counts[overlap_bin(value)] += 1
    total = sum(counts)
    if not total:
        return OverlapBins(0.0, 0.0, 0.0)
    return OverlapBins(*(100.0 * c / total for c in counts))


def render_overlap_table(columns: Mapping[str, OverlapBins]) -> str:
    """Overlap-percentage table, one column per method, one decimal."""
    names = list(columns)
    width = max([len(n) for n in names] + [8]) + 2
    lines = [f"{'Overlap (%)':<14}" + "".join(f"{n:>{width}}" for n in names)]
    for i, row in enumerate(BIN_LABELS):
        cells = "".join(f"{columns[n].as_tuple()[i]:>{width}.1f}" for n in names)
        lines.append(f"{row:<14}{cells}")
    return "\n".join(lines) + "\n"


SCATTER_HEADER = ("paragraph_id", "gold_len", "reason_len", "norm_levenshtein", "overlap")


def scatter_csv(records: Sequence[ExplainabilityRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCATTER_HEADER)
    for r in records:
        writer.writerow([r.paragraph_id, r.gold_len, r.reason_len, repr(r.norm_levenshtein), repr(r.overlap)])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Random-reason baseline


def length_ratios(paragraphs: Iterable[Paragraph]) -> List[float]:
    """Annotation length over paragraph length, one entry per gold annotation."""
    return [
        (a.span_end - a.span_start) / len(p.text)
        for p in paragraphs
        for a in p.annotations
        if p.text
    ]


def random_reason_baseline(
    paragraph: Paragraph, length_ratio_distribution: Sequence[float], seed
) -> Tuple[int, int]:
    """Sample a contiguous span whose length ratio follows the empirical distribution.

    The ratio is drawn uniformly from ``length_ratio_distribution``; the
    span length is ``round(ratio * len(text))`` clamped to at least one
    character, and its start is uniform over valid positions. ``seed`` is
    anything :class:`random.Random` accepts, or a ``Random`` instance.
    """
    if not length_ratio_distribution:
        raise ValueError("empty length-ratio distribution")
    n = len(paragraph.text)
    if n == 0:
        raise ParagraphTooShort(f"{paragraph.paragraph_id}: empty paragraph")
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    ratio = min(max(rng.choice(list(length_ratio_distribution)), 0.0), 1.0)
    length = min(max(round(ratio * n), 1), n)
    start = rng.randint(0, n - length)
    return start, start + length
