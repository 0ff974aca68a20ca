"""OPP-115 ingestion, the 12-class label taxonomy and policy-level splits.

The released OPP-115 layout is::

    <raw_dir>/annotations/<policy_id>_<domain>.csv
    <raw_dir>/sanitized_policies/<policy_id>_<domain>.html

Each sanitized policy holds its paragraphs (segments) separated by ``|||``.
Each annotation CSV row is ``annotation_id, batch_id, annotator_id,
policy_id, segment_id, category, attributes_json, date, url`` where
``attributes_json`` maps attribute names to ``{"selectedText",
"startIndexInSegment", "endIndexInSegment", "value"}``.
"""

from __future__ import annotations

import csv
import html
import io
import json
import os
import random
import re
import tempfile
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import BadCounts, InputError, IoFailure, MalformedSource, UnmappableLabel

SEGMENT_SEPARATOR = "|||"

# Counts reported for the authors' (unpublished) 90/25 split.
REFERENCE_TRAIN_PARAGRAPHS = 2948
REFERENCE_TEST_PARAGRAPHS = 683
REFERENCE_ONE_LABEL_SHARE = 54.5
REFERENCE_POLICIES = 115


class Label12(str, Enum):
    """The twelve target classes; values are the printed class names."""

    FirstPartyCollectionUse = "First Party Collection/Use"
    ThirdPartySharingCollection = "Third Party Sharing/Collection"
    UserChoiceControl = "User Choice/Control"
    UserAccessEditDeletion = "User Access, Edit and Deletion"
    IntroductoryGeneric = "Introductory/Generic"
    PolicyChange = "Policy Change"
    DataSecurity = "Data Security"
    InternationalSpecificAudience = "International & Specific Audience"
    PracticeNotCovered = "Practice Not Covered"
    DataRetention = "Data Retention"
    PrivacyContactInformation = "Privacy Contact Information"
    DoNotTrack = "Do Not Track"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "Label12":
        """Resolve a printed name or member name, ignoring case and punctuation.

        Raises ``ValueError`` for anything else.
        """
        found = _LABEL_LOOKUP.get(_squash(text))
        if found is None:
            raise ValueError(f"unknown label: {text!r}")
        return found

    @classmethod
    def try_parse(cls, text: str) -> Optional["Label12"]:
        return _LABEL_LOOKUP.get(_squash(text))


def _squash(text: str) -> str:
    return re.sub(r"[^0-9a-z]+", "", text.lower())


_LABEL_LOOKUP: Dict[str, Label12] = {}
for _member in Label12:
    _LABEL_LOOKUP[_squash(_member.value)] = _member
    _LABEL_LOOKUP[_squash(_member.name)] = _member

LABEL_ORDER: Dict[Label12, int] = {label: i for i, label in enumerate(Label12)}


def natural_key(value: str) -> Tuple:
    """Sort key that orders embedded integers numerically (``p-2`` < ``p-10``)."""
    parts = re.split(r"(\d+)", value)
    return tuple((0, int(p)) if p.isdigit() else (1, p) for p in parts if p != "")


@dataclass(frozen=True)
class Annotation:
    label: Label12
    span_start: int
    span_end: int
    reason_text: str


@dataclass(frozen=True)
class Paragraph:
    policy_id: str
    paragraph_id: str
    text: str
    annotations: Tuple[Annotation, ...] = ()

    @property
    def gold_labels(self) -> frozenset:
        return frozenset(a.label for a in self.annotations)


def make_annotation(text: str, label: Label12, start: int, end: int) -> Annotation:
    """Build an annotation whose reason text is sliced from ``text``."""
    if not (0 <= start < end <= len(text)):
        raise InputError(f"span [{start}, {end}) invalid for text of length {len(text)}")
    return Annotation(label, start, end, text[start:end])


def check_paragraph(paragraph: Paragraph) -> None:
    for ann in paragraph.annotations:
        if not (0 <= ann.span_start < ann.span_end <= len(paragraph.text)):
            raise InputError(
                f"{paragraph.paragraph_id}: span [{ann.span_start}, {ann.span_end}) out of range"
            )
        if paragraph.text[ann.span_start : ann.span_end] != ann.reason_text:
            raise InputError(f"{paragraph.paragraph_id}: reason text does not match its span")


def dedupe_annotations(annotations: Iterable[Annotation]) -> Tuple[Annotation, ...]:
    """Drop repeated (label, span) pairs and order by position then class."""
    unique = {(a.label, a.span_start, a.span_end): a for a in annotations}
    return tuple(
        sorted(unique.values(), key=lambda a: (a.span_start, a.span_end, LABEL_ORDER[a.label]))
    )


# --------------------------------------------------------------------------
# Tier mapping


class TierMapping:
    """Maps ``(data_practice, data_attribute)`` to a :class:`Label12`.

    An empty attribute is a wildcard for its practice. Practices are
    matched case-insensitively; for ``Other`` the attribute is the value of
    its "Other Type" attribute.
    """

    def __init__(self, rows: Iterable[Tuple[str, str, Label12]]):
        self._exact: Dict[Tuple[str, str], Label12] = {}
        self._wildcard: Dict[str, Label12] = {}
        for practice, attribute, label in rows:
            p, a = practice.strip().lower(), attribute.strip().lower()
            if a:
                self._exact[(p, a)] = label
            else:
                self._wildcard[p] = label

    @classmethod
    def from_csv(cls, path) -> "TierMapping":
        with open(path, encoding="utf-8", newline="") as fh:
            return cls._read(fh, str(path))

    @classmethod
    def default(cls) -> "TierMapping":
        text = resources.files("polifilter").joinpath("data/tier_mapping.csv").read_text("utf-8")
        return cls._read(io.StringIO(text), "tier_mapping.csv")

    @classmethod
    def _read(cls, fh, name: str) -> "TierMapping":
        reader = csv.DictReader(fh)
        expected = {"data_practice", "data_attribute", "label12"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise MalformedSource(name, f"header must be {sorted(expected)}", line=1)
        rows = []
        for row in reader:
            label = Label12.try_parse(row["label12"] or "")
            if label is None:
                raise MalformedSource(name, f"unknown label {row['label12']!r}", line=reader.line_num)
            rows.append((row["data_practice"] or "", row["data_attribute"] or "", label))
        return cls(rows)

    @property
    def practices(self) -> set:
        return set(self._wildcard) | {p for p, _ in self._exact}

    def lookup(self, practice: str, attribute_values: Iterable[str] = ()) -> Optional[Label12]:
        p = practice.strip().lower()
        for value in attribute_values:
            hit = self._exact.get((p, value.strip().lower()))
            if hit is not None:
                return hit
        return self._wildcard.get(p)


# --------------------------------------------------------------------------
# OPP-115 import

_MARKUP = re.compile(r"<[^>]*>|&(?:#\d+|#[xX][0-9a-fA-F]+|[A-Za-z][A-Za-z0-9]*);")


def strip_markup(raw: str) -> Tuple[str, List[int]]:
    """Remove tags and decode entities.

    Returns the clean text and a map from every raw offset (0..len(raw))
    to the corresponding clean offset.
    """
    out: List[str] = []
    offsets = [0] * (len(raw) + 1)
    pos = 0
    size = 0
    for m in _MARKUP.finditer(raw):
        for i in range(pos, m.start()):
            offsets[i] = size
            out.append(raw[i])
            size += 1
        token = m.group(0)
        decoded = "" if token.startswith("<") else html.unescape(token)
        for i in range(m.start(), m.end()):
            offsets[i] = size
        out.append(decoded)
        size += len(decoded)
        pos = m.end()
    for i in range(pos, len(raw)):
        offsets[i] = size
        out.append(raw[i])
        size += 1
    offsets[len(raw)] = size
    return "".join(out), offsets


@dataclass
class IngestReport:
    """Counters for everything ingest could not take verbatim."""

    policies: int = 0
    segments: int = 0
    annotations_read: int = 0
    annotations_kept: int = 0
    duplicates: int = 0
    realigned: int = 0
    whole_segment: int = 0
    misaligned: int = 0
    unmapped: Counter = field(default_factory=Counter)
    excluded_paragraphs: int = 0

    def merge(self, other: "IngestReport") -> None:
        for name in (
            "policies", "segments", "annotations_read", "annotations_kept", "duplicates",
            "realigned", "whole_segment", "misaligned", "excluded_paragraphs",
        ):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.unmapped.update(other.unmapped)


def _policy_files(raw_dir: Path) -> List[Tuple[str, Path, Path]]:
    if not raw_dir.is_dir():
        raise MalformedSource(raw_dir, "not a directory")
    ann_dir = raw_dir / "annotations"
    pol_dir = raw_dir / "sanitized_policies"
    if not ann_dir.is_dir() or not pol_dir.is_dir():
        raise MalformedSource(raw_dir, "expected annotations/ and sanitized_policies/ subdirectories")
    csvs = sorted(ann_dir.glob("*.csv"))
    if not csvs:
        raise MalformedSource(ann_dir, "no annotation files")
    out = []
    for path in csvs:
        policy_html = pol_dir / (path.stem + ".html")
        if not policy_html.is_file():
            raise MalformedSource(path, f"missing policy text {policy_html.name}")
        policy_id = path.stem.split("_", 1)[0]
        out.append((policy_id, path, policy_html))
    return out


def _span_of(attrs: dict, raw_segment: str, clean: str, offsets: List[int], report: IngestReport):
    """Hull of all selected attribute spans, aligned to the clean text."""
    spans = []
    for attr in attrs.values():
        if not isinstance(attr, dict):
            continue
        start = attr.get("startIndexInSegment", -1)
        end = attr.get("endIndexInSegment", -1)
        if not isinstance(start, int) or not isinstance(end, int) or start < 0 or end <= start:
            continue
        selected = strip_markup(str(attr.get("selectedText", "")))[0]
        end = min(end, len(raw_segment))
        if start >= end:
            continue
        s, e = offsets[start], offsets[end]
        if clean[s:e] == selected and s < e:
            spans.append((s, e))
            continue
        # Offsets disagree with the text; re-anchor on the nearest occurrence.
        if selected.strip():
            needle = selected.strip()
            hits = [m.start() for m in re.finditer(re.escape(needle), clean)]
            if hits:
                best = min(hits, key=lambda h: abs(h - s))
                spans.append((best, best + len(needle)))
                report.realigned += 1
                continue
        report.misaligned += 1
    if not spans:
        return None
    return min(s for s, _ in spans), max(e for _, e in spans)


def _read_policy(
    policy_id: str, csv_path: Path, html_path: Path, mapping: TierMapping, include_empty: bool
) -> Tuple[List[Paragraph], IngestReport]:
    report = IngestReport(policies=1)
    try:
        raw_policy = html_path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedSource(html_path, f"unreadable: {exc}") from exc
    raw_segments = raw_policy.split(SEGMENT_SEPARATOR)
    cleaned = [strip_markup(seg) for seg in raw_segments]
    report.segments = len(raw_segments)
    found: Dict[int, List[Annotation]] = {}

    try:
        text = csv_path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedSource(csv_path, f"unreadable: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    for row in reader:
        line = reader.line_num
        if not row or (line == 1 and row[0].strip().lower() == "annotation_id"):
            continue
        if len(row) < 7:
            raise MalformedSource(csv_path, f"expected at least 7 columns, got {len(row)}", line)
        try:
            segment_id = int(row[4])
        except ValueError:
            raise MalformedSource(csv_path, f"segment id {row[4]!r} is not an integer", line) from None
        if not 0 <= segment_id < len(raw_segments):
            raise MalformedSource(csv_path, f"segment id {segment_id} out of range", line)
        try:
            attrs = json.loads(row[6]) if row[6].strip() else {}
        except json.JSONDecodeError as exc:
            raise MalformedSource(csv_path, f"bad attribute JSON: {exc.msg}", line) from None
        if not isinstance(attrs, dict):
            raise MalformedSource(csv_path, "attribute JSON must be an object", line)
        report.annotations_read += 1
        practice = row[5].strip()
        values = [str(a.get("value", "")) for a in attrs.values() if isinstance(a, dict)]
        label = mapping.lookup(practice, values)
        if label is None:
            attr_key = next((v for v in values if v), "") if practice.lower() == "other" else ""
            report.unmapped[(practice, attr_key)] += 1
            continue
        clean, offsets = cleaned[segment_id]
        span = _span_of(attrs, raw_segments[segment_id], clean, offsets, report)
        if span is None:
            if not clean:
                report.misaligned += 1
                continue
            span = (0, len(clean))
            report.whole_segment += 1
        found.setdefault(segment_id, []).append(make_annotation(clean, label, *span))

    paragraphs = []
    for segment_id, (clean, _) in enumerate(cleaned):
        raw_anns = found.get(segment_id, [])
        anns = dedupe_annotations(raw_anns)
        report.duplicates += len(raw_anns) - len(anns)
        report.annotations_kept += len(anns)
        if not anns and not include_empty:
            report.excluded_paragraphs += 1
            continue
        paragraphs.append(Paragraph(policy_id, f"{policy_id}-{segment_id}", clean, anns))
    return paragraphs, report


def import_opp115(
    raw_dir,
    mapping: Optional[TierMapping] = None,
    *,
    skip_unmappable: bool = False,
    include_empty: bool = False,
    workers: int = 1,
    report: Optional[IngestReport] = None,
) -> List[Paragraph]:
    """Read an OPP-115 release directory into paragraphs.

    Paragraphs come out ordered by policy id then document position.
    Practice/attribute pairs missing from ``mapping`` abort the import with
    :class:`UnmappableLabel` unless ``skip_unmappable`` is set; they are
    counted in ``report`` either way.
    """
    mapping = mapping or TierMapping.default()
    files = _policy_files(Path(raw_dir))
    ids = [pid for pid, _, _ in files]
    dupes = sorted({pid for pid in ids if ids.count(pid) > 1})
    if dupes:
        raise MalformedSource(raw_dir, f"duplicate policy ids: {dupes}")

    def work(item):
        return _read_policy(*item, mapping=mapping, include_empty=include_empty)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, files))
    else:
        results = [work(item) for item in files]

    total = report if report is not None else IngestReport()
    paragraphs: List[Paragraph] = []
    for (policy_id, _, _), (paras, rep) in sorted(zip(files, results), key=lambda r: natural_key(r[0][0])):
        total.merge(rep)
        paragraphs.extend(paras)
    if total.unmapped and not skip_unmappable:
        raise UnmappableLabel(total.unmapped.keys())
    return paragraphs


# --------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class Split:
    train_policy_ids: frozenset
    test_policy_ids: frozenset
    seed: Optional[int] = None

    def side(self, policy_id: str) -> str:
        if policy_id in self.train_policy_ids:
            return "train"
        if policy_id in self.test_policy_ids:
            return "test"
        raise InputError(f"policy {policy_id!r} is in neither side of the split")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "train": sorted(self.train_policy_ids, key=natural_key),
            "test": sorted(self.test_policy_ids, key=natural_key),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Split":
        return cls(frozenset(data["train"]), frozenset(data["test"]), data.get("seed"))


def policy_ids(paragraphs: Iterable[Paragraph]) -> List[str]:
    return sorted({p.policy_id for p in paragraphs}, key=natural_key)


def split_by_policy(
    paragraphs: Sequence[Paragraph], seed: int, train_policies: int, test_policies: int
) -> Split:
    """Seeded policy-level split; the same seed always gives the same split."""
    ids = policy_ids(paragraphs)
    if train_policies < 0 or test_policies < 0 or train_policies + test_policies != len(ids):
        raise BadCounts(
            f"train {train_policies} + test {test_policies} != {len(ids)} distinct policies"
        )
    order = list(ids)
    random.Random(seed).shuffle(order)
    return Split(frozenset(order[:train_policies]), frozenset(order[train_policies:]), seed)


def split_from_lists(
    paragraphs: Sequence[Paragraph], train_ids: Iterable[str], test_ids: Iterable[str]
) -> Split:
    """Use an explicit policy assignment, checking that it partitions the corpus."""
    train, test = frozenset(train_ids), frozenset(test_ids)
    ids = set(policy_ids(paragraphs))
    if train & test:
        raise BadCounts(f"policies on both sides: {sorted(train & test, key=natural_key)}")
    if (train | test) != ids:
        missing = sorted(ids - (train | test), key=natural_key)
        extra = sorted((train | test) - ids, key=natural_key)
        raise BadCounts(f"split does not cover the corpus (missing {missing}, unknown {extra})")
    return Split(train, test)


def default_counts(n_policies: int) -> Tuple[int, int]:
    """90/25 for the full corpus, the same proportion otherwise."""
    if n_policies == REFERENCE_POLICIES:
        return 90, 25
    train = round(n_policies * 90 / REFERENCE_POLICIES)
    if n_policies > 1:
        train = min(max(train, 1), n_policies - 1)
    return train, n_policies - train


def select(paragraphs: Iterable[Paragraph], split: Split, side: str) -> List[Paragraph]:
    return [p for p in paragraphs if split.side(p.policy_id) == side]


# --------------------------------------------------------------------------
# Statistics

HISTOGRAM_BUCKETS = ("0", "1", "2", "3+")


@dataclass
class SideStats:
    policies: int
    paragraphs: int
    annotations: int
    support: Dict[Label12, int]
    label_histogram: Dict[str, float]


@dataclass
class StatsTable:
    train: SideStats
    test: SideStats

    @property
    def total_policies(self) -> int:
        return self.train.policies + self.test.policies

    def to_json(self) -> dict:
        def side(s: SideStats) -> dict:
            return {
                "policies": s.policies,
                "paragraphs": s.paragraphs,
                "annotations": s.annotations,
                "support": {label.value: s.support[label] for label in Label12},
                "label_histogram": s.label_histogram,
            }

        return {"train": side(self.train), "test": side(self.test)}

    def render(self) -> str:
        lines = [
            f"policies: {self.total_policies} (train {self.train.policies}, test {self.test.policies})",
            f"paragraphs: train {self.train.paragraphs}, test {self.test.paragraphs}",
            f"annotations: train {self.train.annotations}, test {self.test.annotations}",
            "",
            f"{'Class':<36}{'train':>8}{'test':>8}",
        ]
        for label in Label12:
            lines.append(f"{label.value:<36}{self.train.support[label]:>8}{self.test.support[label]:>8}")
        lines.append("")
        lines.append(f"{'Labels per paragraph':<36}{'train %':>8}{'test %':>8}")
        for bucket in HISTOGRAM_BUCKETS:
            if bucket == "0" and not (self.train.label_histogram["0"] or self.test.label_histogram["0"]):
                continue
            lines.append(
                f"{bucket:<36}{self.train.label_histogram[bucket]:>8.1f}{self.test.label_histogram[bucket]:>8.1f}"
            )
        if self.total_policies == REFERENCE_POLICIES:
            lines.append("")
            lines.append("deviation from the published 90/25 split:")
            for name, ours, ref in (
                ("train paragraphs", self.train.paragraphs, REFERENCE_TRAIN_PARAGRAPHS),
                ("test paragraphs", self.test.paragraphs, REFERENCE_TEST_PARAGRAPHS),
            ):
                lines.append(f"  {name}: {ours} vs {ref} ({100.0 * (ours - ref) / ref:+.1f}%)")
            one = self.train.label_histogram["1"]
            lines.append(
                f"  train 1-label share: {one:.1f}% vs {REFERENCE_ONE_LABEL_SHARE}% "
                f"({one - REFERENCE_ONE_LABEL_SHARE:+.1f} points)"
            )
        return "\n".join(lines) + "\n"


def label_histogram(paragraphs: Sequence[Paragraph]) -> Dict[str, float]:
    """Percentage of paragraphs by number of distinct gold labels."""
    counts = Counter()
    for p in paragraphs:
        n = len(p.gold_labels)
        counts["3+" if n >= 3 else str(n)] += 1
    total = len(paragraphs)
    return {b: (100.0 * counts[b] / total if total else 0.0) for b in HISTOGRAM_BUCKETS}


def _side_stats(paragraphs: Sequence[Paragraph]) -> SideStats:
    support = Counter()
    for p in paragraphs:
        support.update(p.gold_labels)
    return SideStats(
        policies=len({p.policy_id for p in paragraphs}),
        paragraphs=len(paragraphs),
        annotations=sum(len(p.annotations) for p in paragraphs),
        support={label: support[label] for label in Label12},
        label_histogram=label_histogram(paragraphs),
    )


def corpus_stats(paragraphs: Sequence[Paragraph], split: Split) -> StatsTable:
    return StatsTable(
        train=_side_stats(select(paragraphs, split, "train")),
        test=_side_stats(select(paragraphs, split, "test")),
    )


# --------------------------------------------------------------------------
# Canonical JSONL


def atomic_write_text(path, text: str) -> None:
    """Write through a temp file in the target directory, then rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def paragraph_to_json(paragraph: Paragraph, side: str) -> dict:
    return {
        "policy_id": paragraph.policy_id,
        "paragraph_id": paragraph.paragraph_id,
        "split": side,
        "text": paragraph.text,
        "annotations": [
            {"label": a.label.value, "span_start": a.span_start, "span_end": a.span_end}
            for a in paragraph.annotations
        ],
    }


def sort_paragraphs(paragraphs: Iterable[Paragraph]) -> List[Paragraph]:
    return sorted(paragraphs, key=lambda p: (natural_key(p.policy_id), natural_key(p.paragraph_id)))


def dumps_canonical(paragraphs: Iterable[Paragraph], split: Split) -> str:
    lines = [
        json.dumps(paragraph_to_json(p, split.side(p.policy_id)), ensure_ascii=False)
        for p in sort_paragraphs(paragraphs)
    ]
    return "".join(line + "\n" for line in lines)


def export_canonical(paragraphs: Iterable[Paragraph], split: Split, out_path) -> Path:
    atomic_write_text(out_path, dumps_canonical(paragraphs, split))
    return Path(out_path)


def load_canonical(path) -> Tuple[List[Paragraph], Split]:
    """Read a canonical corpus file; the split is rebuilt from its ``split`` fields."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedSource(path, f"unreadable: {exc}") from exc
    paragraphs: List[Paragraph] = []
    sides: Dict[str, str] = {}
    seen = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            text = obj["text"]
            side = obj["split"]
            if side not in ("train", "test"):
                raise ValueError(f"split must be train or test, got {side!r}")
            anns = []
            for a in obj["annotations"]:
                label = Label12.parse(a["label"])
                anns.append(make_annotation(text, label, int(a["span_start"]), int(a["span_end"])))
            para = Paragraph(str(obj["policy_id"]), str(obj["paragraph_id"]), text, tuple(anns))
        except (ValueError, KeyError, TypeError, InputError) as exc:
            raise MalformedSource(path, str(exc), lineno) from None
        if para.paragraph_id in seen:
            raise MalformedSource(path, f"duplicate paragraph id {para.paragraph_id}", lineno)
        if sides.setdefault(para.policy_id, side) != side:
            raise MalformedSource(path, f"policy {para.policy_id} appears on both sides", lineno)
        seen.add(para.paragraph_id)
        paragraphs.append(para)
    split = Split(
        frozenset(k for k, v in sides.items() if v == "train"),
        frozenset(k for k, v in sides.items() if v == "test"),
    )
    return paragraphs, split
