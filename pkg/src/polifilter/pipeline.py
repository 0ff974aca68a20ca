"""Three-stage verified classification and the verifier training set.

Stage 1 asks the explained classifier for (label, reason) pairs and keeps
only reasons that occur in the paragraph. Stage 2 masks each kept reason
and asks the blank filler to regenerate it for the predicted label. Stage 3
scores the (label, reason, refill) triple with a verifier and accepts the
pair when the score reaches the threshold.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import httpx

from .corpus import Label12, Paragraph, atomic_write_text, natural_key
from .errors import (
    AuthFailure,
    BackendUnavailable,
    EmptyGeneration,
    InvalidSpan,
    MalformedSource,
)
from .llm_gateway import MASK_TOKEN, Gateway, ReasonedPrediction, Refill
from .metrics import score_label_sets, word_overlap

log = logging.getLogger(__name__)

SEP = " [SEP] "
DEFAULT_THRESHOLD = 0.5


# --------------------------------------------------------------------------
# Stage 1: hallucination filter


def _normalize_with_map(text: str) -> Tuple[str, List[int]]:
    """Lowercase and collapse whitespace runs; map each output char to its source index."""
    out: List[str] = []
    where: List[int] = []
    in_space = False
    for i, ch in enumerate(text):
        if ch.isspace():
            if not in_space:
                out.append(" ")
                where.append(i)
            in_space = True
            continue
        in_space = False
        for low in ch.lower():
            out.append(low)
            where.append(i)
    return "".join(out), where


def normalize(text: str) -> str:
    return _normalize_with_map(text)[0]


def locate_reason(text: str, reason: str) -> Optional[Tuple[int, int]]:
    """Span of the first normalized occurrence of ``reason`` in ``text``."""
    needle = normalize(reason).strip()
    if not needle:
        return None
    hay, where = _normalize_with_map(text)
    k = hay.find(needle)
    if k < 0:
        return None
    return where[k], where[k + len(needle) - 1] + 1


@dataclass(frozen=True)
class KeptPair:
    label: Label12
    reason: str
    span: Tuple[int, int]
    excerpt: str
    prediction: Optional[ReasonedPrediction] = None


def _label_reason(item) -> Tuple[Label12, str]:
    if isinstance(item, ReasonedPrediction):
        return item.label, item.reason
    label, reason = item
    return Label12(label), reason


def hallucination_filter(paragraph: Paragraph, pairs: Iterable) -> Tuple[List[KeptPair], list]:
    """Split pairs into those whose reason occurs in the paragraph and the rest.

    Matching ignores case and collapses whitespace runs. ``pairs`` holds
    ``(label, reason)`` tuples or :class:`ReasonedPrediction` objects; the
    dropped list returns them unchanged.
    """
    kept: List[KeptPair] = []
    dropped = []
    for item in pairs:
        label, reason = _label_reason(item)
        span = locate_reason(paragraph.text, reason)
        if span is None:
            dropped.append(item)
            continue
        prediction = item if isinstance(item, ReasonedPrediction) else None
        kept.append(KeptPair(label, reason, span, paragraph.text[span[0] : span[1]], prediction))
    return kept, dropped


# --------------------------------------------------------------------------
# Stage 2: masking


def mask_reason(paragraph_text: str, reason_span: Tuple[int, int]) -> str:
    start, end = reason_span
    if not (0 <= start < end <= len(paragraph_text)):
        raise InvalidSpan(f"span [{start}, {end}) invalid for text of length {len(paragraph_text)}")
    return paragraph_text[:start] + MASK_TOKEN + paragraph_text[end:]


# --------------------------------------------------------------------------
# Stage 3: verification


@dataclass(frozen=True)
class VerifierInput:
    label: Label12
    reason: str
    refill: str

    def __post_init__(self):
        object.__setattr__(self, "label", Label12(self.label))
        for name in ("reason", "refill"):
            value = getattr(self, name)
            if not value.strip():
                raise ValueError(f"verifier {name} must be non-empty")
            if SEP.strip() in value:
                raise ValueError(f"verifier {name} contains the separator token")

    @property
    def encoded(self) -> str:
        return SEP.join((self.label.value, self.reason, self.refill))


@dataclass(frozen=True)
class EntailmentExample:
    paragraph_id: str
    label: Label12
    reason: str
    refill: str
    entailment: int
    gold_reason_overlap: float

    @property
    def encoded(self) -> str:
        return VerifierInput(self.label, self.reason, self.refill).encoded

    def to_json(self) -> dict:
        return {
            "paragraph_id": self.paragraph_id,
            "label": self.label.value,
            "reason": self.reason,
            "refill": self.refill,
            "encoded": self.encoded,
            "entailment": self.entailment,
            "gold_reason_overlap": self.gold_reason_overlap,
        }


class Verifier:
    """Scores a triple with the probability that it is an entailment."""

    def score(self, item: VerifierInput) -> float:  # pragma: no cover
        raise NotImplementedError


class LexicalBaseline(Verifier):
    """Word-set Jaccard similarity between reason and refill."""

    def score(self, item: VerifierInput) -> float:
        return word_overlap(item.reason, item.refill)


class RemoteScorer(Verifier):
    """Client for a scoring service: ``POST {"text": encoded}`` -> ``{"score": p}``."""

    def __init__(
        self,
        url: str,
        *,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        api_key: Optional[str] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.calls = 0
        self._lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def score(self, item: VerifierInput) -> float:
        with self._lock:
            self.calls += 1
        last = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.url, json={"text": item.encoded})
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise AuthFailure(f"{self.url} rejected credentials (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"{self.url} answered HTTP {resp.status_code}")
            try:
                value = float(resp.json()["score"])
            except (ValueError, KeyError, TypeError) as exc:
                raise BackendUnavailable(f"malformed scorer payload: {exc}") from None
            if not 0.0 <= value <= 1.0:
                raise BackendUnavailable(f"scorer returned {value}, outside [0, 1]")
            return value
        raise BackendUnavailable(f"{self.url} unavailable after {self.max_retries + 1} attempts ({last})")


def verify(item: VerifierInput, verifier: Verifier) -> float:
    return verifier.score(item)


# --------------------------------------------------------------------------
# Orchestration


class RefillMode(str, Enum):
    """What the blank filler sees.

    ``none`` skips stages 2 and 3; ``label-only`` masks the whole paragraph
    so the refill depends on the label alone; ``context`` masks just the
    reason.
    """

    NONE = "none"
    LABEL_ONLY = "label-only"
    CONTEXT = "context"


@dataclass(frozen=True)
class Verdict:
    prediction: ReasonedPrediction
    refill: Optional[Refill]
    score: float
    accepted: bool
    threshold: float
    reason_span: Tuple[int, int]

    @property
    def paragraph_id(self) -> str:
        return self.prediction.paragraph_id

    @property
    def label(self) -> Label12:
        return self.prediction.label

    @property
    def reason(self) -> str:
        return self.prediction.reason

    def to_json(self) -> dict:
        return {
            "paragraph_id": self.paragraph_id,
            "label": self.label.value,
            "reason": self.reason,
            "reason_span": list(self.reason_span),
            "refill": self.refill.refill_text if self.refill else "",
            "score": self.score,
            "accepted": self.accepted,
        }


@dataclass
class PipelineConfig:
    threshold: float = DEFAULT_THRESHOLD
    refill_mode: RefillMode = RefillMode.CONTEXT
    concurrency: int = 4

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        self.refill_mode = RefillMode(self.refill_mode)


@dataclass
class ParagraphTrace:
    paragraph_id: str
    predictions: List[ReasonedPrediction]
    parse_dropped: int
    kept: List[KeptPair]
    hallucinated: List[ReasonedPrediction]
    verdicts: List[Verdict] = field(default_factory=list)
    empty_refills: int = 0


def stage1(paragraph: Paragraph, gateway: Gateway) -> ParagraphTrace:
    predictions, dropped = gateway.explain(paragraph)
    kept, hallucinated = hallucination_filter(paragraph, predictions)
    return ParagraphTrace(paragraph.paragraph_id, predictions, dropped, kept, hallucinated)


def masked_input(paragraph: Paragraph, pair: KeptPair, mode: RefillMode) -> str:
    if mode is RefillMode.LABEL_ONLY:
        return MASK_TOKEN
    return mask_reason(paragraph.text, pair.span)


def judge(
    paragraph: Paragraph,
    trace: ParagraphTrace,
    gateway: Gateway,
    verifier: Optional[Verifier],
    threshold: float,
    mode: RefillMode,
) -> List[Verdict]:
    """Stages 2 and 3 over the kept pairs of ``trace``."""
    verdicts = []
    empty = 0
    for pair in trace.kept:
        pred = pair.prediction or ReasonedPrediction(paragraph.paragraph_id, pair.label, pair.reason)
        if mode is RefillMode.NONE:
            verdicts.append(Verdict(pred, None, 1.0, True, threshold, pair.span))
            continue
        try:
            refill = gateway.refill(paragraph.paragraph_id, masked_input(paragraph, pair, mode), pair.label)
        except EmptyGeneration:
            empty += 1
            verdicts.append(Verdict(pred, None, 0.0, 0.0 >= threshold, threshold, pair.span))
            continue
        score = verify(VerifierInput(pair.label, pair.reason, refill.refill_text), verifier)
        verdicts.append(Verdict(pred, refill, score, score >= threshold, threshold, pair.span))
    trace.empty_refills += empty
    return verdicts


def run_paragraph(
    paragraph: Paragraph,
    gateway: Gateway,
    verifier: Optional[Verifier],
    threshold: float = DEFAULT_THRESHOLD,
    mode: RefillMode = RefillMode.CONTEXT,
) -> ParagraphTrace:
    trace = stage1(paragraph, gateway)
    trace.verdicts = judge(paragraph, trace, gateway, verifier, threshold, RefillMode(mode))
    return trace


def classify_paragraph(
    paragraph: Paragraph,
    gateway: Gateway,
    verifier: Optional[Verifier],
    threshold: float = DEFAULT_THRESHOLD,
    mode: RefillMode = RefillMode.CONTEXT,
) -> List[Verdict]:
    """All verdicts for one paragraph, accepted or not, in generation order."""
    return run_paragraph(paragraph, gateway, verifier, threshold, mode).verdicts


def predicted_labels(verdicts: Iterable[Verdict]) -> frozenset:
    return frozenset(v.label for v in verdicts if v.accepted)


def _map_ordered(fn, paragraphs: Sequence[Paragraph], workers: int) -> list:
    """Apply ``fn`` to every paragraph; results come back in paragraph_id order."""
    ordered = sorted(paragraphs, key=lambda p: natural_key(p.paragraph_id))
    if workers > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, ordered))
    return [fn(p) for p in ordered]


# --------------------------------------------------------------------------
# Phase 2: entailment dataset


def gold_reason_overlap(paragraph: Paragraph, reason: str) -> float:
    return max((word_overlap(reason, a.reason_text) for a in paragraph.annotations), default=0.0)


def build_entailment_dataset(
    train_paragraphs: Sequence[Paragraph], gateway: Gateway, config: Optional[PipelineConfig] = None
) -> List[EntailmentExample]:
    """Label every kept pair by whether its class is among the paragraph's gold labels.

    Refills always use the masked paragraph context. Order follows
    paragraph_id, then generation order. Interrupted runs resume through
    the gateway cache.
    """
    config = config or PipelineConfig()

    def one(paragraph: Paragraph) -> List[EntailmentExample]:
        trace = stage1(paragraph, gateway)
        gold = paragraph.gold_labels
        out = []
        for pair in trace.kept:
            try:
                refill = gateway.refill(paragraph.paragraph_id, mask_reason(paragraph.text, pair.span), pair.label)
            except EmptyGeneration:
                log.info("%s: empty refill for %s, no example", paragraph.paragraph_id, pair.label.value)
                continue
            out.append(
                EntailmentExample(
                    paragraph.paragraph_id,
                    pair.label,
                    pair.reason,
                    refill.refill_text,
                    int(pair.label in gold),
                    gold_reason_overlap(paragraph, pair.reason),
                )
            )
        return out

    per_paragraph = _map_ordered(one, train_paragraphs, config.concurrency)
    return [ex for batch in per_paragraph for ex in batch]


def entailment_balance(examples: Sequence[EntailmentExample]) -> Dict[str, int]:
    positives = sum(ex.entailment for ex in examples)
    return {"examples": len(examples), "entailment": positives, "contradiction": len(examples) - positives}


def dumps_jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)


def write_entailment_jsonl(examples: Iterable[EntailmentExample], path) -> None:
    atomic_write_text(path, dumps_jsonl(ex.to_json() for ex in examples))


# --------------------------------------------------------------------------
# Phase 3: inference


@dataclass
class RunSummary:
    paragraphs: int = 0
    generated_pairs: int = 0
    parse_dropped: int = 0
    hallucinated: int = 0
    verdicts: int = 0
    accepted: int = 0
    empty_refills: int = 0
    backend_calls: int = 0
    cache_hits: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.verdicts if self.verdicts else 0.0

    def to_json(self) -> dict:
        return {
            "paragraphs": self.paragraphs,
            "generated_pairs": self.generated_pairs,
            "parse_dropped": self.parse_dropped,
            "hallucinated": self.hallucinated,
            "verdicts": self.verdicts,
            "accepted": self.accepted,
            "acceptance_rate": self.acceptance_rate,
            "empty_refills": self.empty_refills,
            "backend_calls": self.backend_calls,
            "cache_hits": self.cache_hits,
        }


def infer(
    test_paragraphs: Sequence[Paragraph],
    gateway: Gateway,
    verifier: Optional[Verifier],
    config: Optional[PipelineConfig] = None,
) -> Tuple[List[ParagraphTrace], RunSummary]:
    config = config or PipelineConfig()
    calls0, hits0 = gateway.backend_calls, gateway.cache_hits
    traces = _map_ordered(
        lambda p: run_paragraph(p, gateway, verifier, config.threshold, config.refill_mode),
        test_paragraphs,
        config.concurrency,
    )
    summary = RunSummary(paragraphs=len(traces))
    for t in traces:
        summary.generated_pairs += len(t.predictions)
        summary.parse_dropped += t.parse_dropped
        summary.hallucinated += len(t.hallucinated)
        summary.verdicts += len(t.verdicts)
        summary.accepted += sum(v.accepted for v in t.verdicts)
        summary.empty_refills += t.empty_refills
    summary.backend_calls = gateway.backend_calls - calls0
    summary.cache_hits = gateway.cache_hits - hits0
    return traces, summary


def run_inference(
    test_paragraphs: Sequence[Paragraph],
    gateway: Gateway,
    verifier: Optional[Verifier],
    config: Optional[PipelineConfig],
    out_path,
) -> RunSummary:
    """Classify every paragraph and write one predictions line per verdict."""
    traces, summary = infer(test_paragraphs, gateway, verifier, config)
    atomic_write_text(out_path, dumps_jsonl(v.to_json() for t in traces for v in t.verdicts))
    return summary


@dataclass(frozen=True)
class PredictionRecord:
    paragraph_id: str
    label: Label12
    reason: str
    reason_span: Tuple[int, int]
    refill: str
    score: float
    accepted: bool


def load_predictions(path) -> List[PredictionRecord]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedSource(path, f"unreadable: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            span = obj["reason_span"]
            records.append(
                PredictionRecord(
                    str(obj["paragraph_id"]),
                    Label12.parse(obj["label"]),
                    str(obj["reason"]),
                    (int(span[0]), int(span[1])),
                    str(obj.get("refill", "")),
                    float(obj["score"]),
                    bool(obj["accepted"]),
                )
            )
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            raise MalformedSource(path, f"bad prediction line: {exc}", lineno) from None
    return records


# --------------------------------------------------------------------------
# Ablation

ABLATION_CONFIGS = (
    ("Explained classifier only", RefillMode.NONE),
    ("Explained classifier + entailment verifier", RefillMode.LABEL_ONLY),
    ("Full pipeline", RefillMode.CONTEXT),
)


def ablation_study(
    paragraphs: Sequence[Paragraph],
    gateway: Gateway,
    verifier: Verifier,
    threshold: float = DEFAULT_THRESHOLD,
    concurrency: int = 4,
):
    """Macro scores with stages progressively enabled.

    Stage 1 runs once per paragraph; the three configurations differ only
    in what the blank filler is shown (nothing, the label alone, or the
    masked paragraph). Returns ``{name: (class_scores, averages)}``.
    """
    def one(paragraph: Paragraph):
        trace = stage1(paragraph, gateway)
        return paragraph.paragraph_id, {
            name: predicted_labels(judge(paragraph, trace, gateway, verifier, threshold, mode))
            for name, mode in ABLATION_CONFIGS
        }

    results = dict(_map_ordered(one, paragraphs, concurrency))
    return {
        name: score_label_sets(paragraphs, {pid: labels[name] for pid, labels in results.items()})
        for name, _ in ABLATION_CONFIGS
    }
