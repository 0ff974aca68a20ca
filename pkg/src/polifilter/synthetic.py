"""Synthetic corpora and scripted mock backends for offline runs.

Sentences are built from per-class word pools. Classes come in confusable
pairs that share five of their six core words, so a lexical check that
sees only the label cannot tell the partners apart, while a refill written
for the wrong partner diverges from the reason.

:func:`scripted_fixture` simulates an explained classifier with a set
fraction of wrong labels and hallucinated reasons, and a blank filler that
mostly regenerates correct reasons and mostly fails for wrong labels.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .corpus import Label12, Paragraph, Split, atomic_write_text, export_canonical, make_annotation
from .llm_gateway import (
    MASK_TOKEN,
    MockBackend,
    Role,
    build_classifier_prompt,
    build_filler_prompt,
    format_pairs,
    script_record,
)

L = Label12

# (class, partner, five shared core words, own core word, partner core word)
_PAIRS = [
    (L.FirstPartyCollectionUse, L.ThirdPartySharingCollection,
     ["personal", "information", "collect", "account", "services"], "internally", "partners"),
    (L.UserChoiceControl, L.UserAccessEditDeletion,
     ["choose", "options", "preferences", "settings", "control"], "optout", "delete"),
    (L.IntroductoryGeneric, L.PracticeNotCovered,
     ["policy", "notice", "describes", "general", "website"], "welcome", "miscellaneous"),
    (L.PolicyChange, L.DataRetention,
     ["period", "time", "date", "days", "notify"], "amend", "retain"),
    (L.DataSecurity, L.DoNotTrack,
     ["browser", "signals", "technical", "measures", "protect"], "encryption", "track"),
    (L.InternationalSpecificAudience, L.PrivacyContactInformation,
     ["residents", "contact", "children", "email", "address"], "european", "questions"),
]

CORE: Dict[Label12, List[str]] = {}
PARTNER: Dict[Label12, Label12] = {}
for _a, _b, _shared, _own_a, _own_b in _PAIRS:
    CORE[_a] = _shared + [_own_a]
    CORE[_b] = _shared + [_own_b]
    PARTNER[_a], PARTNER[_b] = _b, _a

EXTRAS: Dict[Label12, List[str]] = {
    L.FirstPartyCollectionUse: ["analytics", "improve", "device", "usage", "location", "logs"],
    L.ThirdPartySharingCollection: ["advertisers", "affiliates", "vendors", "disclose", "sell", "sponsors"],
    L.UserChoiceControl: ["consent", "unsubscribe", "newsletter", "decline", "withdraw", "marketing"],
    L.UserAccessEditDeletion: ["edit", "review", "correct", "profile", "erase", "request"],
    L.IntroductoryGeneric: ["thank", "visiting", "overview", "read", "carefully", "terms"],
    L.PolicyChange: ["revised", "changes", "posted", "effective", "latest", "version"],
    L.DataSecurity: ["ssl", "firewalls", "safeguards", "unauthorized", "breach", "secure"],
    L.InternationalSpecificAudience: ["california", "gdpr", "minors", "under", "thirteen", "parents"],
    L.PracticeNotCovered: ["links", "external", "sites", "responsible", "content", "practices"],
    L.DataRetention: ["stored", "archive", "backups", "duration", "necessary", "deleted"],
    L.PrivacyContactInformation: ["write", "officer", "phone", "mailing", "inquiries", "reach"],
    L.DoNotTrack: ["dnt", "respond", "standard", "header", "industry", "recognize"],
}

NEUTRAL = [
    "please", "note", "this", "section", "also", "applies", "where", "relevant", "below",
    "following", "each", "case", "further", "details", "provided", "here", "above", "generally",
]

# Never used in paragraph text; substituted in to make a reason hallucinated.
FOREIGN = ["zeppelin", "quasar", "tundra", "marmalade", "origami", "saxophone", "glacier", "pelican"]

FULL_STOP = "."


def render(words: Sequence[str]) -> str:
    text = " ".join(words)
    return text[:1].upper() + text[1:] + FULL_STOP


def class_sentence(label: Label12, rng: random.Random) -> List[str]:
    words = list(CORE[label])
    for extra in rng.sample(EXTRAS[label], 2):
        words.insert(rng.randint(0, len(words)), extra)
    return words


def neutral_sentence(rng: random.Random) -> List[str]:
    return rng.sample(NEUTRAL, 5)


def prototype(label: Label12) -> str:
    """The filler's answer when it sees only the label."""
    return render(CORE[label])


@dataclass
class Sentence:
    words: List[str]
    label: Optional[Label12]

    @property
    def text(self) -> str:
        return render(self.words)


@dataclass
class SyntheticParagraph:
    paragraph: Paragraph
    sentences: List[Sentence]


def _label_count(rng: random.Random) -> int:
    u = rng.random()
    return 1 if u < 0.55 else 2 if u < 0.87 else 3


def synthetic_paragraphs(n: int, seed: int, policy_size: int = 8) -> List[SyntheticParagraph]:
    """``n`` paragraphs with 1-3 gold classes each, grouped ``policy_size`` per policy."""
    rng = random.Random(seed)
    labels = list(Label12)
    out = []
    for i in range(n):
        chosen = rng.sample(labels, _label_count(rng))
        sentences = [Sentence(class_sentence(lab, rng), lab) for lab in chosen]
        if rng.random() < 0.6:
            sentences.append(Sentence(neutral_sentence(rng), None))
        rng.shuffle(sentences)
        text = ""
        anns = []
        for s in sentences:
            if text:
                text += " "
            start = len(text)
            text += s.text
            if s.label is not None:
                anns.append(make_annotation(text, s.label, start, len(text)))
        policy = f"s{i // policy_size:03d}"
        pid = f"{policy}-{i % policy_size}"
        out.append(SyntheticParagraph(Paragraph(policy, pid, text, tuple(anns)), sentences))
    return out


@dataclass
class ErrorModel:
    """Rates that drive the scripted classifier and filler."""

    wrong_label_rate: float = 0.4
    hallucination_rate: float = 0.3
    partner_rate: float = 0.5
    filler_drift_rate: float = 0.15
    filler_fooled_rate: float = 0.1


@dataclass
class _Pair:
    paragraph: int
    label: Label12
    sentence: Sentence
    hallucinated: bool = False
    reason: str = ""


@dataclass
class ScriptedFixture:
    paragraphs: List[Paragraph]
    records: List[dict]
    stats: Dict[str, float] = field(default_factory=dict)

    def backend(self) -> MockBackend:
        backend = MockBackend()
        for r in self.records:
            backend.script[(r["match"]["role"], r["match"]["prompt_sha256"])] = r["completion"]
        return backend

    def write(self, directory, side: str = "test") -> Tuple[Path, Path]:
        """Write ``corpus.jsonl`` (every paragraph on ``side``) and ``mock_script.jsonl``."""
        directory = Path(directory)
        ids = frozenset(p.policy_id for p in self.paragraphs)
        split = Split(frozenset(), ids) if side == "test" else Split(ids, frozenset())
        corpus = export_canonical(self.paragraphs, split, directory / "corpus.jsonl")
        script = directory / "mock_script.jsonl"
        atomic_write_text(script, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in self.records))
        return corpus, script


def _paraphrase(words: Sequence[str], rng: random.Random) -> str:
    """Swap one word for a neutral one: word-set Jaccard 7/9 for an 8-word sentence."""
    kept = list(words)
    kept.pop(rng.randrange(len(kept)))
    kept.insert(rng.randint(0, len(kept)), rng.choice(NEUTRAL))
    return render(kept)


def _hallucinate(words: Sequence[str], rng: random.Random) -> str:
    changed = list(words)
    changed[rng.randrange(len(changed))] = rng.choice(FOREIGN)
    return render(changed)


def scripted_fixture(n_paragraphs: int = 200, seed: int = 0, errors: Optional[ErrorModel] = None) -> ScriptedFixture:
    """Paragraphs plus a mock script covering every prompt the pipeline will send.

    The wrong-label and hallucination rates are realized exactly (rounded)
    over the emitted pairs.
    """
    errors = errors or ErrorModel()
    rng = random.Random(seed)
    synth = synthetic_paragraphs(n_paragraphs, seed)

    pairs: List[_Pair] = []
    for i, sp in enumerate(synth):
        for s in sp.sentences:
            if s.label is not None:
                pairs.append(_Pair(i, s.label, s))
    n_gold = len(pairs)
    r = errors.wrong_label_rate
    n_wrong = round(n_gold * r / (1 - r)) if r < 1 else 0
    for _ in range(n_wrong):
        # only paragraphs with at least one class left over can host a wrong label
        while True:
            i = rng.randrange(len(synth))
            gold = synth[i].paragraph.gold_labels
            if len(gold) < len(Label12):
                break
        sentence = rng.choice(synth[i].sentences)
        options = [lab for lab in Label12 if lab not in gold]
        partner = PARTNER.get(sentence.label) if sentence.label else None
        if partner in options and rng.random() < errors.partner_rate:
            wrong = partner
        else:
            wrong = rng.choice(options)
        pairs.append(_Pair(i, wrong, sentence))
    for idx in rng.sample(range(len(pairs)), round(errors.hallucination_rate * len(pairs))):
        pairs[idx].hallucinated = True
    for p in pairs:
        p.reason = _hallucinate(p.sentence.words, rng) if p.hallucinated else p.sentence.text

    by_paragraph: Dict[int, List[_Pair]] = {}
    for p in pairs:
        by_paragraph.setdefault(p.paragraph, []).append(p)

    records = []
    seen = set()

    def add(role: Role, prompt: str, completion: str) -> None:
        rec = script_record(role, prompt, completion)
        key = (rec["match"]["role"], rec["match"]["prompt_sha256"])
        if key not in seen:
            seen.add(key)
            records.append(rec)

    for label in Label12:
        add(Role.BlankFiller, build_filler_prompt(MASK_TOKEN, label), prototype(label))

    stats = {"gold_pairs": n_gold, "wrong_pairs": n_wrong, "pairs": len(pairs),
             "hallucinated": sum(p.hallucinated for p in pairs)}
    for i, sp in enumerate(synth):
        mine = by_paragraph.get(i, [])
        rng.shuffle(mine)
        para = sp.paragraph
        add(Role.ExplainedClassifier, build_classifier_prompt(para), format_pairs((p.label, p.reason) for p in mine))
        for p in mine:
            if p.hallucinated:
                continue
            start = para.text.find(p.reason)
            masked = para.text[:start] + MASK_TOKEN + para.text[start + len(p.reason):]
            correct = p.label == p.sentence.label
            if correct:
                fill = render(neutral_sentence(rng)) if rng.random() < errors.filler_drift_rate else _paraphrase(p.sentence.words, rng)
            else:
                fill = _paraphrase(p.sentence.words, rng) if rng.random() < errors.filler_fooled_rate else render(class_sentence(p.label, rng))
            add(Role.BlankFiller, build_filler_prompt(masked, p.label), fill)
    stats["wrong_label_rate"] = n_wrong / len(pairs) if pairs else 0.0
    stats["hallucination_rate"] = stats["hallucinated"] / len(pairs) if pairs else 0.0
    return ScriptedFixture([sp.paragraph for sp in synth], records, stats)


# --------------------------------------------------------------------------
# OPP-115 release layout

PRACTICE_OF: Dict[Label12, Tuple[str, Optional[str]]] = {
    L.FirstPartyCollectionUse: ("First Party Collection/Use", None),
    L.ThirdPartySharingCollection: ("Third Party Sharing/Collection", None),
    L.UserChoiceControl: ("User Choice/Control", None),
    L.UserAccessEditDeletion: ("User Access, Edit and Deletion", None),
    L.DataRetention: ("Data Retention", None),
    L.DataSecurity: ("Data Security", None),
    L.PolicyChange: ("Policy Change", None),
    L.DoNotTrack: ("Do Not Track", None),
    L.InternationalSpecificAudience: ("International and Specific Audiences", None),
    L.IntroductoryGeneric: ("Other", "Introductory/Generic"),
    L.PrivacyContactInformation: ("Other", "Privacy contact information"),
    L.PracticeNotCovered: ("Other", "Practice not covered"),
}


def _markup(words: List[str], rng: random.Random) -> str:
    """Render a sentence with occasional tags and entities."""
    out = []
    words = list(words)
    words[0] = words[0][:1].upper() + words[0][1:]
    for w in words:
        u = rng.random()
        if u < 0.1:
            out.append(f"<strong>{w}</strong>")
        elif u < 0.15:
            out.append(f"{w}&nbsp;&amp;")
        else:
            out.append(w)
    return " ".join(out) + FULL_STOP


def write_synthetic_opp115(out_dir, n_policies: int = 5, seed: int = 0, segments_per_policy: int = 4) -> Path:
    """Write a small corpus in the OPP-115 release layout.

    Every sentence is annotated by two annotators (so ingest sees
    duplicates); one segment per policy carries no annotation.
    """
    rng = random.Random(seed)
    out_dir = Path(out_dir)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    (out_dir / "sanitized_policies").mkdir(parents=True, exist_ok=True)
    ann_id = 1000
    for k in range(n_policies):
        policy_id = str(100 + 7 * k)
        stem = f"{policy_id}_example{k}.com"
        raw_segments = []
        rows = []
        for seg in range(segments_per_policy):
            if seg == segments_per_policy - 1:
                raw_segments.append("<p>" + _markup(neutral_sentence(rng), rng) + "</p>")
                continue
            chosen = rng.sample(list(Label12), _label_count(rng))
            raw = "<p>"
            spans = []
            for lab in chosen:
                if raw != "<p>":
                    raw += " "
                start = len(raw)
                raw += _markup(class_sentence(lab, rng), rng)
                spans.append((lab, start, len(raw)))
            raw += "</p>"
            raw_segments.append(raw)
            for lab, start, end in spans:
                practice, other = PRACTICE_OF[lab]
                selected = raw[start:end]
                if other is None:
                    attrs = {
                        "Purpose": {"selectedText": selected, "startIndexInSegment": start,
                                    "endIndexInSegment": end, "value": "Unspecified"},
                        "Does/Does Not": {"selectedText": "null", "startIndexInSegment": -1,
                                          "endIndexInSegment": -1, "value": "Does"},
                    }
                else:
                    attrs = {"Other Type": {"selectedText": selected, "startIndexInSegment": start,
                                            "endIndexInSegment": end, "value": other}}
                for annotator in (1, 2):
                    ann_id += 1
                    rows.append([ann_id, 10, annotator, policy_id, seg, practice,
                                 json.dumps(attrs), "2015-01-01", f"http://example{k}.com/privacy"])
        (out_dir / "sanitized_policies" / f"{stem}.html").write_text("|||".join(raw_segments), encoding="utf-8")
        with open(out_dir / "annotations" / f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    return out_dir
