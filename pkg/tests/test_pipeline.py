import json

import httpx
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from polifilter.corpus import Label12, Paragraph, make_annotation
from polifilter.errors import AuthFailure, BackendUnavailable, InvalidSpan, ScriptMiss
from polifilter.llm_gateway import (
    MASK_TOKEN,
    Gateway,
    MockBackend,
    ReasonedPrediction,
    Role,
    build_classifier_prompt,
    build_filler_prompt,
    format_pairs,
)
from polifilter.pipeline import (
    ABLATION_CONFIGS,
    LexicalBaseline,
    PipelineConfig,
    RefillMode,
    RemoteScorer,
    VerifierInput,
    build_entailment_dataset,
    classify_paragraph,
    entailment_balance,
    hallucination_filter,
    infer,
    load_predictions,
    locate_reason,
    mask_reason,
    normalize,
    predicted_labels,
    run_inference,
    write_entailment_jsonl,
)
from polifilter.errors import MalformedSource

L = Label12
TEXT = "We collect your Email  Address. We never sell data to Advertisers."
PARA = Paragraph("p", "p-0", TEXT, (make_annotation(TEXT, L.FirstPartyCollectionUse, 0, 31),))


# --------------------------------------------------------------------------
# hallucination filter


def test_locate_reason_ignores_case_and_whitespace():
    span = locate_reason(TEXT, "email address")
    assert TEXT[span[0]:span[1]] == "Email  Address"
    assert locate_reason(TEXT, "  WE NEVER\nsell ") == (32, 45)
    assert locate_reason(TEXT, "email addresses") is None
    assert locate_reason(TEXT, "   ") is None


def test_filter_keeps_excerpts_and_drops_inventions():
    pairs = [(L.FirstPartyCollectionUse, "collect your email address"), (L.ThirdPartySharingCollection, "we sell data"),
             (L.ThirdPartySharingCollection, "sell data to advertisers")]
    kept, dropped = hallucination_filter(PARA, pairs)
    assert [k.reason for k in kept] == ["collect your email address", "sell data to advertisers"]
    assert kept[0].excerpt == "collect your Email  Address"
    assert dropped == [pairs[1]]


@given(st.text(alphabet="abAB \n\t.", min_size=1, max_size=40), st.data())
@settings(max_examples=200)
def test_filter_soundness_and_completeness(text, data):
    i = data.draw(st.integers(0, len(text) - 1))
    j = data.draw(st.integers(i + 1, len(text)))
    piece = text[i:j]
    assume(piece.strip())
    span = locate_reason(text, piece)
    # every real excerpt is found
    assert span is not None
    # and what is found is the reason, up to case and whitespace
    assert normalize(text[span[0]:span[1]]) == normalize(piece).strip()
    # masking then putting the excerpt back restores the paragraph
    kept, _ = hallucination_filter(Paragraph("p", "p-0", text), [(L.DoNotTrack, piece)])
    assert mask_reason(text, kept[0].span).replace(MASK_TOKEN, kept[0].excerpt, 1) == text


@given(st.text(alphabet="abc ", max_size=20), st.text(alphabet="xyz", min_size=1, max_size=5))
def test_filter_drops_text_that_is_absent(text, foreign):
    para = Paragraph("p", "p-0", text or "a")
    kept, dropped = hallucination_filter(para, [(L.DoNotTrack, foreign)])
    assert not kept and len(dropped) == 1


# --------------------------------------------------------------------------
# masking and verifier input


def test_mask_reason():
    assert mask_reason("abc def", (4, 7)) == f"abc {MASK_TOKEN}"
    for span in ((3, 3), (-1, 2), (0, 8)):
        with pytest.raises(InvalidSpan):
            mask_reason("abc def", span)


def test_verifier_input_encoding_and_validation():
    item = VerifierInput(L.DataSecurity, "we encrypt", "we hash")
    assert item.encoded == "Data Security [SEP] we encrypt [SEP] we hash"
    with pytest.raises(ValueError):
        VerifierInput(L.DataSecurity, "  ", "x")
    with pytest.raises(ValueError):
        VerifierInput(L.DataSecurity, "a [SEP] b", "x")


def test_lexical_baseline_is_word_jaccard():
    assert LexicalBaseline().score(VerifierInput(L.DataSecurity, "a b c", "b c d")) == 0.5


def test_remote_scorer_contract():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json={"score": 0.25})

    scorer = RemoteScorer("http://scorer.test/score", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    item = VerifierInput(L.DataSecurity, "r", "f")
    assert scorer.score(item) == 0.25
    assert seen == [{"text": "Data Security [SEP] r [SEP] f"}]


@pytest.mark.parametrize(
    "responses, error",
    [
        ([httpx.Response(200, json={"score": 1.5})], BackendUnavailable),
        ([httpx.Response(200, json={"p": 1})], BackendUnavailable),
        ([httpx.Response(401)], AuthFailure),
        ([httpx.Response(500)] * 3, BackendUnavailable),
    ],
)
def test_remote_scorer_failures(responses, error):
    it = iter(responses)
    scorer = RemoteScorer("http://scorer.test", max_retries=2, transport=httpx.MockTransport(lambda r: next(it)),
                          sleep=lambda s: None)
    with pytest.raises(error):
        scorer.score(VerifierInput(L.DataSecurity, "r", "f"))


def test_remote_scorer_retries_transient_errors():
    it = iter([httpx.Response(503), httpx.Response(200, json={"score": 0.9})])
    scorer = RemoteScorer("http://scorer.test", transport=httpx.MockTransport(lambda r: next(it)), sleep=lambda s: None)
    assert scorer.score(VerifierInput(L.DataSecurity, "r", "f")) == 0.9


# --------------------------------------------------------------------------
# orchestration


def scripted(paragraph, pairs, refills):
    """Backend answering the classifier with ``pairs`` and the filler per label from ``refills``."""
    backend = MockBackend()
    backend.add(Role.ExplainedClassifier, build_classifier_prompt(paragraph), format_pairs(pairs))
    for label, reason in pairs:
        span = locate_reason(paragraph.text, reason)
        if span is None:
            continue
        masked = mask_reason(paragraph.text, span)
        backend.add(Role.BlankFiller, build_filler_prompt(masked, label), refills[label])
        backend.add(Role.BlankFiller, build_filler_prompt(MASK_TOKEN, label), refills[label])
    return backend


PAIRS = [
    (L.FirstPartyCollectionUse, "we collect your email address"),
    (L.ThirdPartySharingCollection, "never sell data to advertisers"),
    (L.DataRetention, "we keep logs forever"),
]
REFILLS = {
    L.FirstPartyCollectionUse: "we collect your email",
    L.ThirdPartySharingCollection: "",
    L.DataRetention: "unused",
}


def test_classify_paragraph_end_to_end():
    gw = Gateway(scripted(PARA, PAIRS, REFILLS), None)
    verdicts = classify_paragraph(PARA, gw, LexicalBaseline(), threshold=0.5)
    assert [v.label for v in verdicts] == [L.FirstPartyCollectionUse, L.ThirdPartySharingCollection]
    first, second = verdicts
    assert first.score == pytest.approx(4 / 5) and first.accepted
    assert first.refill.refill_text == "we collect your email"
    assert TEXT[first.reason_span[0]:first.reason_span[1]] == "We collect your Email  Address"
    # an empty refill scores zero
    assert second.refill is None and second.score == 0.0 and not second.accepted
    assert predicted_labels(verdicts) == {L.FirstPartyCollectionUse}
    record = first.to_json()
    assert set(record) == {"paragraph_id", "label", "reason", "reason_span", "refill", "score", "accepted"}


def test_refill_mode_none_accepts_every_kept_pair():
    gw = Gateway(scripted(PARA, PAIRS, REFILLS), None)
    verdicts = classify_paragraph(PARA, gw, None, mode=RefillMode.NONE)
    assert [(v.score, v.accepted, v.refill) for v in verdicts] == [(1.0, True, None)] * 2
    assert gw.backend_calls == 1


def test_label_only_mode_sends_masked_paragraph():
    backend = scripted(PARA, PAIRS[:1], REFILLS)
    gw = Gateway(backend, None)
    classify_paragraph(PARA, gw, LexicalBaseline(), mode="label-only")
    sent = {k for k in backend.script}
    assert len(sent) == 3 and gw.backend_calls == 2


@given(st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_acceptance_is_monotone_in_threshold(t1, t2):
    lo, hi = sorted((t1, t2))
    gw = Gateway(scripted(PARA, PAIRS, REFILLS), None)
    loose = predicted_labels(classify_paragraph(PARA, gw, LexicalBaseline(), threshold=lo))
    strict = predicted_labels(classify_paragraph(PARA, gw, LexicalBaseline(), threshold=hi))
    assert strict <= loose


def test_duplicate_labels_collapse_for_scoring():
    pairs = [(L.FirstPartyCollectionUse, "we collect your email address"),
             (L.FirstPartyCollectionUse, "your email address")]
    refills = {L.FirstPartyCollectionUse: "we collect your email address"}
    gw = Gateway(scripted(PARA, pairs, refills), None)
    verdicts = classify_paragraph(PARA, gw, LexicalBaseline(), threshold=0.5)
    assert len(verdicts) == 2 and all(v.accepted for v in verdicts)
    assert predicted_labels(verdicts) == {L.FirstPartyCollectionUse}


def test_script_miss_propagates():
    with pytest.raises(ScriptMiss):
        classify_paragraph(PARA, Gateway(MockBackend(), None), LexicalBaseline())


def test_pipeline_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(threshold=1.5)
    with pytest.raises(ValueError):
        PipelineConfig(refill_mode="sometimes")
    assert PipelineConfig(refill_mode="none").refill_mode is RefillMode.NONE
    assert [m for _, m in ABLATION_CONFIGS] == [RefillMode.NONE, RefillMode.LABEL_ONLY, RefillMode.CONTEXT]


def _many():
    paragraphs, backend = [], MockBackend()
    for i in (10, 2, 1):
        text = f"Policy {i} says we collect data."
        p = Paragraph("q", f"q-{i}", text, (make_annotation(text, L.FirstPartyCollectionUse, 0, len(text)),))
        paragraphs.append(p)
        backend.add(Role.ExplainedClassifier, build_classifier_prompt(p),
                    format_pairs([(L.FirstPartyCollectionUse, "we collect data"), (L.DoNotTrack, "invented")])
                    + "garbage line\n")
        masked = mask_reason(text, locate_reason(text, "we collect data"))
        backend.add(Role.BlankFiller, build_filler_prompt(masked, L.FirstPartyCollectionUse), "we collect data")
    return paragraphs, backend


def test_infer_orders_by_paragraph_id_and_summarises(tmp_path):
    paragraphs, backend = _many()
    traces, summary = infer(paragraphs, Gateway(backend, None), LexicalBaseline(), PipelineConfig(concurrency=3))
    assert [t.paragraph_id for t in traces] == ["q-1", "q-2", "q-10"]
    s = summary.to_json()
    assert (s["paragraphs"], s["generated_pairs"], s["parse_dropped"], s["hallucinated"]) == (3, 6, 3, 3)
    assert (s["verdicts"], s["accepted"], s["acceptance_rate"], s["backend_calls"]) == (3, 3, 1.0, 6)

    out = tmp_path / "pred.jsonl"
    run_inference(paragraphs, Gateway(backend, None), LexicalBaseline(), None, out)
    records = load_predictions(out)
    assert [r.paragraph_id for r in records] == ["q-1", "q-2", "q-10"]
    assert all(r.accepted and r.score == 1.0 for r in records)


def test_load_predictions_reports_bad_line(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"paragraph_id": "a"}\n', encoding="utf-8")
    with pytest.raises(MalformedSource) as err:
        load_predictions(path)
    assert err.value.line == 1


# --------------------------------------------------------------------------
# entailment dataset


def test_entailment_examples_label_by_gold_membership(tmp_path):
    refills = dict(REFILLS, **{L.ThirdPartySharingCollection: "share data with partners"})
    gw = Gateway(scripted(PARA, PAIRS, refills), None)
    examples = build_entailment_dataset([PARA], gw)
    assert [(e.label, e.entailment) for e in examples] == [
        (L.FirstPartyCollectionUse, 1), (L.ThirdPartySharingCollection, 0)]
    assert [e.gold_reason_overlap for e in examples] == [1.0, 0.0]
    assert entailment_balance(examples) == {"examples": 2, "entailment": 1, "contradiction": 1}
    path = tmp_path / "e.jsonl"
    write_entailment_jsonl(examples, path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows[0]["encoded"] == ("First Party Collection/Use [SEP] we collect your email address "
                                  "[SEP] we collect your email")


def test_entailment_skips_empty_refills():
    gw = Gateway(scripted(PARA, PAIRS, REFILLS), None)
    examples = build_entailment_dataset([PARA], gw)
    assert [e.label for e in examples] == [L.FirstPartyCollectionUse]


@given(st.sets(st.sampled_from(list(L)), min_size=1, max_size=4), st.lists(st.sampled_from(list(L)), min_size=1,
                                                                           max_size=5, unique=True))
@settings(max_examples=100, deadline=None)
def test_entailment_bit_property(gold, predicted):
    text = "Alpha beta gamma delta."
    para = Paragraph("h", "h-0", text, tuple(make_annotation(text, lab, 0, 5) for lab in sorted(gold)))
    pairs = [(lab, "beta gamma") for lab in predicted]
    gw = Gateway(scripted(para, pairs, {lab: "refill" for lab in predicted}), None)
    examples = build_entailment_dataset([para], gw)
    assert [e.label for e in examples] == predicted
    assert all(e.entailment == int(e.label in gold) for e in examples)


def test_reasoned_prediction_pairs_pass_through_filter():
    pred = ReasonedPrediction("p-0", L.DataSecurity, "nothing like this")
    kept, dropped = hallucination_filter(PARA, [pred])
    assert dropped == [pred] and not kept
