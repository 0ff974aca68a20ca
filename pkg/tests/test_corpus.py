import csv
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polifilter.corpus import (
    Annotation,
    IngestReport,
    Label12,
    Paragraph,
    Split,
    TierMapping,
    check_paragraph,
    corpus_stats,
    dedupe_annotations,
    default_counts,
    dumps_canonical,
    export_canonical,
    import_opp115,
    label_histogram,
    load_canonical,
    make_annotation,
    natural_key,
    policy_ids,
    select,
    split_by_policy,
    split_from_lists,
    strip_markup,
    atomic_write_text,
)
from polifilter.errors import BadCounts, InputError, IoFailure, MalformedSource, UnmappableLabel


def para(pid, text, *labels, policy=None):
    anns = tuple(make_annotation(text, lab, 0, len(text)) for lab in labels)
    return Paragraph(policy or pid.split("-")[0], pid, text, anns)


# --------------------------------------------------------------------------
# labels and ordering


@pytest.mark.parametrize(
    "text, expected",
    [
        ("First Party Collection/Use", Label12.FirstPartyCollectionUse),
        ("first party collection / use", Label12.FirstPartyCollectionUse),
        ("International & Specific Audience", Label12.InternationalSpecificAudience),
        ("DoNotTrack", Label12.DoNotTrack),
        ("User Access, Edit and Deletion", Label12.UserAccessEditDeletion),
    ],
)
def test_label_parse_accepts_printed_and_member_names(text, expected):
    assert Label12.parse(text) is expected


def test_label_parse_rejects_unknown():
    with pytest.raises(ValueError):
        Label12.parse("Cookies")
    assert Label12.try_parse("Cookies") is None


def test_twelve_labels_with_printed_values():
    assert len(Label12) == 12
    assert str(Label12.PolicyChange) == "Policy Change"


def test_natural_key_orders_numbers_numerically():
    ids = ["p-10", "p-2", "p-1", "q-0", "p-2a"]
    assert sorted(ids, key=natural_key) == ["p-1", "p-2", "p-2a", "p-10", "q-0"]


def test_make_annotation_slices_reason_and_checks_bounds():
    ann = make_annotation("hello world", Label12.DataSecurity, 6, 11)
    assert ann.reason_text == "world"
    for start, end in ((3, 3), (-1, 2), (0, 12), (5, 4)):
        with pytest.raises(InputError):
            make_annotation("hello world", Label12.DataSecurity, start, end)


def test_check_paragraph_detects_drift():
    good = Paragraph("p", "p-0", "abc", (Annotation(Label12.DoNotTrack, 0, 2, "ab"),))
    check_paragraph(good)
    with pytest.raises(InputError):
        check_paragraph(Paragraph("p", "p-0", "abc", (Annotation(Label12.DoNotTrack, 0, 2, "bc"),)))
    with pytest.raises(InputError):
        check_paragraph(Paragraph("p", "p-0", "abc", (Annotation(Label12.DoNotTrack, 1, 9, "bc"),)))


def test_dedupe_keeps_one_per_label_and_span_in_position_order():
    text = "alpha beta gamma"
    a = make_annotation(text, Label12.PolicyChange, 6, 10)
    b = make_annotation(text, Label12.DataSecurity, 0, 5)
    c = make_annotation(text, Label12.DataRetention, 0, 5)
    assert dedupe_annotations([a, b, a, c, b]) == (b, c, a)


# --------------------------------------------------------------------------
# tier mapping


def test_default_mapping_covers_all_practices():
    m = TierMapping.default()
    assert m.lookup("First Party Collection/Use") is Label12.FirstPartyCollectionUse
    assert m.lookup("international and specific audiences") is Label12.InternationalSpecificAudience
    assert m.lookup("Other", ["Introductory/Generic"]) is Label12.IntroductoryGeneric
    assert m.lookup("Other", ["Privacy contact information"]) is Label12.PrivacyContactInformation
    assert m.lookup("Other", ["Practice not covered"]) is Label12.PracticeNotCovered
    assert m.lookup("Other", ["Something else"]) is None
    assert m.lookup("Other") is None
    assert len(m.practices) == 10
    produced = {m.lookup(p) for p in m.practices} | {
        m.lookup("Other", [v]) for v in ("Introductory/Generic", "Privacy contact information", "Practice not covered")
    }
    assert produced - {None} == set(Label12)


def test_mapping_from_csv_and_bad_files(tmp_path):
    good = tmp_path / "m.csv"
    good.write_text("data_practice,data_attribute,label12\nCookies,,Do Not Track\n", encoding="utf-8")
    assert TierMapping.from_csv(good).lookup("cookies") is Label12.DoNotTrack
    bad_header = tmp_path / "h.csv"
    bad_header.write_text("practice,label\nx,y\n", encoding="utf-8")
    with pytest.raises(MalformedSource):
        TierMapping.from_csv(bad_header)
    bad_label = tmp_path / "l.csv"
    bad_label.write_text("data_practice,data_attribute,label12\nCookies,,Biscuits\n", encoding="utf-8")
    with pytest.raises(MalformedSource) as err:
        TierMapping.from_csv(bad_label)
    assert err.value.line == 2


# --------------------------------------------------------------------------
# markup


def test_strip_markup_maps_offsets():
    raw = "<p>A &amp; <b>B</b></p>"
    text, offsets = strip_markup(raw)
    assert text == "A & B"
    assert len(offsets) == len(raw) + 1
    assert offsets[raw.index("A")] == 0
    assert offsets[raw.index("B")] == 4
    assert offsets[-1] == len(text)
    assert offsets == sorted(offsets)


@given(st.text(alphabet="ab<>/&;p ", max_size=40))
def test_strip_markup_offsets_are_monotone(raw):
    text, offsets = strip_markup(raw)
    assert offsets[0] == 0 and offsets[-1] == len(text)
    assert all(x <= y for x, y in zip(offsets, offsets[1:]))


# --------------------------------------------------------------------------
# OPP-115 import


def test_import_synthetic_release(data_dir):
    report = IngestReport()
    paragraphs = import_opp115(data_dir / "opp115_mini", report=report)
    assert policy_ids(paragraphs) == ["100", "107", "114", "121", "128"]
    assert len(paragraphs) == 15
    assert report.policies == 5 and report.segments == 20
    assert report.annotations_read == 40 and report.annotations_kept == 20 and report.duplicates == 20
    assert report.excluded_paragraphs == 5
    for p in paragraphs:
        check_paragraph(p)
        assert "<" not in p.text and "&nbsp;" not in p.text
        assert p.paragraph_id.startswith(p.policy_id + "-")
    assert paragraphs[0].paragraph_id == "100-0"


def test_import_with_workers_is_identical(data_dir):
    one = import_opp115(data_dir / "opp115_mini")
    many = import_opp115(data_dir / "opp115_mini", workers=4)
    assert one == many


def test_import_include_empty_keeps_unannotated(data_dir):
    paragraphs = import_opp115(data_dir / "opp115_mini", include_empty=True)
    assert len(paragraphs) == 20
    assert sum(1 for p in paragraphs if not p.annotations) == 5


def _release(tmp_path, segments, rows):
    """Write a one-policy release; ``rows`` are (segment_id, practice, attrs_dict or raw str)."""
    (tmp_path / "annotations").mkdir()
    (tmp_path / "sanitized_policies").mkdir()
    (tmp_path / "sanitized_policies" / "7_x.com.html").write_text("|||".join(segments), encoding="utf-8")
    with open(tmp_path / "annotations" / "7_x.com.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        for i, (seg, practice, attrs) in enumerate(rows):
            payload = attrs if isinstance(attrs, str) else json.dumps(attrs)
            w.writerow([i, 1, 1, 7, seg, practice, payload, "2015", "http://x.com"])
    return tmp_path


def _attr(text, start, end, value="v"):
    return {"selectedText": text, "startIndexInSegment": start, "endIndexInSegment": end, "value": value}


def test_import_hull_realign_and_whole_segment(tmp_path):
    seg = "<p>We keep logs. We delete them later.</p>"
    rows = [
        (0, "Data Retention", {"a": _attr("keep logs", 6, 15), "b": _attr("delete them", 20, 31)}),
        (0, "Data Security", {"a": _attr("delete them", 0, 5)}),  # wrong offsets, text present
        (0, "Policy Change", {"a": _attr("null", -1, -1)}),  # no span at all
    ]
    report = IngestReport()
    [p] = import_opp115(_release(tmp_path, [seg], rows), report=report)
    by_label = {a.label: a.reason_text for a in p.annotations}
    assert p.text == "We keep logs. We delete them later."
    assert by_label[Label12.DataRetention] == "keep logs. We delete them"
    assert by_label[Label12.DataSecurity] == "delete them"
    assert by_label[Label12.PolicyChange] == p.text
    assert (report.realigned, report.whole_segment) == (1, 1)


def test_import_unmappable_aborts_or_is_skipped(tmp_path):
    rows = [(0, "Cookies", {}), (0, "Other", {"Other Type": _attr("x", 0, 1, "Mystery")}), (0, "Data Security", {})]
    root = _release(tmp_path, ["Some text."], rows)
    with pytest.raises(UnmappableLabel) as err:
        import_opp115(root)
    assert err.value.pairs == [("Cookies", ""), ("Other", "Mystery")]
    report = IngestReport()
    [p] = import_opp115(root, skip_unmappable=True, report=report)
    assert p.gold_labels == {Label12.DataSecurity}
    assert sum(report.unmapped.values()) == 2


@pytest.mark.parametrize(
    "row, message",
    [
        ((0, "Data Security", "{not json"), "bad attribute JSON"),
        (("x", "Data Security", "{}"), "not an integer"),
        ((5, "Data Security", "{}"), "out of range"),
        ((0, "Data Security", "[1]"), "must be an object"),
    ],
)
def test_import_malformed_rows_report_line(tmp_path, row, message):
    root = _release(tmp_path, ["Some text."], [(0, "Data Security", {}), row])
    with pytest.raises(MalformedSource) as err:
        import_opp115(root)
    assert err.value.line == 2
    assert message in str(err.value)


def test_import_missing_pieces(tmp_path):
    with pytest.raises(MalformedSource):
        import_opp115(tmp_path / "nope")
    with pytest.raises(MalformedSource):
        import_opp115(tmp_path)
    root = _release(tmp_path, ["Text."], [(0, "Data Security", {})])
    (root / "sanitized_policies" / "7_x.com.html").unlink()
    with pytest.raises(MalformedSource, match="missing policy text"):
        import_opp115(root)


# --------------------------------------------------------------------------
# splits


def _corpus(n_policies):
    return [para(f"{i}-{j}", f"text {i} {j}", Label12.DoNotTrack, policy=str(i)) for i in range(n_policies) for j in range(2)]


def test_split_is_seeded_and_partitions():
    paragraphs = _corpus(10)
    a = split_by_policy(paragraphs, 3, 8, 2)
    assert a == split_by_policy(list(reversed(paragraphs)), 3, 8, 2)
    assert a.seed == 3
    assert len(a.train_policy_ids) == 8 and not (a.train_policy_ids & a.test_policy_ids)
    assert len(select(paragraphs, a, "train")) + len(select(paragraphs, a, "test")) == 20
    with pytest.raises(BadCounts):
        split_by_policy(paragraphs, 3, 8, 3)
    with pytest.raises(InputError):
        a.side("unknown")


@given(st.integers(1, 30), st.integers(0, 2**32), st.data())
@settings(max_examples=60)
def test_split_partition_property(n, seed, data):
    paragraphs = _corpus(n)
    train = data.draw(st.integers(0, n))
    s = split_by_policy(paragraphs, seed, train, n - train)
    assert s.train_policy_ids | s.test_policy_ids == set(policy_ids(paragraphs))
    assert not s.train_policy_ids & s.test_policy_ids
    assert len(s.train_policy_ids) == train
    assert Split.from_json(json.loads(json.dumps(s.to_json()))) == s


def test_split_from_lists_validates():
    paragraphs = _corpus(3)
    s = split_from_lists(paragraphs, ["0", "1"], ["2"])
    assert s.side("2") == "test"
    with pytest.raises(BadCounts):
        split_from_lists(paragraphs, ["0", "1"], ["1", "2"])
    with pytest.raises(BadCounts):
        split_from_lists(paragraphs, ["0"], ["2"])
    with pytest.raises(BadCounts):
        split_from_lists(paragraphs, ["0", "1", "9"], ["2"])


def test_default_counts():
    assert default_counts(115) == (90, 25)
    assert default_counts(5) == (4, 1)
    assert default_counts(2) == (1, 1)
    assert sum(default_counts(37)) == 37


# --------------------------------------------------------------------------
# statistics


def test_label_histogram_percentages():
    labels = list(Label12)
    paragraphs = [
        para("a-0", "x", labels[0]),
        para("a-1", "x", labels[1]),
        para("a-2", "x", labels[0], labels[1]),
        para("a-3", "x", labels[0], labels[1], labels[2]),
    ]
    assert label_histogram(paragraphs) == {"0": 0.0, "1": 50.0, "2": 25.0, "3+": 25.0}
    assert label_histogram([]) == {"0": 0.0, "1": 0.0, "2": 0.0, "3+": 0.0}


def test_stats_table_counts_and_deviation_block():
    paragraphs = _corpus(115)
    split = split_by_policy(paragraphs, 0, 90, 25)
    table = corpus_stats(paragraphs, split)
    assert (table.train.paragraphs, table.test.paragraphs) == (180, 50)
    assert table.train.support[Label12.DoNotTrack] == 180
    text = table.render()
    assert "train paragraphs: 180 vs 2948" in text
    assert json.loads(json.dumps(table.to_json()))["test"]["policies"] == 25
    small = corpus_stats(_corpus(4), split_by_policy(_corpus(4), 0, 3, 1)).render()
    assert "deviation" not in small


# --------------------------------------------------------------------------
# canonical JSONL


def test_canonical_golden_round_trip(data_dir, tmp_path):
    golden = data_dir / "corpus3.golden.jsonl"
    paragraphs, split = load_canonical(golden)
    assert split == Split(frozenset({"p1"}), frozenset({"p2"}))
    assert paragraphs[2].annotations[1].reason_text == "Café users in the EU have extra rights."
    out = export_canonical(paragraphs, split, tmp_path / "again.jsonl")
    assert out.read_bytes() == golden.read_bytes()


_texts = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=30)


@st.composite
def _paragraphs(draw):
    out = []
    for i in range(draw(st.integers(1, 6))):
        text = draw(_texts)
        anns = []
        for _ in range(draw(st.integers(0, 3))):
            start = draw(st.integers(0, len(text) - 1))
            end = draw(st.integers(start + 1, len(text)))
            anns.append(make_annotation(text, draw(st.sampled_from(list(Label12))), start, end))
        out.append(Paragraph(f"pol{i % 3}", f"pol{i % 3}-{i}", text, dedupe_annotations(anns)))
    return out


@given(_paragraphs(), st.integers(0, 1000))
@settings(max_examples=80, deadline=None)
def test_canonical_round_trip_property(tmp_path_factory, paragraphs, seed):
    rng = random.Random(seed)
    ids = policy_ids(paragraphs)
    train = frozenset(i for i in ids if rng.random() < 0.5)
    split = Split(train, frozenset(ids) - train)
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    text = dumps_canonical(paragraphs, split)
    path.write_text(text, encoding="utf-8")
    again, split2 = load_canonical(path)
    assert dumps_canonical(again, split2) == text
    assert sorted(again, key=lambda p: p.paragraph_id) == sorted(paragraphs, key=lambda p: p.paragraph_id)
    assert (split2.train_policy_ids, split2.test_policy_ids) == (split.train_policy_ids, split.test_policy_ids)


@pytest.mark.parametrize(
    "line2, message",
    [
        ("{not json", "Expecting"),
        ('{"policy_id": "a", "paragraph_id": "a-1", "split": "test", "text": "x", "annotations": []}', "both sides"),
        ('{"policy_id": "b", "paragraph_id": "a-0", "split": "train", "text": "x", "annotations": []}', "duplicate"),
        ('{"policy_id": "b", "paragraph_id": "b-0", "split": "dev", "text": "x", "annotations": []}', "train or test"),
        ('{"policy_id": "b", "paragraph_id": "b-0", "split": "train", "text": "x", '
         '"annotations": [{"label": "Data Security", "span_start": 0, "span_end": 5}]}', "invalid"),
        ('{"policy_id": "b", "paragraph_id": "b-0", "split": "train", "text": "x", '
         '"annotations": [{"label": "Cookies", "span_start": 0, "span_end": 1}]}', "unknown label"),
    ],
)
def test_load_canonical_rejects_bad_lines(tmp_path, line2, message):
    line1 = '{"policy_id": "a", "paragraph_id": "a-0", "split": "train", "text": "x", "annotations": []}'
    path = tmp_path / "c.jsonl"
    path.write_text(line1 + "\n" + line2 + "\n", encoding="utf-8")
    with pytest.raises(MalformedSource) as err:
        load_canonical(path)
    assert err.value.line == 2
    assert message in str(err.value)


def test_atomic_write_reports_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        atomic_write_text(blocker / "child.txt", "data")
    atomic_write_text(tmp_path / "sub" / "ok.txt", "data")
    assert (tmp_path / "sub" / "ok.txt").read_text() == "data"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["ok.txt"]


def test_canonical_survives_unicode_line_separators(tmp_path):
    text = "first second\x85third\x1efourth"
    p = Paragraph("u", "u-0", text, (make_annotation(text, Label12.DoNotTrack, 0, 5),))
    split = Split(frozenset({"u"}), frozenset())
    path = export_canonical([p], split, tmp_path / "c.jsonl")
    again, _ = load_canonical(path)
    assert again == [p]
