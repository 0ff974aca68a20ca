"""
Scoring labels and reasons
==========================

Every gold (paragraph, label) annotation is one data point. A prediction
earns credit per label, and the generated reason is compared with the
expert's highlighted span by edit distance and by word overlap.
"""

from polifilter import Label12, Paragraph, make_annotation
from polifilter.metrics import (
    explain,
    norm_levenshtein,
    overlap_bins,
    render_overlap_table,
    score_label_sets,
    word_overlap,
)

text = "We share your location with advertisers. You may opt out in settings."
share = make_annotation(text, Label12.ThirdPartySharingCollection, 0, 40)
optout = make_annotation(text, Label12.UserChoiceControl, 41, len(text))
para = Paragraph("demo", "demo-0", text, (share, optout))

# one correct label, one missed, one extra
predicted = {"demo-0": [Label12.ThirdPartySharingCollection, Label12.DataSecurity]}
scores, averages = score_label_sets([para], predicted)
for s in scores:
    if s.support or s.fp:
        print(f"{s.label.value:<32} tp={s.tp} fp={s.fp} fn={s.fn} f1={s.f1:.2f}")
print("micro F1 %.3f, macro F1 %.3f" % (averages.micro.f1, averages.macro.f1))

# explainability: the model quoted only part of the gold span
reason = "share your location with advertisers"
print()
print("normalised Levenshtein", round(norm_levenshtein(share.reason_text, reason), 3))
print("word overlap", round(word_overlap(share.reason_text, reason), 3))

# binning many records gives the overlap table
records = [explain("demo-0", share.reason_text, r) for r in (reason, "location", "cookies are small files")]
print()
print(render_overlap_table({"demo": overlap_bins(records)}))
