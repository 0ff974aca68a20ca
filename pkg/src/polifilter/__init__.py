"""Entailment-filtered, explained classification of privacy-policy paragraphs."""

__version__ = "0.1.0"

from .corpus import (
    Annotation,
    Label12,
    Paragraph,
    Split,
    TierMapping,
    corpus_stats,
    export_canonical,
    import_opp115,
    load_canonical,
    make_annotation,
    split_by_policy,
)
from .llm_gateway import (
    Gateway,
    GenerationRequest,
    MockBackend,
    OpenAIChatBackend,
    ReasonedPrediction,
    Refill,
    ResponseCache,
    Role,
    build_classifier_prompt,
    build_filler_prompt,
    generate,
    parse_classifier_output,
    parse_filler_output,
)
from .metrics import (
    aggregate,
    levenshtein,
    match_predictions,
    norm_levenshtein,
    overlap_bins,
    pair_reasons,
    random_reason_baseline,
    word_overlap,
)
from .pipeline import (
    LexicalBaseline,
    PipelineConfig,
    RefillMode,
    RemoteScorer,
    Verdict,
    VerifierInput,
    ablation_study,
    build_entailment_dataset,
    classify_paragraph,
    hallucination_filter,
    infer,
    mask_reason,
    run_inference,
    verify,
)
from .synthetic import scripted_fixture

__all__ = [
    "Annotation",
    "Label12",
    "Paragraph",
    "Split",
    "TierMapping",
    "corpus_stats",
    "export_canonical",
    "import_opp115",
    "load_canonical",
    "make_annotation",
    "split_by_policy",
    "Gateway",
    "GenerationRequest",
    "MockBackend",
    "OpenAIChatBackend",
    "ReasonedPrediction",
    "Refill",
    "ResponseCache",
    "Role",
    "build_classifier_prompt",
    "build_filler_prompt",
    "generate",
    "parse_classifier_output",
    "parse_filler_output",
    "aggregate",
    "levenshtein",
    "match_predictions",
    "norm_levenshtein",
    "overlap_bins",
    "pair_reasons",
    "random_reason_baseline",
    "word_overlap",
    "LexicalBaseline",
    "PipelineConfig",
    "RefillMode",
    "RemoteScorer",
    "Verdict",
    "VerifierInput",
    "ablation_study",
    "build_entailment_dataset",
    "classify_paragraph",
    "hallucination_filter",
    "infer",
    "mask_reason",
    "run_inference",
    "verify",
    "scripted_fixture",
]
