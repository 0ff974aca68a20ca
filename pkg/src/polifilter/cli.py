"""``polifilter`` command line.

Settings come from an optional ``key=value`` file (``--config``) and are
overridden by flags. Exit codes: 0 success, 2 bad input, 3 service failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .corpus import (
    IngestReport,
    TierMapping,
    atomic_write_text,
    corpus_stats,
    default_counts,
    dumps_canonical,
    import_opp115,
    load_canonical,
    natural_key,
    policy_ids,
    select,
    split_by_policy,
    split_from_lists,
)
from .errors import ConfigError, PolifilterError, UnknownParagraph
from .llm_gateway import Gateway, MockBackend, OpenAIChatBackend, ResponseCache
from .metrics import (
    aggregate,
    classification_table,
    explain,
    length_ratios,
    match_predictions,
    overlap_bins,
    pair_reasons,
    random_reason_baseline,
    render_classification,
    render_overlap_table,
    scatter_csv,
    OverlapBins,
    BIN_LABELS,
)
from .pipeline import (
    LexicalBaseline,
    PipelineConfig,
    RefillMode,
    RemoteScorer,
    build_entailment_dataset,
    dumps_jsonl,
    entailment_balance,
    infer,
    load_predictions,
)

log = logging.getLogger("polifilter")


@dataclass
class RunConfig:
    raw_dir: Optional[str] = None
    corpus: Optional[str] = None
    tier_mapping: Optional[str] = None
    seed: int = 0
    train_policies: Optional[int] = None
    test_policies: Optional[int] = None
    train_list: Optional[str] = None
    test_list: Optional[str] = None
    skip_unmappable: bool = False
    include_empty: bool = False
    endpoint: Optional[str] = None
    model: str = "default"
    mock_script: Optional[str] = None
    max_retries: int = 3
    timeout: float = 60.0
    verifier: str = "lexical"
    scorer_url: Optional[str] = None
    threshold: float = 0.5
    refill_mode: str = "context"
    max_new_tokens: int = 512
    temperature: float = 0.0
    concurrency: int = 4
    cache_dir: Optional[str] = ".polifilter_cache"
    out_dir: str = "."

    def validate(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.verifier not in ("lexical", "remote"):
            raise ConfigError(f"verifier must be 'lexical' or 'remote', got {self.verifier!r}")
        if self.verifier == "remote" and not self.scorer_url:
            raise ConfigError("verifier=remote needs scorer_url")
        if self.endpoint and self.mock_script:
            raise ConfigError("set exactly one of endpoint and mock_script")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        try:
            RefillMode(self.refill_mode)
        except ValueError:
            raise ConfigError(f"refill_mode must be one of {[m.value for m in RefillMode]}") from None


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    kind = str(kind)
    try:
        if "bool" in kind:
            low = raw.strip().lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(raw)
            return low in _TRUE
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind}") from None
    return raw


def read_config_file(path) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: Dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, known[key].type, raw))
    for key in known:
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# Builders


def make_gateway(cfg: RunConfig) -> Gateway:
    if cfg.mock_script:
        try:
            backend = MockBackend.from_jsonl(cfg.mock_script)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"mock script: {exc}") from None
    elif cfg.endpoint:
        backend = OpenAIChatBackend(cfg.endpoint, cfg.model, timeout=cfg.timeout, max_retries=cfg.max_retries)
    else:
        raise ConfigError("no backend: set endpoint or mock_script")
    cache = ResponseCache(cfg.cache_dir) if cfg.cache_dir else None
    return Gateway(
        backend,
        cache,
        max_new_tokens=cfg.max_new_tokens,
        temperature=cfg.temperature,
        max_in_flight=cfg.concurrency,
    )


def make_verifier(cfg: RunConfig):
    if cfg.verifier == "remote":
        return RemoteScorer(cfg.scorer_url, timeout=cfg.timeout, max_retries=cfg.max_retries)
    return LexicalBaseline()


def _read_ids(path) -> List[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read policy list {path}: {exc}") from None
    return [line.strip() for line in text.splitlines() if line.strip()]


def make_split(paragraphs, cfg: RunConfig):
    if cfg.train_list or cfg.test_list:
        if not (cfg.train_list and cfg.test_list):
            raise ConfigError("give both train_list and test_list")
        return split_from_lists(paragraphs, _read_ids(cfg.train_list), _read_ids(cfg.test_list))
    n = len(policy_ids(paragraphs))
    train, test = default_counts(n)
    if cfg.train_policies is not None:
        train = cfg.train_policies
        test = cfg.test_policies if cfg.test_policies is not None else n - train
    elif cfg.test_policies is not None:
        test = cfg.test_policies
        train = n - test
    return split_by_policy(paragraphs, cfg.seed, train, test)


def _require(value, what: str) -> str:
    if not value:
        raise ConfigError(f"missing {what}")
    return value


def _load_corpus(cfg: RunConfig):
    return load_canonical(_require(cfg.corpus, "--corpus"))


def _out(cfg: RunConfig, explicit: Optional[str], default_name: str) -> Path:
    return Path(explicit) if explicit else Path(cfg.out_dir) / default_name


def _write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args, cfg: RunConfig) -> int:
    mapping = TierMapping.from_csv(cfg.tier_mapping) if cfg.tier_mapping else TierMapping.default()
    report = IngestReport()
    paragraphs = import_opp115(
        _require(cfg.raw_dir, "--raw-dir"), mapping,
        skip_unmappable=cfg.skip_unmappable, include_empty=cfg.include_empty, report=report,
    )
    split = make_split(paragraphs, cfg)
    out = _out(cfg, args.out, "corpus.jsonl")
    atomic_write_text(out, dumps_canonical(paragraphs, split))
    stats = corpus_stats(paragraphs, split)
    print(stats.render(), end="")
    print(
        f"\nannotations read {report.annotations_read}, kept {report.annotations_kept}, "
        f"duplicates {report.duplicates}, realigned {report.realigned}, "
        f"whole-segment {report.whole_segment}, misaligned {report.misaligned}, "
        f"unmapped {sum(report.unmapped.values())}, excluded paragraphs {report.excluded_paragraphs}"
    )
    print(f"seed {cfg.seed}; wrote {out}")
    return 0


def cmd_split(args, cfg: RunConfig) -> int:
    paragraphs, _ = _load_corpus(cfg)
    split = make_split(paragraphs, cfg)
    out = _out(cfg, args.out, "corpus.jsonl")
    atomic_write_text(out, dumps_canonical(paragraphs, split))
    if args.split_out:
        _write_json(Path(args.split_out), split.to_json())
    print(corpus_stats(paragraphs, split).render(), end="")
    print(f"seed {cfg.seed}; wrote {out}")
    return 0


def cmd_build_entailment_set(args, cfg: RunConfig) -> int:
    paragraphs, split = _load_corpus(cfg)
    train = select(paragraphs, split, args.side)
    gateway = make_gateway(cfg)
    examples = build_entailment_dataset(train, gateway, PipelineConfig(cfg.threshold, concurrency=cfg.concurrency))
    out = _out(cfg, args.out, "entailment.jsonl")
    atomic_write_text(out, dumps_jsonl(ex.to_json() for ex in examples))
    balance = entailment_balance(examples)
    print(
        f"{balance['examples']} examples: {balance['entailment']} entailment, "
        f"{balance['contradiction']} contradiction"
    )
    print(f"{gateway.backend_calls} backend calls, {gateway.cache_hits} cache hits")
    print(f"seed {cfg.seed}; wrote {out}")
    return 0


def cmd_classify(args, cfg: RunConfig) -> int:
    paragraphs, split = _load_corpus(cfg)
    test = select(paragraphs, split, args.side)
    gateway = make_gateway(cfg)
    config = PipelineConfig(cfg.threshold, RefillMode(cfg.refill_mode), cfg.concurrency)
    traces, summary = infer(test, gateway, make_verifier(cfg), config)
    out = _out(cfg, args.out, "predictions.jsonl")
    atomic_write_text(out, dumps_jsonl(v.to_json() for t in traces for v in t.verdicts))
    summary_path = out.with_name(out.name + ".summary.json")
    _write_json(summary_path, {
        "seed": cfg.seed, "threshold": cfg.threshold, "refill_mode": cfg.refill_mode,
        "verifier": cfg.verifier, **summary.to_json(),
    })
    s = summary.to_json()
    print(
        f"{s['paragraphs']} paragraphs, {s['generated_pairs']} pairs generated, "
        f"{s['parse_dropped']} unparseable lines, {s['hallucinated']} hallucinated, "
        f"{s['accepted']}/{s['verdicts']} accepted ({100 * s['acceptance_rate']:.1f}%)"
    )
    print(f"{s['backend_calls']} backend calls, {s['cache_hits']} cache hits")
    print(f"seed {cfg.seed}; wrote {out}")
    return 0


def evaluate(paragraphs, records, accepted_only: bool = True, seed: Optional[int] = None):
    """Build the report dict and the explainability records for ``records``."""
    by_id = {p.paragraph_id: p for p in paragraphs}
    unknown = sorted({r.paragraph_id for r in records} - set(by_id), key=natural_key)
    if unknown:
        raise UnknownParagraph(f"predictions reference unknown paragraph ids: {unknown[:10]}")
    grouped: Dict[str, list] = {}
    for r in records:
        grouped.setdefault(r.paragraph_id, []).append(r)
    counts = []
    explain_records = []
    for p in sorted(paragraphs, key=lambda q: natural_key(q.paragraph_id)):
        mine = grouped.get(p.paragraph_id, [])
        counts.append(match_predictions(p, {r.label for r in mine if r.accepted}))
        for gold, reason in pair_reasons(p, mine, accepted_only=accepted_only):
            explain_records.append(explain(p.paragraph_id, gold.reason_text, reason))
    scores, averages = aggregate(counts)
    bins = overlap_bins(explain_records)
    n = len(explain_records)
    report = {
        "seed": seed,
        "paragraphs": len(paragraphs),
        "classification": classification_table(scores, averages),
        "explainability": {
            "records": n,
            "accepted_only": accepted_only,
            "bins": dict(zip(BIN_LABELS, bins.as_tuple())),
            "mean_norm_levenshtein": sum(r.norm_levenshtein for r in explain_records) / n if n else 0.0,
            "mean_overlap": sum(r.overlap for r in explain_records) / n if n else 0.0,
        },
    }
    return report, explain_records


def render_report(report: dict, name: str = "predictions") -> str:
    bins = OverlapBins(*(report["explainability"]["bins"][b] for b in BIN_LABELS))
    ex = report["explainability"]
    return (
        render_classification(report["classification"])
        + "\n"
        + render_overlap_table({name: bins})
        + f"\nexplainability records {ex['records']}, mean normalised Levenshtein "
        f"{ex['mean_norm_levenshtein']:.3f}, mean overlap {ex['mean_overlap']:.3f}\n"
    )


def cmd_evaluate(args, cfg: RunConfig) -> int:
    paragraphs, split = _load_corpus(cfg)
    side = select(paragraphs, split, args.side)
    records = load_predictions(args.predictions)
    report, explain_records = evaluate(side, records, accepted_only=not args.all_predictions, seed=cfg.seed)
    out_dir = Path(args.out_dir or cfg.out_dir)
    _write_json(out_dir / "report.json", report)
    text = render_report(report)
    atomic_write_text(out_dir / "report.txt", text)
    atomic_write_text(out_dir / "scatter.csv", scatter_csv(explain_records))
    print(text, end="")
    return 0


def cmd_baseline_random(args, cfg: RunConfig) -> int:
    paragraphs, split = _load_corpus(cfg)
    ratios = length_ratios(select(paragraphs, split, "train"))
    if not ratios:
        raise ConfigError("training side has no annotations to estimate length ratios from")
    rows = []
    for p in sorted(select(paragraphs, split, args.side), key=lambda q: natural_key(q.paragraph_id)):
        for i, ann in enumerate(p.annotations):
            start, end = random_reason_baseline(p, ratios, f"{cfg.seed}:{p.paragraph_id}:{i}")
            rows.append({
                "paragraph_id": p.paragraph_id, "label": ann.label.value, "reason": p.text[start:end],
                "reason_span": [start, end], "refill": "", "score": 1.0, "accepted": True,
            })
    out = _out(cfg, args.out, "baseline_random.jsonl")
    atomic_write_text(out, dumps_jsonl(rows))
    print(f"{len(rows)} random-reason predictions; seed {cfg.seed}; wrote {out}")
    return 0


def _load_report(spec: str):
    name, sep, path = spec.partition("=")
    if not sep:
        name, path = Path(spec).parent.name or spec, spec
    try:
        return name, json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from None


def render_comparison(reports: Sequence) -> str:
    """Side-by-side P/R/F1 per class and the overlap table for several reports."""
    names = [n for n, _ in reports]
    head = f"{'Class':<36}" + "".join(f"{n[:20]:>21}" for n in names) + f"{'Support':>9}"
    sub = f"{'':<36}" + "".join(f"{'P':>7}{'R':>7}{'F1':>7}" for _ in names)
    lines = [head, sub, "-" * len(head)]
    first = reports[0][1]["classification"]
    for i, row in enumerate(first["classes"]):
        cells = "".join(
            f"{r['classification']['classes'][i]['precision']:>7.2f}"
            f"{r['classification']['classes'][i]['recall']:>7.2f}"
            f"{r['classification']['classes'][i]['f1']:>7.2f}"
            for _, r in reports
        )
        lines.append(f"{row['label']:<36}{cells}{row['support']:>9}")
    lines.append("-" * len(head))
    for avg in ("micro", "macro", "weighted"):
        cells = "".join(
            f"{r['classification']['averages'][avg]['precision']:>7.2f}"
            f"{r['classification']['averages'][avg]['recall']:>7.2f}"
            f"{r['classification']['averages'][avg]['f1']:>7.2f}"
            for _, r in reports
        )
        lines.append(f"{avg.capitalize() + ' Average':<36}{cells}{first['support']:>9}")
    columns = {n: OverlapBins(*(r["explainability"]["bins"][b] for b in BIN_LABELS)) for n, r in reports}
    return "\n".join(lines) + "\n\n" + render_overlap_table(columns)


def cmd_report(args, cfg: RunConfig) -> int:
    reports = [_load_report(spec) for spec in args.inputs]
    labels = [[c["label"] for c in r["classification"]["classes"]] for _, r in reports]
    if any(l != labels[0] for l in labels):
        raise ConfigError("reports disagree on the class list")
    text = render_comparison(reports)
    if args.out:
        atomic_write_text(Path(args.out), text)
    print(text, end="")
    return 0


# --------------------------------------------------------------------------
# Parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value settings file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("-v", "--verbose", action="store_true")


def _corpus(p):
    p.add_argument("--corpus", help="canonical corpus JSONL")


def _split_flags(p):
    p.add_argument("--train-policies", dest="train_policies", type=int)
    p.add_argument("--test-policies", dest="test_policies", type=int)
    p.add_argument("--train-list", dest="train_list", help="file with one training policy id per line")
    p.add_argument("--test-list", dest="test_list", help="file with one test policy id per line")


def _backend_flags(p):
    p.add_argument("--endpoint", help="OpenAI-compatible base URL")
    p.add_argument("--model")
    p.add_argument("--mock-script", dest="mock_script", help="scripted completions JSONL")
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polifilter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="OPP-115 release directory -> canonical corpus JSONL")
    _common(p)
    _split_flags(p)
    p.add_argument("--raw-dir", dest="raw_dir")
    p.add_argument("--tier-mapping", dest="tier_mapping", help="CSV data_practice,data_attribute,label12")
    p.add_argument("--skip-unmappable", dest="skip_unmappable", action="store_const", const=True)
    p.add_argument("--include-empty", dest="include_empty", action="store_const", const=True)
    p.add_argument("--out", help="corpus path (default OUT_DIR/corpus.jsonl)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="re-split a canonical corpus by policy")
    _common(p)
    _corpus(p)
    _split_flags(p)
    p.add_argument("--out")
    p.add_argument("--split-out", dest="split_out", help="also write the policy assignment as JSON")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("build-entailment-set", help="verifier training set from the training side")
    _common(p)
    _corpus(p)
    _backend_flags(p)
    p.add_argument("--side", choices=("train", "test"), default="train")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_entailment_set)

    p = sub.add_parser("classify", help="verified classification of the test side")
    _common(p)
    _corpus(p)
    _backend_flags(p)
    p.add_argument("--verifier", choices=("lexical", "remote"))
    p.add_argument("--scorer-url", dest="scorer_url")
    p.add_argument("--refill-mode", dest="refill_mode", choices=[m.value for m in RefillMode])
    p.add_argument("--side", choices=("train", "test"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score predictions against gold annotations")
    _common(p)
    _corpus(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--side", choices=("train", "test"), default="test")
    p.add_argument("--all-predictions", dest="all_predictions", action="store_true",
                   help="score explainability over rejected verdicts too")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline-random", help="gold labels with randomly sampled reasons")
    _common(p)
    _corpus(p)
    p.add_argument("--side", choices=("train", "test"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline_random)

    p = sub.add_parser("report", help="compare evaluation reports side by side")
    _common(p)
    p.add_argument("inputs", nargs="+", metavar="NAME=REPORT_JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        return args.func(args, cfg)
    except PolifilterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def report_schema() -> dict:
    return json.loads(resources.files("polifilter").joinpath("data/report.schema.json").read_text("utf-8"))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
