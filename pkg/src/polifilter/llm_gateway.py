"""Prompting, transport, parsing and caching for the two generative roles.

Two backends ship: :class:`OpenAIChatBackend` for any OpenAI-compatible
chat-completions server, and :class:`MockBackend`, which replays scripted
completions keyed by the SHA-256 of the prompt.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import httpx

from .corpus import Label12, Paragraph, atomic_write_text
from .errors import (
    AuthFailure,
    BackendUnavailable,
    EmptyGeneration,
    MultipleMaskTokens,
    NoMaskToken,
    ResponseTooLong,
    ScriptMiss,
)

log = logging.getLogger(__name__)

MASK_TOKEN = "<BLANK>"
API_KEY_ENV = "POLIFILTER_API_KEY"
DEFAULT_MAX_NEW_TOKENS = 512
DEFAULT_TEMPERATURE = 0.0
DEFAULT_STOP = ("\n\n",)


class Role(str, Enum):
    ExplainedClassifier = "explained_classifier"
    BlankFiller = "blank_filler"


@dataclass(frozen=True)
class GenerationRequest:
    role: Role
    prompt: str
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    stop_sequences: Tuple[str, ...] = DEFAULT_STOP

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if int(self.max_new_tokens) < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))

    def to_json(self) -> dict:
        return {
            "role": self.role.value,
            "prompt": self.prompt,
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
            "stop_sequences": list(self.stop_sequences),
        }


@dataclass(frozen=True)
class ReasonedPrediction:
    paragraph_id: str
    label: Label12
    reason: str
    raw_generation: str = ""


@dataclass(frozen=True)
class Refill:
    paragraph_id: str
    label: Label12
    refill_text: str


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def cache_key(request: GenerationRequest, model_id: str) -> str:
    payload = dict(request.to_json(), model=model_id)
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# Prompts and output grammar

CLASSIFIER_TEMPLATE = """\
You label paragraphs of website privacy policies.

Classes:
{classes}

Read the paragraph between <<< and >>>. For every class that applies, copy
the exact excerpt of the paragraph that justifies it. Write one line per
finding and nothing else:
Label: <class> | Reason: "<verbatim excerpt>"
Inside the excerpt write a double quote as \\", a backslash as \\\\ and a
line break as \\n.

Paragraph:
<<<
{text}
>>>
"""

FILLER_TEMPLATE = """\
The paragraph between <<< and >>> comes from a website privacy policy.
One passage was replaced by {mask}. That passage is the evidence for the
class "{label}". Write the missing passage on a single line and nothing else.

Paragraph:
<<<
{text}
>>>
"""


def build_classifier_prompt(paragraph: Paragraph) -> str:
    if not paragraph.text:
        raise ValueError(f"{paragraph.paragraph_id}: empty paragraph text")
    classes = "\n".join(f"- {label.value}" for label in Label12)
    return CLASSIFIER_TEMPLATE.format(classes=classes, text=paragraph.text)


def build_filler_prompt(masked_text: str, label: Label12) -> str:
    count = masked_text.count(MASK_TOKEN)
    if count == 0:
        raise NoMaskToken(f"text has no {MASK_TOKEN} token")
    if count > 1:
        raise MultipleMaskTokens(f"text has {count} {MASK_TOKEN} tokens")
    return FILLER_TEMPLATE.format(mask=MASK_TOKEN, label=Label12(label).value, text=masked_text)


_ESCAPES = {'"': '\\"', "\\": "\\\\", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {'"': '"', "\\": "\\", "n": "\n", "r": "\r"}


def escape_reason(reason: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in reason)


def unescape_reason(escaped: str) -> str:
    return re.sub(r"\\(.)", lambda m: _UNESCAPES.get(m.group(1), m.group(1)), escaped)


def format_pairs(pairs: Iterable[Tuple[Label12, str]]) -> str:
    """Render pairs in the grammar :func:`parse_classifier_output` reads."""
    return "".join(f'Label: {Label12(l).value} | Reason: "{escape_reason(r)}"\n' for l, r in pairs)


_PAIR_LINE = re.compile(
    r'^\s*Label:\s*(?P<label>[^|]+?)\s*\|\s*Reason:\s*"(?P<reason>(?:[^"\\]|\\.)*)"\s*$', re.IGNORECASE
)
# Only \n and \r are escaped inside reasons, so only they may end a line;
# str.splitlines would also break on \x1c-\x1e, \x85, \u2028 and friends.
_LINE_BREAK = re.compile(r"\r\n|\r|\n")


def parse_classifier_output(raw: str) -> Tuple[List[Tuple[Label12, str]], int]:
    """Extract ``(label, reason)`` pairs in order; returns ``(pairs, dropped)``.

    Every non-blank line that is not a well-formed pair with a known class
    and a non-empty reason counts as dropped.
    """
    pairs: List[Tuple[Label12, str]] = []
    dropped = 0
    for line in _LINE_BREAK.split(raw):
        if not line.strip():
            continue
        m = _PAIR_LINE.match(line)
        label = Label12.try_parse(m.group("label")) if m else None
        reason = unescape_reason(m.group("reason")) if m else ""
        if label is None or not reason.strip():
            dropped += 1
            continue
        pairs.append((label, reason))
    return pairs, dropped


def parse_filler_output(raw: str) -> str:
    """First non-empty line, stripped of whitespace and surrounding quotes."""
    for line in _LINE_BREAK.split(raw):
        text = line.strip()
        if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
            text = text[1:-1].strip()
        if text:
            return text
    raise EmptyGeneration("generation contains no text")


# --------------------------------------------------------------------------
# Cache


class ResponseCache:
    """Content-addressed store: ``<root>/<key[:2]>/<key>.json``.

    Writes go through a temp file and an atomic rename, so concurrent
    writers of the same key leave one complete entry behind.
    """

    def __init__(self, root):
        self.root = Path(root)

    def path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[str]:
        try:
            data = json.loads(self.path(key).read_text(encoding="utf-8"))
            return data["completion"]
        except FileNotFoundError:
            return None
        except (OSError, ValueError, KeyError, TypeError):
            log.warning("ignoring unreadable cache entry %s", key)
            return None

    def put(self, key: str, request: GenerationRequest, completion: str) -> None:
        entry = {
            "request": request.to_json(),
            "completion": completion,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        atomic_write_text(self.path(key), json.dumps(entry, ensure_ascii=False, indent=1) + "\n")


# --------------------------------------------------------------------------
# Backends


class Backend:
    """A text-generation service. Subclasses implement :meth:`_complete`."""

    model_id = "unknown"

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: GenerationRequest) -> str:
        with self._lock:
            self.calls += 1
        return self._complete(request)

    def _complete(self, request: GenerationRequest) -> str:  # pragma: no cover
        raise NotImplementedError


class MockBackend(Backend):
    """Replays completions scripted per ``(role, sha256(prompt))``."""

    def __init__(self, script: Optional[Dict[Tuple[str, str], str]] = None, model_id: str = "mock"):
        super().__init__()
        self.script: Dict[Tuple[str, str], str] = dict(script or {})
        self.model_id = model_id

    @classmethod
    def from_jsonl(cls, path, model_id: str = "mock") -> "MockBackend":
        script = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (Role(obj["match"]["role"]).value, obj["match"]["prompt_sha256"])
                script[key] = obj["completion"]
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad mock script line: {exc}") from None
        return cls(script, model_id)

    def add(self, role: Role, prompt: str, completion: str) -> None:
        self.script[(Role(role).value, prompt_sha256(prompt))] = completion

    def _complete(self, request: GenerationRequest) -> str:
        key = (request.role.value, prompt_sha256(request.prompt))
        try:
            return self.script[key]
        except KeyError:
            raise ScriptMiss(f"no scripted {key[0]} completion for prompt {key[1][:12]}") from None


def script_record(role: Role, prompt: str, completion: str) -> dict:
    return {"match": {"role": Role(role).value, "prompt_sha256": prompt_sha256(prompt)}, "completion": completion}


def write_mock_script(records: Iterable[dict], path) -> None:
    atomic_write_text(path, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records))


class OpenAIChatBackend(Backend):
    """Client for ``POST {base_url}/chat/completions``.

    Connection errors, 429 and 5xx are retried with exponential backoff;
    401/403 fail at once. The bearer token is read from
    ``POLIFILTER_API_KEY`` when present.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        max_response_bytes: int = 1 << 20,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__()
        self.url = base_url.rstrip("/")
        if not self.url.endswith("/chat/completions"):
            self.url += "/chat/completions"
        self.model_id = model
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_response_bytes = max_response_bytes
        self._sleep = sleep
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _payload(self, request: GenerationRequest) -> dict:
        body = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_new_tokens,
            "temperature": request.temperature,
        }
        if request.stop_sequences:
            body["stop"] = list(request.stop_sequences)
        return body

    def _complete(self, request: GenerationRequest) -> str:
        payload = self._payload(request)
        last = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.url, json=payload)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.info("attempt %d to %s failed: %s", attempt + 1, self.url, last)
                continue
            if resp.status_code in (401, 403):
                raise AuthFailure(f"{self.url} rejected credentials (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.info("attempt %d to %s failed: %s", attempt + 1, self.url, last)
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"{self.url} answered HTTP {resp.status_code}: {resp.text[:200]}")
            if len(resp.content) > self.max_response_bytes:
                raise ResponseTooLong(f"response of {len(resp.content)} bytes exceeds {self.max_response_bytes}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendUnavailable(f"malformed completion payload: {exc}") from None
            return content or ""
        raise BackendUnavailable(f"{self.url} unavailable after {self.max_retries + 1} attempts ({last})")


# --------------------------------------------------------------------------
# Gateway


def generate(request: GenerationRequest, backend: Backend, cache: Optional[ResponseCache] = None) -> str:
    """One completion, served from ``cache`` when possible."""
    key = cache_key(request, backend.model_id) if cache is not None else None
    if key is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    completion = backend.complete(request)
    if key is not None:
        cache.put(key, request, completion)
    return completion


@dataclass
class Gateway:
    """Backend + cache + decoding defaults + an in-flight limit."""

    backend: Backend
    cache: Optional[ResponseCache] = None
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    stop_sequences: Tuple[str, ...] = DEFAULT_STOP
    max_in_flight: int = 4
    cache_hits: int = field(default=0, init=False)
    _slots: threading.BoundedSemaphore = field(init=False, repr=False)
    _lock: threading.Lock = field(init=False, repr=False)

    def __post_init__(self):
        self._slots = threading.BoundedSemaphore(max(1, self.max_in_flight))
        self._lock = threading.Lock()

    @property
    def backend_calls(self) -> int:
        return self.backend.calls

    def request(self, role: Role, prompt: str) -> GenerationRequest:
        return GenerationRequest(role, prompt, self.max_new_tokens, self.temperature, self.stop_sequences)

    def generate(self, request: GenerationRequest) -> str:
        if self.cache is not None:
            hit = self.cache.get(cache_key(request, self.backend.model_id))
            if hit is not None:
                with self._lock:
                    self.cache_hits += 1
                return hit
        with self._slots:
            return generate(request, self.backend, self.cache)

    def explain(self, paragraph: Paragraph) -> Tuple[List[ReasonedPrediction], int]:
        """Explained-classifier pass: parsed predictions and the dropped-line count."""
        raw = self.generate(self.request(Role.ExplainedClassifier, build_classifier_prompt(paragraph)))
        pairs, dropped = parse_classifier_output(raw)
        return [ReasonedPrediction(paragraph.paragraph_id, l, r, raw) for l, r in pairs], dropped

    def refill(self, paragraph_id: str, masked_text: str, label: Label12) -> Refill:
        raw = self.generate(self.request(Role.BlankFiller, build_filler_prompt(masked_text, label)))
        return Refill(paragraph_id, label, parse_filler_output(raw))
