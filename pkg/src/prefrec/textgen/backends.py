"""Text-generation backends.

Every backend exposes ``backend_id`` and ``generate(request) -> str``. The
mock backend is a deterministic extractive stand-in for an LLM; the remote
backend speaks the OpenAI-compatible chat-completions protocol.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from ..errors import BackendError, DomainError, ProtocolError

logger = logging.getLogger(__name__)

API_KEY_ENV = "PREFREC_API_KEY"
OPERATOR_LABEL = "A"
CUSTOMER_LABEL = "B"
DEFAULT_MARKERS = ("like", "want", "prefer")
REC_INFO_SUFFIX = " Suitable for matching visitors."
NO_PREFERENCE_TEXT = "No stated preferences."


class Task(str, enum.Enum):
    """What a request asks for; lets the mock backend pick its transform."""

    PARTIAL_SUMMARY = "partial_summary"
    FINAL_SUMMARY = "final_summary"
    SUMMARY = "summary"
    REC_INFO = "rec_info"


class TextKind(str, enum.Enum):
    PARTIAL_SUMMARY = "PartialSummary"
    FINAL_SUMMARY = "FinalSummary"
    REC_INFO = "RecInfo"


def prompt_hash(prompt: str) -> int:
    """Stable unsigned 64-bit hash of the UTF-8 prompt bytes."""
    return int.from_bytes(hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    seed: int = 0
    temperature: float = 0.0
    max_tokens: int = 512
    task: Task | None = None
    # Template variables the prompt was rendered from. Remote backends ignore
    # them; the mock backend reads them instead of re-parsing the prompt.
    variables: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.temperature < 0:
            raise DomainError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise DomainError("max_tokens must be >= 1")


@dataclass(frozen=True)
class GeneratedText:
    text: str
    backend_id: str
    seed: int
    prompt_hash: int
    kind: TextKind

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "backend_id": self.backend_id,
            "seed": self.seed,
            "prompt_hash": f"{self.prompt_hash:016x}",
            "kind": self.kind.value,
        }


class Backend(Protocol):
    backend_id: str

    def generate(self, request: GenerationRequest) -> str: ...


_SENTENCE_SPLIT = re.compile(r"[.!?。！？]+")


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_SPLIT.split(text) if s.strip()]


class MockExtractiveBackend:
    """Deterministic extractive generator used as a test oracle.

    * summary prompts: every customer sentence that contains a preference
      marker, joined by single spaces in order of appearance;
    * final-summary prompts: the combined partial summaries re-joined with
      single spaces;
    * rec-info prompts: the description followed by ``REC_INFO_SUFFIX``.

    At temperature 0 the seed is irrelevant. At positive temperature a
    seed-keyed RNG drops some sentences (always keeping one), which gives
    candidate sets real variety while staying a pure function of the request.
    """

    def __init__(
        self,
        markers=DEFAULT_MARKERS,
        extra_markers=(),
        fallback: str | None = NO_PREFERENCE_TEXT,
        rec_suffix: str = REC_INFO_SUFFIX,
        backend_id: str = "mock-extractive",
    ):
        self.markers = tuple(m.lower() for m in (*markers, *extra_markers))
        self.fallback = fallback
        self.rec_suffix = rec_suffix
        self.backend_id = backend_id

    def _has_marker(self, sentence: str) -> bool:
        low = sentence.lower()
        return any(m in low for m in self.markers)

    def _customer_sentences(self, dialogue: str) -> list[str]:
        out = []
        for line in dialogue.splitlines():
            speaker, sep, text = line.partition(":")
            if sep and speaker.strip() == CUSTOMER_LABEL:
                out.extend(s for s in split_sentences(text) if self._has_marker(s))
        return out

    @staticmethod
    def _thin(units: list[str], request: GenerationRequest) -> list[str]:
        if request.temperature <= 0 or len(units) <= 1:
            return units
        key = hashlib.blake2b(
            f"{request.seed}\x00{request.prompt}".encode("utf-8"), digest_size=8
        ).digest()
        rng = random.Random(int.from_bytes(key, "big"))
        drop = 0.5 * min(request.temperature, 1.0)
        kept = [u for u in units if rng.random() >= drop]
        return kept or [units[rng.randrange(len(units))]]

    def generate(self, request: GenerationRequest) -> str:
        v = request.variables
        task = request.task
        if task is Task.REC_INFO:
            desc = v.get("description", request.prompt)
            if request.temperature > 0:
                sentences = self._thin(split_sentences(desc), request)
                desc = ". ".join(sentences) + "."
            return desc + self.rec_suffix
        if task is Task.FINAL_SUMMARY:
            combined = v.get("all_short_dialogue_summary", request.prompt)
            pieces = [p.strip() for p in combined.splitlines() if p.strip()]
            return " ".join(self._thin(pieces, request))
        dialogue = v.get("short_dialogue", v.get("dialogue", request.prompt))
        found = self._thin(self._customer_sentences(dialogue), request)
        if not found:
            return self.fallback or ""
        return " ".join(found)


class OpenAICompatibleBackend:
    """Chat-completions client with retries on 429/5xx and transport errors."""

    RETRY_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ):
        self.url = url
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_attempts = max(1, max_attempts)
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep
        self.backend_id = f"openai:{model}"

    def payload(self, request: GenerationRequest) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "seed": request.seed,
            "max_tokens": request.max_tokens,
        }

    def generate(self, request: GenerationRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = post_with_retries(
            self._client,
            self.url,
            self.payload(request),
            headers,
            self.max_attempts,
            self.backoff,
            self._sleep,
            retry_status=self.RETRY_STATUS,
        )
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProtocolError(f"unexpected chat-completions response: {body!r:.200}") from None
        if not isinstance(content, str):
            raise ProtocolError("message content is not a string")
        return content.strip()


def post_with_retries(client, url, payload, headers, max_attempts, backoff, sleep, retry_status):
    """POST JSON with exponential backoff; returns the decoded JSON body."""
    last = None
    for attempt in range(max_attempts):
        try:
            resp = client.post(url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            last = f"{type(exc).__name__}: {exc}"
        else:
            if resp.status_code < 400:
                try:
                    return resp.json()
                except ValueError:
                    raise ProtocolError(f"non-JSON response from {url}") from None
            if resp.status_code not in retry_status:
                raise BackendError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            last = f"HTTP {resp.status_code}"
        if attempt + 1 < max_attempts:
            delay = backoff * (2**attempt)
            logger.warning("request to %s failed (%s); retrying in %.1fs", url, last, delay)
            sleep(delay)
    raise BackendError(f"request to {url} failed after {max_attempts} attempts: {last}")


class CachingBackend:
    """Wrap a backend with an append-only JSONL cache keyed by the full request.

    Lets CLI stages reuse texts produced by an earlier stage without calling
    a remote model twice.
    """

    def __init__(self, inner: Backend, path):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.path = Path(path)
        self._lock = threading.Lock()
        self._cache: dict[str, str] = {}
        if self.path.is_file():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._cache[rec["key"]] = rec["text"]

    def _key(self, request: GenerationRequest) -> str:
        return (
            f"{self.backend_id}|{prompt_hash(request.prompt):016x}|{request.seed}|"
            f"{request.temperature!r}|{request.max_tokens}"
        )

    def generate(self, request: GenerationRequest) -> str:
        key = self._key(request)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        text = self.inner.generate(request)
        with self._lock:
            if key not in self._cache:
                self._cache[key] = text
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "text": text}, ensure_ascii=False) + "\n")
        return text
