"""Clients for completion, scoring, and embedding servers, plus offline dumps.

The wire protocol is the common completions-with-logprobs shape, so any
compatible server works unmodified:

completion      POST {endpoint}/completions
                {"model", "prompt", "temperature", "max_tokens"}
                -> {"choices": [{"text": ...}], "usage": {...}?}

scoring         POST {endpoint}/completions
                {"model", "prompt": prompt + continuation, "max_tokens": 0,
                 "echo": true, "logprobs": 0, "temperature": 0.0}
                -> choices[0].logprobs.{token_logprobs, text_offset}
                Continuation tokens are those whose text offset is at or
                past the end of the prompt; only they are scored. The
                server owns tokenization throughout.

embedding       POST {endpoint}/embeddings
                {"model", "input": [text]}
                -> {"data": [{"embedding": [...]}]}

Transient failures (connection errors, timeouts, HTTP 408/429/5xx) retry
with bounded exponential backoff; anything malformed fails immediately
with BackendError("protocol", ...). Log-probabilities must be <= 0; the
boundary rejects violations so nothing deeper has to re-check.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import requests

from .errors import BackendError, FormatError
from .metrics import ScoredSequence

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.8
    max_new_tokens: int = 1024
    model_id: str = ""


@dataclass(frozen=True)
class CompletionRecord:
    """One completion with the parameters that produced it.

    ``latency`` (seconds) and ``retrieved_at`` (unix time) are observability
    fields; reports never include them so report bytes stay reproducible.
    """

    arxiv_id: str
    model_id: str
    prompt: str
    completion: str
    params: GenerationParams
    latency: float
    retrieved_at: float
    retries: int = 0


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dimension: int
    model_id: str


class CompletionClient:
    """Client for one server endpoint. Shareable across threads."""

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        embedding_dimension: int | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.embedding_dimension = embedding_dimension
        self._local = threading.local()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            if self.api_key:
                session.headers["Authorization"] = f"Bearer {self.api_key}"
            self._local.session = session
        return session

    def _post(self, route: str, payload: dict) -> tuple[dict, int]:
        """POST with retries; returns (parsed body, number of retries)."""
        url = f"{self.endpoint}{route}"
        last_timeout = False
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                response = self._session().post(url, json=payload, timeout=self.timeout)
            except requests.Timeout:
                last_timeout = True
                continue
            except requests.RequestException:
                last_timeout = False
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_timeout = False
                continue
            if response.status_code != 200:
                raise BackendError(
                    "protocol", f"{url} returned HTTP {response.status_code}"
                )
            try:
                return response.json(), attempt
            except ValueError as exc:
                raise BackendError("protocol", f"{url} returned non-JSON body") from exc
        if last_timeout:
            raise BackendError("timeout", f"{url} timed out after {self.max_retries + 1} attempts")
        raise BackendError(
            "unavailable", f"{url} unavailable after {self.max_retries + 1} attempts"
        )

    def complete(
        self, prompt: str, params: GenerationParams, arxiv_id: str = ""
    ) -> CompletionRecord:
        """Request one completion; echoes ``params`` into the record."""
        if not prompt:
            raise BackendError("protocol", "prompt must be non-empty")
        started = time.monotonic()
        body, retries = self._post(
            "/completions",
            {
                "model": params.model_id,
                "prompt": prompt,
                "temperature": params.temperature,
                "max_tokens": params.max_new_tokens,
            },
        )
        latency = time.monotonic() - started
        try:
            text = body["choices"][0]["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("protocol", f"malformed completion response: {exc!r}") from exc
        if not isinstance(text, str):
            raise BackendError("protocol", "completion text is not a string")
        usage = body.get("usage") or {}
        completion_tokens = usage.get("completion_tokens")
        if completion_tokens is not None and completion_tokens > params.max_new_tokens:
            raise BackendError(
                "protocol",
                f"server reports {completion_tokens} tokens, above the "
                f"{params.max_new_tokens} cap",
            )
        return CompletionRecord(
            arxiv_id=arxiv_id,
            model_id=params.model_id,
            prompt=prompt,
            completion=text,
            params=params,
            latency=latency,
            retrieved_at=time.time(),
            retries=retries,
        )

    def score_logprobs(
        self, prompt: str, continuation: str, model_id: str, sequence_id: str | None = None
    ) -> ScoredSequence:
        """Score a provided continuation; only its tokens enter the result."""
        if not continuation:
            raise BackendError("protocol", "continuation must be non-empty")
        body, _ = self._post(
            "/completions",
            {
                "model": model_id,
                "prompt": prompt + continuation,
                "max_tokens": 0,
                "echo": True,
                "logprobs": 0,
                "temperature": 0.0,
            },
        )
        try:
            choice = body["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("protocol", f"malformed scoring response: {exc!r}") from exc
        logprobs = choice.get("logprobs")
        if not isinstance(logprobs, dict):
            raise BackendError("capability", "server did not return token log-probabilities")
        token_logprobs = logprobs.get("token_logprobs")
        offsets = logprobs.get("text_offset")
        if not isinstance(token_logprobs, list) or not isinstance(offsets, list) \
                or len(token_logprobs) != len(offsets):
            raise BackendError("protocol", "scoring response lacks aligned logprob/offset lists")
        boundary = len(prompt)
        scored = []
        for offset, lp in zip(offsets, token_logprobs):
            if offset < boundary:
                continue
            if lp is None:
                raise BackendError("protocol", "continuation token has no log-probability")
            lp = float(lp)
            if lp > 0.0:
                raise BackendError("protocol", f"server returned positive log-probability {lp}")
            scored.append(lp)
        if not scored:
            raise BackendError("protocol", "no tokens scored within the continuation")
        return ScoredSequence(token_logprobs=tuple(scored), sequence_id=sequence_id)

    def embed(self, text: str, model_id: str) -> EmbeddingVector:
        """Embed one text (sent as-is, empty included); validates dimension."""
        body, _ = self._post("/embeddings", {"model": model_id, "input": [text]})
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("protocol", f"malformed embedding response: {exc!r}") from exc
        if not isinstance(values, list) or not values:
            raise BackendError("protocol", "embedding is not a non-empty list")
        vector = tuple(float(v) for v in values)
        if self.embedding_dimension is not None and len(vector) != self.embedding_dimension:
            raise BackendError(
                "protocol",
                f"embedding dimension {len(vector)} does not match the "
                f"configured {self.embedding_dimension}",
            )
        return EmbeddingVector(values=vector, dimension=len(vector), model_id=model_id)


def complete(
    prompt: str, params: GenerationParams, endpoint: str, **kwargs
) -> CompletionRecord:
    return CompletionClient(endpoint, **kwargs).complete(prompt, params)


def score_logprobs(
    prompt: str, continuation: str, endpoint: str, model_id: str = "", **kwargs
) -> ScoredSequence:
    return CompletionClient(endpoint, **kwargs).score_logprobs(prompt, continuation, model_id)


def embed(text: str, endpoint: str, model_id: str = "", **kwargs) -> EmbeddingVector:
    return CompletionClient(endpoint, **kwargs).embed(text, model_id)


def load_logprob_dump(path: str | Path) -> list[ScoredSequence]:
    """Read scored sequences from newline-delimited records, in file order.

    Record schema: {"id": str, "logprobs": [float <= 0, ...],
    "norm_length": int (optional)}.
    """
    sequences = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict) or "logprobs" not in obj:
                raise FormatError("record has no 'logprobs' field", line=lineno)
            logprobs = obj["logprobs"]
            if not isinstance(logprobs, list):
                raise FormatError("'logprobs' is not a list", line=lineno)
            values = []
            for lp in logprobs:
                if not isinstance(lp, (int, float)) or isinstance(lp, bool):
                    raise FormatError(f"log-probability {lp!r} is not a number", line=lineno)
                if lp > 0.0:
                    raise FormatError(f"positive log-probability {lp}", line=lineno)
                values.append(float(lp))
            norm_length = obj.get("norm_length")
            if norm_length is not None:
                if not isinstance(norm_length, int) or norm_length < 1:
                    raise FormatError(f"bad norm_length {norm_length!r}", line=lineno)
            sequences.append(
                ScoredSequence(
                    token_logprobs=tuple(values),
                    norm_length=norm_length,
                    sequence_id=str(obj["id"]) if "id" in obj else None,
                )
            )
    return sequences


def write_logprob_dump(path: str | Path, sequences: Iterable[ScoredSequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        for seq in sequences:
            record: dict = {"logprobs": list(seq.token_logprobs)}
            if seq.sequence_id is not None:
                record["id"] = seq.sequence_id
            if seq.norm_length is not None:
                record["norm_length"] = seq.norm_length
            out.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
