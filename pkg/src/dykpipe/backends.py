"""Clients for completion / embedding / classification endpoints.

All remote backends speak one minimal JSON wire contract:

    POST {endpoint}/complete  {"prompt": str, "max_new_tokens": int} -> {"text": str}
    POST {endpoint}/embed     {"texts": [str]}                       -> {"embeddings": [[float]]}
    POST {endpoint}/classify  {"texts": [str]}                       -> {"scores": [[float]]}

plus deterministic in-process stand-ins (exact-recall memorizer, hashed
bag-of-words embedder, echo completion) used for desk-scale runs and tests.
"""

from __future__ import annotations

import hashlib
import math
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .errors import ContractError, InputError, TransportError

DEFAULT_PROMPT_TEMPLATE = "{question}\nAnswer:"

KINDS = ("completion", "embedding", "classifier", "mock_memorizer")


@dataclass
class BackendSpec:
    """Configuration for one backend endpoint."""

    kind: str
    endpoint: str = ""
    auth_env: str = ""
    timeout_ms: int = 30000
    max_retries: int = 3
    backoff_s: float = 0.5
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    batch_size: int = 64
    max_inflight: int = 8

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise InputError("timeout_ms must be positive")
        if self.prompt_template.count("{question}") != 1:
            raise InputError('prompt_template must contain "{question}" exactly once')


def render_prompt(template: str, question: str) -> str:
    """Substitute the question into the template, no other mutation."""
    return template.replace("{question}", question)


class _HttpBackend:
    """Shared transport: retries with exponential backoff, auth, concurrency cap."""

    def __init__(self, spec: BackendSpec):
        self.spec = spec
        self._session = requests.Session()
        self._sem = threading.Semaphore(spec.max_inflight)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.spec.auth_env:
            token = os.environ.get(self.spec.auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, path: str, body: dict) -> dict:
        url = self.spec.endpoint.rstrip("/") + path
        timeout = self.spec.timeout_ms / 1000.0
        last_exc: Exception | None = None
        for attempt in range(self.spec.max_retries + 1):
            try:
                with self._sem:
                    resp = self._session.post(
                        url, json=body, headers=self._headers(), timeout=timeout
                    )
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self.spec.max_retries:
                    time.sleep(self.spec.backoff_s * (2**attempt))
                continue
            if resp.status_code // 100 != 2:
                raise TransportError(
                    f"{url} returned {resp.status_code}: {resp.text[:200]}"
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise ContractError(f"{url} returned non-JSON body") from exc
        raise TransportError(f"{url} unreachable after {self.spec.max_retries + 1} attempts") from last_exc


class CompletionClient(_HttpBackend):
    """Client for the /complete contract."""

    def __init__(self, spec: BackendSpec):
        if spec.kind != "completion":
            raise InputError(f"expected a completion spec, got kind={spec.kind!r}")
        super().__init__(spec)

    def complete(self, question: str, max_new_tokens: int = 32) -> str:
        prompt = render_prompt(self.spec.prompt_template, question)
        body = self._post("/complete", {"prompt": prompt, "max_new_tokens": max_new_tokens})
        if "text" not in body or not isinstance(body["text"], str):
            raise ContractError(f"/complete response missing string 'text': {body!r}")
        text = body["text"]
        # A single leading space is generation-boundary noise, nothing else is touched.
        if text.startswith(" "):
            text = text[1:]
        return text


class EmbeddingClient(_HttpBackend):
    """Client for the /embed contract; batches requests, preserves order."""

    def __init__(self, spec: BackendSpec):
        if spec.kind != "embedding":
            raise InputError(f"expected an embedding spec, got kind={spec.kind!r}")
        super().__init__(spec)

    def embed(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            raise InputError("embed() requires at least one text")
        vectors: list[list[float]] = []
        dim: int | None = None
        for i in range(0, len(texts), self.spec.batch_size):
            chunk = texts[i : i + self.spec.batch_size]
            body = self._post("/embed", {"texts": chunk})
            embs = body.get("embeddings")
            if not isinstance(embs, list) or len(embs) != len(chunk):
                raise ContractError(
                    f"/embed returned {len(embs) if isinstance(embs, list) else 'no'} "
                    f"vectors for {len(chunk)} texts"
                )
            for vec in embs:
                if dim is None:
                    dim = len(vec)
                if len(vec) != dim:
                    raise ContractError(f"embedding dim changed from {dim} to {len(vec)}")
                if not all(math.isfinite(x) for x in vec):
                    raise ContractError("embedding contains non-finite values")
            vectors.extend([list(map(float, v)) for v in embs])
        return vectors


class ClassifierClient(_HttpBackend):
    """Client for the /classify contract."""

    def __init__(self, spec: BackendSpec, k: int | None = None):
        if spec.kind != "classifier":
            raise InputError(f"expected a classifier spec, got kind={spec.kind!r}")
        super().__init__(spec)
        self.k = k

    def classify(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            raise InputError("classify() requires at least one text")
        scores: list[list[float]] = []
        for i in range(0, len(texts), self.spec.batch_size):
            chunk = texts[i : i + self.spec.batch_size]
            body = self._post("/classify", {"texts": chunk})
            rows = body.get("scores")
            if not isinstance(rows, list) or len(rows) != len(chunk):
                raise ContractError("/classify returned wrong number of score rows")
            for row in rows:
                if self.k is None:
                    self.k = len(row)
                if len(row) != self.k:
                    raise ContractError(f"expected {self.k} scores, got {len(row)}")
                for x in row:
                    if not (math.isfinite(x) and 0.0 <= x <= 1.0):
                        raise ContractError(f"score {x} outside [0, 1]")
            scores.extend([list(map(float, r)) for r in rows])
        return scores


def _normalize_question(q: str) -> str:
    return " ".join(q.split())


@dataclass
class MockMemorizer:
    """Exact-recall completion backend over normalized question text.

    Acts as an oracle for a perfectly injected model: answers every stored
    question verbatim, everything else with the fallback string.
    """

    entries: dict[str, str] = field(default_factory=dict)
    fallback: str = "UNKNOWN"

    def add(self, question: str, answer: str) -> None:
        self.entries[_normalize_question(question)] = answer

    def complete(self, question: str, max_new_tokens: int = 32) -> str:
        return self.entries.get(_normalize_question(question), self.fallback)

    @classmethod
    def from_pairs(cls, pairs, fallback: str = "UNKNOWN") -> "MockMemorizer":
        mock = cls(fallback=fallback)
        for question, answer in pairs:
            mock.add(question, answer)
        return mock


class HashEmbedder:
    """Deterministic hashed bag-of-words embedding, for desk-scale runs.

    Each lowercased whitespace token is hashed into one of `dim` buckets with
    a stable hash, so identical texts always map to identical vectors across
    processes.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise InputError("dim must be >= 1")
        self.dim = dim

    def _vector(self, text: str) -> list[float]:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in text.lower().split():
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            bucket = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec /= norm
        return vec.tolist()

    def embed(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            raise InputError("embed() requires at least one text")
        return [self._vector(t) for t in texts]


class MappedEmbedder:
    """Embedding backend with explicit text -> vector overrides.

    Texts without an override fall through to a HashEmbedder of the same
    dimension.  Lets tests pin a question and its gold document to the exact
    same vector.
    """

    def __init__(self, dim: int, mapping: dict[str, list[float]] | None = None):
        self.dim = dim
        self.mapping = dict(mapping or {})
        self._fallback = HashEmbedder(dim)

    def embed(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            raise InputError("embed() requires at least one text")
        out = []
        for t in texts:
            if t in self.mapping:
                vec = self.mapping[t]
                if len(vec) != self.dim:
                    raise InputError(f"mapped vector has dim {len(vec)}, expected {self.dim}")
                out.append(list(map(float, vec)))
            else:
                out.append(self._fallback._vector(t))
        return out


class EchoCompletion:
    """Completion backend that returns the rendered prompt verbatim."""

    def __init__(self, prompt_template: str = DEFAULT_PROMPT_TEMPLATE):
        if prompt_template.count("{question}") != 1:
            raise InputError('prompt_template must contain "{question}" exactly once')
        self.prompt_template = prompt_template

    def complete(self, question: str, max_new_tokens: int = 32) -> str:
        return render_prompt(self.prompt_template, question)
