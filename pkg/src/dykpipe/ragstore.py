"""Embedding index over collected articles with exact top-k retrieval.

The corpus is small (roughly 12k articles), so retrieval is an exhaustive
cosine-similarity scan over unit-normalized vectors; there is no approximate
structure and therefore no recall ambiguity.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import DEFAULT_PROMPT_TEMPLATE, render_prompt
from .errors import InputError

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 3
DEFAULT_DOC_CHAR_BUDGET = 1500


@dataclass
class RagIndex:
    doc_ids: list[str]
    vectors: np.ndarray  # (n, d), unit rows
    meta: dict[str, tuple[str, str]]  # doc_id -> (title, text)

    def __post_init__(self) -> None:
        if len(self.doc_ids) != len(set(self.doc_ids)):
            raise InputError("duplicate doc_id in index")
        if len(self.doc_ids) != self.vectors.shape[0]:
            raise InputError("doc_ids and vectors disagree on n")
        norms = np.linalg.norm(self.vectors, axis=1)
        if self.vectors.size and not np.allclose(norms, 1.0, atol=1e-6):
            raise InputError("index vectors must be unit-normalized")

    @property
    def n(self) -> int:
        return len(self.doc_ids)


def build_index(
    articles: list[tuple[str, str, str]],
    embed_backend,
    char_budget: int = DEFAULT_DOC_CHAR_BUDGET,
) -> RagIndex:
    """Embed (doc_id, title, text) triples into a unit-normalized index.

    Article text is truncated to the character budget before embedding.
    """
    ids = [a[0] for a in articles]
    if len(ids) != len(set(ids)):
        raise InputError("duplicate doc_id in input articles")
    for doc_id, _, text in articles:
        if not text.strip():
            raise InputError(f"article {doc_id!r} has empty text")
    if not articles:
        return RagIndex(doc_ids=[], vectors=np.zeros((0, 0)), meta={})
    vectors = np.asarray(
        embed_backend.embed([text[:char_budget] for _, _, text in articles]),
        dtype=np.float32,
    )
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if (norms == 0).any():
        raise InputError("zero embedding vector cannot be normalized")
    vectors = vectors / norms
    return RagIndex(
        doc_ids=ids,
        vectors=vectors,
        meta={doc_id: (title, text) for doc_id, title, text in articles},
    )


def retrieve_topk(
    index: RagIndex, query: str, k: int, embed_backend
) -> list[tuple[str, float]]:
    """Top-k docs by cosine similarity, descending; ties break by doc_id."""
    if k < 1:
        raise InputError("k must be >= 1")
    if index.n == 0:
        raise InputError("cannot retrieve from an empty index")
    qvec = np.asarray(embed_backend.embed([query])[0], dtype=np.float32)
    norm = np.linalg.norm(qvec)
    if norm > 0:
        qvec = qvec / norm
    scores = index.vectors @ qvec
    if k > index.n:
        log.warning("requested top-%d from an index of %d docs", k, index.n)
        k = index.n
    order = sorted(range(index.n), key=lambda i: (-scores[i], index.doc_ids[i]))
    return [(index.doc_ids[i], float(scores[i])) for i in order[:k]]


def assemble_rag_prompt(
    question: str,
    docs: list[tuple[str, str]],
    char_budget: int = DEFAULT_DOC_CHAR_BUDGET,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
) -> str:
    """Numbered context blocks followed by the plain question template."""
    if not docs:
        raise InputError("need at least one retrieved doc")
    blocks = [
        f"[{i}] {title}: {text[:char_budget]}"
        for i, (title, text) in enumerate(docs, start=1)
    ]
    return "Context:\n" + "\n".join(blocks) + "\n\n" + render_prompt(prompt_template, question)


class RagAnswerer:
    """Answer function: retrieve top-k docs, assemble the prompt, complete.

    The completion backend receives the fully assembled prompt, so its own
    template must be the identity.
    """

    def __init__(
        self,
        index: RagIndex,
        embed_backend,
        completion_backend,
        k: int = DEFAULT_TOP_K,
        char_budget: int = DEFAULT_DOC_CHAR_BUDGET,
        max_new_tokens: int = 32,
    ):
        self.index = index
        self.embed_backend = embed_backend
        self.completion_backend = completion_backend
        self.k = k
        self.char_budget = char_budget
        self.max_new_tokens = max_new_tokens

    def answer(self, question: str) -> str:
        hits = retrieve_topk(self.index, question, self.k, self.embed_backend)
        docs = [self.index.meta[doc_id] for doc_id, _ in hits]
        prompt = assemble_rag_prompt(question, docs, self.char_budget)
        return self.completion_backend.complete(prompt, max_new_tokens=self.max_new_tokens)


def save_index(index: RagIndex, path: str | Path) -> None:
    """Binary index file: JSON header line, one JSON line per doc with its
    byte offset into the trailing little-endian f32 blob."""
    d = int(index.vectors.shape[1]) if index.n else 0
    with open(path, "wb") as fh:
        fh.write(json.dumps({"n": index.n, "d": d}).encode("utf-8") + b"\n")
        for i, doc_id in enumerate(index.doc_ids):
            fh.write(
                json.dumps({"doc_id": doc_id, "vector_offset": i * d * 4}).encode("utf-8")
                + b"\n"
            )
        fh.write(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())


def load_index(path: str | Path, meta: dict[str, tuple[str, str]] | None = None) -> RagIndex:
    """Inverse of save_index; doc metadata is kept externally (facts.jsonl)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        n, d = header["n"], header["d"]
        doc_ids = []
        for _ in range(n):
            doc_ids.append(json.loads(fh.readline().decode("utf-8"))["doc_id"])
        blob = fh.read(n * d * 4)
    vectors = np.frombuffer(blob, dtype="<f4").reshape(n, d).copy()
    meta = meta or {}
    return RagIndex(doc_ids=doc_ids, vectors=vectors, meta=meta)
