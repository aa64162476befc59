"""Scope-classifier datasets and confidence-threshold query routing.

A router scores an incoming query against k knowledge clusters and either
routes it to the best cluster's backend or defers to the base LLM when the
maximum score falls below the confidence threshold.  Scorers come in three
kinds: a remote classifier endpoint, GMM posteriors with a density gate, and
a nearest-centroid softmax fallback.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import ClassifierClient
from .clusterer import ClusterAssignment, GmmParams, _log_responsibilities
from .errors import InputError, TransportError
from .qagen import QAItem

DEFER = "defer"
CLUSTER = "cluster"

SCORER_REMOTE = "remote"
SCORER_GMM = "gmm"
SCORER_CENTROID = "centroid"
SCORER_KINDS = (SCORER_REMOTE, SCORER_GMM, SCORER_CENTROID)

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class ScopeExample:
    """One classifier training row: one-hot for in-scope, all-zero otherwise."""

    text: str
    labels: tuple[int, ...]
    split: str = "train"

    def __post_init__(self) -> None:
        ones = sum(self.labels)
        if any(v not in (0, 1) for v in self.labels) or ones > 1:
            raise InputError("labels must be one-hot or all zeros")


@dataclass(frozen=True)
class RouteDecision:
    """Per-query routing outcome."""

    query: str
    scores: tuple[float, ...]
    decision: str  # CLUSTER or DEFER
    cluster: int | None
    threshold: float

    def to_obj(self) -> dict:
        return {
            "query": self.query,
            "scores": list(self.scores),
            "decision": self.decision,
            "cluster": self.cluster,
            "threshold": self.threshold,
        }


def build_scope_dataset(
    assignment: ClusterAssignment,
    questions: list[QAItem],
    negatives: list[QAItem],
    seed: int = 0,
    val_fraction: float = 0.1,
) -> list[ScopeExample]:
    """One-hot rows for in-scope questions, all-zero rows for negatives.

    Output order is a seeded shuffle; the train/validation split is
    stratified by label pattern.
    """
    neg_ids = {q.fact_id for q in negatives}
    rows: list[tuple[str, tuple[int, ...]]] = []
    for q in questions:
        if q.fact_id in neg_ids:
            raise InputError(f"fact {q.fact_id} appears in both positives and negatives")
        if q.fact_id not in assignment.map:
            raise InputError(f"fact {q.fact_id} missing from the cluster assignment")
        labels = [0] * assignment.k
        labels[assignment.map[q.fact_id]] = 1
        rows.append((q.question, tuple(labels)))
    zero = tuple([0] * assignment.k)
    for q in negatives:
        rows.append((q.question, zero))

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(rows))

    # stratified split: within each label pattern, the first ~10% of the
    # shuffled order goes to validation
    by_pattern: dict[tuple[int, ...], list[int]] = {}
    for pos in order:
        by_pattern.setdefault(rows[pos][1], []).append(int(pos))
    val_positions: set[int] = set()
    for positions in by_pattern.values():
        n_val = int(round(val_fraction * len(positions)))
        val_positions.update(positions[:n_val])

    return [
        ScopeExample(
            text=rows[pos][0],
            labels=rows[pos][1],
            split="val" if pos in val_positions else "train",
        )
        for pos in map(int, order)
    ]


def save_scope_dataset(examples: list[ScopeExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {"text": ex.text, "labels": list(ex.labels), "split": ex.split},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_scope_dataset(path: str | Path) -> list[ScopeExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                out.append(
                    ScopeExample(obj["text"], tuple(obj["labels"]), obj.get("split", "train"))
                )
    return out


class RemoteClassifierScorer:
    """Per-cluster sigmoid scores from a classifier endpoint."""

    kind = SCORER_REMOTE

    def __init__(self, client: ClassifierClient, k: int):
        self.client = client
        self.k = k

    def score(self, query: str) -> np.ndarray:
        row = self.client.classify([query])[0]
        if len(row) != self.k:
            raise TransportError(f"classifier returned {len(row)} scores, expected {self.k}")
        return np.asarray(row, dtype=np.float64)


class GmmPosteriorScorer:
    """Posterior under a fitted GMM, gated by mixture log-density.

    Raw posteriors always sum to 1 and cannot express "out of scope", so a
    query whose log-density falls below the gate (the 1st percentile of
    training-fact log-densities) gets all-zero scores.
    """

    kind = SCORER_GMM

    def __init__(self, params: GmmParams, embedder, train_embeddings: np.ndarray,
                 gate_percentile: float = 1.0):
        self.params = params
        self.embedder = embedder
        self.k = params.k
        _, log_density = _log_responsibilities(
            np.asarray(train_embeddings, dtype=np.float64), params
        )
        self.gate = float(np.percentile(log_density, gate_percentile))

    def score(self, query: str) -> np.ndarray:
        vec = np.asarray(self.embedder.embed([query]), dtype=np.float64)
        log_resp, log_density = _log_responsibilities(vec, self.params)
        if float(log_density[0]) < self.gate:
            return np.zeros(self.k)
        return np.exp(log_resp[0])


class NearestCentroidScorer:
    """Softmax over negative euclidean distances to cluster centroids."""

    kind = SCORER_CENTROID

    def __init__(self, centroids: np.ndarray, embedder, temperature: float = 1.0):
        self.centroids = np.asarray(centroids, dtype=np.float64)
        self.embedder = embedder
        self.k = self.centroids.shape[0]
        if temperature <= 0:
            raise InputError("temperature must be positive")
        self.temperature = temperature

    @classmethod
    def from_assignment(
        cls, assignment: ClusterAssignment, embeddings_by_fact: dict[str, list[float]],
        temperature: float = 1.0, embedder=None,
    ) -> "NearestCentroidScorer":
        dim = len(next(iter(embeddings_by_fact.values())))
        sums = np.zeros((assignment.k, dim))
        counts = np.zeros(assignment.k)
        for fid, c in assignment.map.items():
            if fid not in embeddings_by_fact:
                raise InputError(f"no embedding for fact {fid}")
            sums[c] += np.asarray(embeddings_by_fact[fid])
            counts[c] += 1
        if (counts == 0).any():
            raise InputError("empty cluster has no centroid")
        return cls(sums / counts[:, None], embedder, temperature)

    def score(self, query: str) -> np.ndarray:
        vec = np.asarray(self.embedder.embed([query])[0], dtype=np.float64)
        d = np.linalg.norm(self.centroids - vec, axis=1)
        logits = -d / self.temperature
        logits -= logits.max()
        e = np.exp(logits)
        return e / e.sum()


class OracleScorer:
    """Ground-truth scorer for perfect-routing ablations."""

    kind = "oracle"

    def __init__(self, assignment: ClusterAssignment, out_of_scope: set[str] | None = None):
        self.assignment = assignment
        self.k = assignment.k
        self.out_of_scope = set(out_of_scope or ())
        self._by_question: dict[str, str] = {}

    def register(self, question: str, fact_id: str) -> None:
        self._by_question[" ".join(question.split())] = fact_id

    def score(self, query: str) -> np.ndarray:
        fid = self._by_question.get(" ".join(query.split()))
        scores = np.zeros(self.k)
        if fid is not None and fid in self.assignment.map:
            scores[self.assignment.map[fid]] = 1.0
        return scores


def _decide(query: str, scores: np.ndarray, threshold: float) -> RouteDecision:
    if not np.isfinite(scores).all() or (scores < 0).any() or (scores > 1).any():
        raise InputError(f"scores outside [0,1]: {scores}")
    best = int(np.argmax(scores))
    if float(scores[best]) >= threshold:
        return RouteDecision(query, tuple(map(float, scores)), CLUSTER, best, threshold)
    return RouteDecision(query, tuple(map(float, scores)), DEFER, None, threshold)


def route(query: str, scorer, threshold: float = DEFAULT_THRESHOLD) -> RouteDecision:
    """Score the query and pick a cluster or defer by the threshold rule."""
    if not (0.0 <= threshold <= 1.0):
        raise InputError("threshold must be in [0, 1]")
    scores = np.asarray(scorer.score(query), dtype=np.float64)
    return _decide(query, scores, threshold)


def route_with_oracle(
    query_item: QAItem,
    assignment: ClusterAssignment,
    out_of_scope_dimensions: tuple[str, ...] = ("locality",),
) -> RouteDecision:
    """Deterministic ground-truth routing from the query item's fact id.

    Items of an out-of-scope dimension (locality by default, since those
    probe pretrained knowledge) always defer; everything else must be in the
    assignment.
    """
    scores = np.zeros(assignment.k)
    if query_item.dimension in out_of_scope_dimensions:
        return _decide(query_item.question, scores, DEFAULT_THRESHOLD)
    if query_item.fact_id not in assignment.map:
        raise InputError(
            f"fact {query_item.fact_id} neither assigned nor out of scope"
        )
    scores[assignment.map[query_item.fact_id]] = 1.0
    return _decide(query_item.question, scores, DEFAULT_THRESHOLD)


@dataclass
class EnsembleAnswerer:
    """Route a question, then answer with the chosen cluster backend or the
    base backend on deferral.

    Cluster backends and the base backend expose complete(question).
    """

    scorer: object
    cluster_backends: dict[int, object]
    base_backend: object
    threshold: float = DEFAULT_THRESHOLD
    max_new_tokens: int = 32
    oracle_assignment: ClusterAssignment | None = None
    decisions: list[RouteDecision] = field(default_factory=list)

    def answer_item(self, item: QAItem) -> tuple[str, RouteDecision]:
        if self.oracle_assignment is not None:
            decision = route_with_oracle(item, self.oracle_assignment)
        else:
            decision = route(item.question, self.scorer, self.threshold)
        return self._finish(item.question, decision)

    def answer(self, question: str) -> tuple[str, RouteDecision]:
        decision = route(question, self.scorer, self.threshold)
        return self._finish(question, decision)

    def _finish(self, question: str, decision: RouteDecision) -> tuple[str, RouteDecision]:
        self.decisions.append(decision)
        if decision.decision == CLUSTER:
            backend = self.cluster_backends.get(decision.cluster)
            if backend is None:
                raise InputError(f"no backend for cluster {decision.cluster}")
        else:
            backend = self.base_backend
        return backend.complete(question, max_new_tokens=self.max_new_tokens), decision


def build_service(answerer: EnsembleAnswerer, scorer_name: str, k: int):
    """FastAPI app implementing the routing service wire protocol."""
    from fastapi import FastAPI
    from pydantic import create_model

    # built dynamically so the deferred-annotations mode of this module does
    # not leave the field type as an unresolvable string
    AnswerRequest = create_model("AnswerRequest", question=(str, ...))

    app = FastAPI()

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "k": k, "scorer": scorer_name}

    def answer(req):
        text, decision = answerer.answer(req.question)
        if decision.decision == CLUSTER:
            route_obj = {"kind": "cluster", "id": decision.cluster}
        else:
            route_obj = {"kind": "defer"}
        return {"answer": text, "route": route_obj, "scores": list(decision.scores)}

    answer.__annotations__["req"] = AnswerRequest
    app.post("/v1/answer")(answer)

    return app
