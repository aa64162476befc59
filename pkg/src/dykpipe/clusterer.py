"""Partition facts semantically (diagonal-covariance GMM fitted with EM) or
temporally (contiguous chronological blocks).

All responsibility arithmetic runs in log space; covariances are diagonal and
floored, which keeps the fit well-conditioned at sentence-embedding
dimensions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import FactRecord
from .errors import InputError

SEMANTIC = "semantic"
TEMPORAL = "temporal"

_COLLAPSE_MASS = 1e-8


@dataclass(frozen=True)
class GmmParams:
    """Mixture weights, means and diagonal variances of a fitted GMM."""

    k: int
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    variances: np.ndarray  # (k, d)
    var_floor: float

    def __post_init__(self) -> None:
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise InputError("mixture weights must sum to 1")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.means).all() and np.isfinite(self.variances).all()):
            raise InputError("non-finite GMM parameters")
        if (self.variances < self.var_floor - 1e-15).any():
            raise InputError("variance below floor")


@dataclass
class GmmFitResult:
    params: GmmParams
    loglik_trace: list[float]  # per-point mean log-likelihood per iteration
    n_reseeds: int = 0


@dataclass(frozen=True)
class ClusterAssignment:
    """fact_id -> cluster index in [0, k)."""

    kind: str
    k: int
    map: dict[str, int]

    def __post_init__(self) -> None:
        for fid, c in self.map.items():
            if not (0 <= c < self.k):
                raise InputError(f"cluster index {c} for {fid} outside [0,{self.k})")


def _log_gaussian(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(n, k) log densities of diagonal Gaussians."""
    # log N(x; mu, diag(v)) = -0.5 * sum(log(2*pi*v) + (x-mu)^2 / v)
    n, d = x.shape
    out = np.empty((n, means.shape[0]))
    for j in range(means.shape[0]):
        diff2 = (x - means[j]) ** 2
        out[:, j] = -0.5 * (np.log(2.0 * np.pi * variances[j]).sum() + (diff2 / variances[j]).sum(axis=1))
    return out


def _log_responsibilities(x: np.ndarray, params: GmmParams) -> tuple[np.ndarray, np.ndarray]:
    """Returns (log posteriors (n,k), per-point log marginal (n,))."""
    logp = _log_gaussian(x, params.means, params.variances) + np.log(params.weights)
    norm = np.logaddexp.reduce(logp, axis=1)
    return logp - norm[:, None], norm


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding: D^2-weighted draw of k distinct rows."""
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            [((x - c) ** 2).sum(axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(n)])
            continue
        centers.append(x[rng.choice(n, p=d2 / total)])
    return np.array(centers)


def fit_gmm(
    embeddings: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> GmmFitResult:
    """Fit a diagonal-covariance GMM with EM.

    Stops when the per-point mean log-likelihood improves by less than tol,
    or after max_iter iterations.  Components whose responsibility mass
    collapses are re-seeded from the point with the lowest likelihood.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise InputError("embeddings must be a 2-D matrix")
    n, d = x.shape
    if not (n >= k >= 1) or d < 1:
        raise InputError(f"need n >= k >= 1 and d >= 1, got n={n} k={k} d={d}")
    if not np.isfinite(x).all():
        raise InputError("embeddings contain non-finite values")

    var_floor = max(1e-6 * float(x.var(axis=0).mean()), 1e-12)
    rng = np.random.default_rng(seed)

    if k == 1:
        # single component: the maximum-likelihood fit is the sample mean and
        # per-dimension variance, so use the closed form instead of EM
        params = GmmParams(
            1,
            np.ones(1),
            x.mean(axis=0)[None, :],
            np.maximum(x.var(axis=0), var_floor)[None, :],
            var_floor,
        )
        _, log_marginal = _log_responsibilities(x, params)
        return GmmFitResult(params=params, loglik_trace=[float(log_marginal.mean())])

    means = _kmeanspp_centers(x, k, rng)
    variances = np.tile(np.maximum(x.var(axis=0), var_floor), (k, 1))
    weights = np.full(k, 1.0 / k)
    params = GmmParams(k, weights, means, variances, var_floor)

    trace: list[float] = []
    n_reseeds = 0
    for _ in range(max_iter):
        log_resp, log_marginal = _log_responsibilities(x, params)
        mean_ll = float(log_marginal.mean())
        trace.append(mean_ll)
        if len(trace) >= 2 and trace[-1] - trace[-2] < tol:
            break

        resp = np.exp(log_resp)
        mass = resp.sum(axis=0)

        collapsed = np.flatnonzero(mass < _COLLAPSE_MASS)
        if collapsed.size:
            worst = int(np.argmin(log_marginal))
            for j in collapsed:
                resp[:, j] = 0.0
                resp[worst, j] = 1.0
                n_reseeds += 1
            resp /= resp.sum(axis=1, keepdims=True)
            mass = resp.sum(axis=0)

        weights = mass / n
        means = (resp.T @ x) / mass[:, None]
        variances = np.empty_like(means)
        for j in range(k):
            diff2 = (x - means[j]) ** 2
            variances[j] = (resp[:, j] @ diff2) / mass[j]
        variances = np.maximum(variances, var_floor)
        params = GmmParams(k, weights, means, variances, var_floor)

    return GmmFitResult(params=params, loglik_trace=trace, n_reseeds=n_reseeds)


def gmm_assign(
    embeddings: np.ndarray, params: GmmParams, fact_ids: list[str] | None = None
) -> tuple[ClusterAssignment, np.ndarray]:
    """Argmax-posterior assignment; ties break to the lowest cluster index."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.means.shape[1]:
        raise InputError(
            f"embedding dim {x.shape[-1] if x.ndim == 2 else '?'} does not match "
            f"model dim {params.means.shape[1]}"
        )
    log_resp, _ = _log_responsibilities(x, params)
    posteriors = np.exp(log_resp)
    labels = np.argmax(posteriors, axis=1)
    ids = fact_ids if fact_ids is not None else [str(i) for i in range(x.shape[0])]
    assignment = ClusterAssignment(
        kind=SEMANTIC, k=params.k, map={fid: int(c) for fid, c in zip(ids, labels)}
    )
    return assignment, posteriors


def temporal_partition(facts: list[FactRecord], k: int) -> ClusterAssignment:
    """Chronological split into k contiguous blocks.

    Facts are sorted by (date, id); the first n mod k blocks get ceil(n/k)
    facts, the rest floor(n/k).
    """
    n = len(facts)
    if k < 1:
        raise InputError("k must be >= 1")
    if k > n:
        raise InputError(f"cannot split {n} facts into {k} blocks")
    ordered = sorted(facts, key=lambda f: (f.date, f.id))
    big, rem = divmod(n, k)
    mapping: dict[str, int] = {}
    pos = 0
    for block in range(k):
        size = big + (1 if block < rem else 0)
        for fact in ordered[pos : pos + size]:
            mapping[fact.id] = block
        pos += size
    return ClusterAssignment(kind=TEMPORAL, k=k, map=mapping)


def save_clusters(
    assignment: ClusterAssignment,
    path: str | Path,
    seed: int = 0,
    gmm: GmmParams | None = None,
    loglik_trace: list[float] | None = None,
) -> None:
    obj = {
        "kind": assignment.kind,
        "k": assignment.k,
        "seed": seed,
        "assignments": dict(sorted(assignment.map.items())),
        "gmm": None
        if gmm is None
        else {
            "weights": gmm.weights.tolist(),
            "means": gmm.means.tolist(),
            "variances": gmm.variances.tolist(),
        },
        "loglik_trace": list(loglik_trace or []),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def load_clusters(path: str | Path) -> tuple[ClusterAssignment, GmmParams | None, list[float]]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    assignment = ClusterAssignment(kind=obj["kind"], k=obj["k"], map=obj["assignments"])
    gmm = None
    if obj.get("gmm"):
        weights = np.array(obj["gmm"]["weights"])
        means = np.array(obj["gmm"]["means"])
        variances = np.array(obj["gmm"]["variances"])
        gmm = GmmParams(
            k=obj["k"],
            weights=weights,
            means=means,
            variances=variances,
            var_floor=float(variances.min()),
        )
    return assignment, gmm, list(obj.get("loglik_trace", []))
