"""Declarative pipeline configuration.

One JSON file drives every stage.  ``${VAR}`` strings are interpolated from
the environment (for secrets and host-specific paths); the canonical
fingerprint is computed over the interpolated config with sorted keys and is
embedded in output sidecars for provenance.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")

DEFAULT_CONFIG = {
    "seed": 0,
    "paths": {
        "pages": "pages",
        "facts": "facts.jsonl",
        "links": "facts.links.json",
        "pages_text": "",
        "questions": "questions.jsonl",
        "negatives": "",
        "corpus": "corpus.jsonl",
        "clusters": "clusters.json",
        "scope": "scope.jsonl",
        "index": "rag.index",
        "records": "records.jsonl",
        "reports": "reports",
    },
    "window": {"start": "2022-01-01", "end": "2025-04-30"},
    "backends": {
        "generator": {"kind": "stub_generator"},
        "embedding": {"kind": "hash_embedding", "dim": 64},
        "base": {"kind": "echo"},
        "answer": {"kind": "mock_memorizer"},
    },
    "clustering": {"kind": "semantic", "k": 3, "seed": 0},
    "router": {"scorer": "centroid", "threshold": 0.5},
    "corpus": {
        "objective": "span_prediction",
        "s": 1000,
        "min_len": 1,
        "max_len": 5,
        "flavor": "bilm",
        "seed": 0,
    },
    "eval": {"system": "mock", "parallelism": 8, "max_new_tokens": 32, "top_k": 3},
    "qagen": {"max_retries": 3, "max_workers": 8,
              "dimensions": ["reliability", "paraphrase", "generality", "training",
                             "portability", "locality"]},
}


def _interpolate(obj):
    if isinstance(obj, str):
        def sub(m):
            name = m.group(1)
            if name not in os.environ:
                raise InputError(f"config references undefined env var {name}")
            return os.environ[name]
        return _ENV_RE.sub(sub, obj)
    if isinstance(obj, list):
        return [_interpolate(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _interpolate(v) for k, v in obj.items()}
    return obj


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path)

    @classmethod
    def load(cls, path: str | Path, seed_override: int | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        raw = _interpolate(_merge(DEFAULT_CONFIG, user))
        if seed_override is not None:
            raw["seed"] = seed_override
        cfg = cls(raw=raw, base_dir=path.parent)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.raw["corpus"]["s"] < 1:
            raise InputError("corpus.s must be >= 1")
        thr = self.raw["router"]["threshold"]
        if not (0.0 <= thr <= 1.0):
            raise InputError("router.threshold must be in [0, 1]")
        if self.raw["clustering"]["k"] < 1:
            raise InputError("clustering.k must be >= 1")

    def path(self, name: str) -> Path:
        value = self.raw["paths"][name]
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def fingerprint(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
