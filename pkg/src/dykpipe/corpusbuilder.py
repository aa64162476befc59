"""Build injection training corpora for the three objectives.

Span corpora use exhaustive single-span masking: every (start, length)
candidate within the length bounds is enumerated once, then a seeded-shuffle
cycle over the candidate list is repeated until the per-fact record count
reaches the upsampling factor s.  Tokenization is whitespace-based so the
corpus format stays independent of any model tokenizer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .corpus import FactRecord
from .errors import InputError
from .qagen import QAItem

NTP = "ntp"
SYNTHETIC_QA = "synthetic_qa"
SPAN_PREDICTION = "span_prediction"
OBJECTIVES = (NTP, SYNTHETIC_QA, SPAN_PREDICTION)

BILM_SENTINEL = "<extra_id_0>"
CLM_SENTINEL = "[MASK]"
CLM_PROMPT_PREFIX = "Predict the masked words in the following sentence: "
CLM_PROMPT_SUFFIX = "\nMasked words:\n"
QA_INPUT_SUFFIX = "\nAnswer:"


@dataclass(frozen=True)
class MaskedExample:
    """One text with a single contiguous token span removed."""

    fact_id: str
    span_start: int
    span_len: int
    masked_input: str
    target: str
    placeholder: str = BILM_SENTINEL


@dataclass(frozen=True)
class CorpusRecord:
    fact_id: str
    objective: str
    input: str
    target: str

    def to_obj(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "objective": self.objective,
            "input": self.input,
            "target": self.target,
        }


@dataclass
class TrainingCorpus:
    """Objective-specific training data; records may be a lazy stream."""

    objective: str
    upsampling: int
    records: Iterable[CorpusRecord]
    seed: int
    meta: dict = field(default_factory=dict)


def splice(masked_input: str, target: str, placeholder: str) -> str:
    """Put the removed span back; inverse of masking at the token level."""
    tokens = []
    for token in masked_input.split():
        if token == placeholder:
            tokens.extend(target.split())
        else:
            tokens.append(token)
    return " ".join(tokens)


def count_span_candidates(n_tokens: int, min_len: int, max_len: int) -> int:
    """Closed form: sum over span lengths of the number of start positions."""
    return sum(max(0, n_tokens - length + 1) for length in range(min_len, max_len + 1))


def enumerate_span_candidates(
    tokens: list[str],
    min_len: int = 1,
    max_len: int = 5,
    fact_id: str = "",
    placeholder: str = BILM_SENTINEL,
) -> list[MaskedExample]:
    """All single-span masking candidates, ordered by (span_start, span_len)."""
    if not tokens:
        raise InputError("token list is empty")
    if min_len < 1 or max_len < min_len:
        raise InputError(f"bad span bounds min={min_len} max={max_len}")
    n = len(tokens)
    out = []
    for start in range(n):
        for length in range(min_len, max_len + 1):
            if start + length > n:
                break
            masked = tokens[:start] + [placeholder] + tokens[start + length :]
            out.append(
                MaskedExample(
                    fact_id=fact_id,
                    span_start=start,
                    span_len=length,
                    masked_input=" ".join(masked),
                    target=" ".join(tokens[start : start + length]),
                    placeholder=placeholder,
                )
            )
    return out


def _cycle_indices(n: int, s: int, rng: np.random.Generator) -> Iterator[int]:
    """Yield s indices cycling over a seeded shuffle of range(n).

    Every index appears floor(s/n) or ceil(s/n) times.
    """
    order = rng.permutation(n)
    emitted = 0
    while emitted < s:
        take = min(n, s - emitted)
        for idx in order[:take]:
            yield int(idx)
        emitted += take


def _fact_rng(seed: int, fact_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, int(fact_id[:15] or "0", 16)])


def build_span_corpus(
    facts: list[FactRecord],
    s: int,
    flavor: str = "bilm",
    min_len: int = 1,
    max_len: int = 5,
    seed: int = 0,
    bilm_sentinel: str = BILM_SENTINEL,
    clm_sentinel: str = CLM_SENTINEL,
) -> TrainingCorpus:
    """Span-prediction corpus with exactly s records per fact.

    The bilm flavor emits the masked text directly with a sentinel
    placeholder; the clm flavor wraps it in the mask-prediction prompt with a
    [MASK] placeholder.  Facts with zero candidates are excluded and counted.
    """
    if s < 1:
        raise InputError("upsampling s must be >= 1")
    if flavor not in ("bilm", "clm"):
        raise InputError(f"unknown flavor {flavor!r}")
    placeholder = bilm_sentinel if flavor == "bilm" else clm_sentinel
    excluded: list[str] = []
    included = []
    for fact in facts:
        if count_span_candidates(len(fact.text.split()), min_len, max_len) > 0:
            included.append(fact)
        else:
            excluded.append(fact.id)

    def stream() -> Iterator[CorpusRecord]:
        for fact in included:
            candidates = enumerate_span_candidates(
                fact.text.split(), min_len, max_len, fact_id=fact.id, placeholder=placeholder
            )
            rng = _fact_rng(seed, fact.id)
            for idx in _cycle_indices(len(candidates), s, rng):
                cand = candidates[idx]
                if flavor == "bilm":
                    record_input = cand.masked_input
                else:
                    record_input = CLM_PROMPT_PREFIX + cand.masked_input + CLM_PROMPT_SUFFIX
                yield CorpusRecord(fact.id, SPAN_PREDICTION, record_input, cand.target)

    return TrainingCorpus(
        objective=SPAN_PREDICTION,
        upsampling=s,
        records=stream(),
        seed=seed,
        meta={
            "flavor": flavor,
            "min_len": min_len,
            "max_len": max_len,
            "n_facts": len(included),
            "excluded_facts": excluded,
        },
    )


def build_ntp_corpus(facts: list[FactRecord], s: int, seed: int = 0) -> TrainingCorpus:
    """Raw-text corpus: each fact text appears exactly s times as target,
    input empty, global order a seeded shuffle."""
    if s < 1:
        raise InputError("upsampling s must be >= 1")
    n = len(facts)

    def stream() -> Iterator[CorpusRecord]:
        rng = np.random.default_rng(seed)
        order = np.repeat(np.arange(n, dtype=np.int64), s)
        rng.shuffle(order)
        for idx in order:
            fact = facts[int(idx)]
            yield CorpusRecord(fact.id, NTP, "", fact.text)

    return TrainingCorpus(
        objective=NTP,
        upsampling=s,
        records=stream(),
        seed=seed,
        meta={"n_facts": n, "excluded_facts": []},
    )


def build_qa_corpus(
    training_items: list[QAItem], s: int, seed: int = 0
) -> TrainingCorpus:
    """Synthetic-QA corpus: per fact, s records cycling over its QA list."""
    if s < 1:
        raise InputError("upsampling s must be >= 1")
    by_fact: dict[str, list[QAItem]] = {}
    for item in training_items:
        by_fact.setdefault(item.fact_id, []).append(item)

    def stream() -> Iterator[CorpusRecord]:
        for fid in by_fact:
            qas = by_fact[fid]
            rng = _fact_rng(seed, fid)
            for idx in _cycle_indices(len(qas), s, rng):
                qa = qas[idx]
                yield CorpusRecord(fid, SYNTHETIC_QA, qa.question + QA_INPUT_SUFFIX, qa.answer)

    return TrainingCorpus(
        objective=SYNTHETIC_QA,
        upsampling=s,
        records=stream(),
        seed=seed,
        meta={"n_facts": len(by_fact), "excluded_facts": []},
    )


def write_corpus(corpus: TrainingCorpus, path: str | Path, extra_meta: dict | None = None) -> dict:
    """Stream corpus.jsonl to disk and write the corpus.meta.json sidecar.

    Returns the sidecar object (includes the final record count).
    """
    path = Path(path)
    n_records = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in corpus.records:
            fh.write(json.dumps(record.to_obj(), ensure_ascii=False) + "\n")
            n_records += 1
    meta = {
        "objective": corpus.objective,
        "s": corpus.upsampling,
        "seed": corpus.seed,
        "min_len": corpus.meta.get("min_len"),
        "max_len": corpus.meta.get("max_len"),
        "flavor": corpus.meta.get("flavor"),
        "n_facts": corpus.meta.get("n_facts"),
        "n_records": n_records,
    }
    meta.update(extra_meta or {})
    with open(path.with_suffix(".meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta
