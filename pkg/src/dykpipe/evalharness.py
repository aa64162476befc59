"""Score answer functions over the question file.

Two metrics, both computed on verbatim strings (no lowercasing, no
punctuation stripping): substring match (case-sensitive containment of the
gold answer in the prediction) and token F1 over whitespace tokens with
multiset overlap.  Reports aggregate per dimension as percentages and are
emitted as JSON, a markdown table, and a rendered bar-chart figure.
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError, PipelineError
from .qagen import QAItem
from .scoperouter import RouteDecision

log = logging.getLogger(__name__)

DEFAULT_ERROR_CEILING = 0.05


@dataclass(frozen=True)
class EvalRecord:
    fact_id: str
    dimension: str
    question: str
    gold: str
    prediction: str
    match: bool
    f1: float
    route: dict | None = None
    error: str | None = None

    def to_obj(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "dimension": self.dimension,
            "question": self.question,
            "gold": self.gold,
            "prediction": self.prediction,
            "match": self.match,
            "f1": self.f1,
            "route": self.route,
            "error": self.error,
        }


@dataclass
class EvalReport:
    # dimension -> {"match_pct", "f1_pct", "n"}
    dimensions: dict[str, dict] = field(default_factory=dict)
    n_total: int = 0
    n_errored: int = 0
    config_fingerprint: str = ""
    elapsed_s: float = 0.0
    system: str = ""

    def to_obj(self) -> dict:
        return {
            "system": self.system,
            "dimensions": self.dimensions,
            "n_total": self.n_total,
            "n_errored": self.n_errored,
            "config_fingerprint": self.config_fingerprint,
            "elapsed_s": self.elapsed_s,
        }


def match_metric(prediction: str, gold: str) -> bool:
    """True iff gold is a contiguous, case-sensitive substring of prediction."""
    if not gold:
        raise InputError("gold answer must be non-empty")
    return gold in prediction


def token_f1(prediction: str, gold: str) -> float:
    """Token F1 on whitespace tokens with multiset overlap."""
    if not gold:
        raise InputError("gold answer must be non-empty")
    pred_tokens = prediction.split()
    gold_tokens = gold.split()
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def _aggregate(records: list[EvalRecord], system: str, fingerprint: str, elapsed: float) -> EvalReport:
    report = EvalReport(system=system, config_fingerprint=fingerprint, elapsed_s=elapsed)
    report.n_total = len(records)
    scored = [r for r in records if r.error is None]
    report.n_errored = len(records) - len(scored)
    dims = sorted({r.dimension for r in scored})
    for dim in dims:
        rows = [r for r in scored if r.dimension == dim]
        n = len(rows)
        report.dimensions[dim] = {
            "match_pct": 100.0 * sum(r.match for r in rows) / n,
            "f1_pct": 100.0 * sum(r.f1 for r in rows) / n,
            "n": n,
        }
    return report


def run_eval(
    questions: list[QAItem],
    answer_fn,
    parallelism: int = 8,
    records_path: str | Path | None = None,
    error_ceiling: float = DEFAULT_ERROR_CEILING,
    system: str = "",
    config_fingerprint: str = "",
) -> tuple[list[EvalRecord], EvalReport]:
    """Evaluate one answer function over all questions.

    answer_fn(item) returns either a prediction string or a
    (prediction, RouteDecision) pair.  Errored questions are recorded,
    excluded from aggregates, and counted; the run fails only when the error
    rate exceeds the ceiling.  Records are persisted (ordered by question
    index) before aggregation so partial runs stay inspectable.
    """
    start = time.monotonic()

    def score_one(item: QAItem) -> EvalRecord:
        try:
            result = answer_fn(item)
        except PipelineError as exc:
            return EvalRecord(
                item.fact_id, item.dimension, item.question, item.answer,
                "", False, 0.0, None, error=str(exc),
            )
        if isinstance(result, tuple):
            prediction, decision = result
            route_obj = decision.to_obj() if isinstance(decision, RouteDecision) else decision
        else:
            prediction, route_obj = result, None
        if route_obj is not None:
            # the query text is already in the record; drop it from the summary
            route_obj = {key: v for key, v in route_obj.items() if key != "query"}
        return EvalRecord(
            item.fact_id, item.dimension, item.question, item.answer,
            prediction, match_metric(prediction, item.answer),
            token_f1(prediction, item.answer), route_obj,
        )

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(score_one, questions))
    else:
        records = [score_one(q) for q in questions]

    if records_path is not None:
        with open(records_path, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(r.to_obj(), ensure_ascii=False, sort_keys=True) + "\n")

    n_errored = sum(1 for r in records if r.error is not None)
    if questions and n_errored / len(questions) > error_ceiling:
        raise PipelineError(
            f"answer function errored on {n_errored}/{len(questions)} questions "
            f"(ceiling {error_ceiling:.0%})"
        )

    report = _aggregate(records, system, config_fingerprint, time.monotonic() - start)
    return records, report


def _markdown_table(reports: list[EvalReport]) -> str:
    dims = sorted({d for r in reports for d in r.dimensions})
    header = ["System"] + [f"{d} {col}" for d in dims for col in ("Match", "F1")]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "---|" * len(header)]
    for r in reports:
        cells = [r.system or "system"]
        for d in dims:
            agg = r.dimensions.get(d)
            if agg is None:
                cells.extend(["-", "-"])
            else:
                cells.extend([f"{agg['match_pct']:.2f}", f"{agg['f1_pct']:.2f}"])
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(
    report: EvalReport,
    records: list[EvalRecord],
    out_dir: str | Path,
    figure: bool = True,
) -> dict[str, Path]:
    """Write report.json, report.md and a per-dimension bar-chart figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    json_path = out_dir / "report.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["json"] = json_path

    md_path = out_dir / "report.md"
    md_path.write_text(_markdown_table([report]), encoding="utf-8")
    paths["md"] = md_path

    if figure and report.dimensions:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        dims = sorted(report.dimensions)
        match = [report.dimensions[d]["match_pct"] for d in dims]
        f1 = [report.dimensions[d]["f1_pct"] for d in dims]
        x = range(len(dims))
        fig, ax = plt.subplots(figsize=(1.8 * len(dims) + 2, 4))
        ax.bar([i - 0.2 for i in x], match, width=0.4, label="Match %")
        ax.bar([i + 0.2 for i in x], f1, width=0.4, label="F1 %")
        ax.set_xticks(list(x))
        ax.set_xticklabels(dims, rotation=20)
        ax.set_ylabel("percent")
        ax.set_ylim(0, 100)
        ax.set_title(report.system or "evaluation")
        ax.legend()
        fig.tight_layout()
        fig_path = out_dir / "report.png"
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)
        paths["figure"] = fig_path

    return paths


def load_records(path: str | Path) -> list[EvalRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                out.append(
                    EvalRecord(
                        obj["fact_id"], obj["dimension"], obj["question"], obj["gold"],
                        obj["prediction"], obj["match"], obj["f1"],
                        obj.get("route"), obj.get("error"),
                    )
                )
    return out
