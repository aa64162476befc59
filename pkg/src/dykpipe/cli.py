"""Single entry point orchestrating all pipeline stages from one config file.

Each invocation runs exactly one stage; stages declare their required inputs
and fail fast (exit 2) when one is missing, so failures stay attributable.
Summaries go to stdout as one JSON line, logs to stderr.

    dykpipe <stage> --config pipeline.json [--seed N]

Stages: ingest, questions, corpus, cluster, scope-data, route-serve,
rag-index, eval, report.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import backends as be
from . import clusterer, corpus, corpusbuilder, evalharness, qagen, ragstore, scoperouter
from .config import PipelineConfig
from .errors import InputError, PipelineError, ValidationError

log = logging.getLogger("dykpipe")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_MISSING_INPUT = 2
EXIT_VALIDATION = 3

STAGES = (
    "ingest", "questions", "corpus", "cluster", "scope-data",
    "route-serve", "rag-index", "eval", "report",
)


class MissingInput(PipelineError):
    def __init__(self, artifact: str):
        super().__init__(f"missing required input: {artifact}")
        self.artifact = artifact


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingInput(f"{what} ({path})")
    return path


def build_backend(cfg: dict, pipeline: PipelineConfig, template_override: str | None = None):
    """Instantiate a backend from its config block."""
    kind = cfg.get("kind", "")
    template = template_override or cfg.get("prompt_template", be.DEFAULT_PROMPT_TEMPLATE)

    def spec(spec_kind: str) -> be.BackendSpec:
        return be.BackendSpec(
            kind=spec_kind,
            endpoint=cfg.get("endpoint", ""),
            auth_env=cfg.get("auth_env", ""),
            timeout_ms=cfg.get("timeout_ms", 30000),
            max_retries=cfg.get("max_retries", 3),
            backoff_s=cfg.get("backoff_s", 0.5),
            prompt_template=template,
            batch_size=cfg.get("batch_size", 64),
        )

    if kind == "completion":
        return be.CompletionClient(spec("completion"))
    if kind == "embedding":
        return be.EmbeddingClient(spec("embedding"))
    if kind == "classifier":
        return be.ClassifierClient(spec("classifier"), k=cfg.get("k"))
    if kind == "hash_embedding":
        return be.HashEmbedder(dim=cfg.get("dim", 64))
    if kind == "stub_generator":
        return qagen.StubGenerator()
    if kind == "echo":
        return be.EchoCompletion(prompt_template=template)
    if kind == "mock_memorizer":
        entries_path = cfg.get("entries_path")
        path = Path(entries_path) if entries_path else pipeline.path("questions")
        mock = be.MockMemorizer(fallback=cfg.get("fallback", "UNKNOWN"))
        if path.exists():
            for item in qagen.load_items(path):
                mock.add(item.question, item.answer)
        return mock
    raise InputError(f"unknown backend kind {kind!r}")


def _page_date(name: str) -> datetime.date:
    try:
        return datetime.date.fromisoformat(name[:10])
    except ValueError as exc:
        raise InputError(f"page file {name!r} does not start with YYYY-MM-DD") from exc


def stage_ingest(cfg: PipelineConfig) -> dict:
    pages_dir = _require(cfg.path("pages"), "pages directory")
    window = corpus.DateWindow(
        datetime.date.fromisoformat(cfg.raw["window"]["start"]),
        datetime.date.fromisoformat(cfg.raw["window"]["end"]),
    )
    facts: list[corpus.FactRecord] = []
    links: dict[str, list[str]] = {}
    n_skipped = 0
    for page in sorted(pages_dir.iterdir()):
        if page.suffix not in (".wiki", ".txt"):
            continue
        records, report = corpus.parse_dyk_page(
            page.read_text(encoding="utf-8"), _page_date(page.name)
        )
        facts.extend(records)
        links.update(report.links)
        n_skipped += report.n_skipped_no_bold + report.n_skipped_malformed
    kept = corpus.filter_facts(facts, window)
    corpus.save_facts(kept, cfg.path("facts"))
    with open(cfg.path("links"), "w", encoding="utf-8") as fh:
        json.dump({fid: links.get(fid, []) for fid in sorted(k.id for k in kept)},
                  fh, sort_keys=True)
        fh.write("\n")
    return {"n_facts": len(kept), "n_parsed": len(facts), "n_skipped_entries": n_skipped}


def stage_questions(cfg: PipelineConfig) -> dict:
    facts = corpus.load_facts(_require(cfg.path("facts"), "facts file"))
    links = {}
    if cfg.path("links").exists():
        links = json.loads(cfg.path("links").read_text(encoding="utf-8"))
    pages_text = {}
    pt = cfg.raw["paths"].get("pages_text")
    if pt:
        pages_text = json.loads(cfg.path("pages_text").read_text(encoding="utf-8"))

    generators = {"default": build_backend(cfg.raw["backends"]["generator"], cfg)}
    for dim in qagen.DIMENSIONS:
        key = f"generator_{dim}"
        if key in cfg.raw["backends"]:
            generators[dim] = build_backend(cfg.raw["backends"][key], cfg)

    existing = []
    qpath = cfg.path("questions")
    if qpath.exists():
        existing = qagen.load_items(qpath)
    items, report = qagen.generate_for_facts(
        facts,
        generators,
        existing=existing,
        links=links,
        pages=pages_text,
        dimensions=tuple(cfg.raw["qagen"]["dimensions"]),
        max_retries=cfg.raw["qagen"]["max_retries"],
        max_workers=cfg.raw["qagen"]["max_workers"],
    )
    problems = qagen.validate_questions(items, facts)
    if problems:
        raise ValidationError("; ".join(problems[:5]))
    qagen.save_items(items, qpath)
    return {
        "n_items": len(items),
        "n_generated": report.generated,
        "n_skipped_existing": report.skipped_existing,
        "n_dropped": len(report.dropped),
    }


def stage_corpus(cfg: PipelineConfig) -> dict:
    spec = cfg.raw["corpus"]
    objective = spec["objective"]
    seed = spec.get("seed", cfg.raw["seed"])
    if objective == corpusbuilder.SPAN_PREDICTION:
        facts = corpus.load_facts(_require(cfg.path("facts"), "facts file"))
        built = corpusbuilder.build_span_corpus(
            facts, spec["s"], flavor=spec["flavor"],
            min_len=spec["min_len"], max_len=spec["max_len"], seed=seed,
        )
    elif objective == corpusbuilder.NTP:
        facts = corpus.load_facts(_require(cfg.path("facts"), "facts file"))
        built = corpusbuilder.build_ntp_corpus(facts, spec["s"], seed=seed)
    elif objective == corpusbuilder.SYNTHETIC_QA:
        items = qagen.load_items(_require(cfg.path("questions"), "questions file"))
        training = [i for i in items if i.dimension == qagen.TRAINING]
        built = corpusbuilder.build_qa_corpus(training, spec["s"], seed=seed)
    else:
        raise InputError(f"unknown corpus objective {objective!r}")
    meta = corpusbuilder.write_corpus(
        built, cfg.path("corpus"), extra_meta={"config_fingerprint": cfg.fingerprint()}
    )
    return {"objective": objective, "n_records": meta["n_records"], "n_facts": meta["n_facts"]}


def stage_cluster(cfg: PipelineConfig) -> dict:
    facts = corpus.load_facts(_require(cfg.path("facts"), "facts file"))
    spec = cfg.raw["clustering"]
    k = spec["k"]
    seed = spec.get("seed", cfg.raw["seed"])
    if spec["kind"] == clusterer.TEMPORAL:
        assignment = clusterer.temporal_partition(facts, k)
        clusterer.save_clusters(assignment, cfg.path("clusters"), seed=seed)
        trace_len = 0
    elif spec["kind"] == clusterer.SEMANTIC:
        embedder = build_backend(cfg.raw["backends"]["embedding"], cfg)
        vectors = np.asarray(embedder.embed([f.text for f in facts]))
        fit = clusterer.fit_gmm(vectors, k, seed=seed)
        assignment, _ = clusterer.gmm_assign(vectors, fit.params, [f.id for f in facts])
        clusterer.save_clusters(
            assignment, cfg.path("clusters"), seed=seed,
            gmm=fit.params, loglik_trace=fit.loglik_trace,
        )
        trace_len = len(fit.loglik_trace)
    else:
        raise InputError(f"unknown clustering kind {spec['kind']!r}")
    sidecar = cfg.path("clusters").with_suffix(".meta.json")
    sidecar.write_text(
        json.dumps({"config_fingerprint": cfg.fingerprint()}, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return {"kind": spec["kind"], "k": k, "n_facts": len(facts), "em_iterations": trace_len}


def stage_scope_data(cfg: PipelineConfig) -> dict:
    assignment, _, _ = clusterer.load_clusters(_require(cfg.path("clusters"), "clusters file"))
    items = qagen.load_items(_require(cfg.path("questions"), "questions file"))
    positives = [i for i in items if i.dimension != qagen.LOCALITY and i.fact_id in assignment.map]
    negatives = []
    neg_path = cfg.raw["paths"].get("negatives")
    if neg_path:
        negatives = qagen.load_items(_require(cfg.path("negatives"), "negatives file"))
    examples = scoperouter.build_scope_dataset(
        assignment, positives, negatives, seed=cfg.raw["seed"]
    )
    scoperouter.save_scope_dataset(examples, cfg.path("scope"))
    n_val = sum(1 for e in examples if e.split == "val")
    return {"n_examples": len(examples), "n_negatives": len(negatives), "n_val": n_val}


def _articles_from_facts(facts: list[corpus.FactRecord]) -> list[tuple[str, str, str]]:
    return [
        (f.id, f.article_title, f.article_text if f.article_text.strip() else f.text)
        for f in facts
    ]


def stage_rag_index(cfg: PipelineConfig) -> dict:
    facts = corpus.load_facts(_require(cfg.path("facts"), "facts file"))
    embedder = build_backend(cfg.raw["backends"]["embedding"], cfg)
    index = ragstore.build_index(_articles_from_facts(facts), embedder)
    ragstore.save_index(index, cfg.path("index"))
    return {"n_docs": index.n, "dim": int(index.vectors.shape[1]) if index.n else 0}


def _build_router_answerer(cfg: PipelineConfig, facts, items):
    assignment, gmm, _ = clusterer.load_clusters(_require(cfg.path("clusters"), "clusters file"))
    router_cfg = cfg.raw["router"]
    embedder = build_backend(cfg.raw["backends"]["embedding"], cfg)
    scorer_kind = router_cfg["scorer"]

    if scorer_kind == scoperouter.SCORER_REMOTE:
        client = build_backend(cfg.raw["backends"]["classifier"], cfg)
        scorer = scoperouter.RemoteClassifierScorer(client, assignment.k)
    elif scorer_kind == scoperouter.SCORER_GMM:
        if gmm is None:
            raise InputError("gmm scorer requires a semantic clusters file")
        vectors = np.asarray(embedder.embed([f.text for f in facts]))
        scorer = scoperouter.GmmPosteriorScorer(gmm, embedder, vectors)
    elif scorer_kind == scoperouter.SCORER_CENTROID:
        vectors = embedder.embed([f.text for f in facts])
        by_fact = {f.id: v for f, v in zip(facts, vectors)}
        by_fact = {fid: v for fid, v in by_fact.items() if fid in assignment.map}
        scorer = scoperouter.NearestCentroidScorer.from_assignment(
            assignment, by_fact, embedder=embedder
        )
    elif scorer_kind == "oracle":
        scorer = scoperouter.OracleScorer(assignment)
    else:
        raise InputError(f"unknown scorer {scorer_kind!r}")

    cluster_cfgs = cfg.raw["backends"].get("cluster_backends")
    cluster_backends: dict[int, object] = {}
    if cluster_cfgs:
        for idx, bcfg in cluster_cfgs.items():
            cluster_backends[int(idx)] = build_backend(bcfg, cfg)
    else:
        # desk-scale default: one exact-recall memorizer per cluster, loaded
        # with the questions of that cluster's facts
        for c in range(assignment.k):
            cluster_backends[c] = be.MockMemorizer()
        for item in items:
            c = assignment.map.get(item.fact_id)
            if c is not None:
                cluster_backends[c].add(item.question, item.answer)

    base = build_backend(cfg.raw["backends"]["base"], cfg)
    answerer = scoperouter.EnsembleAnswerer(
        scorer=scorer,
        cluster_backends=cluster_backends,
        base_backend=base,
        threshold=router_cfg["threshold"],
        max_new_tokens=cfg.raw["eval"]["max_new_tokens"],
        oracle_assignment=assignment if scorer_kind == "oracle" else None,
    )
    return answerer, assignment


def stage_eval(cfg: PipelineConfig) -> dict:
    items = qagen.load_items(_require(cfg.path("questions"), "questions file"))
    system = cfg.raw["eval"]["system"]
    max_new = cfg.raw["eval"]["max_new_tokens"]

    if system == "mock":
        mock = be.MockMemorizer()
        for item in items:
            mock.add(item.question, item.answer)

        def answer_fn(item):
            return mock.complete(item.question, max_new_tokens=max_new)

    elif system == "static":
        client = build_backend(cfg.raw["backends"]["answer"], cfg)

        def answer_fn(item):
            return client.complete(item.question, max_new_tokens=max_new)

    elif system == "rag":
        facts = corpus.load_facts(_require(cfg.path("facts"), "facts file"))
        embedder = build_backend(cfg.raw["backends"]["embedding"], cfg)
        index_path = cfg.path("index")
        if index_path.exists():
            meta = {f.id: (f.article_title, f.article_text or f.text) for f in facts}
            index = ragstore.load_index(index_path, meta)
        else:
            index = ragstore.build_index(_articles_from_facts(facts), embedder)
        completion = build_backend(
            cfg.raw["backends"]["answer"], cfg, template_override="{question}"
        )
        rag = ragstore.RagAnswerer(
            index, embedder, completion,
            k=cfg.raw["eval"].get("top_k", 3), max_new_tokens=max_new,
        )

        def answer_fn(item):
            return rag.answer(item.question)

    elif system == "router":
        facts = corpus.load_facts(_require(cfg.path("facts"), "facts file"))
        answerer, _ = _build_router_answerer(cfg, facts, items)

        def answer_fn(item):
            return answerer.answer_item(item)

    else:
        raise InputError(f"unknown eval system {system!r}")

    records, report = evalharness.run_eval(
        items,
        answer_fn,
        parallelism=cfg.raw["eval"]["parallelism"],
        records_path=cfg.path("records"),
        system=system,
        config_fingerprint=cfg.fingerprint(),
    )
    evalharness.emit_report(report, records, cfg.path("reports"))
    return {
        "system": system,
        "n_questions": len(records),
        "n_errored": report.n_errored,
        "dimensions": report.dimensions,
    }


def stage_report(cfg: PipelineConfig) -> dict:
    records = evalharness.load_records(_require(cfg.path("records"), "records file"))
    report = evalharness._aggregate(records, cfg.raw["eval"]["system"], cfg.fingerprint(), 0.0)
    paths = evalharness.emit_report(report, records, cfg.path("reports"))
    return {"n_records": len(records), "outputs": {k: str(v) for k, v in paths.items()}}


def stage_route_serve(cfg: PipelineConfig, port: int) -> dict:
    import uvicorn

    facts = corpus.load_facts(_require(cfg.path("facts"), "facts file"))
    items = []
    if cfg.path("questions").exists():
        items = qagen.load_items(cfg.path("questions"))
    answerer, assignment = _build_router_answerer(cfg, facts, items)
    app = scoperouter.build_service(answerer, cfg.raw["router"]["scorer"], assignment.k)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    return {"served": True}


def run(
    config_path: str | PipelineConfig,
    stage: str,
    seed: int | None = None,
    port: int = 8080,
) -> int:
    """Execute one stage; returns the process exit status."""
    if isinstance(config_path, PipelineConfig):
        cfg = config_path
    else:
        try:
            cfg = PipelineConfig.load(config_path, seed_override=seed)
        except InputError as exc:
            print(json.dumps({"stage": stage, "status": "error", "reason": str(exc)}))
            return EXIT_VALIDATION

    handlers = {
        "ingest": stage_ingest,
        "questions": stage_questions,
        "corpus": stage_corpus,
        "cluster": stage_cluster,
        "scope-data": stage_scope_data,
        "rag-index": stage_rag_index,
        "eval": stage_eval,
        "report": stage_report,
    }
    try:
        if stage == "route-serve":
            summary = stage_route_serve(cfg, port)
        elif stage in handlers:
            summary = handlers[stage](cfg)
        else:
            raise InputError(f"unknown stage {stage!r}")
    except MissingInput as exc:
        print(json.dumps({"stage": stage, "status": "error", "reason": str(exc)}))
        return EXIT_MISSING_INPUT
    except (InputError, ValidationError) as exc:
        print(json.dumps({"stage": stage, "status": "error", "reason": str(exc)}))
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(json.dumps({"stage": stage, "status": "error", "reason": str(exc)}))
        return EXIT_RUNTIME
    summary = {"stage": stage, "status": "ok", "fingerprint": cfg.fingerprint(), **summary}
    print(json.dumps(summary, ensure_ascii=False))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dykpipe", description=__doc__)
    parser.add_argument("stage", choices=STAGES)
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--port", type=int, default=8080, help="route-serve port")
    parser.add_argument("--threshold", type=float, default=None, help="override router threshold")
    parser.add_argument("--scorer", choices=("remote", "gmm", "centroid", "oracle"),
                        default=None, help="override router scorer")
    parser.add_argument("--clusters", default=None, help="override clusters path")
    args = parser.parse_args(argv)

    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        cfg = PipelineConfig.load(args.config, seed_override=args.seed)
    except InputError as exc:
        print(json.dumps({"stage": args.stage, "status": "error", "reason": str(exc)}))
        return EXIT_VALIDATION
    if args.threshold is not None:
        cfg.raw["router"]["threshold"] = args.threshold
    if args.scorer is not None:
        cfg.raw["router"]["scorer"] = args.scorer
    if args.clusters is not None:
        cfg.raw["paths"]["clusters"] = args.clusters
    try:
        cfg.validate()
    except InputError as exc:
        print(json.dumps({"stage": args.stage, "status": "error", "reason": str(exc)}))
        return EXIT_VALIDATION
    return run(cfg, args.stage, seed=args.seed, port=args.port)
