import json
from pathlib import Path

import pytest

from dykpipe import cli
from factories import SAMPLE_PAGE


def write_config(workdir: Path, **overrides) -> Path:
    cfg = {
        "seed": 0,
        "clustering": {"kind": "semantic", "k": 2, "seed": 0},
        "corpus": {"objective": "span_prediction", "s": 12, "flavor": "bilm",
                   "min_len": 1, "max_len": 5, "seed": 0},
        "eval": {"system": "mock", "parallelism": 2, "max_new_tokens": 32, "top_k": 3},
        "qagen": {"max_retries": 3, "max_workers": 2,
                  "dimensions": ["reliability", "training"]},
    }
    cfg.update(overrides)
    path = workdir / "pipeline.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


@pytest.fixture
def workdir(tmp_path):
    pages = tmp_path / "pages"
    pages.mkdir()
    (pages / "2023-05-23.wiki").write_text(SAMPLE_PAGE, encoding="utf-8")
    (pages / "2023-06-01.wiki").write_text(
        "* ... that '''Ada Lovelace''' wrote the first program?\n"
        "* ... that '''Niagara Falls''' freezes over in some winters?\n",
        encoding="utf-8",
    )
    (pages / "README.md").write_text("not a page", encoding="utf-8")
    return tmp_path


def run_stage(config_path, stage, *extra):
    return cli.main([stage, "--config", str(config_path), *extra])


def last_summary(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


def test_ingest_stage(workdir, capsys):
    config = write_config(workdir)
    assert run_stage(config, "ingest") == 0
    summary = last_summary(capsys)
    assert summary["status"] == "ok"
    assert summary["n_facts"] == 5
    facts = (workdir / "facts.jsonl").read_text().strip().splitlines()
    assert len(facts) == 5
    links = json.loads((workdir / "facts.links.json").read_text())
    assert set(links) == {json.loads(line)["id"] for line in facts}


def test_ingest_missing_pages_dir(tmp_path, capsys):
    config = write_config(tmp_path)
    assert run_stage(config, "ingest") == 2
    assert last_summary(capsys)["status"] == "error"


def test_full_stage_chain(workdir, capsys):
    config = write_config(workdir)
    for stage in ("ingest", "questions", "corpus", "cluster", "scope-data", "rag-index", "eval"):
        assert run_stage(config, stage) == 0, stage
        assert last_summary(capsys)["status"] == "ok"

    questions = (workdir / "questions.jsonl").read_text().strip().splitlines()
    assert questions

    sidecar = json.loads((workdir / "corpus.meta.json").read_text())
    assert sidecar["s"] == 12
    assert sidecar["config_fingerprint"]

    clusters = json.loads((workdir / "clusters.json").read_text())
    assert clusters["k"] == 2
    assert clusters["kind"] == "semantic"

    scope = (workdir / "scope.jsonl").read_text().strip().splitlines()
    assert all(sum(json.loads(s)["labels"]) == 1 for s in scope)

    # mock system memorizes every question, so the eval is perfect
    records = [json.loads(x) for x in (workdir / "records.jsonl").read_text().strip().splitlines()]
    assert records and all(r["match"] for r in records)
    report = json.loads((workdir / "reports" / "report.json").read_text())
    assert all(d["match_pct"] == 100.0 for d in report["dimensions"].values())
    assert (workdir / "reports" / "report.png").read_bytes()[:4] == b"\x89PNG"

    assert run_stage(config, "report") == 0
    assert last_summary(capsys)["status"] == "ok"


def test_questions_before_ingest_exits_2(workdir, capsys):
    config = write_config(workdir)
    assert run_stage(config, "questions") == 2
    reason = last_summary(capsys)["reason"]
    assert "facts" in reason


def test_invalid_threshold_exits_3(workdir, capsys):
    config = write_config(workdir)
    assert run_stage(config, "ingest", "--threshold", "1.5") == 3
    assert last_summary(capsys)["status"] == "error"


def test_unknown_backend_kind_exits_3(workdir, capsys):
    config = write_config(workdir, backends={"generator": {"kind": "nope"},
                                             "embedding": {"kind": "hash_embedding"},
                                             "base": {"kind": "echo"},
                                             "answer": {"kind": "mock_memorizer"}})
    assert run_stage(config, "ingest") == 0
    assert run_stage(config, "questions") == 3
    assert "nope" in last_summary(capsys)["reason"]


def test_unreadable_config_exits_3(tmp_path, capsys):
    bad = tmp_path / "nope.json"
    assert run_stage(bad, "ingest") == 3
    assert last_summary(capsys)["status"] == "error"


def test_temporal_clustering(workdir, capsys):
    config = write_config(workdir, clustering={"kind": "temporal", "k": 2, "seed": 0})
    assert run_stage(config, "ingest") == 0
    assert run_stage(config, "cluster") == 0
    summary = last_summary(capsys)
    assert summary["kind"] == "temporal" and summary["em_iterations"] == 0


def test_seed_override_changes_fingerprint(workdir, capsys):
    config = write_config(workdir)
    assert run_stage(config, "ingest") == 0
    fp_default = last_summary(capsys)["fingerprint"]
    assert run_stage(config, "ingest", "--seed", "7") == 0
    assert last_summary(capsys)["fingerprint"] != fp_default


def test_stage_outputs_deterministic(workdir, capsys):
    config = write_config(workdir)
    outputs = ["facts.jsonl", "questions.jsonl", "corpus.jsonl", "clusters.json"]
    snapshots = []
    for _ in range(2):
        for artifact in outputs:
            (workdir / artifact).unlink(missing_ok=True)
        for stage in ("ingest", "questions", "corpus", "cluster"):
            assert run_stage(config, stage) == 0
        snapshots.append({a: (workdir / a).read_bytes() for a in outputs})
    capsys.readouterr()
    assert snapshots[0] == snapshots[1]


def test_env_interpolation_in_config(workdir, capsys, monkeypatch):
    monkeypatch.setenv("FACTS_NAME", "renamed_facts.jsonl")
    config = write_config(workdir, paths={"facts": "${FACTS_NAME}"})
    assert run_stage(config, "ingest") == 0
    capsys.readouterr()
    assert (workdir / "renamed_facts.jsonl").exists()

    monkeypatch.delenv("FACTS_NAME")
    assert run_stage(config, "ingest") == 3
    assert "FACTS_NAME" in last_summary(capsys)["reason"]
