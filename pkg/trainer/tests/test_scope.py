import json

import pytest

from dyktrainer.scope import load_scope_file, train_scope
from serverutil import write_jsonl

TOY_HYPERPARAMS = {"learning_rate": 0.05, "batch_size": 64, "epochs": 200}


def toy_rows(n_per=20, n_val=4):
    """k=3 clusters with disjoint vocabularies plus out-of-scope rows."""
    rows = []
    for c in range(3):
        labels = [0, 0, 0]
        labels[c] = 1
        for i in range(n_per):
            rows.append(
                {
                    "text": f"cluster{c}key topic{i} asks about cluster{c}word entity{i}",
                    "labels": labels,
                    "split": "val" if i < n_val else "train",
                }
            )
    for i in range(n_per):
        rows.append(
            {
                "text": f"ancient archive history item {i} from the archive",
                "labels": [0, 0, 0],
                "split": "val" if i < n_val else "train",
            }
        )
    return rows


def test_load_scope_validation(tmp_path):
    path = tmp_path / "scope.jsonl"
    write_jsonl(path, toy_rows(4))
    rows, k = load_scope_file(path)
    assert k == 3 and len(rows) == 16

    write_jsonl(path, [{"text": "x", "labels": [0, 0]}, {"text": "y", "labels": [0, 1, 0]}])
    with pytest.raises(ValueError, match="width"):
        load_scope_file(path)

    write_jsonl(path, [{"text": "x", "labels": [1, 1, 0]}])
    with pytest.raises(ValueError, match="one-hot"):
        load_scope_file(path)

    write_jsonl(path, [{"text": "x", "labels": [0, 0, 0]}])
    with pytest.raises(ValueError, match="no positive"):
        load_scope_file(path)


def test_train_scope_toy_metrics(tmp_path):
    path = tmp_path / "scope.jsonl"
    write_jsonl(path, toy_rows())
    out = train_scope(path, tmp_path / "clf", hyperparams=TOY_HYPERPARAMS, seed=0)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kind"] == "scope_classifier"
    assert manifest["k"] == 3
    metrics = manifest["metrics"]
    assert metrics["n_val"] == 16
    assert metrics["routing_accuracy"] >= 0.9
    assert all(auc is None or auc > 0.9 for auc in metrics["per_class_auc"])
    for name in ("model.pt", "vocab.json", "manifest.json"):
        assert (out / name).exists()


def test_paper_default_hyperparams_accepted(tmp_path):
    path = tmp_path / "scope.jsonl"
    write_jsonl(path, toy_rows(6))
    out = train_scope(path, tmp_path / "clf")  # lr 2e-5, batch 128, 10 epochs
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["hyperparams"] == {
        "learning_rate": 2e-5, "batch_size": 128, "epochs": 10,
    }
