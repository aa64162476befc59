"""Train the k-sigmoid scope classifier on scope.jsonl.

A bag-of-words linear model with one sigmoid output per cluster, trained
with binary cross-entropy; validation-split metrics (per-class AUC and
routing accuracy at threshold 0.5) go into the artifact manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
from sklearn.metrics import roc_auc_score

from .vocab import WordVocab

DEFAULT_SCOPE_HYPERPARAMS = {"learning_rate": 2e-5, "batch_size": 128, "epochs": 10}
ROUTING_THRESHOLD = 0.5
DEFER = -1


def load_scope_file(path: str | Path) -> tuple[list[dict], int]:
    """Read and validate scope.jsonl; returns (rows, k)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scope file missing: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if not rows:
        raise ValueError("scope file is empty")
    k = len(rows[0]["labels"])
    for row in rows:
        labels = row["labels"]
        if len(labels) != k:
            raise ValueError(f"label width {len(labels)} != {k}")
        if any(v not in (0, 1) for v in labels) or sum(labels) > 1:
            raise ValueError(f"labels must be one-hot or all zeros, got {labels}")
    if not any(sum(row["labels"]) == 1 for row in rows):
        raise ValueError("scope file has no positive rows")
    return rows, k


class BagOfWordsClassifier(torch.nn.Module):
    def __init__(self, vocab_size: int, k: int):
        super().__init__()
        self.linear = torch.nn.Linear(vocab_size, k)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.linear(features)


def featurize(texts: list[str], vocab: WordVocab) -> torch.Tensor:
    out = torch.zeros(len(texts), len(vocab))
    for i, text in enumerate(texts):
        for token_id in vocab.encode(text, add_eos=False):
            out[i, token_id] += 1.0
    return out


def route_labels(label_rows: torch.Tensor) -> torch.Tensor:
    """Cluster index for one-hot rows, DEFER for all-zero rows."""
    routes = label_rows.argmax(dim=1)
    routes[label_rows.sum(dim=1) == 0] = DEFER
    return routes


def predicted_routes(scores: torch.Tensor, threshold: float = ROUTING_THRESHOLD) -> torch.Tensor:
    routes = scores.argmax(dim=1)
    routes[scores.max(dim=1).values < threshold] = DEFER
    return routes


def train_scope(
    scope_path: str | Path,
    output_dir: str | Path,
    hyperparams: dict | None = None,
    seed: int = 0,
) -> Path:
    rows, k = load_scope_file(scope_path)
    hp = dict(DEFAULT_SCOPE_HYPERPARAMS)
    hp.update(hyperparams or {})

    train_rows = [r for r in rows if r.get("split", "train") != "val"]
    val_rows = [r for r in rows if r.get("split", "train") == "val"]
    if not train_rows:
        raise ValueError("scope file has no training rows")

    torch.manual_seed(seed)
    vocab = WordVocab.build(r["text"] for r in train_rows)
    model = BagOfWordsClassifier(len(vocab), k)

    x = featurize([r["text"] for r in train_rows], vocab)
    y = torch.tensor([r["labels"] for r in train_rows], dtype=torch.float32)
    loss_fn = torch.nn.BCEWithLogitsLoss()
    optimizer = torch.optim.AdamW(model.parameters(), lr=hp["learning_rate"])
    gen = torch.Generator().manual_seed(seed)

    model.train()
    for _ in range(hp["epochs"]):
        order = torch.randperm(len(train_rows), generator=gen)
        for i in range(0, len(order), hp["batch_size"]):
            idx = order[i : i + hp["batch_size"]]
            loss = loss_fn(model(x[idx]), y[idx])
            loss.backward()
            optimizer.step()
            optimizer.zero_grad()

    metrics = {"n_train": len(train_rows), "n_val": len(val_rows)}
    if val_rows:
        model.eval()
        with torch.no_grad():
            val_x = featurize([r["text"] for r in val_rows], vocab)
            val_y = torch.tensor([r["labels"] for r in val_rows], dtype=torch.float32)
            scores = torch.sigmoid(model(val_x))
        aucs = []
        for j in range(k):
            col = val_y[:, j].numpy()
            if col.min() == col.max():  # AUC undefined with one class present
                aucs.append(None)
            else:
                aucs.append(float(roc_auc_score(col, scores[:, j].numpy())))
        matches = predicted_routes(scores) == route_labels(val_y)
        metrics["per_class_auc"] = aucs
        metrics["routing_accuracy"] = float(matches.float().mean())

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(output_dir / "vocab.json")
    torch.save(model.state_dict(), output_dir / "model.pt")
    manifest = {
        "kind": "scope_classifier",
        "k": k,
        "vocab_size": len(vocab),
        "hyperparams": hp,
        "seed": seed,
        "metrics": metrics,
    }
    (output_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return output_dir
