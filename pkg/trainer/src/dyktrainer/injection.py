"""Fine-tune a model on an emitted training corpus.

Records are consumed exactly as written (input -> target pairs); the only
transformation applied is tokenization.  Every artifact directory carries a
manifest.json echoing the corpus fingerprint, hyperparameters and seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .vocab import WordVocab

OBJECTIVES = ("ntp", "synthetic_qa", "span_prediction")
BUILTIN_TINY = "builtin:tiny-bilm"
BILM_SENTINEL = "<extra_id_0>"

DEFAULT_HYPERPARAMS = {"learning_rate": 3e-4, "batch_size": 128, "epochs": 1}


@dataclass
class TrainRun:
    corpus_path: Path
    objective: str
    base_model: str = BUILTIN_TINY
    hyperparams: dict = field(default_factory=lambda: dict(DEFAULT_HYPERPARAMS))
    output_dir: Path = Path("artifact")
    seed: int = 0

    def __post_init__(self) -> None:
        self.corpus_path = Path(self.corpus_path)
        self.output_dir = Path(self.output_dir)
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        merged = dict(DEFAULT_HYPERPARAMS)
        merged.update(self.hyperparams)
        self.hyperparams = merged
        if self.hyperparams["epochs"] < 1:
            raise ValueError("epochs must be >= 1")


def load_corpus(path: str | Path) -> tuple[list[dict], dict]:
    """Read corpus.jsonl and its .meta.json sidecar, in file order."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file missing: {path}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    meta = {}
    sidecar = path.with_suffix(".meta.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    return records, meta


def corpus_fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def pad_batch(seqs: list[list[int]], pad_id: int) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    return torch.tensor([s + [pad_id] * (width - len(s)) for s in seqs], dtype=torch.long)


def iter_batches(records: list[dict], vocab: WordVocab, batch_size: int,
                 shuffle: bool = False, seed: int = 0):
    """Yield (inputs, attention_mask, labels) tensors; file order unless shuffled."""
    order = list(range(len(records)))
    if shuffle:
        gen = torch.Generator().manual_seed(seed)
        order = torch.randperm(len(records), generator=gen).tolist()
    for i in range(0, len(order), batch_size):
        chunk = [records[j] for j in order[i : i + batch_size]]
        inputs = pad_batch([vocab.encode(r["input"]) for r in chunk], vocab.pad_id)
        targets = pad_batch([vocab.encode(r["target"]) for r in chunk], vocab.pad_id)
        attention = (inputs != vocab.pad_id).long()
        labels = targets.masked_fill(targets == vocab.pad_id, -100)
        yield inputs, attention, labels


def build_tiny_model(vocab: WordVocab):
    from transformers import T5Config, T5ForConditionalGeneration

    config = T5Config(
        vocab_size=len(vocab),
        d_model=64,
        d_kv=16,
        d_ff=128,
        num_layers=2,
        num_decoder_layers=2,
        num_heads=4,
        dropout_rate=0.0,
        pad_token_id=vocab.pad_id,
        eos_token_id=vocab.eos_id,
        decoder_start_token_id=vocab.pad_id,
    )
    return T5ForConditionalGeneration(config)


def _validate_corpus(run: TrainRun, records: list[dict], meta: dict) -> None:
    if not records:
        raise ValueError(f"corpus {run.corpus_path} is empty")
    if meta.get("objective") and meta["objective"] != run.objective:
        raise ValueError(
            f"objective mismatch: run says {run.objective!r}, "
            f"corpus sidecar says {meta['objective']!r}"
        )
    for r in records:
        if r.get("objective") != run.objective:
            raise ValueError(
                f"record objective {r.get('objective')!r} does not match run "
                f"objective {run.objective!r}"
            )
        if not r.get("target"):
            raise ValueError("corpus record has an empty target")


def train_injection(run: TrainRun) -> Path:
    """Train on the corpus and write a servable artifact directory."""
    records, meta = load_corpus(run.corpus_path)
    _validate_corpus(run, records, meta)

    torch.manual_seed(run.seed)
    hp = run.hyperparams

    if run.base_model == BUILTIN_TINY:
        vocab = WordVocab.build(
            [r["input"] for r in records] + [r["target"] for r in records]
        )
        model = build_tiny_model(vocab)
        tokenizer = None
    else:
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(run.base_model)
        model = AutoModelForSeq2SeqLM.from_pretrained(run.base_model)
        vocab = None

    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=hp["learning_rate"])
    losses = []
    for epoch in range(hp["epochs"]):
        if vocab is not None:
            batches = iter_batches(
                records, vocab, hp["batch_size"], shuffle=True, seed=run.seed + epoch
            )
        else:
            batches = _hf_batches(records, tokenizer, hp["batch_size"], run.seed + epoch)
        for inputs, attention, labels in batches:
            out = model(input_ids=inputs, attention_mask=attention, labels=labels)
            out.loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            losses.append(float(out.loss.detach()))

    run.output_dir.mkdir(parents=True, exist_ok=True)
    if vocab is not None:
        vocab.save(run.output_dir / "vocab.json")
        model.config.to_json_file(run.output_dir / "config.json")
        torch.save(model.state_dict(), run.output_dir / "model.pt")
        model_type = "builtin_tiny"
    else:
        model.save_pretrained(run.output_dir)
        tokenizer.save_pretrained(run.output_dir)
        model_type = "hf_seq2seq"

    manifest = {
        "kind": "injection",
        "model_type": model_type,
        "base_model": run.base_model,
        "objective": run.objective,
        "flavor": meta.get("flavor"),
        "corpus_fingerprint": corpus_fingerprint(run.corpus_path),
        "hyperparams": run.hyperparams,
        "seed": run.seed,
        "metrics": {
            "n_records": len(records),
            "n_steps": len(losses),
            "final_loss": losses[-1],
            "mean_loss": sum(losses) / len(losses),
        },
    }
    (run.output_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return run.output_dir


def _hf_batches(records: list[dict], tokenizer, batch_size: int, seed: int):
    gen = torch.Generator().manual_seed(seed)
    order = torch.randperm(len(records), generator=gen).tolist()
    for i in range(0, len(order), batch_size):
        chunk = [records[j] for j in order[i : i + batch_size]]
        enc = tokenizer(
            [r["input"] for r in chunk], padding=True, truncation=True,
            max_length=512, return_tensors="pt",
        )
        tgt = tokenizer(
            [r["target"] for r in chunk], padding=True, truncation=True,
            max_length=64, return_tensors="pt",
        )
        labels = tgt.input_ids.masked_fill(tgt.input_ids == tokenizer.pad_token_id, -100)
        yield enc.input_ids, enc.attention_mask, labels
