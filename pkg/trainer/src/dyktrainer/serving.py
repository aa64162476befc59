"""Serve a trained artifact over the shared wire contract.

Injection artifacts expose POST /complete; scope-classifier artifacts expose
POST /classify; both answer GET /health.  A single model instance handles
requests serialized behind a lock.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

import torch

from .injection import BILM_SENTINEL, build_tiny_model
from .scope import BagOfWordsClassifier, featurize
from .vocab import WordVocab

MAX_NEW_TOKENS_DEFAULT = 32
MAX_NEW_TOKENS_LIMIT = 512


class Artifact:
    """A loaded model plus everything needed to answer requests."""

    def __init__(self, artifact_dir: str | Path):
        self.dir = Path(artifact_dir)
        manifest_path = self.dir / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no manifest.json in {self.dir}")
        self.manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        self.kind = self.manifest.get("kind")
        self._lock = threading.Lock()

        if self.kind == "injection":
            self._load_injection()
        elif self.kind == "scope_classifier":
            self._load_classifier()
        else:
            raise ValueError(f"unknown artifact kind {self.kind!r}")

    def _load_injection(self) -> None:
        model_type = self.manifest.get("model_type")
        if model_type == "builtin_tiny":
            self.vocab = WordVocab.load(self.dir / "vocab.json")
            model = build_tiny_model(self.vocab)
            model.load_state_dict(torch.load(self.dir / "model.pt", weights_only=True))
            self.tokenizer = None
        elif model_type == "hf_seq2seq":
            from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(self.dir)
            model = AutoModelForSeq2SeqLM.from_pretrained(self.dir)
            self.vocab = None
        else:
            raise ValueError(f"unknown model_type {model_type!r}")
        model.eval()
        self.model = model

    def _load_classifier(self) -> None:
        self.vocab = WordVocab.load(self.dir / "vocab.json")
        model = BagOfWordsClassifier(self.manifest["vocab_size"], self.manifest["k"])
        model.load_state_dict(torch.load(self.dir / "model.pt", weights_only=True))
        model.eval()
        self.model = model

    def complete(self, prompt: str, max_new_tokens: int) -> str:
        if self.kind != "injection":
            raise ValueError("this artifact does not serve /complete")
        # bidirectional flavor: one sentinel placeholder is appended after the
        # rendered prompt; the decoded span is the answer
        if self.manifest.get("flavor") == "bilm" and BILM_SENTINEL not in prompt:
            prompt = prompt + " " + BILM_SENTINEL
        with self._lock, torch.no_grad():
            if self.vocab is not None:
                input_ids = torch.tensor([self.vocab.encode(prompt)], dtype=torch.long)
                generated = self.model.generate(
                    input_ids=input_ids,
                    attention_mask=torch.ones_like(input_ids),
                    max_new_tokens=max_new_tokens,
                    do_sample=False,
                    num_beams=1,
                )
                return self.vocab.decode(generated[0].tolist())
            enc = self.tokenizer(prompt, return_tensors="pt", truncation=True, max_length=512)
            generated = self.model.generate(
                **enc, max_new_tokens=max_new_tokens, do_sample=False, num_beams=1
            )
            return self.tokenizer.decode(generated[0], skip_special_tokens=True)

    def classify(self, texts: list[str]) -> list[list[float]]:
        if self.kind != "scope_classifier":
            raise ValueError("this artifact does not serve /classify")
        with self._lock, torch.no_grad():
            scores = torch.sigmoid(self.model(featurize(texts, self.vocab)))
        return [[float(v) for v in row] for row in scores]


def build_app(artifact: Artifact):
    from fastapi import Body, FastAPI, HTTPException

    app = FastAPI()

    @app.get("/health")
    def health():
        info = {"status": "ok", "kind": artifact.kind}
        if artifact.kind == "scope_classifier":
            info["k"] = artifact.manifest["k"]
        else:
            info["objective"] = artifact.manifest.get("objective")
        return info

    def complete(body=Body(...)):
        if not isinstance(body, dict) or not isinstance(body.get("prompt"), str):
            raise HTTPException(400, "body must be a JSON object with a string 'prompt'")
        max_new = body.get("max_new_tokens", MAX_NEW_TOKENS_DEFAULT)
        if not isinstance(max_new, int) or not (1 <= max_new <= MAX_NEW_TOKENS_LIMIT):
            raise HTTPException(400, f"max_new_tokens must be an int in [1, {MAX_NEW_TOKENS_LIMIT}]")
        try:
            text = artifact.complete(body["prompt"], max_new)
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return {"text": text}

    def classify(body=Body(...)):
        texts = body.get("texts") if isinstance(body, dict) else None
        if (
            not isinstance(texts, list)
            or not texts
            or not all(isinstance(t, str) for t in texts)
        ):
            raise HTTPException(400, "body must be a JSON object with a non-empty 'texts' list")
        try:
            scores = artifact.classify(texts)
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return {"scores": scores}

    app.post("/complete")(complete)
    app.post("/classify")(classify)
    return app


def serve(artifact_dir: str | Path, port: int, host: str = "127.0.0.1") -> None:
    import uvicorn

    app = build_app(Artifact(artifact_dir))
    uvicorn.run(app, host=host, port=port, log_level="warning")
