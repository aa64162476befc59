"""Whitespace word vocabulary for the built-in tiny model profile.

Corpus records are whitespace-tokenized text, so a word-level vocabulary
round-trips them exactly; no subword merges means the detokenized training
batch equals the file contents verbatim.
"""

from __future__ import annotations

import json
from pathlib import Path

PAD = "<pad>"
EOS = "</s>"
UNK = "<unk>"
SPECIALS = (PAD, EOS, UNK)


class WordVocab:
    def __init__(self, tokens: list[str]):
        self.id_to_token = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @classmethod
    def build(cls, texts) -> "WordVocab":
        seen = {}
        for text in texts:
            for token in text.split():
                seen.setdefault(token, None)
        return cls(sorted(seen))

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, text: str, add_eos: bool = True) -> list[int]:
        ids = [self.token_to_id.get(t, self.unk_id) for t in text.split()]
        if add_eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids) -> str:
        tokens = []
        for i in ids:
            token = self.id_to_token[int(i)] if 0 <= int(i) < len(self.id_to_token) else UNK
            if token == EOS:
                break
            if token in (PAD, UNK):
                continue
            tokens.append(token)
        return " ".join(tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"tokens": self.id_to_token}, ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "WordVocab":
        tokens = json.loads(Path(path).read_text(encoding="utf-8"))["tokens"]
        vocab = cls.__new__(cls)
        vocab.id_to_token = tokens
        vocab.token_to_id = {t: i for i, t in enumerate(tokens)}
        return vocab
