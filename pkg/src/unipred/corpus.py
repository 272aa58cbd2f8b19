"""Plain-text corpus ingestion into a next-token labeled dataset."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DomainError, SpecError
from .seqcore import LabeledDataset, TokenSequence, Vocabulary

UNK = "<unk>"
TOKENIZERS = ("char", "whitespace")


def tokenize(text: str, tokenizer: str) -> list[str]:
    if tokenizer == "char":
        return list(text)
    if tokenizer == "whitespace":
        return text.split()
    raise DomainError(f"tokenizer must be one of {TOKENIZERS}")


def build_vocab(tokens: list[str], vocab_cap: int) -> tuple[dict, Vocabulary, int | None]:
    """Rank token types by frequency (ties: first occurrence).

    When there are more types than ``vocab_cap``, the top ``vocab_cap - 1``
    keep their rank as id and everything else maps to an UNK id equal to
    ``vocab_cap - 1``. The vocabulary is padded to at least two symbols.
    """
    if vocab_cap < 1:
        raise DomainError("vocab_cap must be at least 1")
    counts: dict[str, int] = {}
    first: dict[str, int] = {}
    for i, tok in enumerate(tokens):
        counts[tok] = counts.get(tok, 0) + 1
        first.setdefault(tok, i)
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    unk_id = None
    if len(ranked) > vocab_cap:
        ranked = ranked[: vocab_cap - 1]
        unk_id = vocab_cap - 1
    ids = {tok: i for i, tok in enumerate(ranked)}
    names = list(ranked) + ([UNK] if unk_id is not None else [])
    while len(names) < 2:
        names.append(f"<pad{len(names)}>")
    return ids, Vocabulary(len(names), tuple(names)), unk_id


def ingest_corpus(path, tokenizer: str = "char", vocab_cap: int = 10000) -> LabeledDataset:
    """Token ids by frequency rank with next-token labels (``y_i = x_{i+1}``)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read corpus {path}: {exc}") from None
    tokens = tokenize(text, tokenizer)
    if len(tokens) < 2:
        raise DomainError("corpus needs at least two tokens")
    ids, vocab, unk_id = build_vocab(tokens, vocab_cap)
    seq = np.array([ids.get(t, unk_id) for t in tokens], dtype=np.int64)
    return LabeledDataset(TokenSequence(seq[:-1], vocab), TokenSequence(seq[1:], vocab))
