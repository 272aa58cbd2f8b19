"""Vocabulary-aware token streams, labeled datasets and log-loss arithmetic.

All losses are computed internally in nats; ``base="bits"`` divides by ln 2.
Probabilities are floored at ``PROB_FLOOR`` before taking logs so that
deterministic sources stay evaluable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, SpecError

PROB_FLOOR = 1e-12
LN2 = math.log(2.0)
BASES = ("nats", "bits")


def _check_base(base: str) -> None:
    if base not in BASES:
        raise DomainError(f"base must be one of {BASES}, got {base!r}")


def to_base(value_nats, base: str):
    """Convert a nat-valued quantity (scalar or array) to ``base``."""
    _check_base(base)
    return value_nats / LN2 if base == "bits" else value_nats


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Vocabulary:
    size: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise DomainError(f"vocabulary size must be an integer >= 2, got {self.size}")
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != self.size:
                raise DomainError("symbol names must match the vocabulary size")

    def __len__(self):
        return self.size


@dataclass(frozen=True, eq=False)
class TokenSequence:
    tokens: np.ndarray
    vocab: Vocabulary

    def __post_init__(self):
        toks = np.array(self.tokens, dtype=np.int64).reshape(-1)
        if toks.size and (toks.min() < 0 or toks.max() >= self.vocab.size):
            raise DomainError(f"token ids must lie in [0, {self.vocab.size})")
        object.__setattr__(self, "tokens", _frozen(toks))

    def __len__(self):
        return int(self.tokens.size)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return TokenSequence(self.tokens[item], self.vocab)
        return int(self.tokens[item])

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return self.vocab == other.vocab and np.array_equal(self.tokens, other.tokens)

    def to_text(self) -> str:
        return " ".join(str(t) for t in self.tokens.tolist())

    @classmethod
    def from_text(cls, text: str, vocab: Vocabulary) -> "TokenSequence":
        parts = text.split()
        try:
            toks = [int(p) for p in parts]
        except ValueError as exc:
            raise SpecError(f"token file holds a non-integer entry: {exc}") from None
        return cls(np.array(toks, dtype=np.int64), vocab)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Parallel input stream ``x`` and target stream ``y``."""

    inputs: TokenSequence
    labels: TokenSequence
    markov_order_hint: int | None = None

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise DomainError("inputs and labels must have equal length")

    @classmethod
    def from_arrays(cls, x, y, input_vocab: int | Vocabulary, label_vocab: int | Vocabulary,
                    markov_order_hint=None) -> "LabeledDataset":
        iv = input_vocab if isinstance(input_vocab, Vocabulary) else Vocabulary(input_vocab)
        lv = label_vocab if isinstance(label_vocab, Vocabulary) else Vocabulary(label_vocab)
        return cls(TokenSequence(x, iv), TokenSequence(y, lv), markov_order_hint)

    def __len__(self):
        return len(self.inputs)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.inputs == other.inputs and self.labels == other.labels
                and self.markov_order_hint == other.markov_order_hint)

    @property
    def x(self) -> np.ndarray:
        return self.inputs.tokens

    @property
    def y(self) -> np.ndarray:
        return self.labels.tokens

    @property
    def input_vocab(self) -> Vocabulary:
        return self.inputs.vocab

    @property
    def label_vocab(self) -> Vocabulary:
        return self.labels.vocab

    def slice(self, start: int, stop: int) -> "LabeledDataset":
        return LabeledDataset(self.inputs[start:stop], self.labels[start:stop],
                              self.markov_order_hint)


@dataclass(frozen=True, eq=False)
class Distribution:
    probs: np.ndarray
    vocab: Vocabulary | None = field(default=None)

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64).reshape(-1)
        if p.size < 1 or not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DomainError("distribution entries must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise DomainError(f"distribution sums to {p.sum()!r}, not 1")
        if self.vocab is not None and self.vocab.size != p.size:
            raise DomainError("distribution length does not match its vocabulary")
        object.__setattr__(self, "probs", _frozen(p))

    def __len__(self):
        return int(self.probs.size)

    def __getitem__(self, i):
        return float(self.probs[i])

    @classmethod
    def uniform(cls, size: int) -> "Distribution":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, size: int, label: int) -> "Distribution":
        p = np.zeros(size)
        p[label] = 1.0
        return cls(p)


def log_loss(pred: Distribution, label: int, base: str = "nats") -> float:
    """Negative log-probability of ``label`` under ``pred``, floored at 1e-12."""
    _check_base(base)
    if not 0 <= label < len(pred):
        raise DomainError(f"label {label} outside a {len(pred)}-symbol distribution")
    return float(to_base(-math.log(max(pred.probs[label], PROB_FLOOR)), base))


def log_losses(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorised per-row log loss in nats for an (n, |V|) probability matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[-1]):
        raise DomainError("label outside the prediction vocabulary")
    picked = probs[np.arange(labels.size), labels]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def mean_log_loss(preds: Sequence[Distribution], labels: Sequence[int], base: str = "nats") -> float:
    if len(preds) == 0:
        raise DomainError("mean_log_loss of an empty list")
    if len(preds) != len(labels):
        raise DomainError("preds and labels differ in length")
    total = math.fsum(log_loss(p, int(y), "nats") for p, y in zip(preds, labels))
    return float(to_base(total / len(preds), base))


def split_dataset(d: LabeledDataset, train_fraction: float) -> tuple[LabeledDataset, LabeledDataset]:
    """Prefix split; the train part gets ``floor(len * fraction)`` tokens.

    The split point is clamped to [1, len - 1] so both halves are nonempty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DomainError("train_fraction must lie strictly between 0 and 1")
    n = len(d)
    if n < 2:
        raise DomainError("need at least two tokens to split")
    cut = min(max(int(math.floor(n * train_fraction)), 1), n - 1)
    return d.slice(0, cut), d.slice(cut, n)


# ---------------------------------------------------------------- file io

def save_sequence(seq: TokenSequence, path) -> None:
    Path(path).write_text(seq.to_text())


def load_sequence(path, vocab: Vocabulary) -> TokenSequence:
    return TokenSequence.from_text(Path(path).read_text(), vocab)


def dataset_paths(stem) -> tuple[Path, Path, Path]:
    stem = Path(stem)
    return (stem.with_name(stem.name + ".inputs"),
            stem.with_name(stem.name + ".labels"),
            stem.with_name(stem.name + ".header"))


def save_dataset(d: LabeledDataset, stem) -> None:
    """Write ``<stem>.inputs``, ``<stem>.labels`` and ``<stem>.header``."""
    xp, yp, hp = dataset_paths(stem)
    save_sequence(d.inputs, xp)
    save_sequence(d.labels, yp)
    lines = [f"input_vocab = {d.input_vocab.size}", f"label_vocab = {d.label_vocab.size}"]
    if d.markov_order_hint is not None:
        lines.append(f"order_hint = {d.markov_order_hint}")
    hp.write_text("\n".join(lines) + "\n")


def load_dataset(stem) -> LabeledDataset:
    xp, yp, hp = dataset_paths(stem)
    if not hp.exists():
        raise SpecError(f"missing dataset header {hp}")
    header = {}
    for line in hp.read_text().splitlines():
        if "=" in line:
            key, val = line.split("=", 1)
            header[key.strip()] = int(val.strip())
    try:
        iv, lv = Vocabulary(header["input_vocab"]), Vocabulary(header["label_vocab"])
    except KeyError as exc:
        raise SpecError(f"dataset header lacks {exc}") from None
    return LabeledDataset(load_sequence(xp, iv), load_sequence(yp, lv), header.get("order_hint"))
