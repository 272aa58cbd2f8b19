"""Synthetic order-l Markov label sources with exact enumeration.

Inputs are i.i.d. over a finite alphabet; the label at position i is drawn
from a rule applied to the window ``(x[i-l+1], ..., x[i])`` (oldest first).
The first ``l - 1`` positions see a clipped window holding only the
available prefix.

Window codes read the window most-significant-first: the oldest symbol is
the high digit, the current symbol the low digit. With this ordering the
``k`` most recent symbols of a window are ``code % |X|**k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import CapacityError, DomainError, SpecError
from .kvconfig import load_kv
from .seqcore import LabeledDataset, TokenSequence, Vocabulary, to_base

DEFAULT_BUDGET = 2 ** 24


def window_codes(windows: np.ndarray, base: int) -> np.ndarray:
    """Integer codes of the rows of an (N, w) window matrix, oldest digit high."""
    windows = np.asarray(windows, dtype=np.int64)
    w = windows.shape[1]
    powers = base ** np.arange(w - 1, -1, -1, dtype=np.int64)
    return windows @ powers


def code_digits(codes: np.ndarray, length: int, base: int) -> np.ndarray:
    """Inverse of :func:`window_codes`: (N,) codes -> (N, length) windows."""
    codes = np.asarray(codes, dtype=np.int64)
    powers = base ** np.arange(length - 1, -1, -1, dtype=np.int64)
    return (codes[:, None] // powers[None, :]) % base


# ------------------------------------------------------------------ rules

class BoolSumRule:
    """Label 1 when the window sum reaches the threshold (or exceeds it, if strict)."""

    def __init__(self, threshold: int, strict: bool = False, noise: float = 0.0):
        self.threshold = threshold
        self.strict = strict
        self.noise = noise

    def _ones(self, sums):
        return (sums > self.threshold) if self.strict else (sums >= self.threshold)

    def batch(self, windows: np.ndarray) -> np.ndarray:
        hit = self._ones(np.asarray(windows).sum(axis=1))
        p1 = np.where(hit, 1.0 - self.noise, self.noise)
        return np.stack([1.0 - p1, p1], axis=1)

    def __call__(self, window):
        return self.batch(np.asarray(window, dtype=np.int64).reshape(1, -1))[0]


class Bin2DecRule:
    """Label is the binary value of the window, oldest bit most significant.

    Clipped warm-up windows are left-padded with zeros, i.e. the missing
    high bits count as 0. With ``noise > 0`` the remaining mass is spread
    evenly over the other labels.
    """

    def __init__(self, order: int, noise: float = 0.0):
        self.order = order
        self.noise = noise

    def batch(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.int64)
        vals = window_codes(windows, 2)
        nv = 2 ** self.order
        out = np.full((len(vals), nv), self.noise / (nv - 1) if self.noise else 0.0)
        out[np.arange(len(vals)), vals] = 1.0 - self.noise
        return out

    def __call__(self, window):
        return self.batch(np.asarray(window, dtype=np.int64).reshape(1, -1))[0]


class TableRule:
    """Explicit label law per full window code; warm-up windows are zero-padded."""

    def __init__(self, table, order: int, input_size: int):
        self.table = np.asarray(table, dtype=np.float64)
        self.order = order
        self.input_size = input_size

    def batch(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.int64)
        return self.table[window_codes(windows, self.input_size)]

    def __call__(self, window):
        return self.batch(np.asarray(window, dtype=np.int64).reshape(1, -1))[0]


def window_sum(window) -> int:
    return int(np.sum(window))


# ------------------------------------------------------------- source spec

@dataclass(frozen=True, eq=False)
class SourceSpec:
    """An order-``l`` source: i.i.d. inputs plus a window -> label law.

    ``label_rule(window)`` receives a tuple of at most ``order`` symbols,
    oldest first, and returns either a label id or a probability vector over
    ``label_vocab``. Rules may also expose ``batch(windows)`` for a fast
    vectorised path. ``state_fn`` optionally names the coarser source state
    ``g(window)`` that the rule factors through.
    """

    order: int
    label_rule: Callable
    label_vocab: Vocabulary
    input_vocab: Vocabulary = field(default_factory=lambda: Vocabulary(2))
    input_probs: np.ndarray | None = None
    state_fn: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise DomainError("source order must be a positive integer")
        nx = self.input_vocab.size
        if self.input_probs is None:
            p = np.full(nx, 1.0 / nx)
        else:
            p = np.asarray(self.input_probs, dtype=np.float64)
            if p.shape != (nx,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                raise DomainError("input_probs must be a distribution over the input vocabulary")
        p.setflags(write=False)
        object.__setattr__(self, "input_probs", p)

    @property
    def n_inputs(self) -> int:
        return self.input_vocab.size

    @property
    def n_labels(self) -> int:
        return self.label_vocab.size

    def _coerce(self, out) -> np.ndarray:
        if np.isscalar(out) or np.ndim(out) == 0:
            lab = int(out)
            if not 0 <= lab < self.n_labels:
                raise DomainError(f"label rule returned out-of-range label {lab}")
            vec = np.zeros(self.n_labels)
            vec[lab] = 1.0
            return vec
        vec = np.asarray(out, dtype=np.float64)
        if vec.shape != (self.n_labels,) or np.any(vec < 0) or abs(vec.sum() - 1) > 1e-9:
            raise DomainError("label rule returned an invalid distribution")
        return vec

    def rule_probs_batch(self, windows: np.ndarray) -> np.ndarray:
        """Label laws for an (N, w) matrix of windows with 1 <= w <= order."""
        windows = np.asarray(windows, dtype=np.int64)
        if windows.ndim != 2 or not 1 <= windows.shape[1] <= self.order:
            raise DomainError("windows must be an (N, w) matrix with 1 <= w <= order")
        batch = getattr(self.label_rule, "batch", None)
        if batch is not None:
            return np.asarray(batch(windows), dtype=np.float64)
        return np.stack([self._coerce(self.label_rule(tuple(int(t) for t in row)))
                         for row in windows]) if len(windows) else np.zeros((0, self.n_labels))

    def rule_probs(self, window: Sequence[int]) -> np.ndarray:
        return self.rule_probs_batch(np.asarray(window, dtype=np.int64).reshape(1, -1))[0]

    def check_budget(self, length: int) -> None:
        if self.n_inputs ** length > self.budget:
            raise CapacityError(
                f"enumerating {self.n_inputs}^{length} windows exceeds the budget of {self.budget}")

    @cached_property
    def label_table(self) -> np.ndarray:
        """(|X|^l, |V|) label laws for every full window, indexed by window code."""
        self.check_budget(self.order)
        if self.n_inputs ** self.order * self.n_labels > self.budget * 4:
            raise CapacityError("label table too large for the enumeration budget")
        codes = np.arange(self.n_inputs ** self.order, dtype=np.int64)
        table = self.rule_probs_batch(code_digits(codes, self.order, self.n_inputs))
        table.setflags(write=False)
        return table

    @cached_property
    def deterministic_labels(self) -> np.ndarray | None:
        """Label per full window when every law is a point mass, else None."""
        t = self.label_table
        lab = t.argmax(axis=1)
        if np.all(t[np.arange(len(t)), lab] == 1.0):
            lab.setflags(write=False)
            return lab
        return None

    def code_probs(self, codes: np.ndarray, length: int) -> np.ndarray:
        """Probability of each window (given by code) under the i.i.d. input law."""
        codes = np.asarray(codes, dtype=np.int64)
        if np.allclose(self.input_probs, self.input_probs[0]):
            return np.full(codes.shape, float(self.input_probs[0]) ** length)
        p = np.ones(codes.shape)
        for j in range(length):
            p *= self.input_probs[(codes // self.n_inputs ** j) % self.n_inputs]
        return p


# ---------------------------------------------------------- constructors

def boolsum(order: int, threshold: int | None = None, strict: bool = False,
            noise: float = 0.0, budget: int = DEFAULT_BUDGET) -> SourceSpec:
    """MarkovBoolSum: label 1 iff the last ``order`` inputs sum to >= threshold.

    The default threshold is ``ceil(order / 2)``, the integer form of
    "at least l/2". ``strict=True`` gives the "greater than" variant.
    Clipped warm-up windows are summed over the available prefix.
    """
    if threshold is None:
        threshold = math.ceil(order / 2)
    if not 0 <= threshold <= order:
        raise DomainError("threshold must lie in [0, order]")
    if not 0.0 <= noise < 1.0:
        raise DomainError("noise must lie in [0, 1)")
    params = {"order": order, "threshold": threshold, "strict": strict, "noise": noise}
    return SourceSpec(order=order, label_rule=BoolSumRule(threshold, strict, noise),
                      label_vocab=Vocabulary(2), state_fn=window_sum, name="boolsum",
                      params=params, budget=budget)


def bin2dec(order: int, noise: float = 0.0, budget: int = DEFAULT_BUDGET) -> SourceSpec:
    """MarkovBin2Dec: label is the decimal value of the last ``order`` bits."""
    if not 0.0 <= noise < 1.0:
        raise DomainError("noise must lie in [0, 1)")
    return SourceSpec(order=order, label_rule=Bin2DecRule(order, noise),
                      label_vocab=Vocabulary(2 ** order), name="bin2dec",
                      params={"order": order, "noise": noise}, budget=budget)


def table_source(order: int, table, input_probs=None, input_size: int = 2,
                 budget: int = DEFAULT_BUDGET) -> SourceSpec:
    """A user-defined source given its label law for every full window code."""
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] != input_size ** order:
        raise DomainError(f"table must have {input_size ** order} rows")
    if np.any(table < 0) or not np.allclose(table.sum(axis=1), 1.0, atol=1e-9):
        raise DomainError("table rows must be distributions")
    return SourceSpec(order=order, label_rule=TableRule(table, order, input_size),
                      label_vocab=Vocabulary(table.shape[1]), input_vocab=Vocabulary(input_size),
                      input_probs=input_probs, name="table",
                      params={"order": order, "table": table.tolist(),
                              "input_size": input_size,
                              "input_probs": None if input_probs is None else list(input_probs)},
                      budget=budget)


def source_from_config(cfg: dict) -> SourceSpec:
    """Build a source from parsed ``key = value`` entries (``source`` names the kind)."""
    kind = cfg.get("source")
    try:
        if kind == "boolsum":
            return boolsum(int(cfg["order"]), cfg.get("threshold"), bool(cfg.get("strict", False)),
                           float(cfg.get("noise", 0.0)), int(cfg.get("budget", DEFAULT_BUDGET)))
        if kind == "bin2dec":
            return bin2dec(int(cfg["order"]), float(cfg.get("noise", 0.0)),
                           int(cfg.get("budget", DEFAULT_BUDGET)))
        if kind == "table":
            return table_source(int(cfg["order"]), cfg["table"], cfg.get("input_probs"),
                                int(cfg.get("input_size", 2)), int(cfg.get("budget", DEFAULT_BUDGET)))
    except KeyError as exc:
        raise SpecError(f"source config lacks {exc}") from None
    except DomainError as exc:
        raise SpecError(str(exc)) from None
    raise SpecError(f"unknown source kind {kind!r}")


def source_config(spec: SourceSpec) -> dict:
    if spec.name == "custom":
        raise SpecError("custom sources with arbitrary rules cannot be serialised")
    return {"source": spec.name, **spec.params}


def load_source(path) -> SourceSpec:
    return source_from_config(load_kv(path))


# -------------------------------------------------------------- generation

def generate(spec: SourceSpec, n: int, seed: int) -> LabeledDataset:
    """Draw ``n`` i.i.d. inputs and their labels; identical arguments give identical data."""
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = np.random.default_rng(seed)
    nx, l = spec.n_inputs, spec.order
    if np.allclose(spec.input_probs, 1.0 / nx):
        x = rng.integers(0, nx, size=n, dtype=np.int64)
    else:
        x = rng.choice(nx, size=n, p=spec.input_probs).astype(np.int64)
    return label_inputs(spec, x, rng)


def label_inputs(spec: SourceSpec, x, rng: np.random.Generator | None = None) -> LabeledDataset:
    """Apply the source's label law to a given input stream.

    Stochastic laws are sampled with ``rng`` (one uniform per position);
    deterministic ones ignore it.
    """
    x = np.asarray(x, dtype=np.int64)
    n, l = len(x), spec.order
    if rng is None:
        rng = np.random.default_rng(0)
    u = rng.random(n)
    y = np.empty(n, dtype=np.int64)
    warm = min(l - 1, n)
    for i in range(warm):
        y[i] = _sample(spec.rule_probs(x[: i + 1])[None, :], u[i: i + 1])[0]
    if n >= l:
        codes = window_codes(np.lib.stride_tricks.sliding_window_view(x, l), spec.n_inputs)
        det = spec.deterministic_labels
        if det is not None:
            y[l - 1:] = det[codes]
        else:
            table = spec.label_table
            step = 1 << 16
            for a in range(0, len(codes), step):
                c = codes[a: a + step]
                y[l - 1 + a: l - 1 + a + len(c)] = _sample(table[c], u[l - 1 + a: l - 1 + a + len(c)])
    return LabeledDataset(TokenSequence(x, spec.input_vocab), TokenSequence(y, spec.label_vocab),
                          markov_order_hint=l)


def _sample(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    lab = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(lab, probs.shape[1] - 1)


# ------------------------------------------------------------- enumeration

def iter_visible(spec: SourceSpec, k: int, chunk: int = 1 << 16
                 ) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Enumerate stationary length-``k`` visible windows in blocks.

    Yields ``(codes, p_window, cond)`` where ``cond[i]`` is the label law
    given the visible window ``codes[i]``: the source law itself when
    ``k >= l``, and the law with the ``l - k`` oldest symbols marginalised
    out when ``k < l``.
    """
    if k < 0:
        raise DomainError("window length must be non-negative")
    l, nx = spec.order, spec.n_inputs
    spec.check_budget(max(k, l))
    table = spec.label_table
    if k < l:
        hidden = np.arange(nx ** (l - k), dtype=np.int64)
        w_hidden = spec.code_probs(hidden, l - k)
        cond = np.einsum("h,hvy->vy", w_hidden, table.reshape(nx ** (l - k), nx ** k, -1))
        codes = np.arange(nx ** k, dtype=np.int64)
        yield codes, spec.code_probs(codes, k), cond
        return
    total = nx ** k
    for a in range(0, total, chunk):
        codes = np.arange(a, min(a + chunk, total), dtype=np.int64)
        yield codes, spec.code_probs(codes, k), table[codes % nx ** l]


def _entropy_rows(cond: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(cond > 0, -cond * np.log(np.where(cond > 0, cond, 1.0)), 0.0)
    return terms.sum(axis=1)


def exact_conditional_entropy(spec: SourceSpec, k: int, base: str = "bits") -> float:
    """H(Y_k | X_k, ..., X_1) of the stationary source, by exact enumeration."""
    if k < 0:
        raise DomainError("k must be non-negative")
    l = spec.order
    spec.check_budget(max(k, l))
    if k >= l:
        # Symbols older than l are independent of the label and sum out exactly.
        codes = np.arange(spec.n_inputs ** l, dtype=np.int64)
        h = float(np.dot(spec.code_probs(codes, l), _entropy_rows(spec.label_table)))
    else:
        h = math.fsum(float(np.dot(p, _entropy_rows(c))) for _, p, c in iter_visible(spec, k))
    return float(to_base(max(h, 0.0), base))


def theorem1_limit(spec: SourceSpec, k: int, base: str = "bits") -> float:
    """Asymptotic optimal test loss for span ``k``: H at window length min(l, k)."""
    if k < 0:
        raise DomainError("k must be non-negative")
    return exact_conditional_entropy(spec, min(spec.order, k), base)


def entropy_given_state(spec: SourceSpec, state_fn: Callable | None = None,
                        base: str = "bits") -> float:
    """H(Y_l | g(X_l, ..., X_1)) for a state map ``g`` over full windows."""
    g = state_fn or spec.state_fn
    if g is None:
        raise DomainError("source has no state function")
    l, nx = spec.order, spec.n_inputs
    spec.check_budget(l)
    codes = np.arange(nx ** l, dtype=np.int64)
    windows = code_digits(codes, l, nx)
    p = spec.code_probs(codes, l)
    keys = [g(tuple(int(t) for t in w)) for w in windows]
    index: dict = {}
    ids = np.array([index.setdefault(key, len(index)) for key in keys], dtype=np.int64)
    joint = np.zeros((len(index), spec.n_labels))
    np.add.at(joint, ids, p[:, None] * spec.label_table)
    ps = joint.sum(axis=1)
    cond = joint / np.where(ps > 0, ps, 1.0)[:, None]
    return float(to_base(max(float(np.dot(ps, _entropy_rows(cond))), 0.0), base))
