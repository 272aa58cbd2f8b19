"""Finite-state Markov predictors: state functions, count tables and the
order-k count-ratio estimator, plus exact and empirical test-loss evaluation.

A state function maps the clipped window ``(x[i-k+1], ..., x[i])`` (fewer
symbols near the stream start) to a dense state id. The estimator predicts
``(N(y; s) + alpha) / (N(s) + alpha * |V|)`` and falls back to a fixed
distribution (uniform by default) for states it never saw.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import CapacityError, DomainError, SpecError
from .markov import SourceSpec, code_digits, iter_visible, window_codes
from .seqcore import (PROB_FLOOR, Distribution, LabeledDataset, log_losses, to_base)

DENSE_CELL_LIMIT = 2 ** 26
_MAX_STATES = 2 ** 62


# ------------------------------------------------------------ state functions

@dataclass(frozen=True, eq=False)
class StateFunction:
    """Window -> state map with span ``k`` and ``state_count`` dense ids.

    ``kind`` is ``"identity"``, ``"window_sum"`` or ``"custom"``; the first
    two have vectorised fast paths and can be serialised.
    """

    span: int
    state_count: int
    map: Callable[[tuple], int]
    kind: str = "custom"
    input_size: int = 2

    def __post_init__(self):
        if self.span < 0:
            raise DomainError("span must be non-negative")
        if self.state_count < 1:
            raise DomainError("state_count must be positive")

    def __call__(self, window) -> int:
        window = tuple(int(t) for t in window)[-self.span:] if self.span else ()
        s = int(self.map(window))
        if not 0 <= s < self.state_count:
            raise DomainError(f"state map returned {s}, outside [0, {self.state_count})")
        return s

    def window_states(self, windows: np.ndarray) -> np.ndarray:
        """State ids for an (N, span) matrix of full-length windows."""
        windows = np.asarray(windows, dtype=np.int64)
        if windows.ndim != 2 or windows.shape[1] != self.span:
            raise DomainError(f"expected an (N, {self.span}) window matrix")
        if self.span == 0:
            return np.zeros(len(windows), dtype=np.int64)
        if self.kind == "identity":
            return window_codes(windows, self.input_size)
        if self.kind == "window_sum":
            return windows.sum(axis=1)
        return np.array([self(row) for row in windows], dtype=np.int64)

    def states(self, x) -> np.ndarray:
        """State id at every position of a stream, with clipped warm-up windows."""
        x = np.asarray(x, dtype=np.int64)
        n, k = len(x), self.span
        out = np.empty(n, dtype=np.int64)
        if k == 0:
            out[:] = 0
            return out
        warm = min(k - 1, n)
        if self.kind == "window_sum":
            c = np.cumsum(x)
            out[:] = c
            out[k:] = c[k:] - c[:-k]
            return out
        for i in range(warm):
            out[i] = self(x[: i + 1])
        if n >= k:
            out[k - 1:] = self.window_states(np.lib.stride_tricks.sliding_window_view(x, k))
        return out


def identity_states(k: int, input_size: int = 2) -> StateFunction:
    """Every distinct window is its own state.

    Full-length windows take ids ``[0, |X|^k)`` (their codes); clipped
    warm-up windows of length j < k get separate ids above that range.
    """
    full = input_size ** k
    count = sum(input_size ** j for j in range(1, k + 1)) if k else 1
    if count > _MAX_STATES:
        raise CapacityError("identity state space too large for 64-bit ids")
    offsets = {}
    acc = full
    for j in range(1, k):
        offsets[j] = acc
        acc += input_size ** j

    def mapping(window):
        j = len(window)
        if j == 0:
            return 0
        code = 0
        for t in window:
            code = code * input_size + t
        return code if j == k else offsets[j] + code

    return StateFunction(k, count, mapping, "identity", input_size)


def window_sum_states(k: int, input_size: int = 2) -> StateFunction:
    """State = sum of the (possibly clipped) window."""
    return StateFunction(k, k * (input_size - 1) + 1, lambda w: int(sum(w)), "window_sum", input_size)


def custom_states(k: int, mapping: Callable[[tuple], int], state_count: int,
                  input_size: int = 2) -> StateFunction:
    return StateFunction(k, state_count, mapping, "custom", input_size)


# --------------------------------------------------------------- count table

class CountTable:
    """Joint counts N(y; s) with marginals N(s).

    Stored densely when ``|S| * |V| <= 2**26`` and as a dict of per-state
    count vectors otherwise; callers see the same interface either way.
    """

    def __init__(self, state_count: int, label_count: int, dense: bool | None = None):
        self.state_count = state_count
        self.label_count = label_count
        if dense is None:
            dense = state_count * label_count <= DENSE_CELL_LIMIT
        self.dense = dense
        self._table = np.zeros((state_count, label_count), dtype=np.int64) if dense else None
        self._sparse: dict[int, np.ndarray] = {} if not dense else None
        self.n = 0

    def add(self, states: np.ndarray, labels: np.ndarray) -> None:
        states = np.asarray(states, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if states.shape != labels.shape:
            raise DomainError("states and labels differ in shape")
        if not states.size:
            return
        if labels.min() < 0 or labels.max() >= self.label_count:
            raise DomainError("label outside the table's label vocabulary")
        if states.min() < 0 or states.max() >= self.state_count:
            raise DomainError("state id outside the table's state range")
        keys = states * self.label_count + labels
        if self.dense:
            flat = np.bincount(keys, minlength=self.state_count * self.label_count)
            self._table += flat.reshape(self.state_count, self.label_count)
        else:
            uniq, cnt = np.unique(keys, return_counts=True)
            for key, c in zip(uniq.tolist(), cnt.tolist()):
                s, y = divmod(key, self.label_count)
                row = self._sparse.get(s)
                if row is None:
                    row = self._sparse[s] = np.zeros(self.label_count, dtype=np.int64)
                row[y] += c
        self.n += int(states.size)

    def joint(self, states: np.ndarray) -> np.ndarray:
        """(N, |V|) counts for an array of state ids."""
        states = np.asarray(states, dtype=np.int64)
        if self.dense:
            return self._table[states]
        zero = np.zeros(self.label_count, dtype=np.int64)
        if not states.size:
            return np.zeros((0, self.label_count), dtype=np.int64)
        return np.stack([self._sparse.get(s, zero) for s in states.tolist()])

    def marginal(self, states: np.ndarray) -> np.ndarray:
        return self.joint(states).sum(axis=1)

    def items(self):
        """(state, counts) pairs for every state with a nonzero count."""
        if self.dense:
            for s in np.flatnonzero(self._table.sum(axis=1)):
                yield int(s), self._table[s]
        else:
            for s in sorted(self._sparse):
                yield s, self._sparse[s]

    def as_dense(self) -> np.ndarray:
        if self.dense:
            return self._table.copy()
        out = np.zeros((self.state_count, self.label_count), dtype=np.int64)
        for s, row in self._sparse.items():
            out[s] = row
        return out


# ----------------------------------------------------------------- predictors

class Predictor(Protocol):
    """Shared evaluation contract: a span plus window -> label law maps."""

    span: int
    n_labels: int

    def predict(self, window) -> Distribution: ...

    def predict_windows(self, windows: np.ndarray) -> np.ndarray: ...


@dataclass(eq=False)
class BayesEstimator:
    state_fn: StateFunction
    counts: CountTable
    fallback: Distribution
    alpha: float = 0.0

    @property
    def span(self) -> int:
        return self.state_fn.span

    @property
    def n_labels(self) -> int:
        return self.counts.label_count

    def predict_states(self, states: np.ndarray) -> np.ndarray:
        joint = self.counts.joint(states).astype(np.float64) + self.alpha
        denom = joint.sum(axis=1)
        out = np.empty_like(joint)
        seen = denom > 0
        out[seen] = joint[seen] / denom[seen, None]
        out[~seen] = self.fallback.probs
        return out

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        return self.predict_states(self.state_fn.window_states(windows))

    def predict(self, window) -> Distribution:
        window = tuple(int(t) for t in window)
        if len(window) > self.span:
            raise DomainError(f"window longer than the span {self.span}")
        s = self.state_fn(window)
        return Distribution(self.predict_states(np.array([s]))[0])

    def __call__(self, window) -> Distribution:
        return self.predict(window)


class FunctionPredictor:
    """Adapts an arbitrary ``window -> distribution`` callable to the predictor contract."""

    def __init__(self, fn: Callable, span: int, n_labels: int):
        self.fn = fn
        self.span = span
        self.n_labels = n_labels

    def predict(self, window) -> Distribution:
        out = self.fn(tuple(int(t) for t in window))
        dist = out if isinstance(out, Distribution) else Distribution(out)
        if len(dist) != self.n_labels:
            raise DomainError("predictor returned a distribution of the wrong size")
        return dist

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.int64)
        if not len(windows):
            return np.zeros((0, self.n_labels))
        return np.stack([self.predict(w).probs for w in windows])


class TrueLawPredictor:
    """The source's own conditional law given the ``k`` most recent symbols."""

    def __init__(self, spec: SourceSpec, k: int):
        self.spec = spec
        self.span = k
        self.n_labels = spec.n_labels
        if k < spec.order:
            self._cond = next(iter_visible(spec, k))[2]
        else:
            self._cond = None

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.int64)
        nx = self.spec.n_inputs
        if self._cond is not None:
            return self._cond[window_codes(windows, nx) if self.span else np.zeros(len(windows), dtype=np.int64)]
        return self.spec.label_table[window_codes(windows[:, -self.spec.order:], nx)]

    def predict(self, window) -> Distribution:
        return Distribution(self.predict_windows(np.asarray(window, dtype=np.int64).reshape(1, -1))[0])


def uniform_predictor(span: int, n_labels: int) -> FunctionPredictor:
    probs = np.full(n_labels, 1.0 / n_labels)
    return FunctionPredictor(lambda w: probs, span, n_labels)


# ---------------------------------------------------------------- operations

def fit(state_fn: StateFunction, d: LabeledDataset, alpha: float = 0.0,
        fallback: Distribution | None = None, include_warmup: bool = True) -> BayesEstimator:
    """Single counting pass over ``d``.

    With ``include_warmup=False`` the first ``k - 1`` positions (whose window
    is clipped) are not counted.
    """
    if len(d) == 0:
        raise DomainError("cannot fit on an empty dataset")
    if alpha < 0:
        raise DomainError("alpha must be non-negative")
    if d.input_vocab.size != state_fn.input_size:
        raise DomainError("state function and dataset disagree on the input vocabulary")
    nv = d.label_vocab.size
    if fallback is None:
        fallback = Distribution.uniform(nv)
    elif len(fallback) != nv:
        raise DomainError("fallback distribution does not match the label vocabulary")
    counts = CountTable(state_fn.state_count, nv)
    states = state_fn.states(d.x)
    labels = d.y
    if not include_warmup and state_fn.span > 1:
        states, labels = states[state_fn.span - 1:], labels[state_fn.span - 1:]
    counts.add(states, labels)
    return BayesEstimator(state_fn, counts, fallback, float(alpha))


def predict(est: BayesEstimator, window) -> Distribution:
    return est.predict(window)


def empirical_test_loss(est, d_test: LabeledDataset, base: str = "nats") -> float:
    """Mean log loss over a held-out stream; windows clip at the stream start."""
    if len(d_test) == 0:
        raise DomainError("empty test set")
    if isinstance(est, BayesEstimator):
        probs = est.predict_states(est.state_fn.states(d_test.x))
    else:
        x = d_test.x
        probs = np.stack([est.predict(x[max(0, i - est.span + 1): i + 1] if est.span else ())
                          .probs for i in range(len(x))])
    return float(to_base(log_losses(probs, d_test.y).mean(), base))


def _validate_rows(q: np.ndarray, n_labels: int) -> None:
    if q.ndim != 2 or q.shape[1] != n_labels:
        raise DomainError("predictor returned rows of the wrong size")
    if not np.all(np.isfinite(q)) or np.any(q < 0) or not np.allclose(q.sum(axis=1), 1.0, atol=1e-9):
        raise DomainError("predictor returned an invalid distribution")


def _accumulate(pred, spec: SourceSpec, want_joint: bool = False):
    """Enumerate visible windows and return the loss in nats.

    With ``want_joint`` also return dense per-state arrays ``p(s, y)`` and
    the prediction made in each state (states are window codes for
    predictors without a state function).
    """
    k = pred.span
    if pred.n_labels != spec.n_labels:
        raise DomainError("predictor and source disagree on the label vocabulary")
    nv = spec.n_labels
    loss = 0.0
    joint = q_state = None
    if want_joint:
        n_keys = pred.state_fn.state_count if isinstance(pred, BayesEstimator) else spec.n_inputs ** k
        joint = np.zeros((n_keys, nv))
        q_state = np.zeros((n_keys, nv))
    for codes, pv, cond in iter_visible(spec, k):
        windows = code_digits(codes, k, spec.n_inputs)
        q = pred.predict_windows(windows)
        _validate_rows(q, nv)
        pyv = pv[:, None] * cond
        loss += float(np.sum(pyv * -np.log(np.maximum(q, PROB_FLOOR))))
        if want_joint:
            keys = pred.state_fn.window_states(windows) if isinstance(pred, BayesEstimator) else codes
            np.add.at(joint, keys, pyv)
            q_state[keys] = q
    return loss, joint, q_state


def exact_expected_test_loss(pred, spec: SourceSpec, base: str = "bits") -> float:
    """Expected log loss under the true source (the m -> infinity test loss)."""
    loss, _, _ = _accumulate(pred, spec)
    return float(to_base(loss, base))


def loss_decomposition(pred, spec: SourceSpec, base: str = "bits") -> tuple[float, float]:
    """Split the exact loss into H(Y | state) and the expected KL to the prediction.

    The two terms sum to :func:`exact_expected_test_loss`; the KL term uses
    the same probability floor as the loss itself.
    """
    _, joint, q = _accumulate(pred, spec, want_joint=True)
    ps = joint.sum(axis=1, keepdims=True)
    pos = joint > 0
    cond = np.where(pos, joint / np.where(ps > 0, ps, 1.0), 1.0)
    ent = float(np.sum(np.where(pos, joint * -np.log(cond), 0.0)))
    logq = np.log(np.maximum(q, PROB_FLOOR))
    kl = float(np.sum(np.where(pos, joint * (np.log(cond) - logq), 0.0)))
    return float(to_base(ent, base)), float(to_base(kl, base))


# --------------------------------------------------------------- persistence

_MAGIC = b"FSMC"
_VERSION = 1
_KINDS = {"custom": 0, "identity": 1, "window_sum": 2}
_HEADER = struct.Struct("<4sHIIIQBQBd")


def save_estimator(est: BayesEstimator, path) -> None:
    """Binary count-table file: header, then dense rows or sparse (state, row) entries."""
    sf, ct = est.state_fn, est.counts
    header = _HEADER.pack(_MAGIC, _VERSION, sf.input_size, ct.label_count, sf.span,
                          ct.state_count, 1 if ct.dense else 0, ct.n, _KINDS[sf.kind], est.alpha)
    with open(path, "wb") as fh:
        fh.write(header)
        if ct.dense:
            fh.write(ct._table.astype("<u8").tobytes())
        else:
            entries = list(ct.items())
            fh.write(struct.pack("<Q", len(entries)))
            for s, row in entries:
                fh.write(struct.pack("<Q", s))
                fh.write(np.asarray(row).astype("<u8").tobytes())


def load_estimator(path, state_fn: StateFunction | None = None) -> BayesEstimator:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise SpecError("count table file truncated")
    magic, version, nx, nv, k, n_states, dense, n, kind, alpha = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise SpecError("not a count table file")
    if version != _VERSION:
        raise SpecError(f"unsupported count table version {version}")
    if state_fn is None:
        if kind == _KINDS["identity"]:
            state_fn = identity_states(k, nx)
        elif kind == _KINDS["window_sum"]:
            state_fn = window_sum_states(k, nx)
        else:
            raise SpecError("custom state functions must be supplied when loading")
    if state_fn.state_count != n_states or state_fn.span != k:
        raise SpecError("supplied state function does not match the stored table")
    ct = CountTable(n_states, nv, dense=bool(dense))
    off = _HEADER.size
    if dense:
        arr = np.frombuffer(data, dtype="<u8", count=n_states * nv, offset=off)
        ct._table = arr.astype(np.int64).reshape(n_states, nv)
    else:
        (m,) = struct.unpack_from("<Q", data, off)
        off += 8
        for _ in range(m):
            (s,) = struct.unpack_from("<Q", data, off)
            off += 8
            ct._sparse[s] = np.frombuffer(data, dtype="<u8", count=nv, offset=off).astype(np.int64)
            off += 8 * nv
    ct.n = n
    return BayesEstimator(state_fn, ct, Distribution.uniform(nv), alpha)
