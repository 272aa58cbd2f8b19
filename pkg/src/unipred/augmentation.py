"""Translation augmentation against fixed absolute positions.

A stream is cut into windows of ``n_pos`` tokens. Copy ``t`` (for t from
``t0`` to ``n_pos - 1``) starts every window ``n_pos - 1 - t`` tokens later,
wrapping cyclically around the windowed stream, so the same tokens meet
different positional encodings. ``t = n_pos - 1`` is the unshifted stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .seqcore import LabeledDataset


@dataclass(frozen=True)
class AugmentSpec:
    t0: int
    n_pos: int

    def __post_init__(self):
        if self.n_pos < 1:
            raise DomainError("n_pos must be positive")
        if not 0 <= self.t0 <= self.n_pos - 1:
            raise DomainError(f"t0 must lie in [0, {self.n_pos - 1}]")

    @property
    def copies(self) -> int:
        return self.n_pos - self.t0

    @property
    def shifts(self) -> list[int]:
        """Offsets applied to window starts, one per copy (0 = original)."""
        return [self.n_pos - 1 - t for t in range(self.t0, self.n_pos)]


@dataclass(frozen=True, eq=False)
class WindowBatch:
    """Training windows: ``inputs`` and ``labels`` are (windows, n_pos) arrays."""

    inputs: np.ndarray
    labels: np.ndarray
    shift: np.ndarray

    def __len__(self):
        return len(self.inputs)


def augment(d: LabeledDataset, spec: AugmentSpec, order: str = "round_robin",
            seed: int = 0) -> WindowBatch:
    """All shifted copies of the windowed stream.

    ``order="round_robin"`` interleaves copies window by window;
    ``order="shuffle"`` permutes the windows with ``seed``.
    """
    if not isinstance(spec, AugmentSpec):
        raise DomainError("spec must be an AugmentSpec")
    n_pos = spec.n_pos
    n_win = len(d) // n_pos
    if n_win < 1:
        raise DomainError(f"dataset of length {len(d)} is shorter than n_pos={n_pos}")
    span = n_win * n_pos
    x, y = d.x[:span], d.y[:span]
    base = np.arange(n_win)[:, None] * n_pos + np.arange(n_pos)[None, :]
    xs, ys, sh = [], [], []
    for w in range(n_win):
        for s in spec.shifts:
            idx = (base[w] + s) % span
            xs.append(x[idx])
            ys.append(y[idx])
            sh.append(s)
    xs, ys, sh = np.array(xs), np.array(ys), np.array(sh)
    if order == "shuffle":
        perm = np.random.default_rng(seed).permutation(len(xs))
        xs, ys, sh = xs[perm], ys[perm], sh[perm]
    elif order != "round_robin":
        raise DomainError(f"unknown ordering {order!r}")
    return WindowBatch(xs, ys, sh)


def prop1_gain(n: int, spec: AugmentSpec) -> float:
    """Convergence-rate gain (1/n)(1 - 1/(n_pos - t0)) from ``n_pos - t0`` copies."""
    if n < 1:
        raise DomainError("n must be at least 1")
    return (1.0 / n) * (1.0 - 1.0 / spec.copies)
