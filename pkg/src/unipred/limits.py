"""Bernoulli KL divergence, its quadratic approximation, and a lower-bound
checker that scores any predictor against the source's entropy floor."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError, NumericalError
from .fsmp import FunctionPredictor, exact_expected_test_loss
from .markov import SourceSpec, theorem1_limit
from .seqcore import to_base


@dataclass(frozen=True)
class BernoulliPair:
    """True success probability ``p`` and a perturbed estimate ``p + t``."""

    p: float
    t: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise DomainError(f"p must lie strictly inside (0, 1), got {self.p}")
        if not 0.0 < self.p + self.t < 1.0:
            raise DomainError(f"p + t must lie strictly inside (0, 1), got {self.p + self.t}")


def _x_minus_log1p(x: float) -> float:
    """x - log(1 + x) without cancellation near 0."""
    if abs(x) > 0.1:
        return x - math.log1p(x)
    # alternating series x^2/2 - x^3/3 + ...; 30 terms exceed double precision at |x| <= 0.1
    return math.fsum((-1) ** n * x ** n / n for n in range(2, 32))


def kl_bernoulli(pair: BernoulliPair, base: str = "bits") -> float:
    """D(Bern(p) || Bern(p + t)).

    With a = t/p and b = -t/(1-p) we have p*a + (1-p)*b = 0, so the KL is
    p (a - log1p(a)) + (1-p) (b - log1p(b)): two non-negative terms, which
    keeps full relative precision for tiny t.
    """
    p, t = pair.p, pair.t
    nats = p * _x_minus_log1p(t / p) + (1.0 - p) * _x_minus_log1p(-t / (1.0 - p))
    return float(to_base(max(nats, 0.0), base))


def kl_taylor(pair: BernoulliPair, base: str = "bits") -> float:
    """Second-order expansion (t^2 / 2) (1/p + 1/(1-p)) in nats, base-converted.

    Only defined in the small-perturbation regime |t| <= 0.1 min(p, 1-p).
    """
    p, t = pair.p, pair.t
    if abs(t) > 0.1 * min(p, 1.0 - p):
        raise DomainError("perturbation too large for the quadratic approximation")
    return float(to_base(0.5 * t * t * (1.0 / p + 1.0 / (1.0 - p)), base))


def kl_cubic_coefficient(p: float) -> float:
    """Leading coefficient of kl_bernoulli - kl_taylor in nats: |1/p^2 - 1/(1-p)^2| / 3."""
    return abs(1.0 / p ** 2 - 1.0 / (1.0 - p) ** 2) / 3.0


def theorem2_check(h, spec: SourceSpec, k: int, base: str = "bits") -> tuple[float, float, float]:
    """Exact loss of predictor ``h`` on windows of length ``k`` against the entropy floor.

    ``h`` is either an object following the predictor contract or a plain
    ``window -> distribution`` callable. Returns ``(loss, bound, slack)``.
    """
    if not hasattr(h, "predict_windows"):
        h = FunctionPredictor(h, k, spec.n_labels)
    elif h.span != k:
        raise DomainError(f"predictor span {h.span} differs from k={k}")
    loss = exact_expected_test_loss(h, spec, base)
    bound = theorem1_limit(spec, k, base)
    slack = loss - bound
    if slack < -1e-9:
        raise NumericalError(f"loss {loss} fell below the entropy floor {bound}")
    return loss, bound, slack
