import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unipred.errors import DomainError
from unipred.fsmp import FunctionPredictor, TrueLawPredictor, fit, identity_states, uniform_predictor
from unipred.limits import (BernoulliPair, kl_bernoulli, kl_cubic_coefficient, kl_taylor,
                            theorem2_check)
from unipred.markov import bin2dec, boolsum, generate, table_source

# Frozen from the sweep p in {0.1, 0.3, 0.5, 0.7, 0.9}, t in {+-1e-2, +-1e-3, +-1e-4}:
# the largest observed |kl - taylor| / |t|^3 was 35.64 nats (p=0.1, t=-1e-2).
CUBIC_GUARD = 36.0
T_SWEEP = (1e-2, -1e-2, 1e-3, -1e-3, 1e-4, -1e-4)


def kl_decimal(p, t):
    """Reference KL in nats at 50 significant digits."""
    getcontext().prec = 50
    p, q = Decimal(p), Decimal(p) + Decimal(t)
    one = Decimal(1)
    return float(p * (p / q).ln() + (one - p) * ((one - p) / (one - q)).ln())


class TestBernoulliKL:
    def test_zero_perturbation(self):
        assert kl_bernoulli(BernoulliPair(0.3, 0.0)) == 0.0
        assert kl_taylor(BernoulliPair(0.3, 0.0)) == 0.0

    def test_known_value(self):
        assert kl_bernoulli(BernoulliPair(0.5, 0.25)) == pytest.approx(0.2075, abs=1e-4)

    def test_matches_high_precision_reference(self):
        for p in (0.05, 0.3, 0.5, 0.8):
            for t in (1e-9, 1e-5, -1e-3, 0.04):
                ref = kl_decimal(p, t)
                assert kl_bernoulli(BernoulliPair(p, t), "nats") == pytest.approx(ref, rel=1e-9, abs=1e-300)

    def test_boundaries_rejected(self):
        for p, t in ((0.0, 0.1), (1.0, -0.1), (0.5, 0.5), (0.5, -0.5)):
            with pytest.raises(DomainError):
                BernoulliPair(p, t)

    def test_asymmetric_but_nonnegative(self):
        a, b = kl_bernoulli(BernoulliPair(0.2, 0.1)), kl_bernoulli(BernoulliPair(0.2, -0.1))
        assert a != b and a > 0 and b > 0

    @given(st.floats(0.01, 0.99), st.floats(-0.5, 0.5))
    def test_nonnegative_zero_only_at_zero(self, p, t):
        if not 0 < p + t < 1:
            return
        kl = kl_bernoulli(BernoulliPair(p, t), "nats")
        assert kl >= 0
        if abs(t) > 1e-6:
            assert kl > 0


class TestTaylor:
    def test_known_value(self):
        assert kl_taylor(BernoulliPair(0.5, 0.01), "nats") == pytest.approx(2.0e-4)

    def test_relative_agreement_at_half(self):
        pair = BernoulliPair(0.5, 0.01)
        exact = kl_bernoulli(pair)
        assert abs(exact - kl_taylor(pair)) / exact < 0.03

    @pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.7])
    def test_ratio_tends_to_one(self, p):
        gaps = [abs(kl_bernoulli(BernoulliPair(p, t)) / kl_taylor(BernoulliPair(p, t)) - 1)
                for t in (1e-2, 1e-3, 1e-4)]
        assert gaps[2] < gaps[1] < gaps[0] < 0.1 or max(gaps) < 1e-5

    @pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_cubic_guard(self, p):
        for t in T_SWEEP:
            if abs(t) > 0.1 * min(p, 1 - p):
                continue
            pair = BernoulliPair(p, t)
            assert abs(kl_bernoulli(pair, "nats") - kl_taylor(pair, "nats")) <= CUBIC_GUARD * abs(t) ** 3

    def test_cubic_coefficient_is_leading_term(self):
        p, t = 0.2, 1e-4
        gap = kl_bernoulli(BernoulliPair(p, t), "nats") - kl_taylor(BernoulliPair(p, t), "nats")
        assert abs(gap) / t ** 3 == pytest.approx(kl_cubic_coefficient(p), rel=1e-2)

    def test_outside_small_regime(self):
        with pytest.raises(DomainError):
            kl_taylor(BernoulliPair(0.5, 0.1))

    def test_bits_conversion(self):
        pair = BernoulliPair(0.4, 0.01)
        assert kl_taylor(pair, "bits") == pytest.approx(kl_taylor(pair, "nats") / math.log(2))


class TestFloorCheck:
    def test_true_law_has_zero_slack(self):
        sp = boolsum(4, noise=0.2)
        _, _, slack = theorem2_check(TrueLawPredictor(sp, 3), sp, 3)
        assert slack == pytest.approx(0.0, abs=1e-12)

    def test_uniform_on_deterministic_source(self):
        loss, bound, slack = theorem2_check(uniform_predictor(5, 2), boolsum(5), 5)
        assert (loss, bound) == (pytest.approx(1.0), 0.0)
        assert slack == pytest.approx(1.0)

    def test_plain_callable(self):
        loss, _, _ = theorem2_check(lambda w: np.array([0.25, 0.75]), boolsum(2, threshold=1), 1)
        assert loss == pytest.approx(0.75 * -math.log2(0.75) + 0.25 * 2)

    def test_invalid_distribution(self):
        with pytest.raises(DomainError):
            theorem2_check(lambda w: np.array([0.5, 0.6]), boolsum(2), 2)

    def test_span_mismatch(self):
        with pytest.raises(DomainError):
            theorem2_check(uniform_predictor(3, 2), boolsum(2), 2)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.integers(1, 4), st.integers(0, 6), st.integers(1, 2000))
    def test_fitted_estimators_never_beat_floor(self, seed, order, k, n):
        rng = np.random.default_rng(seed)
        sp = table_source(order, rng.dirichlet([0.6, 0.6, 0.6], size=2 ** order))
        est = fit(identity_states(k), generate(sp, n, seed), alpha=float(rng.uniform(0, 2)))
        assert theorem2_check(est, sp, k)[2] >= -1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.integers(0, 5))
    def test_adversarial_random_predictors(self, seed, k):
        rng = np.random.default_rng(seed)
        sp = bin2dec(3) if seed % 2 else boolsum(4, noise=0.1)
        table = rng.dirichlet(np.ones(sp.n_labels) * 0.3, size=2 ** k)
        h = FunctionPredictor(lambda w: table[int("".join(map(str, w)) or "0", 2)], k, sp.n_labels)
        assert theorem2_check(h, sp, k)[2] >= -1e-9
