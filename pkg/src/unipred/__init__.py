"""Finite-state Markov prediction toolkit: count estimators, entropy limits,
a numpy nano-transformer, translation augmentation and a sweep harness."""

__version__ = "0.1.0"

from .errors import CapacityError, DomainError, NumericalError, SpecError
from .seqcore import Distribution, LabeledDataset, TokenSequence, Vocabulary
from .markov import (SourceSpec, bin2dec, boolsum, exact_conditional_entropy, generate,
                     table_source, theorem1_limit)
from .fsmp import (BayesEstimator, empirical_test_loss, exact_expected_test_loss, fit,
                   identity_states, loss_decomposition, window_sum_states)
from .limits import BernoulliPair, kl_bernoulli, kl_taylor, theorem2_check
from .augmentation import AugmentSpec, augment, prop1_gain

__all__ = [
    "CapacityError", "DomainError", "NumericalError", "SpecError",
    "Distribution", "LabeledDataset", "TokenSequence", "Vocabulary",
    "SourceSpec", "bin2dec", "boolsum", "exact_conditional_entropy", "generate",
    "table_source", "theorem1_limit",
    "BayesEstimator", "empirical_test_loss", "exact_expected_test_loss", "fit",
    "identity_states", "loss_decomposition", "window_sum_states",
    "BernoulliPair", "kl_bernoulli", "kl_taylor", "theorem2_check",
    "AugmentSpec", "augment", "prop1_gain",
]
