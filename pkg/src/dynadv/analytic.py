"""Evasion probability and adversarial certainty of idealized classifier designs
over an n-dimensional binary feature space.

The defender trains on one Legitimate sample L = (1, ..., 1) and one Malicious
sample M = (0, ..., 0); the attacker probes uniformly random binary vectors.
Evasion probability is the accepted fraction of the 2^n probes, adversarial
certainty the chance that an accepted probe is L itself, 1 / |accepted|.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

MAX_BRUTE_FORCE_N = 20


class DesignKind(str, enum.Enum):
    SIMPLE = "simple"
    ONE_CLASS_LEGITIMATE = "one_class_legitimate"
    ONE_CLASS_MALICIOUS = "one_class_malicious"
    FEATURE_BAGGED_MAJORITY = "feature_bagged_majority"
    RANDOMIZED_SUBSPACE = "randomized_subspace"

    @property
    def needs_even_n(self) -> bool:
        return self in (DesignKind.FEATURE_BAGGED_MAJORITY, DesignKind.RANDOMIZED_SUBSPACE)


@dataclass(frozen=True)
class DesignMetrics:
    evasion_probability: Fraction
    adversarial_certainty: Fraction
    n: int


def _check(kind: DesignKind, n: int) -> DesignKind:
    kind = DesignKind(kind)
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind.needs_even_n and n % 2:
        raise ValueError(f"{kind.value} needs an even number of features, got {n}")
    return kind


def majority_evasion_sum(n: int) -> Fraction:
    """sum_{i > n/2} C(n, i) / 2^n, evaluated exactly."""
    return Fraction(sum(comb(n, i) for i in range(n // 2 + 1, n + 1)), 2 ** n)


def majority_evasion_footnote(n: int) -> Fraction:
    """The 2^(n-1) / 2^n = 1/2 shortcut for the majority sum.

    It drops the central term C(n, n/2) / 2, so it overstates the exact sum;
    reported for comparison only.
    """
    return Fraction(1, 2)


def design_metrics(kind: DesignKind, n: int) -> DesignMetrics:
    kind = _check(kind, n)
    full = 2 ** n
    if kind is DesignKind.SIMPLE:
        return DesignMetrics(Fraction(1, 2), Fraction(1, 2 ** (n - 1)), n)
    if kind is DesignKind.ONE_CLASS_LEGITIMATE:
        return DesignMetrics(Fraction(1, full), Fraction(1), n)
    if kind is DesignKind.ONE_CLASS_MALICIOUS:
        return DesignMetrics(Fraction(full - 1, full), Fraction(1, full - 1), n)
    if kind is DesignKind.FEATURE_BAGGED_MAJORITY:
        return DesignMetrics(majority_evasion_sum(n), Fraction(1, 2 ** (n - 1)), n)
    half = 2 ** (n // 2)
    return DesignMetrics(Fraction(1, half), Fraction(1, half), n)


def accepted_probes(kind: DesignKind, n: int) -> np.ndarray:
    """Boolean acceptance of every binary probe (row b of the 2^n x n probe matrix
    is the binary expansion of b) under the design's model representation."""
    kind = _check(kind, n)
    if n > MAX_BRUTE_FORCE_N:
        raise ValueError(f"brute force is limited to n <= {MAX_BRUTE_FORCE_N}")
    probes = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(bool)
    if kind is DesignKind.SIMPLE:
        # a single retained feature, X_1 = 1
        return probes[:, 0]
    if kind is DesignKind.ONE_CLASS_LEGITIMATE:
        return probes.all(axis=1)
    if kind is DesignKind.ONE_CLASS_MALICIOUS:
        return probes.any(axis=1)
    if kind is DesignKind.FEATURE_BAGGED_MAJORITY:
        # disjunction over every (n/2 + 1)-feature subset of the conjunction of its
        # features: at least one majority-sized group of features is fully mimicked
        accepted = np.zeros(2 ** n, dtype=bool)
        for s in itertools.combinations(range(n), n // 2 + 1):
            accepted |= probes[:, s].all(axis=1)
        return accepted
    # randomized subspace: the model answering is the conjunction over one
    # n/2-feature subset; by symmetry every choice gives the same counts
    return probes[:, : n // 2].all(axis=1)


def brute_force_binary(kind: DesignKind, n: int) -> DesignMetrics:
    accepted = accepted_probes(kind, n)
    n_accepted = int(accepted.sum())
    return DesignMetrics(Fraction(n_accepted, 2 ** n), Fraction(1, n_accepted), n)
