"""Attack outcome metrics: Effective Attack Rate, Adversarial Margin Density and
Data Leakage.

AMD and data leakage look only at *successful* attacks, i.e. the samples the
defender's deterministic decision rule labels Legitimate. When no attack
succeeds both are undefined and returned as ``None``, never as 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .attack import AttackResult, AttackSet
from .defender import Defender
from .models import OneClassModel, SubspaceEnsemble

_EPS = 1e-9


@dataclass(frozen=True)
class AMDParams:
    theta_margin: float = 0.5
    k: int = 50
    feature_fraction: float = 0.5
    penalty: str = "l2"
    c: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.theta_margin <= 1.0:
            raise ValueError("theta_margin must lie in [0, 1]")


@dataclass(frozen=True)
class MetricsReport:
    ear: float
    amd: Optional[float]
    data_leak: Optional[float]
    n_attack: int
    n_successful: int
    probes_spent: int

    def to_dict(self) -> dict:
        return asdict(self)


def _samples(attacks) -> np.ndarray:
    return attacks.samples if isinstance(attacks, AttackSet) else np.atleast_2d(attacks)


def successful_attacks(defender: Defender, attacks) -> np.ndarray:
    """Boolean mask of attack samples the defender labels Legitimate."""
    X = _samples(attacks)
    if X.shape[0] == 0:
        raise ValueError("empty attack set")
    return np.asarray(defender.decide(X), dtype=bool)


def effective_attack_rate(defender: Defender, attacks) -> float:
    return float(successful_attacks(defender, attacks).mean())


def margin_indicator(reference: SubspaceEnsemble, X, theta_margin: float) -> np.ndarray:
    """1 where |p(Leg|x) - p(Mal|x)| <= theta_margin under the reference votes."""
    votes = reference.votes(X).sum(axis=1)
    spread = np.abs(2 * votes - reference.k) / reference.k
    return spread <= theta_margin + _EPS


def adversarial_margin_density(reference: SubspaceEnsemble, defender: Defender, attacks,
                               theta_margin: float = 0.5) -> Optional[float]:
    X = _samples(attacks)
    hit = successful_attacks(defender, X)
    if not hit.any():
        return None
    return float(margin_indicator(reference, X[hit], theta_margin).mean())


def data_leakage(one_class_reference: OneClassModel, defender: Defender, attacks) -> Optional[float]:
    X = _samples(attacks)
    hit = successful_attacks(defender, X)
    if not hit.any():
        return None
    return float(one_class_reference.decide(X[hit]).mean())


def evaluate(defender: Defender, result: AttackResult, reference: SubspaceEnsemble,
             one_class_reference: Optional[OneClassModel] = None,
             theta_margin: float = 0.5) -> MetricsReport:
    """All three metrics over one attack transcript, from one shared success mask.

    A failed attack (no anchors, hence no samples) scores EAR 0 with the other
    metrics undefined.
    """
    spent = result.exploration.probes_spent
    if result.failed:
        return MetricsReport(0.0, None, None, 0, 0, spent)
    X = result.attacks.samples
    hit = successful_attacks(defender, X)
    n_hit = int(hit.sum())
    amd = leak = None
    if n_hit:
        amd = float(margin_indicator(reference, X[hit], theta_margin).mean())
        if one_class_reference is not None:
            leak = float(one_class_reference.decide(X[hit]).mean())
    return MetricsReport(float(hit.mean()), amd, leak, len(X), n_hit, spent)
