"""Black-box defenders: trained models behind an Accept/Reject probe interface."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import ClassLabel, Dataset
from .seeding import derive_seed
from .models import (
    Penalty,
    RegularizationSpec,
    SubspaceEnsemble,
    train_linear,
    train_one_class,
    train_subspace_ensemble,
)


class Feedback(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


class Defender:
    """Base oracle. Subclasses implement ``_accepts`` (one probe) and ``decide``.

    ``decide`` is the deterministic decision rule used for scoring (training
    accuracy, attack success). ``feedback`` is what an attacker sees, and is
    the only method that touches the probe counter.
    """

    dim: int

    def __init__(self, dim: int):
        self.dim = dim
        self.probe_count = 0

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"probe has shape {x.shape}, defender expects ({self.dim},)")
        return x

    def feedback(self, x) -> Feedback:
        x = self._check(x)
        self.probe_count += 1
        return Feedback.ACCEPT if self._accepts(x) else Feedback.REJECT

    def reset_probes(self) -> None:
        self.probe_count = 0

    def _accepts(self, x: np.ndarray) -> bool:
        raise NotImplementedError

    def decide(self, X) -> np.ndarray:
        raise NotImplementedError


class DeterministicDefender(Defender):
    def __init__(self, model):
        super().__init__(model.dim)
        self.model = model

    def _accepts(self, x):
        return bool(self.model.decide(x)[0])

    def decide(self, X):
        return self.model.decide(X)


class RandomizedDefender(Defender):
    """Accepts a probe with probability equal to the ensemble's Legitimate vote share."""

    def __init__(self, ensemble: SubspaceEnsemble, seed=None):
        super().__init__(ensemble.dim)
        self.ensemble = ensemble
        self.rng = np.random.default_rng(seed)

    def _accepts(self, x):
        p = self.ensemble.confidence(x)[0]
        return bool(self.rng.random() < p)

    def decide(self, X):
        return self.ensemble.decide(X)


class HiddenFeatureDefender(Defender):
    """Evaluates ``inner`` on the visible coordinates only; hidden ones are discarded."""

    def __init__(self, visible_mask, inner: Defender):
        mask = np.asarray(visible_mask, dtype=bool)
        if not mask.any():
            raise ValueError("at least one feature must stay visible")
        if inner.dim != int(mask.sum()):
            raise ValueError("inner defender dimension must equal the visible feature count")
        super().__init__(mask.size)
        self.visible_mask = mask
        self.inner = inner

    @property
    def hidden_features(self) -> np.ndarray:
        return np.flatnonzero(~self.visible_mask)

    @property
    def visible_features(self) -> np.ndarray:
        return np.flatnonzero(self.visible_mask)

    def _accepts(self, x):
        return self.inner._accepts(x[self.visible_mask])

    def decide(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.inner.decide(X[:, self.visible_mask])


DESIGNS = ("one_class", "linear_l1", "linear_l2", "subspace", "randomized", "hidden")


@dataclass(frozen=True)
class DefenderSpec:
    """Configuration of a defender design and its hyperparameters."""

    design: str = "subspace"
    c: float = 1.0
    penalty: str = "l1"       # member penalty for subspace/randomized designs
    k: int = 50
    feature_fraction: float = 0.5
    nu: float = 0.1
    gamma: float = 0.1
    hide_fraction: float = 0.5
    inner: Optional["DefenderSpec"] = None
    name: str = ""

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"unknown defender design {self.design!r}; choose from {DESIGNS}")
        if self.design == "hidden" and self.inner is not None and self.inner.design == "hidden":
            raise ValueError("hidden defenders cannot nest")

    @property
    def label(self) -> str:
        return self.name or self.design

    @classmethod
    def from_dict(cls, d: dict) -> "DefenderSpec":
        d = dict(d)
        inner = d.pop("inner", None)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown defender keys: {sorted(unknown)}")
        if inner is not None:
            inner = cls.from_dict(inner)
        return cls(inner=inner, **d)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "inner"}
        if self.inner is not None:
            d["inner"] = self.inner.to_dict()
        return d


def _ensemble(spec: DefenderSpec, train: Dataset, seed) -> SubspaceEnsemble:
    return train_subspace_ensemble(train, spec.k, spec.feature_fraction,
                                   RegularizationSpec(Penalty(spec.penalty), spec.c),
                                   seed=seed)


def build_defender(spec: DefenderSpec, train: Dataset, seed=None) -> Defender:
    if spec.design == "one_class":
        return DeterministicDefender(train_one_class(train.legitimate, spec.nu, spec.gamma))
    if spec.design in ("linear_l1", "linear_l2"):
        reg = RegularizationSpec(Penalty(spec.design[-2:]), spec.c)
        return DeterministicDefender(train_linear(train, reg))
    if spec.design == "subspace":
        return DeterministicDefender(_ensemble(spec, train, seed))
    if spec.design == "randomized":
        ensemble = _ensemble(spec, train, derive_seed(seed, 0))
        return RandomizedDefender(ensemble, derive_seed(seed, 1))
    return make_hidden(train, spec.hide_fraction, spec.inner or DefenderSpec(), seed)


def make_hidden(train: Dataset, hide_fraction: float, inner_spec: DefenderSpec,
                seed=None) -> HiddenFeatureDefender:
    """Hide a random feature subset from the defender: the inner model never sees it."""
    if not 0.0 <= hide_fraction <= 1.0:
        raise ValueError(f"hide_fraction must lie in [0, 1], got {hide_fraction}")
    n_hidden = int(math.floor(hide_fraction * train.dim + 0.5))
    if n_hidden >= train.dim:
        raise ValueError("hide_fraction hides every feature")
    rng = np.random.default_rng(derive_seed(seed, 2))
    hidden = rng.choice(train.dim, size=n_hidden, replace=False)
    mask = np.ones(train.dim, dtype=bool)
    mask[hidden] = False
    inner = build_defender(inner_spec, train.project(np.flatnonzero(mask)), seed)
    return HiddenFeatureDefender(mask, inner)


def training_accuracy(d: Defender, train: Dataset) -> float:
    if len(train) == 0:
        raise ValueError("empty dataset")
    predicted_legit = d.decide(train.X)
    return float(np.mean(predicted_legit == (train.y == ClassLabel.LEGITIMATE)))
