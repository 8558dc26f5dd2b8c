"""Classifier primitives: hinge-loss linear models, random subspace ensembles
and a radial-kernel one-class boundary.

All ``decide``/``confidence`` methods take a 2-d array of samples (one row per
sample) and are vectorized; the module-level functions mirror the single-sample
operations used elsewhere in the package.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .data import ClassLabel, Dataset

MODEL_FORMAT = "dynadv.model"
MODEL_FORMAT_VERSION = 1


class Penalty(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class RegularizationSpec:
    kind: Penalty = Penalty.L2
    c: float = 1.0

    def __post_init__(self):
        if not isinstance(self.kind, Penalty):
            object.__setattr__(self, "kind", Penalty(str(self.kind).lower()))
        if not self.c > 0:
            raise ValueError(f"c must be > 0, got {self.c}")


def _as_rows(x, dim: int) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != dim:
        raise ValueError(f"expected samples of dimension {dim}, got shape {np.shape(x)}")
    return a


def _signed_targets(d: Dataset) -> np.ndarray:
    if not d.has_both_classes():
        raise ValueError("training data must contain both classes")
    return np.where(d.y == ClassLabel.LEGITIMATE, 1.0, -1.0)


def _fit_l1(X: np.ndarray, t: np.ndarray, c: float) -> tuple[np.ndarray, float]:
    """L1 penalty + hinge as a linear program over (w+, w-, b, slack).

    The simplex solution sits on a vertex, so irrelevant weights come out
    exactly zero rather than merely small.
    """
    n, d = X.shape
    tx = sparse.csr_matrix(t[:, None] * X)
    A = sparse.hstack([-tx, tx, sparse.csr_matrix(-t[:, None]), -sparse.identity(n)],
                      format="csr")
    cost = np.concatenate([np.ones(2 * d), [0.0], np.full(n, c)])
    bounds = [(0, None)] * (2 * d) + [(None, None)] + [(0, None)] * n
    res = linprog(cost, A_ub=A, b_ub=-np.ones(n), bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"L1 hinge solver failed: {res.message}")
    w = res.x[:d] - res.x[d:2 * d]
    return w, float(res.x[2 * d])


def _fit_l2(X: np.ndarray, t: np.ndarray, c: float, tol: float,
            max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched SMO on the dual of 0.5|w|^2 + c * hinge with a free bias.

    Dual: min 0.5 a'Qa - sum(a), 0 <= a <= c, t'a = 0, Q_ij = t_i t_j x_i.x_j.
    Each step moves the maximal-gain pair (second-order working set
    selection); stops once the KKT gap is below ``tol`` for every problem or
    after ``max_iter`` steps. Degenerate problems can crawl in the tail of the
    optimization, where a cap costs nothing measurable in the objective.
    """
    k, n, _ = X.shape
    rows = np.arange(k)
    K = np.einsum("knd,kmd->knm", X, X)
    diag = np.einsum("knn->kn", K)
    a = np.zeros((k, n))
    G = -np.ones((k, n))     # gradient of the dual objective

    def bounds(a):
        up = ((t > 0) & (a < c)) | ((t < 0) & (a > 0))
        low = ((t > 0) & (a > 0)) | ((t < 0) & (a < c))
        return up, low

    for _ in range(max_iter):
        up, low = bounds(a)
        s = -t * G
        su = np.where(up, s, -np.inf)
        i = su.argmax(axis=1)
        top = su[rows, i]
        done = top - np.where(low, s, np.inf).min(axis=1) < tol
        if done.all():
            break
        Ki = K[rows, i]
        quad = np.maximum(diag[rows, i][:, None] + diag - 2.0 * Ki, 1e-12)
        gain = np.where(low & (s < top[:, None]), (top[:, None] - s) ** 2 / quad, -np.inf)
        j = gain.argmax(axis=1)
        step = (top - s[rows, j]) / quad[rows, j]
        ai, aj = a[rows, i], a[rows, j]
        room_i = np.where(t[i] > 0, c - ai, ai)
        room_j = np.where(t[j] > 0, aj, c - aj)
        step = np.where(done, 0.0, np.minimum(step, np.minimum(room_i, room_j)))
        a[rows, i] = ai + t[i] * step
        a[rows, j] = aj - t[j] * step
        G += step[:, None] * t * (Ki - K[rows, j])

    w = np.einsum("kn,knd->kd", a * t, X)
    # bias: average over free support vectors, else the middle of the feasible interval
    up, low = bounds(a)
    s = -t * G
    free = (a > 1e-12) & (a < c - 1e-12)
    n_free = free.sum(axis=1)
    b_free = (s * free).sum(axis=1) / np.maximum(n_free, 1)
    b_mid = 0.5 * (np.where(up, s, -np.inf).max(axis=1) + np.where(low, s, np.inf).min(axis=1))
    return w, np.where(n_free > 0, b_free, b_mid)


def fit_hinge(X: np.ndarray, t: np.ndarray, reg: RegularizationSpec,
              tol: float = 1e-8, max_iter: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Minimize penalty(w) + c * sum_i max(0, 1 - t_i (w.x_i + b)) for a batch of problems.

    ``X`` has shape (k, n, d): k independent problems sharing targets ``t`` (n,)
    in {-1, +1}. The bias is unpenalized. L1 is solved exactly as a linear
    program, L2 through its dual. Returns (weights (k, d), biases (k,)).
    """
    k, n, d = X.shape
    if reg.kind is Penalty.L1:
        fits = [_fit_l1(X[i], t, reg.c) for i in range(k)]
        return np.array([w for w, _ in fits]).reshape(k, d), np.array([b for _, b in fits])
    return _fit_l2(X, t, reg.c, tol, max_iter or 20 * n)


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float
    reg: RegularizationSpec = RegularizationSpec()

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def score(self, X) -> np.ndarray:
        return _as_rows(X, self.dim) @ self.weights + self.bias

    def decide(self, X) -> np.ndarray:
        """True where the sample is labeled Legitimate; a zero score counts as Legitimate."""
        return self.score(X) >= 0.0

    def to_dict(self) -> dict:
        return {"type": "linear", "weights": self.weights.tolist(), "bias": self.bias,
                "penalty": self.reg.kind.value, "c": self.reg.c}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(np.array(d["weights"], dtype=float), float(d["bias"]),
                   RegularizationSpec(Penalty(d["penalty"]), float(d["c"])))


def train_linear(train: Dataset, reg: RegularizationSpec = RegularizationSpec()) -> LinearModel:
    t = _signed_targets(train)
    w, b = fit_hinge(train.X[None], t, reg)
    return LinearModel(w[0], float(b[0]), reg)


def predict(m: LinearModel, x) -> tuple[ClassLabel, float]:
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim,):
        raise ValueError(f"expected a sample of dimension {m.dim}, got shape {x.shape}")
    s = float(x @ m.weights + m.bias)
    return (ClassLabel.LEGITIMATE if s >= 0.0 else ClassLabel.MALICIOUS), s


def subset_size(feature_fraction: float, dim: int) -> int:
    if not 0.0 < feature_fraction <= 1.0:
        raise ValueError(f"feature_fraction must lie in (0, 1], got {feature_fraction}")
    # half rounds up: 0.5 * 5 features -> 3
    return max(1, int(math.floor(feature_fraction * dim + 0.5)))


@dataclass(frozen=True)
class SubspaceEnsemble:
    subsets: np.ndarray   # (k, s) feature indices
    weights: np.ndarray   # (k, s)
    biases: np.ndarray    # (k,)
    dim: int
    reg: RegularizationSpec = RegularizationSpec()

    @property
    def k(self) -> int:
        return self.subsets.shape[0]

    @property
    def feature_fraction(self) -> float:
        return self.subsets.shape[1] / self.dim

    def member(self, i: int) -> tuple[np.ndarray, LinearModel]:
        return self.subsets[i], LinearModel(self.weights[i], float(self.biases[i]), self.reg)

    def votes(self, X) -> np.ndarray:
        """(m, k) boolean matrix, True where a member votes Legitimate."""
        X = _as_rows(X, self.dim)
        scores = np.einsum("mks,ks->mk", X[:, self.subsets], self.weights) + self.biases
        return scores >= 0.0

    def confidence(self, X) -> np.ndarray:
        """Fraction of members voting Legitimate, per sample."""
        return self.votes(X).sum(axis=1) / self.k

    def decide(self, X) -> np.ndarray:
        # a 50/50 vote goes to Legitimate; integer comparison avoids float ties
        return 2 * self.votes(X).sum(axis=1) >= self.k

    def to_dict(self) -> dict:
        return {"type": "subspace_ensemble", "dim": self.dim,
                "subsets": self.subsets.tolist(), "weights": self.weights.tolist(),
                "biases": self.biases.tolist(), "penalty": self.reg.kind.value,
                "c": self.reg.c}

    @classmethod
    def from_dict(cls, d: dict) -> "SubspaceEnsemble":
        return cls(np.array(d["subsets"], dtype=int).reshape(len(d["subsets"]), -1),
                   np.array(d["weights"], dtype=float).reshape(len(d["subsets"]), -1),
                   np.array(d["biases"], dtype=float), int(d["dim"]),
                   RegularizationSpec(Penalty(d["penalty"]), float(d["c"])))


def train_subspace_ensemble(train: Dataset, k: int = 50, feature_fraction: float = 0.5,
                            reg: RegularizationSpec = RegularizationSpec(), seed=None) -> SubspaceEnsemble:
    """Random subspace (feature bagging) ensemble of linear hinge-loss models.

    Each member draws its own feature subset without replacement; subsets of
    different members are independent and may coincide.
    """
    if k < 1:
        raise ValueError("ensemble needs at least one member")
    t = _signed_targets(train)
    s = subset_size(feature_fraction, train.dim)
    rng = np.random.default_rng(seed)
    subsets = np.stack([np.sort(rng.choice(train.dim, size=s, replace=False))
                        for _ in range(k)])
    Xs = np.transpose(train.X[:, subsets], (1, 0, 2))
    w, b = fit_hinge(Xs, t, reg)
    return SubspaceEnsemble(subsets, w, b, train.dim, reg)


def ensemble_confidence(e: SubspaceEnsemble, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (e.dim,):
        raise ValueError(f"expected a sample of dimension {e.dim}, got shape {x.shape}")
    return float(e.confidence(x)[0])


@dataclass(frozen=True)
class OneClassModel:
    """Kernel density boundary around a reference sample set.

    score(x) is the mean of exp(-gamma * |x - x_i|^2) over the reference
    samples; ``threshold`` is the nu-quantile of the reference samples' own
    scores, so about a nu fraction of them fall outside.
    """

    reference: np.ndarray
    nu: float
    gamma: float
    threshold: float

    @property
    def dim(self) -> int:
        return self.reference.shape[1]

    def score(self, X) -> np.ndarray:
        X = _as_rows(X, self.dim)
        sq = ((X[:, None, :] - self.reference[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-self.gamma * sq).mean(axis=1)

    def decide(self, X) -> np.ndarray:
        return self.score(X) >= self.threshold

    def to_dict(self) -> dict:
        return {"type": "one_class", "nu": self.nu, "gamma": self.gamma,
                "threshold": self.threshold, "reference": self.reference.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "OneClassModel":
        thr = d["threshold"]
        return cls(np.array(d["reference"], dtype=float), float(d["nu"]),
                   float(d["gamma"]), float("-inf") if thr is None else float(thr))


def train_one_class(legitimate_only: Dataset, nu: float = 0.1, gamma: float = 0.1) -> OneClassModel:
    if len(legitimate_only) == 0:
        raise ValueError("one-class training needs at least one sample")
    if (legitimate_only.y != ClassLabel.LEGITIMATE).any():
        raise ValueError("one-class training data must be Legitimate only")
    if not 0.0 < nu < 1.0:
        raise ValueError(f"nu must lie in (0, 1), got {nu}")
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    ref = np.array(legitimate_only.X, dtype=float)
    model = OneClassModel(ref, nu, gamma, float("-inf"))
    scores = np.sort(model.score(ref))
    # the floor(nu * n) lowest-scoring samples fall strictly below the threshold
    threshold = float(scores[int(math.floor(nu * len(scores)))])
    return OneClassModel(ref, nu, gamma, threshold)


def one_class_accepts(m: OneClassModel, x) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim,):
        raise ValueError(f"expected a sample of dimension {m.dim}, got shape {x.shape}")
    return bool(m.decide(x)[0])


_MODEL_TYPES = {"linear": LinearModel, "subspace_ensemble": SubspaceEnsemble,
                "one_class": OneClassModel}


def model_to_dict(m) -> dict:
    d = m.to_dict()
    if d.get("threshold") == float("-inf"):
        d["threshold"] = None
    return {"format": MODEL_FORMAT, "version": MODEL_FORMAT_VERSION, **d}


def model_from_dict(d: dict):
    if d.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} document")
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('version')}")
    try:
        cls = _MODEL_TYPES[d["type"]]
    except KeyError:
        raise ValueError(f"unknown model type {d.get('type')!r}") from None
    return cls.from_dict(d)


def save_model(m, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m), indent=1) + "\n", encoding="utf-8")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
