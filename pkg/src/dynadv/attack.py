"""Black-box evasion attacks: Anchor Points exploration/exploitation and its
high-confidence (AP-HC) and retry-based (AP-Retry) filters.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import ClassLabel, Dataset
from .defender import Defender, Feedback
from .models import Penalty, RegularizationSpec, SubspaceEnsemble, train_subspace_ensemble
from .seeding import derive_seed

log = logging.getLogger(__name__)

TRANSCRIPT_FORMAT = "dynadv.transcript"
TRANSCRIPT_VERSION = 1

# stream keys under the attack seed
_EXPLORE, _EXPLOIT, _FILTER = 0, 1, 2


class AttackError(RuntimeError):
    pass


class Strategy(str, enum.Enum):
    AP = "AP"
    AP_HC = "AP_HC"
    AP_RETRY = "AP_Retry"
    AP_RETRY_HC = "AP_Retry_HC"

    @property
    def filters_confidence(self) -> bool:
        return self in (Strategy.AP_HC, Strategy.AP_RETRY_HC)

    @property
    def retries(self) -> bool:
        return self in (Strategy.AP_RETRY, Strategy.AP_RETRY_HC)


@dataclass(frozen=True)
class APParams:
    b_explore: int = 20
    n_attack: int = 40
    max_probes: Optional[int] = None   # None means 200 * b_explore
    jitter_sigma: float = 0.05
    seed: Optional[int] = None
    n_seed: int = 0    # known-Legitimate samples the attacker starts from

    def __post_init__(self):
        if self.n_seed < 0:
            raise ValueError("n_seed must be >= 0")
        if self.b_explore < 1 or self.n_attack < 1:
            raise ValueError("b_explore and n_attack must be positive")
        if self.probe_budget < self.b_explore:
            raise ValueError("max_probes must be at least b_explore")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")

    @property
    def probe_budget(self) -> int:
        return 200 * self.b_explore if self.max_probes is None else self.max_probes


@dataclass(frozen=True)
class HCParams:
    theta_adversary_confidence: float = 0.8
    k: int = 50
    feature_fraction: float = 0.5
    penalty: str = "l2"
    c: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.theta_adversary_confidence <= 1.0:
            raise ValueError("theta_adversary_confidence must lie in [0, 1]")

    @property
    def reg(self) -> RegularizationSpec:
        return RegularizationSpec(Penalty(self.penalty), self.c)


@dataclass(frozen=True)
class RetryParams:
    n_retries: int = 5

    def __post_init__(self):
        if self.n_retries < 1:
            raise ValueError("n_retries must be >= 1")


@dataclass
class ExplorationSet:
    """Probe history of one attack session.

    ``responses`` holds every individual feedback (one column per retry);
    a probe counts as accepted only if all of its responses were Accept.
    ``anchors`` indexes the probes used for exploitation, which after
    filtering is a subset of the accepted probes.
    """

    probes: np.ndarray                 # (m, d)
    responses: np.ndarray              # (m, r) bool, True = Accept
    anchors: np.ndarray                # indices into probes
    probes_spent: int
    flags: dict = field(default_factory=dict)

    @property
    def accepted(self) -> np.ndarray:
        return self.responses.all(axis=1)

    @property
    def anchor_points(self) -> np.ndarray:
        return self.probes[self.anchors]

    @property
    def dim(self) -> int:
        return self.probes.shape[1]

    def with_anchors(self, anchors, **flags) -> "ExplorationSet":
        return ExplorationSet(self.probes, self.responses, np.asarray(anchors, dtype=int),
                              self.probes_spent, {**self.flags, **flags})


@dataclass
class AttackSet:
    samples: np.ndarray       # (m, d)
    provenance: np.ndarray    # (m, 2) probe indices of the anchors each sample came from

    def __len__(self) -> int:
        return self.samples.shape[0]


def _probe(oracle: Defender, x: np.ndarray, retries: int) -> list[bool]:
    return [oracle.feedback(x) is Feedback.ACCEPT for _ in range(retries)]


def _explore(oracle: Defender, params: APParams, retries: int,
             seed_samples=None) -> ExplorationSet:
    rng = np.random.default_rng(derive_seed(params.seed, _EXPLORE))
    budget = params.probe_budget
    probes, responses, anchors = [], [], []
    spent = 0
    queue = [] if seed_samples is None else list(np.atleast_2d(seed_samples))
    while len(anchors) < params.b_explore and spent + retries <= budget:
        # attacker-held seeds go first, then uniform random probes
        x = np.asarray(queue.pop(0), dtype=float) if queue else rng.random(oracle.dim)
        outcome = _probe(oracle, x, retries)
        spent += retries
        if all(outcome):
            anchors.append(len(probes))
        probes.append(x)
        responses.append(outcome)
    probes = np.array(probes).reshape(-1, oracle.dim)
    responses = np.array(responses, dtype=bool).reshape(-1, retries)
    flags = {}
    if not anchors:
        flags["exploration_failed"] = True
        log.info("exploration found no anchors in %d probes", spent)
    return ExplorationSet(probes, responses, np.array(anchors, dtype=int), spent, flags)


def ap_explore(oracle: Defender, params: APParams, seed_samples=None) -> ExplorationSet:
    """Probe uniformly random points once each until ``b_explore`` are accepted
    or the probe budget runs out.

    ``seed_samples`` (optional) are points the attacker already believes
    Legitimate; they are probed before any random point and count against the
    budget like every other probe.
    """
    return _explore(oracle, params, 1, seed_samples)


def ap_exploit(exploration: ExplorationSet, params: APParams) -> AttackSet:
    """Attack samples on random segments between anchor pairs, plus Gaussian jitter."""
    A = exploration.anchor_points
    if len(A) == 0:
        raise AttackError("no anchors to exploit")
    rng = np.random.default_rng(derive_seed(params.seed, _EXPLOIT))
    m = params.n_attack
    if len(A) == 1:
        i = j = np.zeros(m, dtype=int)
        lam = np.ones(m)
    else:
        i = rng.integers(len(A), size=m)
        j = rng.integers(len(A) - 1, size=m)
        j = j + (j >= i)
        lam = rng.random(m)
    X = lam[:, None] * A[i] + (1.0 - lam[:, None]) * A[j]
    if params.jitter_sigma > 0:
        X = X + rng.normal(0.0, params.jitter_sigma, X.shape)
    X = np.clip(X, 0.0, 1.0)
    provenance = np.stack([exploration.anchors[i], exploration.anchors[j]], axis=1)
    return AttackSet(X, provenance)


def train_filter_ensemble(exploration: ExplorationSet, params: HCParams, seed=None) -> SubspaceEnsemble:
    """The attacker's surrogate: an ensemble fit to the probes, labeled by the feedback seen."""
    labels = np.where(exploration.accepted, ClassLabel.LEGITIMATE, ClassLabel.MALICIOUS)
    probes = Dataset(exploration.probes, labels)
    if not probes.has_both_classes():
        raise AttackError("filter ensemble needs both accepted and rejected probes")
    return train_subspace_ensemble(probes, params.k, params.feature_fraction, params.reg,
                                   seed=seed)


def confident_anchors(ensemble: SubspaceEnsemble, exploration: ExplorationSet,
                      theta: float) -> np.ndarray:
    """Anchors with a Legitimate majority and |p(Leg) - p(Mal)| >= theta."""
    anchors = exploration.anchors
    if anchors.size == 0:
        return anchors
    votes = ensemble.votes(exploration.probes[anchors]).sum(axis=1)
    k = ensemble.k
    lead = 2 * votes - k
    keep = (lead >= 0) & (np.abs(lead) >= theta * k - 1e-9)
    return anchors[keep]


def hc_filter(exploration: ExplorationSet, params: HCParams = HCParams(), seed=None) -> ExplorationSet:
    """Keep only anchors the attacker's own ensemble is confident about.

    When nothing survives (or the probes hold a single class, so no surrogate
    can be trained) the unfiltered anchors are kept and the run is flagged.
    """
    try:
        ensemble = train_filter_ensemble(exploration, params, seed)
    except AttackError:
        log.warning("hc_filter: probes hold one class only, keeping unfiltered anchors")
        return exploration.with_anchors(exploration.anchors, hc_fallback=True)
    kept = confident_anchors(ensemble, exploration, params.theta_adversary_confidence)
    if kept.size == 0:
        log.warning("hc_filter removed every anchor, keeping unfiltered anchors")
        return exploration.with_anchors(exploration.anchors, hc_fallback=True)
    return exploration.with_anchors(kept)


def retry_filter(oracle: Defender, candidates, params: RetryParams = RetryParams()) -> ExplorationSet:
    """Probe each candidate ``n_retries`` times; only unanimous Accepts become anchors."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] == 0:
        raise ValueError("no candidates to probe")
    responses = np.array([_probe(oracle, x, params.n_retries) for x in candidates],
                         dtype=bool).reshape(-1, params.n_retries)
    anchors = np.flatnonzero(responses.all(axis=1))
    return ExplorationSet(candidates, responses, anchors, responses.size)


@dataclass(frozen=True)
class AttackParams:
    ap: APParams = APParams()
    hc: HCParams = HCParams()
    retry: RetryParams = RetryParams()

    def with_seed(self, seed) -> "AttackParams":
        return replace(self, ap=replace(self.ap, seed=seed))


@dataclass
class AttackResult:
    strategy: Strategy
    exploration: ExplorationSet
    attacks: AttackSet

    @property
    def failed(self) -> bool:
        return len(self.attacks) == 0

    @property
    def flags(self) -> dict:
        return self.exploration.flags


def run_attack(oracle: Defender, strategy, params: AttackParams = AttackParams(),
               seed_samples=None) -> AttackResult:
    """Explore, optionally filter, then exploit.

    An exploration that finds no anchor is not an error: the result carries an
    empty attack set and the ``exploration_failed`` flag.
    """
    strategy = Strategy(strategy)
    retries = params.retry.n_retries if strategy.retries else 1
    exploration = _explore(oracle, params.ap, retries, seed_samples)
    if exploration.anchors.size == 0:
        empty = AttackSet(np.empty((0, oracle.dim)), np.empty((0, 2), dtype=int))
        return AttackResult(strategy, exploration, empty)
    if strategy.filters_confidence:
        exploration = hc_filter(exploration, params.hc, derive_seed(params.ap.seed, _FILTER))
    return AttackResult(strategy, exploration, ap_exploit(exploration, params.ap))


def write_transcript(result: AttackResult, path) -> None:
    """Line-delimited JSON: a header, one line per individual probe response,
    the exploitation anchors, then one line per attack sample."""
    ex = result.exploration
    with Path(path).open("w", encoding="utf-8") as fh:
        def emit(obj):
            fh.write(json.dumps(obj) + "\n")

        emit({"kind": "header", "format": TRANSCRIPT_FORMAT, "version": TRANSCRIPT_VERSION,
              "strategy": result.strategy.value, "dim": ex.dim,
              "probes_spent": ex.probes_spent, "flags": ex.flags})
        for p, (x, resp) in enumerate(zip(ex.probes, ex.responses)):
            for r, ok in enumerate(resp):
                emit({"kind": "probe", "probe": p, "retry": r, "x": x.tolist(),
                      "feedback": (Feedback.ACCEPT if ok else Feedback.REJECT).value})
        emit({"kind": "anchors", "probes": ex.anchors.tolist()})
        for x, prov in zip(result.attacks.samples, result.attacks.provenance):
            emit({"kind": "attack", "x": x.tolist(), "anchors": prov.tolist()})


def read_transcript(path) -> AttackResult:
    lines = [json.loads(s) for s in Path(path).read_text(encoding="utf-8").splitlines() if s]
    if not lines or lines[0].get("format") != TRANSCRIPT_FORMAT:
        raise ValueError(f"{path}: not a {TRANSCRIPT_FORMAT} file")
    if lines[0].get("version") != TRANSCRIPT_VERSION:
        raise ValueError(f"{path}: unsupported transcript version {lines[0].get('version')}")
    head = lines[0]
    dim = head["dim"]
    probes: dict[int, list] = {}
    responses: dict[int, list] = {}
    anchors, attacks, provenance = [], [], []
    for rec in lines[1:]:
        if rec["kind"] == "probe":
            probes[rec["probe"]] = rec["x"]
            responses.setdefault(rec["probe"], []).append(rec["feedback"] == Feedback.ACCEPT.value)
        elif rec["kind"] == "anchors":
            anchors = rec["probes"]
        elif rec["kind"] == "attack":
            attacks.append(rec["x"])
            provenance.append(rec["anchors"])
    order = sorted(probes)
    ex = ExplorationSet(
        np.array([probes[i] for i in order], dtype=float).reshape(-1, dim),
        np.array([responses[i] for i in order], dtype=bool).reshape(len(order), -1),
        np.array(anchors, dtype=int), head["probes_spent"], dict(head["flags"]))
    atk = AttackSet(np.array(attacks, dtype=float).reshape(-1, dim),
                    np.array(provenance, dtype=int).reshape(-1, 2))
    return AttackResult(Strategy(head["strategy"]), ex, atk)
