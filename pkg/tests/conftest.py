import numpy as np
import pytest

from dynadv.data import ClassLabel, Dataset, SyntheticSpec, generate_synthetic, shuffle_split
from dynadv.defender import Defender
from dynadv.models import LinearModel, RegularizationSpec, SubspaceEnsemble


class ConstantDefender(Defender):
    """Answers every probe the same way."""

    def __init__(self, dim: int, accept: bool):
        super().__init__(dim)
        self.accept = accept

    def _accepts(self, x):
        return self.accept

    def decide(self, X):
        X = np.atleast_2d(X)
        return np.full(X.shape[0], self.accept)


class BernoulliDefender(Defender):
    """Accepts with a fixed probability, independent of the probe."""

    def __init__(self, dim: int, p: float, seed=0):
        super().__init__(dim)
        self.p = p
        self.rng = np.random.default_rng(seed)

    def _accepts(self, x):
        return bool(self.rng.random() < self.p)

    def decide(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.p >= 0.5)


def threshold_ensemble(thresholds, dim: int = 1) -> SubspaceEnsemble:
    """Members vote Legitimate iff x[0] >= their threshold, so the Legitimate
    vote count at x is the number of thresholds <= x[0]."""
    t = np.asarray(thresholds, dtype=float)
    k = t.size
    return SubspaceEnsemble(np.zeros((k, 1), dtype=int), np.ones((k, 1)), -t, dim,
                            RegularizationSpec())


def constant_ensemble(n_legit: int, k: int, dim: int = 2) -> SubspaceEnsemble:
    """k members ignoring the input, n_legit of them voting Legitimate."""
    biases = np.where(np.arange(k) < n_legit, 1.0, -1.0)
    return SubspaceEnsemble(np.zeros((k, 1), dtype=int), np.zeros((k, 1)), biases, dim,
                            RegularizationSpec())


def two_blobs(n: int = 50, dim: int = 2, seed: int = 0) -> Dataset:
    return generate_synthetic(SyntheticSpec(dim=dim, n_per_class=n, seed=seed))


@pytest.fixture(scope="session")
def synth10():
    return generate_synthetic(SyntheticSpec(seed=11))


@pytest.fixture(scope="session")
def split10(synth10):
    return shuffle_split(synth10, seed=3)


@pytest.fixture(scope="session")
def synth2():
    return generate_synthetic(SyntheticSpec(dim=2, seed=5))


@pytest.fixture(scope="session")
def split2(synth2):
    return shuffle_split(synth2, seed=4)


@pytest.fixture
def halfplane():
    """Accepts x[0] >= 0.5 in 2-d."""
    return LinearModel(np.array([1.0, 0.0]), -0.5)


LEG, MAL = ClassLabel.LEGITIMATE, ClassLabel.MALICIOUS


# acceptance verdicts, printed once at the end of the run
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
