"""Event-interval laws: Erlang mixtures and a few named renewal distributions.

A :class:`PhaseTypeMixture` picks branch ``i`` with probability ``p`` and then
waits through ``m`` exponential stages of rate ``k``.  It is the only timing law
the phase-embedded moment engine accepts.  :class:`RenewalLaw` covers
deterministic, gamma and lognormal intervals for the simulator and for the
mean-interval-only covariance formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import TTSHSError

PROBABILITY_SUM_TOL = 1e-12
SURVIVAL_FLOOR = 1e-300
_LGAMMA_LIMIT = 170


class Branch(NamedTuple):
    p: float
    m: int
    k: float


@dataclass(frozen=True)
class PhaseTypeMixture:
    """Mixture of Erlang(m, k) branches.

    Construction does not validate; call :meth:`violations` (or
    ``model.validate_model``) to get the list of broken invariants.
    """

    branches: tuple[Branch, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "branches", tuple(Branch(float(b[0]), int(b[1]), float(b[2])) for b in self.branches)
        )

    @classmethod
    def erlang(cls, m: int, k: float) -> PhaseTypeMixture:
        return cls((Branch(1.0, m, k),))

    @classmethod
    def exponential(cls, k: float) -> PhaseTypeMixture:
        return cls.erlang(1, k)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([b.p for b in self.branches])

    @property
    def stage_count(self) -> int:
        """Total number of embedded chain states, sum of m over branches."""
        return sum(b.m for b in self.branches)

    @property
    def mean(self) -> float:
        return interval_moment(self, 1)

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if not self.branches:
            out.append(("EMPTY_MIXTURE", "phase-type mixture has no branches"))
            return out
        total = sum(b.p for b in self.branches)
        if abs(total - 1.0) > PROBABILITY_SUM_TOL:
            out.append(("PROBABILITY_SUM", f"branch probabilities sum to {total!r}, expected 1"))
        for i, b in enumerate(self.branches):
            if not (0.0 <= b.p <= 1.0):
                out.append(("PROBABILITY_RANGE", f"branch {i} probability {b.p!r} outside [0, 1]"))
            if b.m < 1:
                out.append(("STAGE_COUNT", f"branch {i} has m={b.m}, need m >= 1"))
            if not (b.k > 0.0 and math.isfinite(b.k)):
                out.append(("NONPOSITIVE_RATE", f"branch {i} has rate k={b.k!r}"))
        return out

    def sample(self, rng: np.random.Generator, size: int | None = None):
        return sample_intervals(self, rng, size)


@dataclass(frozen=True)
class RenewalLaw:
    """Named interval distribution parametrized by mean and squared CV.

    ``kind`` is one of ``deterministic`` (cv2 forced to 0), ``gamma``,
    ``lognormal`` or ``exponential`` (gamma with cv2 = 1).
    """

    kind: str
    mean: float
    cv2: float = 0.0

    KINDS = ("deterministic", "gamma", "lognormal", "exponential")

    def __post_init__(self):
        if self.kind == "deterministic":
            object.__setattr__(self, "cv2", 0.0)
        elif self.kind == "exponential":
            object.__setattr__(self, "cv2", 1.0)

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if self.kind not in self.KINDS:
            out.append(("TIMING_KIND", f"unknown interval distribution {self.kind!r}"))
        if not (self.mean > 0.0 and math.isfinite(self.mean)):
            out.append(("TIMING_MEAN", f"mean interval must be finite and > 0, got {self.mean!r}"))
        if self.kind in ("gamma", "lognormal") and not (self.cv2 > 0.0 and math.isfinite(self.cv2)):
            out.append(("TIMING_SHAPE", f"{self.kind} interval needs cv2 > 0, got {self.cv2!r}"))
        return out

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if self.kind == "deterministic":
            return self.mean if size is None else np.full(size, self.mean)
        if self.kind in ("gamma", "exponential"):
            return rng.gamma(1.0 / self.cv2, self.mean * self.cv2, size)
        if self.kind == "lognormal":
            s2 = math.log1p(self.cv2)
            return rng.lognormal(math.log(self.mean) - 0.5 * s2, math.sqrt(s2), size)
        raise TTSHSError("TIMING_KIND", f"unknown interval distribution {self.kind!r}")


TimingLaw = PhaseTypeMixture | RenewalLaw


def _rising_factorial(m: int, q: int) -> float:
    """(m + q - 1)! / (m - 1)!"""
    if m + q <= _LGAMMA_LIMIT:
        return math.exp(math.lgamma(m + q) - math.lgamma(m))
    return float(math.perm(m + q - 1, q))


def interval_moment(mix: PhaseTypeMixture, q: int) -> float:
    """Raw moment <T^q> of the mixture."""
    if q < 1:
        raise ValueError("moment order q must be >= 1")
    return math.fsum(b.p / b.k**q * _rising_factorial(b.m, q) for b in mix.branches)


def mean_and_cv2(mix: PhaseTypeMixture) -> tuple[float, float]:
    m1 = interval_moment(mix, 1)
    m2 = interval_moment(mix, 2)
    return m1, (m2 - m1 * m1) / (m1 * m1)


def _log_terms(mix: PhaseTypeMixture, tau: float):
    """Per-branch log density and log survival at tau > 0."""
    log_f, log_s = [], []
    for b in mix.branches:
        x = b.k * tau
        lx = math.log(x)
        log_f.append(math.log(b.k) + (b.m - 1) * lx - x - math.lgamma(b.m))
        # Erlang survival is a truncated Poisson sum: sum_{j<m} e^-x x^j / j!
        j = np.arange(b.m)
        log_s.append(-x + logsumexp(j * lx - np.array([math.lgamma(v + 1) for v in j])))
    return np.array(log_f), np.array(log_s)


def survival(mix: PhaseTypeMixture, tau: float) -> float:
    """P(T > tau), evaluated from the closed form."""
    if tau <= 0.0:
        return 1.0
    _, log_s = _log_terms(mix, tau)
    return float(math.exp(logsumexp(log_s, b=mix.probabilities)))


def density(mix: PhaseTypeMixture, tau: float) -> float:
    if tau < 0.0:
        return 0.0
    if tau == 0.0:
        return math.fsum(b.p * b.k for b in mix.branches if b.m == 1)
    log_f, _ = _log_terms(mix, tau)
    return float(math.exp(logsumexp(log_f, b=mix.probabilities)))


def hazard_at(mix: PhaseTypeMixture, tau: float) -> float:
    """Event intensity f(tau) / (1 - F(tau)).

    Returns ``math.inf`` ("event certain") once the survival probability drops
    below 1e-300, where the ratio is no longer representable.
    """
    if tau < 0.0:
        raise ValueError("timer value must be nonnegative")
    if tau == 0.0:
        return density(mix, 0.0)
    probs = mix.probabilities
    log_f, log_s = _log_terms(mix, tau)
    ls = logsumexp(log_s, b=probs)
    if ls < math.log(SURVIVAL_FLOOR):
        return math.inf
    return float(math.exp(logsumexp(log_f, b=probs) - ls))


def sample_interval(mix: PhaseTypeMixture, rng: np.random.Generator) -> float:
    """One interval: choose a branch, then add up its exponential stage times."""
    i = rng.choice(len(mix.branches), p=mix.probabilities)
    b = mix.branches[i]
    return float(rng.exponential(1.0 / b.k, size=b.m).sum())


def sample_intervals(mix: PhaseTypeMixture, rng: np.random.Generator, size: int | None = None):
    """Vectorized draws; a sum of m exponentials is drawn as one Gamma(m) variate."""
    if size is None:
        return sample_interval(mix, rng)
    if len(mix.branches) == 1:
        b = mix.branches[0]
        return rng.gamma(b.m, 1.0 / b.k, size)
    idx = rng.choice(len(mix.branches), p=mix.probabilities, size=size)
    m = np.array([b.m for b in mix.branches], dtype=float)[idx]
    k = np.array([b.k for b in mix.branches])[idx]
    return rng.gamma(m, 1.0 / k)


def fit_mixture(target_mean: float, target_cv2: float) -> PhaseTypeMixture:
    """Two-moment match with at most two Erlang branches.

    * ``1/cv2`` integral: a single Erlang.
    * ``cv2 > 1``: two exponential branches with balanced means.
    * otherwise: Erlang(m) and Erlang(m+1) sharing one rate, m = floor(1/cv2).
    """
    if not (target_mean > 0.0 and target_cv2 > 0.0):
        raise TTSHSError("UNREACHABLE_CV2", "fit needs mean > 0 and cv2 > 0")
    inv = 1.0 / target_cv2
    m_int = round(inv)
    if m_int >= 1 and math.isclose(inv, m_int, rel_tol=1e-12, abs_tol=0.0):
        return PhaseTypeMixture.erlang(m_int, m_int / target_mean)
    if target_cv2 > 1.0:
        r = math.sqrt((target_cv2 - 1.0) / (target_cv2 + 1.0))
        p1 = 0.5 * (1.0 + r)
        p2 = 1.0 - p1
        return PhaseTypeMixture(
            (Branch(p1, 1, 2.0 * p1 / target_mean), Branch(p2, 1, 2.0 * p2 / target_mean))
        )
    m = math.floor(inv)
    big = m + 1
    c = target_cv2
    p = (big * c - math.sqrt(big * (1.0 + c) - big * big * c)) / (1.0 + c)
    rate = (big - p) / target_mean
    return PhaseTypeMixture((Branch(p, m, rate), Branch(1.0 - p, big, rate)))
