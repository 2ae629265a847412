"""Protein concentration under bursty production, dilution and timer-triggered division.

Division keeps the mean concentration and adds partitioning variance
``beta * x``.  Production is either deterministic (rate ``k_x <B>``) or
bursty (jumps ``x -> x + B`` at rate ``k_x``).  The mean division time is tied
to the dilution rate by :func:`mean_division_time`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import TTSHSError
from .model import BurstSize, MemorylessResetFamily, TTSHSModel, make_model
from .phase_type import PhaseTypeMixture, TimingLaw, fit_mixture
from . import phase, renewal


def mean_division_time(dilution_rate: float) -> float:
    """<T> = ln(2) / (2 gamma), the growth/division link used by the preset.

    The usual doubling-time relation would be ln(2) / gamma; the factor 2 is
    kept deliberately and isolated here.
    """
    return math.log(2.0) / (2.0 * dilution_rate)


def dilution_rate_for(mean_interval: float) -> float:
    return math.log(2.0) / (2.0 * mean_interval)


@dataclass(frozen=True)
class GeneModelParams:
    burst_rate: float
    burst_mean: float
    partition_noise: float
    dilution_rate: float | None = None
    division_mean_interval: float | None = None
    burst_second_moment: float | None = None
    burst_distribution: str = "exponential"
    division_timing: TimingLaw | None = None

    def __post_init__(self):
        gamma, t_mean = self.dilution_rate, self.division_mean_interval
        if gamma is None and t_mean is None:
            if self.division_timing is None:
                raise TTSHSError("GENE_PARAMS", "give dilution_rate, division_mean_interval or division_timing")
            t_mean = float(self.division_timing.mean)
        if gamma is None:
            gamma = dilution_rate_for(t_mean)
        elif t_mean is None:
            t_mean = mean_division_time(gamma)
        elif not math.isclose(t_mean, mean_division_time(gamma), rel_tol=1e-9):
            raise TTSHSError("GENE_PARAMS", "division_mean_interval must equal ln(2)/(2 dilution_rate)")
        object.__setattr__(self, "dilution_rate", gamma)
        object.__setattr__(self, "division_mean_interval", t_mean)
        if self.division_timing is not None and not math.isclose(self.division_timing.mean, t_mean, rel_tol=1e-9):
            raise TTSHSError("GENE_PARAMS", f"division timing mean {self.division_timing.mean} != {t_mean}")
        burst = BurstSize(self.burst_distribution, self.burst_mean, self.burst_second_moment)
        object.__setattr__(self, "burst_second_moment", burst.second_moment)
        if self.burst_second_moment < self.burst_mean**2:
            raise TTSHSError("GENE_PARAMS", "<B^2> must be >= <B>^2")
        if min(self.burst_rate, self.burst_mean, self.partition_noise, gamma) <= 0:
            raise TTSHSError("GENE_PARAMS", "rates, burst mean and partition noise must be positive")

    @property
    def burst(self) -> BurstSize:
        return BurstSize(self.burst_distribution, self.burst_mean, self.burst_second_moment)

    @property
    def timing(self) -> TimingLaw:
        if self.division_timing is not None:
            return self.division_timing
        return PhaseTypeMixture.exponential(1.0 / self.division_mean_interval)

    @property
    def mean_level(self) -> float:
        return self.burst_rate * self.burst_mean / self.dilution_rate

    def with_division_cv2(self, cv2: float) -> GeneModelParams:
        """Same parameters with division intervals refit to the given squared CV."""
        return replace(self, division_timing=fit_mixture(self.division_mean_interval, cv2))


def build_ttshs(params: GeneModelParams, with_bursts: bool) -> TTSHSModel:
    gamma = params.dilution_rate
    common = dict(cov_linear=[[params.partition_noise]], initial_state=[0.0])
    if not with_bursts:
        return make_model([params.burst_rate * params.burst_mean], [[-gamma]], params.timing, **common)
    bursts = MemorylessResetFamily.additive_burst(params.burst_rate, params.burst)
    return make_model([0.0], [[-gamma]], params.timing, memoryless_resets=[bursts], **common)


def closed_form_stats(params: GeneModelParams, with_bursts: bool) -> tuple[float, float]:
    """Mean and CV^2 from the published closed forms, reproduced as printed.

    These do not agree with the moment equations they accompany; see
    :func:`lyapunov_stats` for the values the equations actually imply.
    """
    xbar = params.mean_level
    cv2 = math.log(2.0) * params.partition_noise / (2.0 * xbar)
    if with_bursts:
        cv2 += 0.5 * params.burst_second_moment / (params.burst_mean * xbar)
    return xbar, cv2


def lyapunov_stats(params: GeneModelParams, with_bursts: bool) -> tuple[float, float]:
    """Mean and CV^2 solved by hand from the scalar second-moment equation.

    0 = -2 gamma var + beta xbar / <T> (+ k_x <B^2> with bursts)
    """
    xbar = params.mean_level
    gamma = params.dilution_rate
    var = params.partition_noise * xbar / (2.0 * gamma * params.division_mean_interval)
    if with_bursts:
        var += params.burst_rate * params.burst_second_moment / (2.0 * gamma)
    return xbar, var / xbar**2


def engine_stats(params: GeneModelParams, with_bursts: bool, engine: str = "phase") -> tuple[float, float]:
    """Steady mean and CV^2 from one of the moment engines."""
    model = build_ttshs(params, with_bursts)
    if engine == "phase":
        st = phase.steady_state(model)
    elif engine == "renewal":
        st = renewal.steady_state(model)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return float(st.mean[0]), float(st.cv2[0])
