"""In-memory model of a linear time-triggered stochastic hybrid system.

Between events the state follows ``dx/dt = a_hat + A x``.  Timer events occur
at renewal times drawn from a :data:`~ttshs.phase_type.TimingLaw`; optional
memoryless families fire at constant rates.  Each event resets ``x`` to a
random ``x+`` with

    E[x+ | x]   = J x + R
    Cov[x+ | x] = sym(Q x x^T + D x 1^T + E)

where ``1`` is the all-ones vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .errors import TTSHSError
from .phase_type import PhaseTypeMixture, RenewalLaw, TimingLaw

HURWITZ_TOL = 1e-9
PSD_TOL = 1e-8
NOISE_IMPARTING_TOL = 1e-12
_N_PROBES = 64


def sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _vec(v, n=None) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    return a if n is None else a.reshape(n)


def _mat(v) -> np.ndarray:
    return np.atleast_2d(np.asarray(v, dtype=float))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    drift_offset: np.ndarray
    drift_matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "drift_offset", _frozen(_vec(self.drift_offset)))
        object.__setattr__(self, "drift_matrix", _frozen(_mat(self.drift_matrix)))

    @property
    def n(self) -> int:
        return self.drift_offset.shape[0]

    def spectral_abscissa(self) -> float:
        return float(np.max(np.linalg.eigvals(self.drift_matrix).real))

    def is_hurwitz(self, tol: float = HURWITZ_TOL) -> bool:
        return self.spectral_abscissa() < -tol


@dataclass(frozen=True, eq=False)
class _ResetMoments:
    mean_gain: np.ndarray
    mean_offset: np.ndarray
    cov_quadratic: np.ndarray
    cov_linear: np.ndarray
    cov_constant: np.ndarray

    def __post_init__(self):
        for name in ("mean_gain", "cov_quadratic", "cov_linear", "cov_constant"):
            object.__setattr__(self, name, _frozen(_mat(getattr(self, name))))
        object.__setattr__(self, "mean_offset", _frozen(_vec(self.mean_offset)))

    def conditional_mean(self, x: np.ndarray) -> np.ndarray:
        """J x + R for a single state or a stack of states (..., n)."""
        return x @ self.mean_gain.T + self.mean_offset

    def conditional_cov(self, x: np.ndarray) -> np.ndarray:
        """sym(Q x x^T + D x 1^T + E), stacked over leading axes of x."""
        x = np.asarray(x, dtype=float)
        xx = x[..., :, None] * x[..., None, :]
        dx = x @ self.cov_linear.T
        raw = self.cov_quadratic @ xx + dx[..., :, None] + self.cov_constant
        return sym(raw)

    def has_zero_covariance(self, tol: float = 0.0) -> bool:
        return all(
            np.max(np.abs(m), initial=0.0) <= tol
            for m in (self.cov_quadratic, self.cov_linear, self.cov_constant)
        )

    def is_noise_imparting(self, tol: float = NOISE_IMPARTING_TOL) -> bool:
        n = self.mean_offset.shape[0]
        return (
            np.max(np.abs(self.mean_gain - np.eye(n))) <= tol
            and np.max(np.abs(self.mean_offset)) <= tol
            and np.max(np.abs(self.cov_quadratic)) <= tol
        )


def _default_reset_fields(n: int, **kw) -> dict:
    out = dict(
        mean_gain=np.eye(n),
        mean_offset=np.zeros(n),
        cov_quadratic=np.zeros((n, n)),
        cov_linear=np.zeros((n, n)),
        cov_constant=np.zeros((n, n)),
    )
    out.update({k: v for k, v in kw.items() if v is not None})
    return out


@dataclass(frozen=True, eq=False)
class TimerResetFamily(_ResetMoments):
    timing: TimingLaw = None

    @classmethod
    def noise_imparting(cls, n: int, timing: TimingLaw, cov_linear=None, cov_constant=None):
        return cls(**_default_reset_fields(n, cov_linear=cov_linear, cov_constant=cov_constant), timing=timing)

    @classmethod
    def with_defaults(cls, n: int, timing: TimingLaw, **kw):
        """J = I, R = 0, Q = D = E = 0 unless overridden."""
        return cls(**_default_reset_fields(n, **kw), timing=timing)


@dataclass(frozen=True, eq=False)
class BurstSize:
    """Law of an additive jump ``x -> x + B`` used when simulating a memoryless family.

    Engines only see the first two moments; the simulator needs an actual law.
    ``kind`` is ``constant``, ``exponential``, ``geometric`` (on 0, 1, 2, ...)
    or ``gamma`` (any variance).
    """

    kind: str
    mean: float
    second_moment: float | None = None

    KINDS = ("constant", "exponential", "geometric", "gamma")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise TTSHSError("BURST_KIND", f"unknown burst law {self.kind!r}")
        implied = {
            "constant": self.mean**2,
            "exponential": 2.0 * self.mean**2,
            "geometric": self.mean + 2.0 * self.mean**2,
        }.get(self.kind)
        if implied is not None:
            if self.second_moment is not None and not math.isclose(self.second_moment, implied, rel_tol=1e-12):
                raise TTSHSError(
                    "BURST_MOMENTS", f"{self.kind} burst with mean {self.mean} has <B^2>={implied}, got {self.second_moment}"
                )
            object.__setattr__(self, "second_moment", implied)
        elif self.second_moment is None or self.second_moment <= self.mean**2:
            raise TTSHSError("BURST_MOMENTS", "gamma burst law needs <B^2> > <B>^2")

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean**2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size, self.mean)
        if self.kind == "exponential":
            return rng.exponential(self.mean, size)
        if self.kind == "geometric":
            # numpy's geometric counts trials (support 1, 2, ...); shift to failures
            return rng.geometric(1.0 / (1.0 + self.mean), size) - 1.0
        shape = self.mean**2 / self.variance
        return rng.gamma(shape, self.mean / shape, size)


@dataclass(frozen=True, eq=False)
class MemorylessResetFamily(_ResetMoments):
    rate: float = 1.0
    burst: BurstSize | None = None

    @classmethod
    def with_defaults(cls, n: int, rate: float, burst: BurstSize | None = None, **kw):
        """J = I, R = 0, Q = D = E = 0 unless overridden."""
        return cls(**_default_reset_fields(n, **kw), rate=rate, burst=burst)

    @classmethod
    def additive_burst(cls, rate: float, burst: BurstSize):
        """Scalar family x -> x + B firing at a constant rate."""
        return cls(
            **_default_reset_fields(1, mean_offset=[burst.mean], cov_constant=[[burst.variance]]),
            rate=rate,
            burst=burst,
        )


@dataclass(frozen=True, eq=False)
class TTSHSModel:
    dynamics: LinearDynamics
    timer_reset: TimerResetFamily
    memoryless_resets: tuple[MemorylessResetFamily, ...] = ()
    initial_state: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "memoryless_resets", tuple(self.memoryless_resets))
        x0 = np.zeros(self.dynamics.n) if self.initial_state is None else _vec(self.initial_state)
        object.__setattr__(self, "initial_state", _frozen(x0))

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def timing(self) -> TimingLaw:
        return self.timer_reset.timing

    @property
    def mean_interval(self) -> float:
        return float(self.timing.mean)

    def with_timing(self, timing: TimingLaw) -> TTSHSModel:
        return replace(self, timer_reset=replace(self.timer_reset, timing=timing))

    def is_noise_imparting(self) -> bool:
        return self.timer_reset.is_noise_imparting()


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    severity: str = "error"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def raise_if_invalid(self):
        if self.errors:
            raise TTSHSError(self.errors[0].code, "; ".join(v.message for v in self.errors))


def _check_shapes(name: str, fam: _ResetMoments, n: int, out: list):
    for f in ("mean_gain", "cov_quadratic", "cov_linear", "cov_constant"):
        a = getattr(fam, f)
        if a.shape != (n, n):
            out.append(Violation("DIMENSION_MISMATCH", f"{name}.{f} has shape {a.shape}, expected ({n}, {n})"))
    if fam.mean_offset.shape != (n,):
        out.append(
            Violation("DIMENSION_MISMATCH", f"{name}.mean_offset has shape {fam.mean_offset.shape}, expected ({n},)")
        )


def _all_finite(model: TTSHSModel) -> bool:
    arrays = [model.dynamics.drift_offset, model.dynamics.drift_matrix, model.initial_state]
    for fam in (model.timer_reset, *model.memoryless_resets):
        arrays += [fam.mean_gain, fam.mean_offset, fam.cov_quadratic, fam.cov_linear, fam.cov_constant]
    return all(np.all(np.isfinite(a)) for a in arrays)


def probe_points(n: int, half_width: float) -> np.ndarray:
    """64 deterministic probe states in the box [-w, w]^n.

    Corners, axis midpoints and the origin come first when n <= 3; the rest
    are unscrambled Halton points mapped onto the box.
    """
    pts = []
    if n <= 3:
        corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T
        axes = np.vstack([np.eye(n), -np.eye(n)])
        pts = [np.zeros((1, n)), corners, axes]
    fixed = np.vstack(pts) if pts else np.empty((0, n))
    halton = qmc.Halton(d=n, scramble=False).random(_N_PROBES + 1)[1:]
    fill = 2.0 * halton[: _N_PROBES - len(fixed)] - 1.0
    return half_width * np.vstack([fixed, fill])


def _psd_probe(name: str, fam: _ResetMoments, center_norm: float, out: list):
    n = fam.mean_offset.shape[0]
    w = 10.0 * center_norm + 1.0
    covs = fam.conditional_cov(probe_points(n, w))
    worst = float(np.min(np.linalg.eigvalsh(covs)))
    if worst < -PSD_TOL:
        out.append(
            Violation(
                "RESET_COV_NOT_PSD",
                f"{name} conditional covariance reaches min eigenvalue {worst:.3g} on the probe box |x_i| <= {w:.3g}",
                severity="warning",
            )
        )


def _burst_consistent(fam: MemorylessResetFamily, n: int) -> bool:
    """The burst law is what the simulator draws; the moment fields are what the engines see."""
    if n != 1 or fam.mean_gain.shape != (1, 1):
        return False
    b = fam.burst
    want = (fam.mean_gain[0, 0], 1.0), (fam.mean_offset[0], b.mean), (fam.cov_constant[0, 0], b.variance)
    close = all(math.isclose(got, exp, rel_tol=1e-12, abs_tol=1e-14) for got, exp in want)
    return close and fam.cov_quadratic[0, 0] == 0.0 and fam.cov_linear[0, 0] == 0.0


def validate_model(model: TTSHSModel, require_hurwitz: bool = False) -> ValidationReport:
    """Collect every violated invariant; never raises for a bad model."""
    out: list[Violation] = []
    dyn = model.dynamics
    n = dyn.n
    if n < 1:
        out.append(Violation("DIMENSION_MISMATCH", "state dimension must be >= 1"))
        return ValidationReport(tuple(out))
    if dyn.drift_matrix.shape != (n, n):
        out.append(Violation("DIMENSION_MISMATCH", f"drift_matrix has shape {dyn.drift_matrix.shape}, expected ({n}, {n})"))
    if model.initial_state.shape != (n,):
        out.append(Violation("DIMENSION_MISMATCH", f"initial_state has shape {model.initial_state.shape}, expected ({n},)"))
    _check_shapes("timer_reset", model.timer_reset, n, out)
    for i, fam in enumerate(model.memoryless_resets):
        _check_shapes(f"memoryless_resets[{i}]", fam, n, out)
        if not (fam.rate > 0.0 and math.isfinite(fam.rate)):
            out.append(Violation("NONPOSITIVE_RATE", f"memoryless_resets[{i}].rate = {fam.rate!r}"))
        if fam.burst is not None and not _burst_consistent(fam, n):
            out.append(
                Violation(
                    "BURST_INCONSISTENT",
                    f"memoryless_resets[{i}] moments must be J=1, R=<B>, Q=D=0, E=Var(B) for its burst law (scalar only)",
                )
            )
    if out:
        return ValidationReport(tuple(out))
    if not _all_finite(model):
        out.append(Violation("NONFINITE", "model contains NaN or infinite entries"))
        return ValidationReport(tuple(out))

    timing = model.timing
    if isinstance(timing, (PhaseTypeMixture, RenewalLaw)):
        out += [Violation(c, m) for c, m in timing.violations()]
    else:
        out.append(Violation("TIMING_KIND", f"unsupported timing law {type(timing).__name__}"))

    families = [("timer_reset", model.timer_reset)] + [
        (f"memoryless_resets[{i}]", f) for i, f in enumerate(model.memoryless_resets)
    ]
    for name, fam in families:
        if np.max(np.abs(fam.cov_constant - fam.cov_constant.T)) > 1e-12 * (1 + np.max(np.abs(fam.cov_constant))):
            out.append(Violation("COV_CONSTANT_ASYMMETRIC", f"{name}.cov_constant is not symmetric"))

    hurwitz = dyn.is_hurwitz()
    if require_hurwitz and not hurwitz:
        out.append(Violation("NOT_HURWITZ", f"drift_matrix spectral abscissa {dyn.spectral_abscissa():.6g} >= -{HURWITZ_TOL}"))

    if hurwitz:
        center = float(np.max(np.abs(steady_state_mean(dyn))))
    else:
        center = float(np.max(np.abs(model.initial_state)))
    for name, fam in families:
        _psd_probe(name, fam, center, out)
    return ValidationReport(tuple(out))


def steady_state_mean(dynamics: LinearDynamics) -> np.ndarray:
    """Fixed point -A^{-1} a_hat of the drift."""
    if not dynamics.is_hurwitz():
        raise TTSHSError("NOT_HURWITZ", f"spectral abscissa {dynamics.spectral_abscissa():.6g}")
    return -np.linalg.solve(dynamics.drift_matrix, dynamics.drift_offset)


def make_model(
    drift_offset: Sequence[float],
    drift_matrix,
    timing: TimingLaw,
    *,
    mean_gain=None,
    mean_offset=None,
    cov_quadratic=None,
    cov_linear=None,
    cov_constant=None,
    memoryless_resets=(),
    initial_state=None,
) -> TTSHSModel:
    """Convenience constructor; unspecified reset fields default to a noiseless identity reset."""
    dyn = LinearDynamics(drift_offset, drift_matrix)
    timer = TimerResetFamily.with_defaults(
        dyn.n,
        timing,
        mean_gain=mean_gain,
        mean_offset=mean_offset,
        cov_quadratic=cov_quadratic,
        cov_linear=cov_linear,
        cov_constant=cov_constant,
    )
    return TTSHSModel(dyn, timer, tuple(memoryless_resets), initial_state)
