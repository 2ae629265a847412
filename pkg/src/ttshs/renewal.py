"""Exact moments when timer events only add noise (J = I, R = 0, Q = 0).

The mean then ignores timer events altogether, and at stationarity the
covariance depends on the interval law through its mean alone:

    L(C) + (1/<T>) sym(D xbar 1^T + E) + sum_b rate_b G_b = 0

where ``L`` is the flow Lyapunov operator plus the linear part of any
memoryless families and ``G_b`` their constant injection at the mean.
"""

from __future__ import annotations

import numpy as np

from .errors import TTSHSError
from .linalg import left_right_operator, lyapunov_operator, solve_operator_equation, symmetrizer
from .model import TTSHSModel, sym
from .moments import MomentState, propagate_linear

LYAPUNOV_RESIDUAL_TOL = 1e-10


def require_noise_imparting(model: TTSHSModel):
    if not model.is_noise_imparting():
        raise TTSHSError("NOT_NOISE_IMPARTING", "timer reset must have J = I, R = 0, Q = 0")


def effective_mean_drift(model: TTSHSModel) -> tuple[np.ndarray, np.ndarray]:
    """(A_eff, b_eff) of d<x>/dt once memoryless families are averaged in."""
    n = model.n
    a = model.dynamics.drift_matrix.copy()
    b = model.dynamics.drift_offset.copy()
    for fam in model.memoryless_resets:
        a += fam.rate * (fam.mean_gain - np.eye(n))
        b += fam.rate * fam.mean_offset
    return a, b


def transient_mean(model: TTSHSModel, t_grid, method: str = "expm") -> tuple[np.ndarray, np.ndarray]:
    """Mean trajectory (times, means[len(t), n]) from the deterministic initial state."""
    require_noise_imparting(model)
    a, b = effective_mean_drift(model)
    t = np.asarray(t_grid, dtype=float)
    return t, propagate_linear(a, b, model.initial_state, t, method=method)


def steady_mean(model: TTSHSModel) -> np.ndarray:
    require_noise_imparting(model)
    if not model.dynamics.is_hurwitz():
        raise TTSHSError("NOT_HURWITZ", "steady state needs a Hurwitz drift matrix")
    a, b = effective_mean_drift(model)
    return -np.linalg.solve(a, b)


def covariance_operator(model: TTSHSModel) -> np.ndarray:
    """Matrix of the homogeneous part of dC/dt acting on row-major vec(C)."""
    n = model.n
    op = lyapunov_operator(model.dynamics.drift_matrix)
    sym_op = symmetrizer(n)
    eye = np.eye(n)
    for fam in model.memoryless_resets:
        jump = left_right_operator(fam.mean_gain, fam.mean_gain.T) - np.eye(n * n)
        # sym(Q sym(C)) keeps the operator transpose-equivariant, so the solution is symmetric
        jump += sym_op @ left_right_operator(fam.cov_quadratic, eye) @ sym_op
        op = op + fam.rate * jump
    return op


def covariance_source(model: TTSHSModel, mean: np.ndarray) -> np.ndarray:
    """Constant injection of covariance at the stationary mean."""
    n = model.n
    ones = np.ones(n)
    tr = model.timer_reset
    src = sym(np.outer(tr.cov_linear @ mean, ones) + tr.cov_constant) / model.mean_interval
    for fam in model.memoryless_resets:
        u = (fam.mean_gain - np.eye(n)) @ mean + fam.mean_offset
        fam_cov = fam.cov_quadratic @ np.outer(mean, mean) + np.outer(fam.cov_linear @ mean, ones) + fam.cov_constant
        src = src + fam.rate * (np.outer(u, u) + sym(fam_cov))
    return src


def steady_state_covariance(model: TTSHSModel) -> np.ndarray:
    """Stationary covariance; consumes the timing law only through its mean."""
    mean = steady_mean(model)
    op = covariance_operator(model)
    src = covariance_source(model, mean)
    c = sym(solve_operator_equation(op, -src))
    residual = np.max(np.abs((op @ c.reshape(-1)).reshape(c.shape) + src))
    if not residual <= LYAPUNOV_RESIDUAL_TOL * (1.0 + np.max(np.abs(src))):
        raise TTSHSError("RESIDUAL_TOO_LARGE", f"Lyapunov residual {residual:.3g}")
    return c


def steady_state(model: TTSHSModel) -> MomentState:
    mean = steady_mean(model)
    cov = steady_state_covariance(model)
    return MomentState(np.inf, mean, cov + np.outer(mean, mean))
