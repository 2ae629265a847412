"""Moment containers and the linear-ODE propagation shared by both engines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .linalg import affine_step

RK_RTOL = 1e-8
RK_ATOL = 1e-10


@dataclass(frozen=True, eq=False)
class MomentState:
    time: float
    mean: np.ndarray
    second_moment: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return self.second_moment - np.outer(self.mean, self.mean)

    @property
    def cv2(self) -> np.ndarray:
        """Per-component squared coefficient of variation."""
        return np.diag(self.covariance) / self.mean**2


def propagate_linear(a: np.ndarray, b: np.ndarray, y0: np.ndarray, t_grid, method: str = "expm") -> np.ndarray:
    """Values of dy/dt = b + A y, y(0) = y0, at each time in ``t_grid``.

    ``expm`` steps exactly with the augmented matrix exponential (one
    exponential per distinct step length); ``rk45`` uses the adaptive
    Dormand-Prince integrator at RK_RTOL / RK_ATOL.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be a nonnegative, strictly increasing 1-D sequence")
    y0 = np.asarray(y0, dtype=float)
    if method == "rk45":
        if t[-1] == 0.0:
            return y0[None, :].copy()
        sol = solve_ivp(
            lambda _, y: b + a @ y, (0.0, t[-1]), y0, method="RK45", t_eval=t, rtol=RK_RTOL, atol=RK_ATOL
        )
        return sol.y.T
    if method != "expm":
        raise ValueError(f"unknown propagation method {method!r}")
    out = np.empty((t.size, y0.size))
    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    y, prev = y0, 0.0
    for i, ti in enumerate(t):
        dt = ti - prev
        if dt > 0.0:
            # linspace grids repeat one step up to a few ulps; reuse its exponential
            key = float(f"{dt:.13e}")
            if key not in cache:
                cache[key] = affine_step(a, b, dt)
            phi, c = cache[key]
            y = phi @ y + c
        out[i] = y
        prev = ti
    return out
