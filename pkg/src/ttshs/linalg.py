"""Small dense linear-algebra helpers: Kronecker operators and exact affine flow.

Matrices are vectorized row-major, so ``vec(A X B) = kron(A, B.T) @ vec(X)``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .errors import TTSHSError


def left_right_operator(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Matrix of X -> left @ X @ right on row-major vec(X)."""
    return np.kron(left, right.T)


def lyapunov_operator(a: np.ndarray) -> np.ndarray:
    """Matrix of X -> A X + X A^T."""
    eye = np.eye(a.shape[0])
    return np.kron(a, eye) + np.kron(eye, a)


def symmetrizer(n: int) -> np.ndarray:
    """Matrix of X -> (X + X^T)/2."""
    perm = np.zeros((n * n, n * n))
    for a in range(n):
        for b in range(n):
            perm[a * n + b, b * n + a] = 1.0
    return 0.5 * (np.eye(n * n) + perm)


def solve_operator_equation(op: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve op @ vec(X) = vec(rhs) for square X."""
    n = rhs.shape[0]
    try:
        x = np.linalg.solve(op, rhs.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise TTSHSError("SINGULAR_LYAPUNOV", str(exc)) from None
    return x.reshape(n, n)


def solve_lyapunov(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """X with A X + X A^T + Q = 0, by a dense n^2 x n^2 solve."""
    return solve_operator_equation(lyapunov_operator(a), -q)


def augmented_generator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[[A, b], [0, 0]]; its exponential carries both the linear and affine parts."""
    n = a.shape[0]
    g = np.zeros((n + 1, n + 1))
    g[:n, :n] = a
    g[:n, n] = b
    return g


def affine_step(a: np.ndarray, b: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """(Phi, c) with x(dt) = Phi x(0) + c for dx/dt = A x + b; valid for singular A."""
    n = a.shape[0]
    e = expm(augmented_generator(a, b) * dt)
    return e[:n, :n], e[:n, n]


def _phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z with the removable singularity at 0 filled in."""
    z = np.asarray(z)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z + z * z / 6.0, np.expm1(safe) / safe)


class AffineFlow:
    """Exact solution map of dx/dt = b + A x for many states with different step lengths.

    Diagonalizes ``A`` once when the eigenvector basis is well conditioned;
    otherwise falls back to batched scaling-and-squaring on the augmented
    generator.  Scalar systems use the closed form.
    """

    COND_LIMIT = 1e6

    def __init__(self, a: np.ndarray, b: np.ndarray):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.n = self.a.shape[0]
        self.mode = "scalar" if self.n == 1 else "expm"
        if self.n > 1:
            lam, v = np.linalg.eig(self.a)
            if np.linalg.cond(v) < self.COND_LIMIT:
                self.mode = "eig"
                self.lam = lam
                self.v = v
                self.vinv = np.linalg.inv(v)
                self.b_modal = self.vinv @ self.b
        self._gen = augmented_generator(self.a, self.b)

    def __call__(self, x: np.ndarray, dt) -> np.ndarray:
        """Propagate states ``x`` of shape (P, n) by per-row times ``dt`` (P,)."""
        dt = np.asarray(dt, dtype=float)
        if self.mode == "scalar":
            z = self.a[0, 0] * dt
            return (x[:, 0] * np.exp(z) + self.b[0] * dt * _phi1(z))[:, None]
        if self.mode == "eig":
            z = self.lam[None, :] * dt[:, None]
            modal = (x @ self.vinv.T) * np.exp(z) + self.b_modal[None, :] * dt[:, None] * _phi1(z)
            out = modal @ self.v.T
            return out.real if np.iscomplexobj(out) else out
        e = expm(self._gen[None, :, :] * dt[:, None, None])
        return np.einsum("pij,pj->pi", e[:, : self.n, : self.n], x) + e[:, : self.n, self.n]
