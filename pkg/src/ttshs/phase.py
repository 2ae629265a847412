"""Closed moment dynamics for phase-type timer events with the full reset map.

The timer is replaced by a Markov chain over stages ``(i, j)``: branch ``i``
is entered with probability ``p_i`` and traversed through ``m_i`` stages of
rate ``k_i``; leaving the last stage fires the reset.  With Bernoulli stage
indicators ``s_ij`` (exactly one equal to 1), the stage-conditioned moments

    <s_ij>,   <x s_ij>,   <x x^T s_ij>

obey a closed linear system ``dmu/dt = a1 + A1 mu``.  Marginals follow by
summing over stages.  Only the upper triangle of each symmetric block is
stored.

Per stage l = (i, j), with exit stages e of rate k_e and the flow b + A x:

    d<x s_l>/dt   = b<s_l> + A<x s_l> - k_i<x s_l> + k_i<x s_{l-1}>
                    + [j == 1] p_i sum_e k_e (J<x s_e> + R<s_e>)
    d<xx s_l>/dt  = A M_l + M_l A^T + b m_l^T + m_l b^T - k_i M_l + k_i M_{l-1}
                    + [j == 1] p_i sum_e k_e Psi(s_e, m_e, M_e)

with Psi the symmetrized conditional second moment of the reset applied to
the exit-stage moments.  Memoryless families add stage-local terms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import TTSHSError
from .linalg import left_right_operator, lyapunov_operator
from .model import TTSHSModel, _ResetMoments, sym
from .moments import MomentState, propagate_linear
from .phase_type import PhaseTypeMixture

STEADY_RESIDUAL_TOL = 1e-10


class MomentIndexMap:
    """Position of every stage-conditioned moment inside the flat vector mu.

    Layout: all ``<s>`` first, then ``<x s>`` stage by stage, then the packed
    upper triangle of ``<x x^T s>`` stage by stage.
    """

    def __init__(self, mix: PhaseTypeMixture, n: int):
        self.n = n
        self.stages = [(i, j) for i, b in enumerate(mix.branches) for j in range(b.m)]
        self.n_stages = len(self.stages)
        self.pairs = [(a, b) for a in range(n) for b in range(a, n)]
        self.n_pairs = len(self.pairs)
        self._pair_pos = {p: q for q, p in enumerate(self.pairs)}
        self._stage_pos = {st: l for l, st in enumerate(self.stages)}
        self.x_start = self.n_stages
        self.xx_start = self.n_stages * (1 + n)
        self.size = self.n_stages * (1 + n + self.n_pairs)

    def stage(self, i: int, j: int) -> int:
        return self._stage_pos[(i, j)]

    def s(self, l: int) -> int:
        return l

    def x(self, l: int, a: int | None = None):
        base = self.x_start + l * self.n
        return slice(base, base + self.n) if a is None else base + a

    def xx(self, l: int, a: int | None = None, b: int | None = None):
        base = self.xx_start + l * self.n_pairs
        if a is None:
            return slice(base, base + self.n_pairs)
        a, b = min(a, b), max(a, b)
        return base + self._pair_pos[(a, b)]

    def labels(self) -> list[tuple]:
        out = [("s", *st) for st in self.stages]
        out += [("x", *st, a) for st in self.stages for a in range(self.n)]
        out += [("xx", *st, a, b) for st in self.stages for a, b in self.pairs]
        return out

    def index(self, label: tuple) -> int:
        kind, i, j, *comp = label
        l = self.stage(i, j)
        if kind == "s":
            return self.s(l)
        if kind == "x":
            return self.x(l, comp[0])
        if kind == "xx":
            return self.xx(l, comp[0], comp[1])
        raise KeyError(label)

    @cached_property
    def pack(self) -> np.ndarray:
        """vec(X) -> packed upper triangle of sym(X)."""
        n = self.n
        p = np.zeros((self.n_pairs, n * n))
        for q, (a, b) in enumerate(self.pairs):
            p[q, a * n + b] += 0.5
            p[q, b * n + a] += 0.5
        return p

    @cached_property
    def unpack(self) -> np.ndarray:
        """Packed upper triangle -> vec of the full symmetric matrix."""
        n = self.n
        u = np.zeros((n * n, self.n_pairs))
        for q, (a, b) in enumerate(self.pairs):
            u[a * n + b, q] = 1.0
            u[b * n + a, q] = 1.0
        return u

    def unpack_matrix(self, packed: np.ndarray) -> np.ndarray:
        return (self.unpack @ packed).reshape(self.n, self.n)

    def pack_matrix(self, m: np.ndarray) -> np.ndarray:
        return self.pack @ np.asarray(m).reshape(-1)


@dataclass(frozen=True, eq=False)
class AugmentedMomentSystem:
    index_map: MomentIndexMap
    offset: np.ndarray
    generator: np.ndarray
    mixture: PhaseTypeMixture

    @property
    def size(self) -> int:
        return self.offset.shape[0]

    def rhs(self, mu: np.ndarray) -> np.ndarray:
        return self.offset + self.generator @ mu


def _outer_left(u: np.ndarray) -> np.ndarray:
    """Matrix of m -> u m^T (row-major vec)."""
    n = u.shape[0]
    return np.einsum("a,bc->abc", u, np.eye(n)).reshape(n * n, n)


def _outer_right(v: np.ndarray) -> np.ndarray:
    """Matrix of m -> m v^T."""
    n = v.shape[0]
    return np.einsum("ac,b->abc", np.eye(n), v).reshape(n * n, n)


class _ResetBlocks:
    """Packed-space pieces of E[x+ x+^T | x] for one reset family.

    E[x+ x+^T | x] = J x x^T J^T + J x R^T + R x^T J^T + R R^T + sym(Q x x^T + D x 1^T + E)
    split by which moment it multiplies: second (M), first (m) or zeroth (s).
    """

    def __init__(self, fam: _ResetMoments, imap: MomentIndexMap):
        n = imap.n
        j, r = fam.mean_gain, fam.mean_offset
        eye, ones = np.eye(n), np.ones(n)
        from_second = left_right_operator(j, j.T) + left_right_operator(fam.cov_quadratic, eye)
        from_first = _outer_right(r) @ j + _outer_left(r) @ j + _outer_right(ones) @ fam.cov_linear
        from_zeroth = (np.outer(r, r) + fam.cov_constant).reshape(-1)
        self.second = imap.pack @ from_second @ imap.unpack
        self.first = imap.pack @ from_first
        self.zeroth = imap.pack @ from_zeroth
        self.mean_first = j
        self.mean_zeroth = r


def build_augmented_system(model: TTSHSModel) -> AugmentedMomentSystem:
    """Assemble (a1, A1) for the stage-conditioned moment vector."""
    mix = model.timing
    if not isinstance(mix, PhaseTypeMixture):
        raise TTSHSError("TIMING_NOT_PHASE_TYPE", f"timing law is {type(mix).__name__}; fit a mixture first")
    n = model.n
    imap = MomentIndexMap(mix, n)
    g = np.zeros((imap.size, imap.size))
    a_hat = model.dynamics.drift_offset
    a = model.dynamics.drift_matrix
    eye = np.eye(n)

    flow_second = imap.pack @ lyapunov_operator(a) @ imap.unpack
    flow_first = imap.pack @ (_outer_left(a_hat) + _outer_right(a_hat))
    local_first_x = a.copy()
    local_zeroth_x = a_hat.copy()
    local_second = flow_second.copy()
    local_first = flow_first.copy()
    local_zeroth = np.zeros(imap.n_pairs)
    for fam in model.memoryless_resets:
        blk = _ResetBlocks(fam, imap)
        local_first_x += fam.rate * (fam.mean_gain - eye)
        local_zeroth_x += fam.rate * fam.mean_offset
        local_second += fam.rate * (blk.second - np.eye(imap.n_pairs))
        local_first += fam.rate * blk.first
        local_zeroth += fam.rate * blk.zeroth

    timer = _ResetBlocks(model.timer_reset, imap)
    branches = mix.branches
    exits = [imap.stage(i, b.m - 1) for i, b in enumerate(branches)]
    eye_pairs = np.eye(imap.n_pairs)

    for l, (i, j) in enumerate(imap.stages):
        k = branches[i].k
        sx, xx = imap.x(l), imap.xx(l)

        g[l, l] -= k
        g[sx, sx] += local_first_x - k * eye
        g[sx, l] += local_zeroth_x
        g[xx, xx] += local_second - k * eye_pairs
        g[xx, sx] += local_first
        g[xx, l] += local_zeroth

        if j > 0:
            g[l, l - 1] += k
            g[sx, imap.x(l - 1)] += k * eye
            g[xx, imap.xx(l - 1)] += k * eye_pairs
            continue

        p = branches[i].p
        for e_branch, e in enumerate(exits):
            w = p * branches[e_branch].k
            g[l, e] += w
            g[sx, imap.x(e)] += w * timer.mean_first
            g[sx, e] += w * timer.mean_zeroth
            g[xx, imap.xx(e)] += w * timer.second
            g[xx, imap.x(e)] += w * timer.first
            g[xx, e] += w * timer.zeroth

    return AugmentedMomentSystem(imap, np.zeros(imap.size), g, mix)


def initial_moments(system: AugmentedMomentSystem, x0) -> np.ndarray:
    """Moments right after an event at t = 0 from the deterministic state x0."""
    imap = system.index_map
    x0 = np.asarray(x0, dtype=float).reshape(imap.n)
    mu = np.zeros(imap.size)
    packed = imap.pack_matrix(np.outer(x0, x0))
    for i, b in enumerate(system.mixture.branches):
        l = imap.stage(i, 0)
        mu[l] = b.p
        mu[imap.x(l)] = b.p * x0
        mu[imap.xx(l)] = b.p * packed
    return mu


def integrate_moments(system: AugmentedMomentSystem, mu0, t_grid, method: str = "expm"):
    """Trajectory (times, mu[len(t), size]) of dmu/dt = a1 + A1 mu from mu(0) = mu0."""
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.shape != (system.size,):
        raise TTSHSError("DIMENSION_MISMATCH", f"mu0 has shape {mu0.shape}, expected ({system.size},)")
    t = np.asarray(t_grid, dtype=float)
    return t, propagate_linear(system.generator, system.offset, mu0, t, method=method)


def steady_state_moments(system: AugmentedMomentSystem) -> np.ndarray:
    """Stationary mu with the first stage row traded for sum(<s>) = 1."""
    imap = system.index_map
    mat = system.generator.copy()
    rhs = -system.offset.copy()
    mat[0, :] = 0.0
    mat[0, : imap.n_stages] = 1.0
    rhs[0] = 1.0
    with warnings.catch_warnings(), np.errstate(all="ignore"):
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            mu = scipy.linalg.solve(mat, rhs)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise TTSHSError("SINGULAR_SYSTEM", f"constrained steady solve failed: {exc}") from None
    if not np.all(np.isfinite(mu)):
        raise TTSHSError("SINGULAR_SYSTEM", "constrained steady solve produced non-finite moments")
    residual = np.max(np.abs(system.rhs(mu)))
    scale = 1.0 + np.max(np.abs(system.generator)) * np.max(np.abs(mu))
    if not residual <= STEADY_RESIDUAL_TOL * scale:
        raise TTSHSError("RESIDUAL_TOO_LARGE", f"steady residual {residual:.3g}")
    return mu


def marginal_moments(system: AugmentedMomentSystem, mu, time: float = np.inf) -> MomentState:
    """Sum stage-conditioned moments over the exclusive, exhaustive stages."""
    imap = system.index_map
    mu = np.asarray(mu, dtype=float)
    m = imap.n_stages
    mean = mu[imap.x_start : imap.xx_start].reshape(m, imap.n).sum(axis=0)
    packed = mu[imap.xx_start :].reshape(m, imap.n_pairs).sum(axis=0)
    return MomentState(time, mean, sym(imap.unpack_matrix(packed)))


def stage_occupancy(system: AugmentedMomentSystem, mu) -> np.ndarray:
    return np.asarray(mu)[: system.index_map.n_stages]


def steady_state(model: TTSHSModel) -> MomentState:
    system = build_augmented_system(model)
    return marginal_moments(system, steady_state_moments(system))


def transient(model: TTSHSModel, t_grid, method: str = "expm") -> list[MomentState]:
    system = build_augmented_system(model)
    t, mus = integrate_moments(system, initial_moments(system, model.initial_state), t_grid, method=method)
    return [marginal_moments(system, mu, ti) for ti, mu in zip(t, mus)]
