"""Exact-flow Monte Carlo of the piecewise-deterministic process.

Paths are simulated in fixed-size blocks, vectorized across the paths of a
block.  Each block owns a random stream spawned from ``(master_seed, block)``
and blocks are reduced in index order, so the output does not depend on the
number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import TTSHSError
from .linalg import AffineFlow, affine_step
from .model import LinearDynamics, MemorylessResetFamily, TTSHSModel, _ResetMoments

BLOCK_SIZE = 1000
PROJECTION_REL_TOL = 1e-6
SAMPLER_KINDS = ("gaussian", "deterministic", "binomial", "gamma")


@dataclass(frozen=True)
class ResetSampler:
    """How a reset draws x+ given its first two conditional moments.

    ``gaussian``: normal law, covariance clipped to the nearest PSD matrix.
    ``deterministic``: x+ = J x + R; the family must carry no covariance.
    ``binomial``: scalar, noise-imparting, variance D x.  Draws
        x+ = x + D (2 Bin(N, 1/2) - N) with N the unbiased stochastic rounding
        of x / D, which gives mean x and variance D x exactly; for x / D
        integral this is plain binomial partitioning of N molecules.
    ``gamma``: scalar, x+ ~ Gamma with the requested mean and variance;
        keeps states nonnegative.
    """

    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise TTSHSError("SAMPLER_MISMATCH", f"unknown sampler {self.kind!r}")

    def check(self, family: _ResetMoments):
        n = family.mean_offset.shape[0]
        if self.kind == "deterministic" and not family.has_zero_covariance():
            raise TTSHSError("SAMPLER_MISMATCH", "deterministic sampler needs Q = D = E = 0")
        if self.kind == "binomial":
            if n != 1 or not family.is_noise_imparting() or family.cov_constant[0, 0] != 0.0:
                raise TTSHSError("SAMPLER_MISMATCH", "binomial sampler needs a scalar reset with J=1, R=0, Q=0, E=0")
            if not family.cov_linear[0, 0] > 0.0:
                raise TTSHSError("SAMPLER_MISMATCH", "binomial sampler needs D > 0")
        if self.kind == "gamma" and n != 1:
            raise TTSHSError("SAMPLER_MISMATCH", "gamma sampler is scalar only")


GAUSSIAN = ResetSampler("gaussian")


@dataclass
class _Counters:
    projections: int = 0


def _draw_resets(family: _ResetMoments, kind: str, x: np.ndarray, rng: np.random.Generator, counters: _Counters):
    """Vectorized x+ for the rows of x (P, n)."""
    p, n = x.shape
    mean = family.conditional_mean(x)
    if kind == "deterministic" or family.has_zero_covariance():
        return mean
    if kind == "binomial":
        beta = family.cov_linear[0, 0]
        ratio = np.maximum(x[:, 0], 0.0) / beta
        base = np.floor(ratio)
        count = base + (rng.random(p) < ratio - base)
        noise = beta * (2.0 * rng.binomial(count.astype(np.int64), 0.5) - count)
        return mean + noise[:, None]
    cov = family.conditional_cov(x)
    if kind == "gamma":
        mu, var = mean[:, 0], cov[:, 0, 0]
        ok = (var > 0.0) & (mu > 0.0)
        counters.projections += int(np.count_nonzero(~ok & (var != 0.0)))
        out = mu.copy()
        shape = mu[ok] ** 2 / var[ok]
        out[ok] = rng.gamma(shape, mu[ok] / shape)
        return out[:, None]
    z = rng.standard_normal((p, n))
    if n == 1:
        var = cov[:, 0, 0]
        counters.projections += int(np.count_nonzero(var < 0.0))
        return mean + np.sqrt(np.maximum(var, 0.0))[:, None] * z
    w, v = np.linalg.eigh(cov)
    neg = np.sqrt(np.sum(np.minimum(w, 0.0) ** 2, axis=1))
    scale = np.linalg.norm(cov, axis=(1, 2))
    counters.projections += int(np.count_nonzero(neg > PROJECTION_REL_TOL * scale))
    root = v * np.sqrt(np.maximum(w, 0.0))[:, None, :]
    return mean + np.einsum("pij,pj->pi", root, z)


def _draw_memoryless(family: MemorylessResetFamily, x, rng, counters):
    if family.burst is not None:
        return x + family.burst.sample(rng, x.shape[0])[:, None]
    kind = "deterministic" if family.has_zero_covariance() else "gaussian"
    return _draw_resets(family, kind, x, rng, counters)


def flow_propagate(dynamics: LinearDynamics, x, dt: float) -> np.ndarray:
    """Exact state after time dt under dx/dt = a_hat + A x (augmented exponential)."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    phi, c = affine_step(dynamics.drift_matrix, dynamics.drift_offset, dt)
    return phi @ np.asarray(x, dtype=float) + c


def sample_reset(family: _ResetMoments, sampler: ResetSampler, x, rng: np.random.Generator) -> np.ndarray:
    """One draw of x+ given x."""
    sampler.check(family)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if isinstance(family, MemorylessResetFamily) and family.burst is not None:
        return _draw_memoryless(family, x, rng, _Counters())[0]
    return _draw_resets(family, sampler.kind, x, rng, _Counters())[0]


def sample_resets(family, sampler: ResetSampler, x, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent draws of x+ at the same state x; shape (size, n)."""
    sampler.check(family)
    xs = np.tile(np.asarray(x, dtype=float).reshape(1, -1), (size, 1))
    if isinstance(family, MemorylessResetFamily) and family.burst is not None:
        return _draw_memoryless(family, xs, rng, _Counters())
    return _draw_resets(family, sampler.kind, xs, rng, _Counters())


@dataclass
class _BlockResult:
    states: np.ndarray  # (P, G, n)
    ages: np.ndarray  # (P, G) time since last timer event
    projections: int
    intervals: np.ndarray | None = None


def _simulate_block(model: TTSHSModel, sampler: ResetSampler, grid: np.ndarray, n_paths: int, rng, log_intervals: bool):
    n = model.n
    g_count = grid.size
    flow = AffineFlow(model.dynamics.drift_matrix, model.dynamics.drift_offset)
    timing = model.timing
    fams = model.memoryless_resets
    rates = np.array([f.rate for f in fams])
    total_rate = float(rates.sum()) if fams else 0.0
    counters = _Counters()

    x = np.tile(model.initial_state, (n_paths, 1))
    t = np.zeros(n_paths)
    last_event = np.zeros(n_paths)
    next_timer = np.asarray(timing.sample(rng, n_paths), dtype=float)
    next_mem = rng.exponential(1.0 / total_rate, n_paths) if fams else np.full(n_paths, np.inf)
    gi = np.zeros(n_paths, dtype=np.int64)
    states = np.empty((n_paths, g_count, n))
    ages = np.empty((n_paths, g_count))
    # intervals are logged when drawn, not when completed: the one straddling
    # the horizon is length-biased and dropping it would bias the log
    intervals = [next_timer.copy()] if log_intervals else None
    grid_ext = np.append(grid, np.inf)

    active = np.arange(n_paths)
    while active.size:
        nt, nm = next_timer[active], next_mem[active]
        ng = grid_ext[gi[active]]
        event = np.minimum(nt, nm)
        stop = np.minimum(event, ng)
        x[active] = flow(x[active], stop - t[active])
        t[active] = stop

        at_grid = ng <= event
        idx = active[at_grid]
        states[idx, gi[idx]] = x[idx]
        ages[idx, gi[idx]] = t[idx] - last_event[idx]
        gi[idx] += 1

        timer_hit = ~at_grid & (nt <= nm)
        idx = active[timer_hit]
        if idx.size:
            x[idx] = _draw_resets(model.timer_reset, sampler.kind, x[idx], rng, counters)
            last_event[idx] = t[idx]
            drawn = np.asarray(timing.sample(rng, idx.size), dtype=float)
            if log_intervals:
                intervals.append(drawn)
            next_timer[idx] = t[idx] + drawn

        idx = active[~at_grid & ~timer_hit]
        if idx.size:
            which = rng.choice(len(fams), p=rates / total_rate, size=idx.size) if len(fams) > 1 else np.zeros(idx.size, int)
            for f_i, fam in enumerate(fams):
                sub = idx[which == f_i]
                if sub.size:
                    x[sub] = _draw_memoryless(fam, x[sub], rng, counters)
            next_mem[idx] = t[idx] + rng.exponential(1.0 / total_rate, idx.size)

        active = active[gi[active] < g_count]

    return _BlockResult(
        states, ages, counters.projections, np.concatenate(intervals) if log_intervals and intervals else None
    )


def _block_rngs(master_seed: int, n_blocks: int):
    return [np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(b,))) for b in range(n_blocks)]


def _run_blocks(model, sampler, grid, paths, master_seed, threads, block_size, log_intervals=False):
    sampler.check(model.timer_reset)
    for fam in model.memoryless_resets:
        if fam.burst is None and not fam.has_zero_covariance():
            ResetSampler("gaussian").check(fam)
    sizes = [min(block_size, paths - s) for s in range(0, paths, block_size)]
    rngs = _block_rngs(master_seed, len(sizes))
    grid = np.asarray(grid, dtype=float)

    def work(b):
        return _simulate_block(model, sampler, grid, sizes[b], rngs[b], log_intervals)

    if threads <= 1 or len(sizes) == 1:
        return [work(b) for b in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(len(sizes))))


@dataclass(frozen=True, eq=False)
class SteadyEstimate:
    """Time-averaged stationary moments: per-path averages over a window, then across paths."""

    window: tuple[float, float]
    mean: np.ndarray
    cov: np.ndarray
    se_mean: np.ndarray
    se_cov: np.ndarray
    paths: int

    @property
    def second_moment(self) -> np.ndarray:
        return self.cov + np.outer(self.mean, self.mean)


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    times: np.ndarray
    mean: np.ndarray  # (G, n)
    second_moment: np.ndarray  # (G, n, n)
    se_mean: np.ndarray
    se_cov: np.ndarray
    paths: int
    master_seed: int
    projection_count: int = 0
    steady: SteadyEstimate | None = None
    intervals: np.ndarray | None = field(default=None, repr=False)

    @property
    def cov(self) -> np.ndarray:
        return self.second_moment - self.mean[:, :, None] * self.mean[:, None, :]


def _pointwise_stats(blocks: list[_BlockResult], paths: int):
    """Per grid time: mean, second moment and standard errors of mean and covariance.

    Two passes over the stored states; centering first avoids the cancellation
    of raw fourth moments.
    """
    e1 = sum(blk.states.sum(axis=0) for blk in blocks) / paths
    c2 = c22 = 0.0
    for blk in blocks:
        d = blk.states - e1[None]
        c2 = c2 + np.einsum("pga,pgb->gab", d, d)
        c22 = c22 + np.einsum("pga,pgb->gab", d * d, d * d)
    cov = c2 / paths
    c22 = c22 / paths
    var = np.diagonal(cov, axis1=1, axis2=2)
    denom = max(paths - 1, 1)
    se_mean = np.sqrt(np.maximum(var, 0.0) / denom)
    se_cov = np.sqrt(np.maximum(c22 - cov**2, 0.0) / denom)
    e2 = cov + e1[:, :, None] * e1[:, None, :]
    return e1, e2, se_mean, se_cov


def _steady_stats(blocks: list[_BlockResult], window_mask: np.ndarray, window: tuple[float, float]) -> SteadyEstimate:
    xbar = np.concatenate([blk.states[:, window_mask].mean(axis=1) for blk in blocks])
    sbar = np.concatenate(
        [np.einsum("pga,pgb->pab", blk.states[:, window_mask], blk.states[:, window_mask]) / window_mask.sum() for blk in blocks]
    )
    paths = xbar.shape[0]
    mean = xbar.mean(axis=0)
    cov = sbar.mean(axis=0) - np.outer(mean, mean)
    # influence of each path on the covariance estimate (delta method)
    infl = sbar - mean[None, :, None] * xbar[:, None, :] - xbar[:, :, None] * mean[None, None, :]
    se_mean = xbar.std(axis=0, ddof=1) / math.sqrt(paths)
    se_cov = infl.std(axis=0, ddof=1) / math.sqrt(paths)
    return SteadyEstimate(window, mean, cov, se_mean, se_cov, paths)


def run_ensemble(
    model: TTSHSModel,
    sampler: ResetSampler,
    paths: int,
    t_grid,
    master_seed: int,
    *,
    average_from: float | None = None,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
    log_intervals: bool = False,
) -> EnsembleSummary:
    """Simulate ``paths`` trajectories from the deterministic initial state.

    With ``average_from`` set, grid points at or after it also feed a
    time-averaged stationary estimate (``summary.steady``).
    """
    if paths < 2:
        raise ValueError("need at least two paths for standard errors")
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("t_grid must be a nonnegative, strictly increasing 1-D sequence")
    blocks = _run_blocks(model, sampler, grid, paths, master_seed, threads, block_size, log_intervals)
    e1, e2, se_mean, se_cov = _pointwise_stats(blocks, paths)
    steady = None
    if average_from is not None:
        mask = grid >= average_from
        if not mask.any():
            raise ValueError("no grid points inside the averaging window")
        steady = _steady_stats(blocks, mask, (float(grid[mask][0]), float(grid[-1])))
    intervals = None
    if log_intervals:
        intervals = np.concatenate([b.intervals for b in blocks if b.intervals is not None])
    return EnsembleSummary(
        grid, e1, e2, se_mean, se_cov, paths, master_seed, sum(b.projections for b in blocks), steady, intervals
    )


def burn_in_time(model: TTSHSModel) -> float:
    """20 x the slower of the mean interval and the drift relaxation time."""
    lam = model.dynamics.spectral_abscissa()
    relax = 1.0 / abs(lam) if lam != 0.0 else math.inf
    return 20.0 * max(model.mean_interval, relax)


def steady_state_ensemble(
    model: TTSHSModel,
    sampler: ResetSampler,
    paths: int,
    master_seed: int,
    *,
    grid_points: int = 200,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> EnsembleSummary:
    """Burn in, then time-average over the second half of a horizon of twice the burn-in."""
    burn = burn_in_time(model)
    grid = np.linspace(burn, 2.0 * burn, grid_points)
    return run_ensemble(
        model, sampler, paths, grid, master_seed, average_from=burn, threads=threads, block_size=block_size
    )


@dataclass(frozen=True, eq=False)
class ConditionalMeanStats:
    """Mean of x given the timer age, binned, with a weighted linear fit against age."""

    bin_centers: np.ndarray
    bin_counts: np.ndarray
    cond_mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    global_mean: float
    slope: float
    slope_ci: tuple[float, float]
    merged_bins: int = 0


_Z95 = 1.959963984540054


def _merge_small_bins(edges: np.ndarray, counts: np.ndarray, min_count: int):
    """Drop interior edges until every bin holds at least ``min_count`` samples."""
    edges = list(edges)
    counts = list(counts)
    merged = 0
    while len(counts) > 1:
        small = [i for i, c in enumerate(counts) if c < min_count]
        if not small:
            break
        i = small[0]
        j = i + 1 if i + 1 < len(counts) else i - 1
        lo, hi = min(i, j), max(i, j)
        counts[lo] += counts[hi]
        del counts[hi]
        del edges[hi]
        merged += 1
    return np.array(edges), merged


def timer_conditional_stats(
    model: TTSHSModel,
    sampler: ResetSampler,
    paths: int,
    t_probe: float,
    bins: int,
    master_seed: int = 0,
    *,
    component: int = 0,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> ConditionalMeanStats:
    """Bin paths by timer age at ``t_probe`` and compare conditional means of x.

    Empty bins (fewer than two samples) are merged into a neighbour.  The
    slope comes from weighted least squares of bin means on bin centers,
    weights count / variance.
    """
    blocks = _run_blocks(model, sampler, np.array([t_probe]), paths, master_seed, threads, block_size)
    x = np.concatenate([b.states[:, 0, component] for b in blocks])
    age = np.concatenate([b.ages[:, 0] for b in blocks])
    edges = np.linspace(0.0, age.max() * (1 + 1e-12) + 1e-300, bins + 1)
    counts, _ = np.histogram(age, edges)
    edges, merged = _merge_small_bins(edges, counts, 2)
    which = np.clip(np.searchsorted(edges, age, side="right") - 1, 0, len(edges) - 2)
    nb = len(edges) - 1
    cnt = np.bincount(which, minlength=nb).astype(float)
    centers = np.bincount(which, weights=age, minlength=nb) / cnt
    means = np.bincount(which, weights=x, minlength=nb) / cnt
    sq = np.bincount(which, weights=x * x, minlength=nb) / cnt
    var = np.maximum(sq - means**2, 0.0) * cnt / np.maximum(cnt - 1, 1)
    se = np.sqrt(var / cnt)
    global_mean = float(x.mean())
    slope, slope_se = math.nan, math.inf
    if nb >= 2:
        w = 1.0 / np.maximum(se**2, 1e-300)
        tc = np.sum(w * centers) / w.sum()
        sxx = np.sum(w * (centers - tc) ** 2)
        slope = float(np.sum(w * (centers - tc) * means) / sxx)
        slope_se = float(math.sqrt(1.0 / sxx))
    return ConditionalMeanStats(
        centers,
        cnt.astype(int),
        means,
        means - _Z95 * se,
        means + _Z95 * se,
        global_mean,
        slope,
        (slope - _Z95 * slope_se, slope + _Z95 * slope_se),
        merged,
    )
