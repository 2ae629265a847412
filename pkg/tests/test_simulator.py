import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttshs import phase
from ttshs.errors import TTSHSError
from ttshs.linalg import AffineFlow
from ttshs.model import LinearDynamics, MemorylessResetFamily, TimerResetFamily, make_model
from ttshs.phase_type import Branch, PhaseTypeMixture, RenewalLaw, mean_and_cv2
from ttshs.simulator import (
    ResetSampler,
    burn_in_time,
    flow_propagate,
    run_ensemble,
    sample_reset,
    sample_resets,
    steady_state_ensemble,
    timer_conditional_stats,
)

from _models import random_hurwitz, reference_model


def timer_family(**kw):
    return TimerResetFamily.with_defaults(len(kw.get("mean_offset", [0.0])), PhaseTypeMixture.exponential(1.0), **kw)


class TestFlow:
    def test_decay(self):
        assert flow_propagate(LinearDynamics([0.0], [[-1.0]]), [1.0], math.log(2.0)) == pytest.approx([0.5], abs=1e-14)

    def test_affine(self):
        assert flow_propagate(LinearDynamics([1.0], [[-1.0]]), [0.0], math.log(2.0)) == pytest.approx([0.5], abs=1e-14)

    def test_singular_drift(self):
        assert flow_propagate(LinearDynamics([3.0], [[0.0]]), [1.0], 2.0) == pytest.approx([7.0], abs=1e-13)

    def test_negative_dt(self):
        with pytest.raises(ValueError):
            flow_propagate(LinearDynamics([0.0], [[-1.0]]), [1.0], -1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.floats(0, 3), st.floats(0, 3))
    def test_semigroup(self, n, seed, s, t):
        rng = np.random.default_rng(seed)
        dyn = LinearDynamics(rng.normal(size=n), rng.normal(size=(n, n)))
        x = rng.normal(size=n)
        two_step = flow_propagate(dyn, flow_propagate(dyn, x, s), t)
        one_step = flow_propagate(dyn, x, s + t)
        assert np.max(np.abs(two_step - one_step)) <= 1e-12 * max(1.0, np.max(np.abs(one_step)))

    @pytest.mark.parametrize(
        "a",
        [
            np.array([[-1.3]]),
            np.array([[0.0]]),
            np.array([[-1.0, 2.0], [0.5, -3.0]]),
            np.array([[-1.0, 1.0], [0.0, -1.0]]),  # defective: exercises the non-eigen path
            np.zeros((2, 2)),
        ],
    )
    def test_batched_flow_matches_scalar(self, a):
        n = a.shape[0]
        rng = np.random.default_rng(0)
        b = rng.normal(size=n)
        flow = AffineFlow(a, b)
        x = rng.normal(size=(50, n))
        dt = rng.uniform(0, 3, size=50)
        dt[0] = 0.0
        got = flow(x, dt)
        dyn = LinearDynamics(b, a)
        want = np.array([flow_propagate(dyn, xi, di) for xi, di in zip(x, dt)])
        assert np.max(np.abs(got - want)) <= 1e-11


class TestResetSampling:
    def test_deterministic(self):
        fam = timer_family(mean_gain=[[0.5]], mean_offset=[1.0])
        rng = np.random.default_rng(0)
        for _ in range(5):
            assert sample_reset(fam, ResetSampler("deterministic"), [4.0], rng) == pytest.approx([3.0])

    def test_deterministic_mismatch(self):
        fam = timer_family(cov_linear=[[1.0]])
        with pytest.raises(TTSHSError) as exc:
            sample_reset(fam, ResetSampler("deterministic"), [1.0], np.random.default_rng(0))
        assert exc.value.code == "SAMPLER_MISMATCH"

    def test_binomial_mismatch(self):
        fam = TimerResetFamily.with_defaults(2, PhaseTypeMixture.exponential(1.0), cov_linear=np.eye(2))
        with pytest.raises(TTSHSError):
            sample_reset(fam, ResetSampler("binomial"), [1.0, 1.0], np.random.default_rng(0))
        with pytest.raises(TTSHSError):
            ResetSampler("poisson")

    def _check_moments(self, draws, mean, var, var_rel=None):
        n = draws.size
        se_mean = math.sqrt(var / n)
        assert abs(draws.mean() - mean) < 3 * se_mean
        dev2 = (draws - draws.mean()) ** 2
        se_var = dev2.std(ddof=1) / math.sqrt(n)
        if var_rel is None:
            assert abs(draws.var(ddof=1) - var) < 3 * se_var
        else:
            assert draws.var(ddof=1) == pytest.approx(var, rel=var_rel)

    def test_gaussian(self):
        fam = timer_family(cov_linear=[[1.0]])
        draws = sample_resets(fam, ResetSampler("gaussian"), [10.0], 10**6, np.random.default_rng(1))[:, 0]
        self._check_moments(draws, 10.0, 10.0)

    def test_binomial(self):
        fam = timer_family(cov_linear=[[1.0]])
        draws = sample_resets(fam, ResetSampler("binomial"), [10.0], 10**6, np.random.default_rng(2))[:, 0]
        self._check_moments(draws, 10.0, 10.0, var_rel=0.05)
        # integer x / beta: exact partitioning of 10 molecules, x+ = 2 Bin(10, 1/2)
        assert np.all(np.mod(draws, 2.0) == 0.0)

    @pytest.mark.parametrize("x, beta", [(7.3, 1.0), (2.5, 0.4), (0.3, 1.0)])
    def test_binomial_fractional(self, x, beta):
        fam = timer_family(cov_linear=[[beta]])
        draws = sample_resets(fam, ResetSampler("binomial"), [x], 10**6, np.random.default_rng(3))[:, 0]
        self._check_moments(draws, x, beta * x)

    def test_gamma(self):
        fam = timer_family(cov_linear=[[0.5]], cov_constant=[[0.2]])
        draws = sample_resets(fam, ResetSampler("gamma"), [3.0], 10**6, np.random.default_rng(4))[:, 0]
        assert draws.min() >= 0.0
        self._check_moments(draws, 3.0, 1.7)

    def test_gaussian_multivariate(self):
        fam = TimerResetFamily.with_defaults(
            2,
            PhaseTypeMixture.exponential(1.0),
            mean_gain=[[0.5, 0.1], [0.0, 1.0]],
            mean_offset=[1.0, -1.0],
            cov_quadratic=[[0.1, 0.0], [0.0, 0.2]],
            cov_constant=[[1.0, 0.3], [0.3, 0.5]],
        )
        x = np.array([2.0, 1.0])
        draws = sample_resets(fam, ResetSampler("gaussian"), x, 400000, np.random.default_rng(5))
        mean = fam.conditional_mean(x[None, :])[0]
        cov = fam.conditional_cov(x[None, :])[0]
        se = np.sqrt(np.diag(cov) / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se)
        assert np.cov(draws.T) == pytest.approx(cov, rel=0.02, abs=0.01)

    def test_burst_family(self):
        from ttshs.model import BurstSize

        fam = MemorylessResetFamily.additive_burst(1.0, BurstSize("exponential", 2.0))
        draws = sample_resets(fam, ResetSampler("gaussian"), [1.0], 10**5, np.random.default_rng(6))[:, 0]
        assert draws.min() >= 1.0
        assert draws.mean() == pytest.approx(3.0, rel=0.02)


class TestEnsemble:
    def test_no_noise_zero_variance(self):
        model = make_model([1.0], [[-1.0]], PhaseTypeMixture.erlang(2, 2.0), initial_state=[0.3])
        summ = run_ensemble(model, ResetSampler("deterministic"), 500, np.linspace(0, 5, 6), 0)
        assert np.max(np.abs(summ.cov)) <= 1e-12
        assert np.max(summ.se_cov) <= 1e-12

    def test_same_seed_same_summary(self):
        model = reference_model()
        grid = np.linspace(0, 3, 4)
        a = run_ensemble(model, ResetSampler("gaussian"), 2500, grid, 42)
        b = run_ensemble(model, ResetSampler("gaussian"), 2500, grid, 42, threads=4)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.second_moment, b.second_moment)
        assert np.array_equal(a.se_cov, b.se_cov)
        c = run_ensemble(model, ResetSampler("gaussian"), 2500, grid, 43)
        assert not np.array_equal(a.mean, c.mean)

    def test_summary_symmetric(self):
        model = make_model(
            [1.0, 0.5], [[-1.0, 0.2], [0.1, -1.0]], PhaseTypeMixture.exponential(1.0), cov_constant=[[0.5, 0.1], [0.1, 0.3]]
        )
        summ = run_ensemble(model, ResetSampler("gaussian"), 1000, np.linspace(0, 2, 3), 0)
        assert np.array_equal(summ.second_moment, np.swapaxes(summ.second_moment, 1, 2))

    @pytest.mark.parametrize(
        "timing",
        [PhaseTypeMixture((Branch(0.3, 1, 0.5), Branch(0.7, 3, 4.0))), RenewalLaw("lognormal", 0.8, 2.0), RenewalLaw("deterministic", 0.5)],
    )
    def test_interval_statistics(self, timing):
        model = reference_model(timing)
        summ = run_ensemble(model, ResetSampler("gaussian"), 2000, [30.0], 1, log_intervals=True)
        iv = summ.intervals
        if isinstance(timing, PhaseTypeMixture):
            mean, cv2 = mean_and_cv2(timing)
        else:
            mean, cv2 = timing.mean, timing.cv2
        se = max(iv.std(ddof=1) / math.sqrt(iv.size), 1e-12)
        assert abs(iv.mean() - mean) < 4 * se
        batches = iv[: iv.size // 50 * 50].reshape(50, -1)
        bcv2 = batches.var(axis=1) / batches.mean(axis=1) ** 2
        se_cv2 = max(bcv2.std(ddof=1) / math.sqrt(50), 1e-12)
        assert abs(iv.var() / iv.mean() ** 2 - cv2) < 4 * se_cv2

    def test_transient_matches_engine(self):
        model = reference_model()
        grid = np.array([0.5, 1.0, 2.0, 4.0])
        summ = run_ensemble(model, ResetSampler("gaussian"), 20000, grid, 3)
        states = phase.transient(model, grid)
        for g, s in enumerate(states):
            assert abs(summ.mean[g, 0] - s.mean[0]) < 3 * summ.se_mean[g, 0]
            assert abs(summ.cov[g, 0, 0] - s.covariance[0, 0]) < 3 * summ.se_cov[g, 0, 0]

    def test_steady_ensemble_reference(self):
        model = reference_model()
        summ = steady_state_ensemble(model, ResetSampler("gaussian"), 10000, 5)
        st_ = summ.steady
        assert st_.window[0] == pytest.approx(burn_in_time(model))
        assert abs(st_.mean[0] - 1.0) < 3 * st_.se_mean[0]
        assert abs(st_.cov[0, 0] - 0.25) < 3 * st_.se_cov[0, 0]

    def test_burn_in(self):
        assert burn_in_time(reference_model()) == pytest.approx(20.0)
        slow = make_model([1.0], [[-0.1]], PhaseTypeMixture.exponential(1.0))
        assert burn_in_time(slow) == pytest.approx(200.0)

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            run_ensemble(reference_model(), ResetSampler("gaussian"), 10, [1.0, 0.5], 0)

    def test_projection_counter(self):
        # D x 1^T on a 2-D state is indefinite whenever the components differ in sign
        model = make_model(
            [0.0, 0.0], -np.eye(2), PhaseTypeMixture.exponential(2.0), cov_linear=np.eye(2), initial_state=[1.0, -1.0]
        )
        summ = run_ensemble(model, ResetSampler("gaussian"), 200, [1.0, 2.0], 0)
        assert summ.projection_count > 0


class TestTimerConditional:
    def test_single_bin_is_global_mean(self):
        stats = timer_conditional_stats(reference_model(), ResetSampler("gaussian"), 3000, 20.0, 1, 0)
        assert stats.cond_mean[0] == pytest.approx(stats.global_mean, rel=1e-12)
        assert math.isnan(stats.slope)

    def test_merges_sparse_bins(self):
        stats = timer_conditional_stats(reference_model(), ResetSampler("gaussian"), 200, 20.0, 60, 0)
        assert stats.merged_bins > 0
        assert np.all(stats.bin_counts >= 2)
        assert stats.bin_counts.sum() == 200

    def test_ci_brackets_mean(self):
        stats = timer_conditional_stats(reference_model(), ResetSampler("gaussian"), 5000, 20.0, 5, 1)
        assert np.all(stats.ci_low <= stats.cond_mean) and np.all(stats.cond_mean <= stats.ci_high)
