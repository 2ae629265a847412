import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttshs import renewal
from ttshs.errors import TTSHSError
from ttshs.gene import build_ttshs
from ttshs.model import make_model, sym
from ttshs.phase_type import PhaseTypeMixture, RenewalLaw

from _models import GENE, random_hurwitz, random_noise_imparting, random_psd, reference_model


class TestTransientMean:
    def test_affine_scalar(self):
        m = make_model([1.0], [[-1.0]], PhaseTypeMixture.exponential(1.0), initial_state=[0.0])
        _, means = renewal.transient_mean(m, [0.0, math.log(2.0)])
        assert means[-1, 0] == pytest.approx(0.5, abs=1e-12)

    def test_fixed_point_stays(self):
        a = np.array([[-1.0, 0.5], [0.2, -2.0]])
        ahat = np.array([1.0, -0.5])
        x0 = -np.linalg.solve(a, ahat)
        m = make_model(ahat, a, PhaseTypeMixture.erlang(2, 1.0), initial_state=x0)
        _, means = renewal.transient_mean(m, np.linspace(0, 5, 11))
        assert np.max(np.abs(means - x0)) < 1e-12

    def test_gene_mean_limit(self):
        _, means = renewal.transient_mean(build_ttshs(GENE, False), [0.0, 25.0])
        assert means[-1, 0] == pytest.approx(10.0, abs=1e-9)

    @pytest.mark.parametrize("method", ["expm", "rk45"])
    def test_matches_closed_form(self, method):
        m = make_model([2.0], [[-0.5]], PhaseTypeMixture.exponential(1.0), initial_state=[1.0])
        t = np.linspace(0, 6, 13)
        _, means = renewal.transient_mean(m, t, method=method)
        exact = 4.0 - 3.0 * np.exp(-0.5 * t)
        assert np.max(np.abs(means[:, 0] - exact)) < 1e-8

    def test_timing_law_independent_bitwise(self):
        base = reference_model()
        t = np.linspace(0, 4, 9)
        _, m1 = renewal.transient_mean(base, t)
        _, m2 = renewal.transient_mean(base.with_timing(RenewalLaw("deterministic", 1.0)), t)
        _, m3 = renewal.transient_mean(base.with_timing(PhaseTypeMixture.erlang(10, 10.0)), t)
        assert np.array_equal(m1, m2) and np.array_equal(m1, m3)

    def test_memoryless_family_shifts_mean(self):
        m = build_ttshs(GENE, True)
        _, means = renewal.transient_mean(m, [0.0, 30.0])
        assert means[-1, 0] == pytest.approx(10.0, abs=1e-9)

    def test_requires_noise_imparting(self):
        m = make_model([1.0], [[-1.0]], PhaseTypeMixture.exponential(1.0), mean_gain=[[0.5]])
        with pytest.raises(TTSHSError) as exc:
            renewal.transient_mean(m, [0.0, 1.0])
        assert exc.value.code == "NOT_NOISE_IMPARTING"


class TestSteadyCovariance:
    def test_scalar_hand_algebra(self):
        # -2C + D xbar / <T> = 0 with xbar = 2, D = 0.5, <T> = 1
        m = make_model([2.0], [[-1.0]], PhaseTypeMixture.exponential(1.0), cov_linear=[[0.5]])
        assert renewal.steady_state_covariance(m)[0, 0] == pytest.approx(0.5, rel=1e-13)

    def test_no_noise(self):
        m = make_model([2.0, 1.0], -np.eye(2), PhaseTypeMixture.exponential(1.0))
        assert np.all(renewal.steady_state_covariance(m) == 0.0)

    def test_gene_deterministic_production(self):
        c = renewal.steady_state_covariance(build_ttshs(GENE, False))
        assert c[0, 0] == pytest.approx(10.0 / math.log(2.0), rel=1e-12)

    def test_gene_bursty_production(self):
        # burst variance k <B^2> / (2 gamma) adds to the partitioning part
        c = renewal.steady_state_covariance(build_ttshs(GENE, True))
        assert c[0, 0] == pytest.approx(10.0 / math.log(2.0) + 10.0, rel=1e-12)

    def test_not_hurwitz(self):
        m = make_model([1.0], [[0.5]], PhaseTypeMixture.exponential(1.0), cov_linear=[[1.0]])
        with pytest.raises(TTSHSError) as exc:
            renewal.steady_state(m)
        assert exc.value.code == "NOT_HURWITZ"

    def test_depends_only_on_mean_interval(self):
        base = reference_model()
        laws = [
            PhaseTypeMixture.exponential(1.0),
            PhaseTypeMixture.erlang(10, 10.0),
            RenewalLaw("deterministic", 1.0),
            RenewalLaw("lognormal", 1.0, 3.0),
        ]
        covs = [renewal.steady_state_covariance(base.with_timing(t)) for t in laws]
        for c in covs[1:]:
            assert np.max(np.abs(c - covs[0])) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_lyapunov_residual(self, n, seed):
        rng = np.random.default_rng(seed)
        a = random_hurwitz(rng, n)
        ahat = rng.normal(size=n)
        d = rng.normal(size=(n, n))
        e = random_psd(rng, n)
        mean_t = float(rng.uniform(0.2, 3.0))
        m = make_model(ahat, a, PhaseTypeMixture.exponential(1.0 / mean_t), cov_linear=d, cov_constant=e)
        c = renewal.steady_state_covariance(m)
        xbar = -np.linalg.solve(a, ahat)
        resid = a @ c + c @ a.T + sym(d @ np.outer(xbar, np.ones(n)) + e) / mean_t
        assert np.max(np.abs(resid)) <= 1e-10 * (1 + np.max(np.abs(e)))
        assert np.allclose(c, c.T, atol=1e-12)

    def test_steady_state_moment_state(self):
        st_ = renewal.steady_state(reference_model())
        assert st_.mean == pytest.approx([1.0], rel=1e-13)
        assert st_.covariance[0, 0] == pytest.approx(0.25, rel=1e-12)
        assert st_.second_moment[0, 0] == pytest.approx(1.25, rel=1e-12)

    def test_memoryless_families_with_general_gain(self):
        """Memoryless families may have any J_b; check against a direct vectorized solve."""
        rng = np.random.default_rng(11)
        m = random_noise_imparting(rng, 2, with_bursts=True)
        c = renewal.steady_state_covariance(m)
        fam = m.memoryless_resets[0]
        mean = renewal.steady_mean(m)
        # fixed point of the mean including the burst family
        a_eff = m.dynamics.drift_matrix + fam.rate * (fam.mean_gain - np.eye(2))
        assert a_eff @ mean + m.dynamics.drift_offset + fam.rate * fam.mean_offset == pytest.approx(np.zeros(2), abs=1e-12)
        u = (fam.mean_gain - np.eye(2)) @ mean + fam.mean_offset
        rhs = (
            sym(m.timer_reset.cov_linear @ np.outer(mean, np.ones(2)) + m.timer_reset.cov_constant) / m.mean_interval
            + fam.rate * (np.outer(u, u) + fam.cov_constant)
        )
        j = fam.mean_gain
        lhs = (
            m.dynamics.drift_matrix @ c
            + c @ m.dynamics.drift_matrix.T
            + fam.rate * (j @ c @ j.T - c)
        )
        assert np.max(np.abs(lhs + rhs)) < 1e-10
