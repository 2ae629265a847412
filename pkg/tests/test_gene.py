import math

import numpy as np
import pytest

from ttshs import phase, renewal
from ttshs.errors import TTSHSError
from ttshs.gene import (
    GeneModelParams,
    build_ttshs,
    closed_form_stats,
    dilution_rate_for,
    engine_stats,
    lyapunov_stats,
    mean_division_time,
)
from ttshs.model import validate_model
from ttshs.phase_type import Branch, PhaseTypeMixture, mean_and_cv2

from _models import GENE


def test_division_time_link():
    assert mean_division_time(1.0) == pytest.approx(math.log(2.0) / 2.0, rel=1e-15)
    assert dilution_rate_for(mean_division_time(0.7)) == pytest.approx(0.7, rel=1e-15)
    assert GENE.division_mean_interval == pytest.approx(math.log(2.0) / 2.0)


def test_params_from_interval():
    p = GeneModelParams(10.0, 1.0, 1.0, division_mean_interval=math.log(2.0) / 2.0)
    assert p.dilution_rate == pytest.approx(1.0, rel=1e-14)


def test_params_reject_inconsistent_link():
    with pytest.raises(TTSHSError):
        GeneModelParams(10.0, 1.0, 1.0, dilution_rate=1.0, division_mean_interval=1.0)


def test_params_reject_bad_burst_moments():
    with pytest.raises(TTSHSError):
        GeneModelParams(10.0, 2.0, 1.0, dilution_rate=1.0, burst_second_moment=3.0, burst_distribution="gamma")


class TestBuild:
    def test_deterministic_production_fields(self):
        m = build_ttshs(GENE, False)
        assert m.dynamics.drift_offset[0] == 10.0 and m.dynamics.drift_matrix[0, 0] == -1.0
        assert m.timer_reset.cov_linear[0, 0] == 1.0
        assert m.memoryless_resets == ()

    def test_bursty_fields(self):
        m = build_ttshs(GENE, True)
        assert m.dynamics.drift_offset[0] == 0.0
        (fam,) = m.memoryless_resets
        assert fam.rate == 10.0 and fam.mean_offset[0] == 1.0
        assert fam.cov_constant[0, 0] == pytest.approx(1.0)

    @pytest.mark.parametrize("bursts", [False, True])
    def test_valid_and_noise_imparting(self, bursts):
        m = build_ttshs(GENE, bursts)
        assert validate_model(m).ok
        assert m.timer_reset.is_noise_imparting()
        renewal.require_noise_imparting(m)


class TestStats:
    def test_printed_closed_forms(self):
        assert closed_form_stats(GENE, False) == pytest.approx((10.0, math.log(2.0) / 20.0), rel=1e-14)
        mean, cv2 = closed_form_stats(GENE, True)
        assert mean == 10.0
        assert cv2 == pytest.approx(math.log(2.0) / 20.0 + 0.1, rel=1e-14)
        assert cv2 == pytest.approx(0.134657, abs=1e-6)

    def test_engines_match_hand_algebra(self):
        for bursts in (False, True):
            expected = lyapunov_stats(GENE, bursts)
            for engine in ("phase", "renewal"):
                got = engine_stats(GENE, bursts, engine)
                assert got[0] == pytest.approx(expected[0], rel=1e-10)
                assert got[1] == pytest.approx(expected[1], rel=1e-9)

    def test_partition_term_discrepancy_factor(self):
        """The printed partitioning term differs from the moment equations by (ln 2)^2 / 2."""
        printed = closed_form_stats(GENE, False)[1]
        derived = lyapunov_stats(GENE, False)[1]
        assert printed / derived == pytest.approx(math.log(2.0) ** 2 / 2.0, rel=1e-12)

    def test_burst_term_matches_print(self):
        printed = closed_form_stats(GENE, True)[1] - closed_form_stats(GENE, False)[1]
        derived = lyapunov_stats(GENE, True)[1] - lyapunov_stats(GENE, False)[1]
        assert printed == pytest.approx(derived, rel=1e-12)

    def test_mean_exact(self):
        for bursts in (False, True):
            for engine in ("phase", "renewal"):
                assert engine_stats(GENE, bursts, engine)[0] == pytest.approx(10.0, rel=1e-10)

    @pytest.mark.parametrize("bursts", [False, True])
    def test_division_timing_shape_invariance(self, bursts):
        t_mean = GENE.division_mean_interval
        laws = [
            PhaseTypeMixture.exponential(1.0 / t_mean),
            PhaseTypeMixture.erlang(8, 8.0 / t_mean),
            PhaseTypeMixture((Branch(0.5, 1, 1.0 / (0.5 * t_mean)), Branch(0.5, 2, 2.0 / (1.5 * t_mean)))),
        ]
        cv2s = []
        for law in laws:
            params = GeneModelParams(10.0, 1.0, 1.0, division_timing=law)
            cv2s.append(phase.steady_state(build_ttshs(params, bursts)).cv2[0])
        assert np.max(np.abs(np.array(cv2s) - cv2s[0])) <= 1e-6 * cv2s[0]

    def test_with_division_cv2(self):
        p = GENE.with_division_cv2(0.25)
        assert mean_and_cv2(p.timing) == pytest.approx((GENE.division_mean_interval, 0.25), rel=1e-12)
        assert engine_stats(p, True)[1] == pytest.approx(engine_stats(GENE, True)[1], rel=1e-9)

    def test_variance_decomposition(self):
        with_b = phase.steady_state(build_ttshs(GENE, True)).covariance[0, 0]
        without = phase.steady_state(build_ttshs(GENE, False)).covariance[0, 0]
        # burst contribution k <B^2> / (2 gamma)
        assert with_b - without == pytest.approx(10.0 * 2.0 / 2.0, rel=1e-9)
