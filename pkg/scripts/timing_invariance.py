"""Steady and transient covariance of the reference model under equal-mean
timing laws: identical at steady state, different in transit.

    python scripts/timing_invariance.py
"""

import numpy as np

from ttshs import phase, renewal
from ttshs.model import make_model
from ttshs.phase_type import PhaseTypeMixture, fit_mixture, mean_and_cv2


def main():
    laws = {
        "Erlang(10)": PhaseTypeMixture.erlang(10, 10.0),
        "Erlang(3)": PhaseTypeMixture.erlang(3, 3.0),
        "exponential": PhaseTypeMixture.exponential(1.0),
        "hyperexp cv2=4": fit_mixture(1.0, 4.0),
    }
    grid = np.array([0.25, 0.5, 1.0, 2.0, 5.0, 20.0])
    print(f"{'law':16s} {'cv2':>6s} " + " ".join(f"C(t={t:g})".rjust(11) for t in grid) + "  steady")
    for name, law in laws.items():
        model = make_model([1.0], [[-1.0]], law, cov_linear=[[0.5]], initial_state=[0.0])
        traj = phase.transient(model, grid)
        ss = phase.steady_state(model).covariance[0, 0]
        cols = " ".join(f"{s.covariance[0, 0]:11.6f}" for s in traj)
        print(f"{name:16s} {mean_and_cv2(law)[1]:6.2f} {cols}  {ss:.10f}")
    print(f"renewal engine (any law with <T> = 1): {renewal.steady_state(model).covariance[0, 0]:.10f}")


if __name__ == "__main__":
    main()
