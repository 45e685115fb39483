"""Trajectory evaluation: chordal PGO cost and absolute trajectory error."""

from __future__ import annotations

import numpy as np

from ..errors import MissingPoseError
from ..geometry import Correspondences, arun_align
from .types import MultiRobotPoseGraph, Trajectory

__all__ = ["pgo_cost", "ate"]


def pgo_cost(graph: MultiRobotPoseGraph, trajectory: Trajectory) -> float:
    """Chordal cost of a trajectory:

        sum_e kappa * ||R_to - R_from R_meas||_F^2
            + tau   * ||t_to - t_from - R_from t_meas||^2

    The Frobenius rotation residual matches the rank-restricted
    relaxation's objective, so solver cost and metric cost agree.
    """
    total = 0.0
    for m in graph.measurements:
        try:
            pa = trajectory[m.key_from]
            pb = trajectory[m.key_to]
        except KeyError as exc:
            raise MissingPoseError(f"trajectory missing {exc.args[0]}") from exc
        dR = pb.rotation - pa.rotation @ m.transform.rotation
        dt = pb.translation - pa.translation - pa.rotation @ m.transform.translation
        total += m.kappa * float(np.sum(dR * dR)) + m.tau * float(np.dot(dt, dt))
    return total


def ate(estimate: Trajectory, truth: Trajectory) -> float:
    """Absolute trajectory error in meters.

    Aligns the estimate to the truth with a single rigid transform fit
    over pose positions, then returns the RMSE of the position residuals.
    """
    if set(estimate.keys()) != set(truth.keys()):
        missing = set(truth) ^ set(estimate)
        raise MissingPoseError(f"key sets differ, e.g. {sorted(missing)[:3]}")
    keys = sorted(estimate.keys())
    est = np.array([estimate[k].translation for k in keys])
    ref = np.array([truth[k].translation for k in keys])
    T = arun_align(Correspondences(est, ref))
    residual = T.apply(est) - ref
    return float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
