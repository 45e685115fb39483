"""Centralized baselines: full Gauss-Newton on the chordal cost (the
in-repo reference the distributed solver is compared against) and the
single-loop frame-alignment baseline."""

from __future__ import annotations

import warnings
from typing import Dict

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from ..geometry import Pose, compose, inverse, so3_exp, so3_hat
from ..pose_graph import (
    MeasurementKind,
    MultiRobotPoseGraph,
    PoseKey,
    RelativeMeasurement,
    Trajectory,
)
from .lifted import align_robot_frames, propagated_init

__all__ = ["centralized_solve", "local_pgo_baseline"]

_HAT = np.stack([so3_hat(e) for e in np.eye(3)])  # (3, 3, 3) basis


class _GaussNewton:
    """Sparse damped Gauss-Newton on the chordal PGO cost with right
    multiplicative rotation perturbations (R <- R exp(w^)) and additive
    translation updates.  The first pose is anchored to fix the gauge."""

    def __init__(self, graph: MultiRobotPoseGraph):
        self.keys = sorted(graph.keys())
        self.index = {k: i for i, k in enumerate(self.keys)}
        self.n = len(self.keys)
        ms = graph.measurements
        E = len(ms)
        self.ef = np.array([self.index[m.key_from] for m in ms])
        self.et = np.array([self.index[m.key_to] for m in ms])
        self.Rm = np.stack([m.transform.rotation for m in ms])
        self.tm = np.stack([m.transform.translation for m in ms])
        self.sk = np.sqrt(np.array([m.kappa for m in ms]))
        self.st = np.sqrt(np.array([m.tau for m in ms]))
        self.E = E
        self._index_pattern()

    def _index_pattern(self):
        """Constant sparsity pattern: rows 12 per edge (9 rotation, 3
        translation), cols 6 per pose (3 rotation, 3 translation)."""
        E = self.E
        rot_rows = (np.arange(E)[:, None, None] * 12 + np.arange(9)[None, :, None])
        rot_rows = np.broadcast_to(rot_rows, (E, 9, 3))
        tr_rows = (np.arange(E)[:, None, None] * 12 + 9 + np.arange(3)[None, :, None])
        tr_rows = np.broadcast_to(tr_rows, (E, 3, 3))

        def cols(pose_idx, offset):
            c = pose_idx[:, None, None] * 6 + offset + np.arange(3)[None, None, :]
            return c

        self.rows = np.concatenate(
            [
                rot_rows.ravel(),  # d r_rot / d w_from
                rot_rows.ravel(),  # d r_rot / d w_to
                tr_rows.ravel(),  # d r_t / d w_from
                tr_rows.ravel(),  # d r_t / d t_from
                tr_rows.ravel(),  # d r_t / d t_to
            ]
        )
        self.cols = np.concatenate(
            [
                np.broadcast_to(cols(self.ef, 0), (self.E, 9, 3)).ravel(),
                np.broadcast_to(cols(self.et, 0), (self.E, 9, 3)).ravel(),
                np.broadcast_to(cols(self.ef, 0), (self.E, 3, 3)).ravel(),
                np.broadcast_to(cols(self.ef, 3), (self.E, 3, 3)).ravel(),
                np.broadcast_to(cols(self.et, 3), (self.E, 3, 3)).ravel(),
            ]
        )

    def residual(self, R, t):
        Ra, Rb = R[self.ef], R[self.et]
        rrot = (Rb - np.einsum("eij,ejk->eik", Ra, self.Rm)) * self.sk[:, None, None]
        rtr = (
            t[self.et] - t[self.ef] - np.einsum("eij,ej->ei", Ra, self.tm)
        ) * self.st[:, None]
        r = np.concatenate([rrot.reshape(self.E, 9), rtr], axis=1)
        return r.ravel()

    def jacobian_values(self, R, t):
        Ra, Rb = R[self.ef], R[self.et]
        # rotation residual wrt w_from: -(R_a E_k Rm), wrt w_to: R_b E_k
        AatE = np.einsum("eij,kjl->eikl", Ra, _HAT)  # (E, 3, k, 3)
        dfrom = -np.einsum("eikl,elm->eikm", AatE, self.Rm)
        dto = np.einsum("eij,kjl->eikl", Rb, _HAT)
        # reorder to (E, 9 rows, 3 cols): rows are vec(3x3) row-major
        dfrom = dfrom.transpose(0, 1, 3, 2).reshape(self.E, 9, 3)
        dto = dto.transpose(0, 1, 3, 2).reshape(self.E, 9, 3)
        dfrom *= self.sk[:, None, None]
        dto *= self.sk[:, None, None]
        # translation residual wrt w_from: R_a [t_m]x ; wrt t: -/+ I
        tm_hat = np.zeros((self.E, 3, 3))
        tm_hat[:, 0, 1] = -self.tm[:, 2]
        tm_hat[:, 0, 2] = self.tm[:, 1]
        tm_hat[:, 1, 0] = self.tm[:, 2]
        tm_hat[:, 1, 2] = -self.tm[:, 0]
        tm_hat[:, 2, 0] = -self.tm[:, 1]
        tm_hat[:, 2, 1] = self.tm[:, 0]
        dw = np.einsum("eij,ejk->eik", Ra, tm_hat) * self.st[:, None, None]
        eye = np.broadcast_to(np.eye(3), (self.E, 3, 3))
        dtf = -eye * self.st[:, None, None]
        dtt = eye * self.st[:, None, None]
        return np.concatenate(
            [dfrom.ravel(), dto.ravel(), dw.ravel(), dtf.ravel(), dtt.ravel()]
        )

    def cost(self, R, t) -> float:
        r = self.residual(R, t)
        return float(r @ r)

    def solve(self, init: Trajectory, max_iterations=100, tolerance=1e-9):
        R = np.stack([init[k].rotation for k in self.keys])
        t = np.stack([init[k].translation for k in self.keys])
        cost = self.cost(R, t)
        lam = 1e-4
        free = np.ones(self.n * 6, dtype=bool)
        free[:6] = False  # anchor the first pose
        converged = False
        for _ in range(max_iterations):
            vals = self.jacobian_values(R, t)
            J = scipy.sparse.coo_matrix(
                (vals, (self.rows, self.cols)), shape=(12 * self.E, 6 * self.n)
            ).tocsr()[:, free]
            r = self.residual(R, t)
            g = J.T @ r
            H = (J.T @ J).tocsc()
            accepted = False
            for _ in range(40):
                damped = H + scipy.sparse.identity(H.shape[0], format="csc") * lam
                try:
                    delta = scipy.sparse.linalg.spsolve(damped, -g)
                except RuntimeError:  # singular factorization
                    lam *= 10.0
                    continue
                full = np.zeros(self.n * 6)
                full[free] = delta
                step = full.reshape(self.n, 6)
                R_try = np.stack(
                    [R[i] @ so3_exp(step[i, :3]) for i in range(self.n)]
                )
                t_try = t + step[:, 3:]
                new_cost = self.cost(R_try, t_try)
                if new_cost <= cost:
                    accepted = True
                    break
                lam *= 10.0
            if not accepted:
                break
            lam = max(lam * 0.1, 1e-12)
            R, t = R_try, t_try
            decrease = cost - new_cost
            cost = new_cost
            if decrease <= tolerance * max(cost, 1e-12):
                converged = True
                break
        if not converged:
            warnings.warn(
                "Gauss-Newton stopped before reaching the relative-decrease "
                "tolerance; returning best iterate",
                RuntimeWarning,
            )
        traj = {k: Pose(R[i], t[i]) for i, k in enumerate(self.keys)}
        return traj, cost


def centralized_solve(
    graph: MultiRobotPoseGraph, max_iterations: int = 100, tolerance: float = 1e-9
) -> tuple[Trajectory, float]:
    """Chordal-cost Gauss-Newton over the whole graph from the propagated
    initial guess.  Deterministic; returns (trajectory, final cost)."""
    gn = _GaussNewton(graph)
    return gn.solve(propagated_init(graph), max_iterations, tolerance)


def _robot_subgraph(graph: MultiRobotPoseGraph, robot_id: int) -> MultiRobotPoseGraph:
    ms = [
        m
        for m in graph.measurements
        if m.key_from.robot_id == robot_id and m.key_to.robot_id == robot_id
    ]
    return MultiRobotPoseGraph(ms, planar=graph.planar)


def local_pgo_baseline(graph: MultiRobotPoseGraph) -> Trajectory:
    """Per-robot optimization over each robot's own measurements only,
    then frame alignment chaining a single inter-robot loop per robot
    pair.  The baseline the distributed solver is expected to beat."""
    local: Dict[int, list[Pose]] = {}
    for r in graph.robots:
        sub = _robot_subgraph(graph, r)
        traj, _ = centralized_solve(sub)
        local[r] = [traj[PoseKey(r, i)] for i in range(graph.num_poses[r])]
    frame = align_robot_frames(graph, local)
    return {
        PoseKey(r, i): compose(frame[r], local[r][i])
        for r in graph.robots
        for i in range(graph.num_poses[r])
    }
