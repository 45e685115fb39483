"""Rank-restricted relaxation of pose-graph optimization.

Rotations R in SO(3) are replaced by Y in St(3, r): r x 3 matrices with
orthonormal columns (default rank 5), translations by r-vectors.  The
lifted chordal cost

    sum_e kappa ||Y_to - Y_from R_meas||_F^2
        + tau   ||p_to - p_from - Y_from t_meas||^2

coincides with the chordal PGO cost at rank 3, lower-bounds it at higher
rank, and is what the distributed solver descends on.  Solutions are
rounded back to SE(3) via the dominant rank-3 subspace of the stacked
variables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict

import numpy as np

from ..errors import DisconnectedGraphError
from ..geometry import Pose, compose, inverse, project_to_so3
from ..pose_graph import (
    MeasurementKind,
    MultiRobotPoseGraph,
    PoseKey,
    Trajectory,
)

__all__ = [
    "LiftedPose",
    "LiftedProblem",
    "chordal_init",
    "propagated_init",
    "align_robot_frames",
    "round_solution",
    "lift_trajectory",
]

_STIEFEL_TOL = 1e-8


@dataclass(frozen=True)
class LiftedPose:
    """One pose block of the relaxation: Y in St(3, r), p in R^r."""

    Y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if Y.ndim != 2 or Y.shape[1] != 3 or Y.shape[0] < 3:
            raise ValueError(f"Y must be (r, 3) with r >= 3, got {Y.shape}")
        if p.shape != (Y.shape[0],):
            raise ValueError(f"p must be ({Y.shape[0]},), got {p.shape}")
        err = np.linalg.norm(Y.T @ Y - np.eye(3))
        if err > _STIEFEL_TOL:
            raise ValueError(f"Y columns not orthonormal (residual {err:.2e})")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "p", p)

    @property
    def rank(self) -> int:
        return self.Y.shape[0]


def project_stiefel(Y: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto St(3, r) via the polar decomposition."""
    U, _, Vt = np.linalg.svd(Y, full_matrices=False)
    return U @ Vt


def lift_pose(pose: Pose, rank: int) -> LiftedPose:
    """Embed an SE(3) pose: rotation into the top rows of Y, zero padding."""
    Y = np.zeros((rank, 3))
    Y[:3, :] = pose.rotation
    p = np.zeros(rank)
    p[:3] = pose.translation
    return LiftedPose(Y, p)


def lift_trajectory(trajectory: Trajectory, rank: int) -> Dict[PoseKey, LiftedPose]:
    return {k: lift_pose(p, rank) for k, p in trajectory.items()}


class LiftedProblem:
    """Vectorized edge arrays for one graph at a fixed rank.

    State is held as stacked arrays Y (n, r, 3) and p (n, r); the helpers
    convert to and from {PoseKey: LiftedPose} dicts at the boundaries.
    """

    def __init__(self, graph: MultiRobotPoseGraph, rank: int):
        if rank < 3:
            raise ValueError("rank must be >= 3")
        self.graph = graph
        self.rank = rank
        self.keys = sorted(graph.keys())
        self.key_index = {k: i for i, k in enumerate(self.keys)}
        self.n = len(self.keys)

        E = len(graph.measurements)
        self.e_from = np.empty(E, dtype=np.int64)
        self.e_to = np.empty(E, dtype=np.int64)
        self.R_meas = np.empty((E, 3, 3))
        self.t_meas = np.empty((E, 3))
        self.kappa = np.empty(E)
        self.tau = np.empty(E)
        for e, m in enumerate(graph.measurements):
            self.e_from[e] = self.key_index[m.key_from]
            self.e_to[e] = self.key_index[m.key_to]
            self.R_meas[e] = m.transform.rotation
            self.t_meas[e] = m.transform.translation
            self.kappa[e] = m.kappa
            self.tau[e] = m.tau

        self.robot_of = np.array([k.robot_id for k in self.keys], dtype=np.int64)
        # edges incident to each robot's block (either endpoint)
        self.block_edges = {
            r: np.flatnonzero(
                (self.robot_of[self.e_from] == r) | (self.robot_of[self.e_to] == r)
            )
            for r in graph.robots
        }
        self.block_poses = {
            r: np.flatnonzero(self.robot_of == r) for r in graph.robots
        }

    # -- state conversion ---------------------------------------------------

    def pack(self, lifted: Dict[PoseKey, LiftedPose]):
        Y = np.empty((self.n, self.rank, 3))
        p = np.empty((self.n, self.rank))
        for k, i in self.key_index.items():
            Y[i] = lifted[k].Y
            p[i] = lifted[k].p
        return Y, p

    def unpack(self, Y: np.ndarray, p: np.ndarray) -> Dict[PoseKey, LiftedPose]:
        return {k: LiftedPose(Y[i], p[i]) for k, i in self.key_index.items()}

    # -- cost and gradient ----------------------------------------------------

    def _residuals(self, Y, p, edges=None):
        ef = self.e_from if edges is None else self.e_from[edges]
        et = self.e_to if edges is None else self.e_to[edges]
        Rm = self.R_meas if edges is None else self.R_meas[edges]
        tm = self.t_meas if edges is None else self.t_meas[edges]
        YaR = np.einsum("erc,ecd->erd", Y[ef], Rm)
        rot = Y[et] - YaR
        trans = p[et] - p[ef] - np.einsum("erc,ec->er", Y[ef], tm)
        return rot, trans

    def cost(self, Y, p, edges=None) -> float:
        kap = self.kappa if edges is None else self.kappa[edges]
        tau = self.tau if edges is None else self.tau[edges]
        rot, trans = self._residuals(Y, p, edges)
        return float(
            np.sum(kap * np.sum(rot**2, axis=(1, 2)))
            + np.sum(tau * np.sum(trans**2, axis=1))
        )

    def euclidean_gradient(self, Y, p, edges=None):
        """Ambient-space gradient of the lifted cost wrt (Y, p)."""
        ef = self.e_from if edges is None else self.e_from[edges]
        et = self.e_to if edges is None else self.e_to[edges]
        Rm = self.R_meas if edges is None else self.R_meas[edges]
        tm = self.t_meas if edges is None else self.t_meas[edges]
        kap = self.kappa if edges is None else self.kappa[edges]
        tau = self.tau if edges is None else self.tau[edges]

        rot, trans = self._residuals(Y, p, edges)
        gY = np.zeros_like(Y)
        gp = np.zeros_like(p)
        w_rot = 2.0 * kap[:, None, None] * rot
        w_tr = 2.0 * tau[:, None] * trans
        np.add.at(gY, et, w_rot)
        np.add.at(gY, ef, -np.einsum("erd,ecd->erc", w_rot, Rm))
        np.add.at(gY, ef, -np.einsum("er,ec->erc", w_tr, tm))
        np.add.at(gp, et, w_tr)
        np.add.at(gp, ef, -w_tr)
        return gY, gp

    @staticmethod
    def tangent_project(Y, gY):
        """Project an ambient gradient onto the Stiefel tangent space at Y:
        g - Y sym(Y^T g)."""
        YtG = np.einsum("nrc,nrd->ncd", Y, gY)
        sym = 0.5 * (YtG + np.swapaxes(YtG, 1, 2))
        return gY - np.einsum("nrc,ncd->nrd", Y, sym)


def align_robot_frames(
    graph: MultiRobotPoseGraph, local: Dict[int, list]
) -> Dict[int, Pose]:
    """Robot-frame transforms G_r that align per-robot trajectories into
    robot 0's frame, chaining the first inter-robot loop per robot pair
    along a BFS tree.  Raises when a robot is unreachable."""
    pair_loop: Dict[tuple[int, int], object] = {}
    for m in graph.measurements:
        if m.kind is MeasurementKind.INTER_LOOP:
            pair = tuple(sorted((m.key_from.robot_id, m.key_to.robot_id)))
            pair_loop.setdefault(pair, m)

    root = graph.robots[0]
    frame: Dict[int, Pose] = {root: Pose.identity()}
    queue = [root]
    while queue:
        r = queue.pop(0)
        for (a, b), m in pair_loop.items():
            if r not in (a, b):
                continue
            other = b if r == a else a
            if other in frame:
                continue
            # frame_i * local_i(p) * T = frame_j * local_j(q)
            ki, kj, T = m.key_from, m.key_to, m.transform
            if ki.robot_id == other:
                ki, kj, T = kj, ki, inverse(T)
            world_kj = compose(compose(frame[r], local[r][ki.index]), T)
            frame[other] = compose(world_kj, inverse(local[other][kj.index]))
            queue.append(other)

    missing = [r for r in graph.robots if r not in frame]
    if missing:
        raise DisconnectedGraphError(
            f"robots {missing} unreachable from robot {root} via inter-robot loops"
        )
    return frame


def propagated_init(graph: MultiRobotPoseGraph) -> Trajectory:
    """SE(3) initial guess: integrate each robot's odometry, then align
    robot frames through one inter-robot loop per robot pair."""
    local: Dict[int, list[Pose]] = {}
    for r in graph.robots:
        poses = [Pose.identity()]
        for m in graph.odometry_chain(r):
            poses.append(compose(poses[-1], m.transform))
        local[r] = poses
    frame = align_robot_frames(graph, local)
    return {
        PoseKey(r, i): compose(frame[r], local[r][i])
        for r in graph.robots
        for i in range(graph.num_poses[r])
    }


def chordal_init(
    graph: MultiRobotPoseGraph, rank: int
) -> Dict[PoseKey, LiftedPose]:
    """Initial lifted estimate: odometry propagation with inter-robot
    frame alignment, embedded at the requested rank."""
    return {k: lift_pose(p, rank) for k, p in propagated_init(graph).items()}


def round_solution(lifted: Dict[PoseKey, LiftedPose]) -> Trajectory:
    """Project a lifted estimate back to SE(3).

    Takes the dominant rank-3 subspace of the horizontally stacked Y
    blocks, maps each block to the nearest rotation, applies the same
    projection to translations, and fixes the gauge by anchoring the
    first pose of the lowest robot id at the identity.  Near rank
    collapse a warning is emitted and the projection returned anyway.
    """
    keys = sorted(lifted.keys())
    Ys = [lifted[k].Y for k in keys]
    ps = [lifted[k].p for k in keys]
    stacked = np.concatenate(Ys, axis=1)  # (r, 3n)
    U, S, _ = np.linalg.svd(stacked, full_matrices=False)
    if S[2] <= 1e-9 * max(S[0], 1.0):
        warnings.warn(
            "rank collapse in rounding: third singular value near zero",
            RuntimeWarning,
        )
    U3 = U[:, :3]
    raw = [U3.T @ Y for Y in Ys]
    # choose the sign of the subspace so most blocks are proper rotations
    n_neg = sum(1 for M in raw if np.linalg.det(M) < 0)
    if 2 * n_neg > len(raw):
        U3 = U3 * np.array([1.0, 1.0, -1.0])
        raw = [M * np.array([[1.0], [1.0], [-1.0]]) for M in raw]
    trajectory: Trajectory = {}
    for k, M, pvec in zip(keys, raw, ps):
        trajectory[k] = Pose(project_to_so3(M), U3.T @ pvec)
    anchor = inverse(trajectory[keys[0]])
    return {k: compose(anchor, pose) for k, pose in trajectory.items()}
