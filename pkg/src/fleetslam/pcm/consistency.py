"""Pairwise consistency of loop-closure candidates.

Two loop closures between the same robot pair are consistent when the
transform composed around the cycle

    loop_a -> odometry(robot j) -> loop_b^-1 -> odometry(robot i)

is close to the identity.  With cumulative odometric poses C_r(k) the
cycle for candidates a, b reduces to

    cycle(a, b) = P_a^-1 (D_a D_b^-1) P_a,
    D_x = C_i(i_x) T_x C_j(j_x)^-1,   P_x = C_i(i_x)

which makes the all-pairs update a batched matrix product instead of an
O(path length) composition per pair.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from ..geometry import (
    Pose,
    batch_compose,
    batch_inverse,
    batch_rotation_angle,
    compose,
    inverse,
    rotation_angle,
)
from ..pose_graph import MultiRobotPoseGraph, RelativeMeasurement

__all__ = [
    "PcmConfig",
    "CandidateLoop",
    "OdometryChains",
    "ConsistencyGraph",
    "odometry_consistency_filter",
    "pairwise_consistent",
]


@dataclass(frozen=True)
class PcmConfig:
    """Consistency thresholds.

    With `use_covariance_scaling` the thresholds are multiplied by
    min(sqrt(#edges in the cycle), scale_cap), approximating how odometry
    noise grows with path length; the configured values then act as
    per-edge bounds.  The cap keeps very long cycles from accepting
    everything.
    """

    trans_threshold: float = 0.5  # meters
    rot_threshold: float = 0.26  # radians (~15 deg)
    use_covariance_scaling: bool = False
    scale_cap: float = 10.0

    def __post_init__(self):
        if self.trans_threshold <= 0 or self.rot_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if self.scale_cap < 1.0:
            raise ValueError("scale_cap must be >= 1")


@dataclass(frozen=True)
class CandidateLoop:
    """A loop-closure candidate with its arrival id (ids strictly
    increase with arrival order, which drives the incremental search)."""

    measurement: RelativeMeasurement
    id: int


class OdometryChains:
    """Cumulative odometric poses per robot: C_r(0) = I and
    C_r(k+1) = C_r(k) * odom_k, giving O(1) relative-pose queries."""

    def __init__(self, graph: MultiRobotPoseGraph):
        self._R: dict[int, np.ndarray] = {}
        self._t: dict[int, np.ndarray] = {}
        for r in graph.robots:
            n = graph.num_poses[r]
            R = np.empty((n, 3, 3))
            t = np.empty((n, 3))
            R[0] = np.eye(3)
            t[0] = 0.0
            for i, m in enumerate(graph.odometry_chain(r)):
                R[i + 1] = R[i] @ m.transform.rotation
                t[i + 1] = R[i] @ m.transform.translation + t[i]
            self._R[r] = R
            self._t[r] = t

    def pose(self, robot: int, index: int) -> Pose:
        return Pose(self._R[robot][index], self._t[robot][index])

    def relative(self, robot: int, i: int, j: int) -> Pose:
        """Odometric estimate of pose_i^-1 * pose_j."""
        return compose(inverse(self.pose(robot, i)), self.pose(robot, j))


def _canonical(m: RelativeMeasurement) -> tuple[int, int, int, int, Pose]:
    """Orient a loop so that (robot_from, index_from) <= (robot_to, index_to);
    returns (robot_i, index_i, robot_j, index_j, transform)."""
    a, b = m.key_from, m.key_to
    if (a.robot_id, a.index) <= (b.robot_id, b.index):
        return a.robot_id, a.index, b.robot_id, b.index, m.transform
    return b.robot_id, b.index, a.robot_id, a.index, inverse(m.transform)


def _thresholds(cfg: PcmConfig, cycle_edges: float):
    if cfg.use_covariance_scaling:
        f = min(float(np.sqrt(cycle_edges)), cfg.scale_cap)
        return cfg.rot_threshold * f, cfg.trans_threshold * f
    return cfg.rot_threshold, cfg.trans_threshold


def odometry_consistency_filter(
    loop: CandidateLoop,
    graph: MultiRobotPoseGraph,
    cfg: PcmConfig,
    chains: OdometryChains | None = None,
) -> bool:
    """Cheap single-loop vetting against the robot's own odometry.

    Intra-robot loops are compared with the odometry composed between
    their endpoints; inter-robot candidates pass through unchecked (there
    is no common frame yet).  Returns accept/reject, never raises.
    """
    m = loop.measurement
    if m.key_from.robot_id != m.key_to.robot_id:
        return True
    chains = chains or OdometryChains(graph)
    ri, ia, _, ja, T = _canonical(m)
    odom = chains.relative(ri, ia, ja)
    residual = compose(inverse(odom), T)
    rot_th, trans_th = _thresholds(cfg, abs(ja - ia) + 1)
    return (
        rotation_angle(residual.rotation) <= rot_th
        and float(np.linalg.norm(residual.translation)) <= trans_th
    )


def pairwise_consistent(
    a: CandidateLoop,
    b: CandidateLoop,
    graph: MultiRobotPoseGraph,
    cfg: PcmConfig,
    chains: OdometryChains | None = None,
) -> bool:
    """Symmetric consistency test for two candidates of one robot pair.

    The cycle is anchored at the candidate with the lower endpoint
    indices (translation residuals depend on the anchor frame, so a fixed
    rule keeps the test symmetric in its arguments).  Candidates between
    different robot pairs are never consistent: their cycle would involve
    a third trajectory.
    """
    chains = chains or OdometryChains(graph)
    ri_a, ia, rj_a, ja, Ta = _canonical(a.measurement)
    ri_b, ib, rj_b, jb, Tb = _canonical(b.measurement)
    if (ri_a, rj_a) != (ri_b, rj_b):
        return False
    if (ia, ja) > (ib, jb):
        (ia, ja, Ta), (ib, jb, Tb) = (ib, jb, Tb), (ia, ja, Ta)
    cycle = compose(
        compose(Ta, chains.relative(rj_a, ja, jb)),
        compose(inverse(Tb), chains.relative(ri_a, ib, ia)),
    )
    rot_th, trans_th = _thresholds(cfg, abs(ia - ib) + abs(ja - jb) + 2)
    return (
        rotation_angle(cycle.rotation) <= rot_th
        and float(np.linalg.norm(cycle.translation)) <= trans_th
    )


class ConsistencyGraph:
    """Undirected graph over loop candidates; edges mark pairwise
    consistency at insertion time.  Owned by a single protocol task.

    `frontier` holds the ids added since the last clique search; the
    incremental search consumes and clears it.
    """

    def __init__(self, graph: MultiRobotPoseGraph, config: PcmConfig):
        self.graph = graph
        self.config = config
        self.vertices: list[CandidateLoop] = []
        self.frontier: list[int] = []
        self.pairwise_checks = 0  # cumulative count, for complexity tests
        self._chains = OdometryChains(graph)
        self._cap = 0
        self._adjacency = np.zeros((0, 0), dtype=bool)
        # cached per-vertex quantities for the batched cycle product
        self._pair = np.zeros((0, 2), dtype=np.int64)
        self._ia = np.zeros(0, dtype=np.int64)
        self._ja = np.zeros(0, dtype=np.int64)
        self._P_R = np.zeros((0, 3, 3))
        self._P_t = np.zeros((0, 3))
        self._Dinv_R = np.zeros((0, 3, 3))
        self._Dinv_t = np.zeros((0, 3))
        self._D_R = np.zeros((0, 3, 3))
        self._D_t = np.zeros((0, 3))

    @classmethod
    def from_adjacency(cls, adjacency: np.ndarray) -> "ConsistencyGraph":
        """Benchmark/test hook: wrap a raw symmetric adjacency matrix,
        with vertex ids 0..n-1 and an empty frontier."""
        adjacency = np.asarray(adjacency, dtype=bool)
        n = adjacency.shape[0]
        if adjacency.shape != (n, n) or not np.array_equal(adjacency, adjacency.T):
            raise ValueError("adjacency must be square and symmetric")
        cg = cls.__new__(cls)
        cg.graph = None
        cg.config = None
        cg.vertices = [CandidateLoop(measurement=None, id=i) for i in range(n)]
        cg.frontier = []
        cg.pairwise_checks = 0
        cg._chains = None
        cg._cap = n
        cg._adjacency = adjacency.copy()
        np.fill_diagonal(cg._adjacency, False)
        return cg

    def __len__(self):
        return len(self.vertices)

    @property
    def adjacency(self) -> np.ndarray:
        """Symmetric bool adjacency over the current vertices (view)."""
        n = len(self.vertices)
        return self._adjacency[:n, :n]

    def ids(self) -> list[int]:
        return [v.id for v in self.vertices]

    def index_of(self, candidate_id: int) -> int:
        # ids are strictly increasing with insertion; binary search
        ids = [v.id for v in self.vertices]
        lo = bisect.bisect_left(ids, candidate_id)
        if lo == len(ids) or ids[lo] != candidate_id:
            raise KeyError(candidate_id)
        return lo

    def is_clique(self, member_ids) -> bool:
        idx = [self.index_of(i) for i in member_ids]
        adj = self.adjacency
        return all(
            adj[a, b] for k, a in enumerate(idx) for b in idx[k + 1 :]
        )

    def _grow(self, n: int):
        if n <= self._cap:
            return
        cap = max(16, self._cap)
        while cap < n:
            cap *= 2
        grown = np.zeros((cap, cap), dtype=bool)
        m = len(self.vertices)
        grown[:m, :m] = self._adjacency[:m, :m]
        self._adjacency = grown
        self._cap = cap

        def pad(a, shape_tail):
            out = np.zeros((cap, *shape_tail), dtype=a.dtype)
            out[: a.shape[0]] = a
            return out

        self._pair = pad(self._pair, (2,))
        self._ia = pad(self._ia, ())
        self._ja = pad(self._ja, ())
        self._P_R = pad(self._P_R, (3, 3))
        self._P_t = pad(self._P_t, (3,))
        self._D_R = pad(self._D_R, (3, 3))
        self._D_t = pad(self._D_t, (3,))
        self._Dinv_R = pad(self._Dinv_R, (3, 3))
        self._Dinv_t = pad(self._Dinv_t, (3,))

    def add_candidates(self, new: list[CandidateLoop]) -> "ConsistencyGraph":
        """Append candidates, computing consistency against all existing
        vertices and among the new ones (k*n + k*(k-1)/2 checks).

        New ids must exceed every existing id; duplicates raise.
        Returns self for chaining.
        """
        if self._chains is None:
            raise ValueError("graph built from_adjacency() cannot take candidates")
        last = self.vertices[-1].id if self.vertices else -1
        for cand in new:
            if cand.id <= last:
                raise ValueError(
                    f"candidate id {cand.id} does not exceed existing id {last}"
                )
            last = cand.id
        self._grow(len(self.vertices) + len(new))

        cfg = self.config
        for cand in new:
            n = len(self.vertices)
            ri, ia, rj, ja, T = _canonical(cand.measurement)
            P = self._chains.pose(ri, ia)
            Q = self._chains.pose(rj, ja)
            D = compose(compose(P, T), inverse(Q))
            Dinv = inverse(D)
            self._pair[n] = (ri, rj)
            self._ia[n], self._ja[n] = ia, ja
            self._P_R[n], self._P_t[n] = P.rotation, P.translation
            self._D_R[n], self._D_t[n] = D.rotation, D.translation
            self._Dinv_R[n], self._Dinv_t[n] = Dinv.rotation, Dinv.translation

            if n:
                same_pair = (self._pair[:n, 0] == ri) & (self._pair[:n, 1] == rj)
                # cycle = P^-1 (D_a D_b^-1) P conjugated by the anchor P of
                # the pair member with the lower (i-index, j-index); the
                # rotation angle is conjugation-invariant, the translation
                # norm is not
                M_R, M_t = batch_compose(
                    D.rotation, D.translation, self._Dinv_R[:n], self._Dinv_t[:n]
                )
                Pinv = inverse(P)
                C_R, C_t = batch_compose(Pinv.rotation, Pinv.translation, M_R, M_t)
                C_R, C_t = batch_compose(C_R, C_t, P.rotation[None], P.translation[None])
                Minv_R, Minv_t = batch_inverse(M_R, M_t)
                Pb_inv_R, Pb_inv_t = batch_inverse(self._P_R[:n], self._P_t[:n])
                B_R, B_t = batch_compose(Pb_inv_R, Pb_inv_t, Minv_R, Minv_t)
                B_R, B_t = batch_compose(B_R, B_t, self._P_R[:n], self._P_t[:n])
                anchor_new = (ia < self._ia[:n]) | (
                    (ia == self._ia[:n]) & (ja <= self._ja[:n])
                )
                ang = batch_rotation_angle(C_R)
                tnorm = np.where(
                    anchor_new,
                    np.linalg.norm(C_t, axis=1),
                    np.linalg.norm(B_t, axis=1),
                )
                edges = 2.0 + np.abs(self._ia[:n] - ia) + np.abs(self._ja[:n] - ja)
                if cfg.use_covariance_scaling:
                    f = np.minimum(np.sqrt(edges), cfg.scale_cap)
                    ok = (ang <= cfg.rot_threshold * f) & (
                        tnorm <= cfg.trans_threshold * f
                    )
                else:
                    ok = (ang <= cfg.rot_threshold) & (tnorm <= cfg.trans_threshold)
                row = same_pair & ok
                self._adjacency[n, :n] = row
                self._adjacency[:n, n] = row
                self.pairwise_checks += n

            self.vertices.append(cand)
            self.frontier.append(cand.id)
        return self
