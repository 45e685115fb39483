"""Deformation-graph construction and the local mesh optimization solve.

The deformation graph has one rigid transform per simplified-mesh node
and one pose per keyframe.  The objective is

    sum_i  || X_i [-] Xbar_i ||^2 * w_anchor                (anchor)
  + sum_(k,l) || R_k (g_l - g_k) + t_k - t_l ||^2 * w_rig   (mesh edges,
                                                             both directions)
  + sum_(i,l) || R_i gtilde_il + t_i - t_l ||^2 * w_rig     (keyframe edges)

minimized by damped Gauss-Newton with right multiplicative rotation
perturbations.  At the rest configuration with anchors equal to the
initial keyframe poses the objective is zero, and the whole problem is
equivariant under a global rigid transform of the anchors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from ..geometry import Pose, boxminus, inverse, so3_exp, so3_hat, so3_log
from ..pose_graph import PoseKey
from .trimesh import TriMesh

__all__ = [
    "LmoConfig",
    "DeformationGraph",
    "DeformationResult",
    "build_deformation_graph",
    "lmo_optimize",
    "lmo_objective",
    "lmo_gradient",
]


@dataclass(frozen=True)
class LmoConfig:
    anchor_weight: float = 100.0  # inverse variance of the anchor term
    rigidity_weight: float = 1.0  # inverse variance of both rigidity terms
    gn_max_iterations: int = 50
    gn_tolerance: float = 1e-10  # relative objective decrease
    interp_k: int = 4  # nearest nodes used for vertex interpolation

    def __post_init__(self):
        if self.anchor_weight <= 0 or self.rigidity_weight <= 0:
            raise ValueError("weights must be positive")
        if self.interp_k < 1:
            raise ValueError("interp_k must be >= 1")


@dataclass
class DeformationGraph:
    """Mesh nodes (rest positions), keyframe nodes (initial poses), mesh
    rigidity edges and keyframe observation edges with the observed rest
    position expressed in the keyframe's initial frame."""

    node_positions: np.ndarray  # (m, 3) rest positions g_k
    keyframe_keys: List[PoseKey]
    keyframe_poses: List[Pose]  # initial keyframe poses
    mesh_edges: np.ndarray  # (E, 2) unique undirected pairs, k < l
    kf_edge_frame: np.ndarray  # (K,) keyframe index per edge
    kf_edge_node: np.ndarray  # (K,) mesh node index per edge
    kf_edge_local: np.ndarray  # (K, 3) rest node position in keyframe frame

    _kdtree: object = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.node_positions)

    @property
    def n_keyframes(self) -> int:
        return len(self.keyframe_keys)

    def kdtree(self):
        if self._kdtree is None:
            from scipy.spatial import cKDTree

            self._kdtree = cKDTree(self.node_positions)
        return self._kdtree


@dataclass
class DeformationResult:
    mesh_node_transforms: List[Pose]
    keyframe_poses: List[Pose]
    objective: float


def build_deformation_graph(
    simplified: TriMesh,
    keyframes: Sequence[tuple[PoseKey, Pose]],
    observations: Dict[PoseKey, Sequence[int]],
) -> DeformationGraph:
    """Assemble the graph from a simplified mesh and keyframe observations.

    Mesh edges come from faces (pairs of vertices sharing a face,
    deduplicated).  Keyframe edges connect each keyframe to the mesh
    nodes it observes, storing the node's rest position in the keyframe's
    initial frame.  A keyframe observing nothing is legal but only
    anchored, which is worth a warning.
    """
    faces = simplified.faces
    if len(faces):
        pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
        pairs = np.sort(pairs, axis=1)
        mesh_edges = np.unique(pairs, axis=0)
    else:
        mesh_edges = np.zeros((0, 2), dtype=np.int64)

    kf_frame, kf_node, kf_local = [], [], []
    for i, (key, pose) in enumerate(keyframes):
        observed = list(observations.get(key, ()))
        if not observed:
            warnings.warn(
                f"keyframe {key} observes no mesh nodes; it is only anchored",
                RuntimeWarning,
            )
            continue
        inv = inverse(pose)
        for node in observed:
            if not 0 <= node < simplified.n_vertices:
                raise IndexError(f"observation references node {node} out of range")
            kf_frame.append(i)
            kf_node.append(node)
            kf_local.append(inv.apply(simplified.vertices[node]))
    return DeformationGraph(
        node_positions=simplified.vertices.copy(),
        keyframe_keys=[k for k, _ in keyframes],
        keyframe_poses=[p for _, p in keyframes],
        mesh_edges=mesh_edges,
        kf_edge_frame=np.array(kf_frame, dtype=np.int64).reshape(-1),
        kf_edge_node=np.array(kf_node, dtype=np.int64).reshape(-1),
        kf_edge_local=np.array(kf_local, dtype=float).reshape(-1, 3),
    )


class _LmoProblem:
    """State layout: mesh nodes first, then keyframes, 6 dof each
    (rotation perturbation, translation)."""

    def __init__(self, dg: DeformationGraph, anchors: Dict[PoseKey, Pose], cfg: LmoConfig):
        missing = [k for k in dg.keyframe_keys if k not in anchors]
        if missing:
            raise KeyError(f"anchors missing keyframe {missing[0]}")
        self.dg = dg
        self.cfg = cfg
        self.anchor_R = np.stack(
            [anchors[k].rotation for k in dg.keyframe_keys]
        ) if dg.n_keyframes else np.zeros((0, 3, 3))
        self.anchor_t = np.stack(
            [anchors[k].translation for k in dg.keyframe_keys]
        ) if dg.n_keyframes else np.zeros((0, 3))
        # directed mesh edges: both (k, l) and (l, k)
        e = dg.mesh_edges
        self.edges = np.concatenate([e, e[:, ::-1]]) if len(e) else e.reshape(0, 2)
        self.m = dg.n_nodes
        self.n_kf = dg.n_keyframes
        self.sqrt_wa = np.sqrt(cfg.anchor_weight)
        self.sqrt_wr = np.sqrt(cfg.rigidity_weight)

    # state: (R_nodes (m,3,3), t_nodes (m,3), R_kf (n,3,3), t_kf (n,3))

    def rest_state(self):
        m, n = self.m, self.n_kf
        Rn = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
        tn = self.dg.node_positions.copy()
        Rk = (
            np.stack([p.rotation for p in self.dg.keyframe_poses])
            if n
            else np.zeros((0, 3, 3))
        )
        tk = (
            np.stack([p.translation for p in self.dg.keyframe_poses])
            if n
            else np.zeros((0, 3))
        )
        return Rn, tn, Rk, tk

    def residuals(self, Rn, tn, Rk, tk) -> np.ndarray:
        out = []
        # anchors: decoupled boxminus against the optimized poses
        for i in range(self.n_kf):
            rel = boxminus(
                Pose(Rk[i], tk[i]), Pose(self.anchor_R[i], self.anchor_t[i])
            )
            out.append(self.sqrt_wa * rel.rotation_part)
            out.append(self.sqrt_wa * rel.translation_part)
        g = self.dg.node_positions
        if len(self.edges):
            k, l = self.edges[:, 0], self.edges[:, 1]
            r = (
                np.einsum("eij,ej->ei", Rn[k], g[l] - g[k]) + tn[k] - tn[l]
            ) * self.sqrt_wr
            out.append(r.ravel())
        if len(self.dg.kf_edge_frame):
            i = self.dg.kf_edge_frame
            l = self.dg.kf_edge_node
            r = (
                np.einsum("eij,ej->ei", Rk[i], self.dg.kf_edge_local) + tk[i] - tn[l]
            ) * self.sqrt_wr
            out.append(r.ravel())
        if not out:
            return np.zeros(0)
        return np.concatenate(out)

    def objective(self, Rn, tn, Rk, tk) -> float:
        r = self.residuals(Rn, tn, Rk, tk)
        return float(r @ r)

    def _var_node(self, k):
        return 6 * k

    def _var_kf(self, i):
        return 6 * (self.m + i)

    def jacobian(self, Rn, tn, Rk, tk):
        rows, cols, vals = [], [], []
        r_off = 0

        def add_block(row0, col0, M):
            for a in range(M.shape[0]):
                for b in range(M.shape[1]):
                    v = M[a, b]
                    if v != 0.0:
                        rows.append(row0 + a)
                        cols.append(col0 + b)
                        vals.append(v)

        # anchor terms
        for i in range(self.n_kf):
            var = self._var_kf(i)
            Rbar = self.anchor_R[i]
            phi = so3_log(Rbar.T @ Rk[i])
            # d log(Rbar^T R exp(w^)) / dw = Jr_inv(phi)
            add_block(r_off, var, self.sqrt_wa * _jr_inv(phi))
            # translation part Rbar^T (t - tbar): d/dt = Rbar^T
            add_block(r_off + 3, var + 3, self.sqrt_wa * Rbar.T)
            r_off += 6
        # mesh rigidity: r = R_k d + t_k - t_l, d = g_l - g_k
        g = self.dg.node_positions
        for k, l in self.edges:
            var_k, var_l = self._var_node(k), self._var_node(l)
            d = g[l] - g[k]
            add_block(r_off, var_k, -self.sqrt_wr * (Rn[k] @ so3_hat(d)))
            add_block(r_off, var_k + 3, self.sqrt_wr * np.eye(3))
            add_block(r_off, var_l + 3, -self.sqrt_wr * np.eye(3))
            r_off += 3
        # keyframe rigidity: r = R_i gt + t_i - t_l
        for e in range(len(self.dg.kf_edge_frame)):
            i = int(self.dg.kf_edge_frame[e])
            l = int(self.dg.kf_edge_node[e])
            gt = self.dg.kf_edge_local[e]
            var_i, var_l = self._var_kf(i), self._var_node(l)
            add_block(r_off, var_i, -self.sqrt_wr * (Rk[i] @ so3_hat(gt)))
            add_block(r_off, var_i + 3, self.sqrt_wr * np.eye(3))
            add_block(r_off, var_l + 3, -self.sqrt_wr * np.eye(3))
            r_off += 3
        dim = 6 * (self.m + self.n_kf)
        return scipy.sparse.coo_matrix(
            (vals, (rows, cols)), shape=(r_off, dim)
        ).tocsr()

    def retract(self, Rn, tn, Rk, tk, step):
        step = step.reshape(-1, 6)
        Rn2 = np.stack(
            [Rn[k] @ so3_exp(step[k, :3]) for k in range(self.m)]
        ) if self.m else Rn
        tn2 = tn + step[: self.m, 3:]
        Rk2 = np.stack(
            [Rk[i] @ so3_exp(step[self.m + i, :3]) for i in range(self.n_kf)]
        ) if self.n_kf else Rk
        tk2 = tk + step[self.m :, 3:]
        return Rn2, tn2, Rk2, tk2


def _jr_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse of the right Jacobian of the SO(3) exponential at phi."""
    theta = float(np.linalg.norm(phi))
    K = so3_hat(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    return (
        np.eye(3)
        + 0.5 * K
        + (1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta)))
        * (K @ K)
    )


def lmo_objective(
    dg: DeformationGraph, anchors: Dict[PoseKey, Pose], cfg: LmoConfig, result: DeformationResult
) -> float:
    """Objective value at an arbitrary configuration (test utility)."""
    problem = _LmoProblem(dg, anchors, cfg)
    Rn = np.stack([p.rotation for p in result.mesh_node_transforms])
    tn = np.stack([p.translation for p in result.mesh_node_transforms])
    Rk = (
        np.stack([p.rotation for p in result.keyframe_poses])
        if result.keyframe_poses
        else np.zeros((0, 3, 3))
    )
    tk = (
        np.stack([p.translation for p in result.keyframe_poses])
        if result.keyframe_poses
        else np.zeros((0, 3))
    )
    return problem.objective(Rn, tn, Rk, tk)


def lmo_gradient(
    dg: DeformationGraph, anchors: Dict[PoseKey, Pose], cfg: LmoConfig, result: DeformationResult
) -> np.ndarray:
    """Gradient of the objective wrt the stacked perturbation parameters
    at the given configuration (2 J^T r); used by the gradient checks."""
    problem = _LmoProblem(dg, anchors, cfg)
    Rn = np.stack([p.rotation for p in result.mesh_node_transforms])
    tn = np.stack([p.translation for p in result.mesh_node_transforms])
    Rk = (
        np.stack([p.rotation for p in result.keyframe_poses])
        if result.keyframe_poses
        else np.zeros((0, 3, 3))
    )
    tk = (
        np.stack([p.translation for p in result.keyframe_poses])
        if result.keyframe_poses
        else np.zeros((0, 3))
    )
    J = problem.jacobian(Rn, tn, Rk, tk)
    r = problem.residuals(Rn, tn, Rk, tk)
    return 2.0 * (J.T @ r)


def lmo_optimize(
    dg: DeformationGraph, anchors: Dict[PoseKey, Pose], cfg: LmoConfig
) -> DeformationResult:
    """Anchor the keyframes to the corrected poses while keeping the mesh
    locally rigid.

    Damped Gauss-Newton from the rest configuration; the damping update
    (x10 on objective increase, /10 on decrease) makes the objective
    non-increasing across iterations.
    """
    problem = _LmoProblem(dg, anchors, cfg)
    Rn, tn, Rk, tk = problem.rest_state()
    obj = problem.objective(Rn, tn, Rk, tk)
    if not np.isfinite(obj):
        raise ValueError("non-finite deformation objective")
    lam = 1e-4
    for _ in range(cfg.gn_max_iterations):
        J = problem.jacobian(Rn, tn, Rk, tk)
        r = problem.residuals(Rn, tn, Rk, tk)
        g = J.T @ r
        H = (J.T @ J).tocsc()
        accepted = False
        for _ in range(40):
            damped = H + scipy.sparse.identity(H.shape[0], format="csc") * lam
            step = scipy.sparse.linalg.spsolve(damped, -g)
            cand = problem.retract(Rn, tn, Rk, tk, step)
            new_obj = problem.objective(*cand)
            if np.isfinite(new_obj) and new_obj <= obj:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        lam = max(lam * 0.1, 1e-12)
        Rn, tn, Rk, tk = cand
        decrease = obj - new_obj
        obj = new_obj
        if decrease <= cfg.gn_tolerance * max(obj, 1e-15):
            break
    return DeformationResult(
        mesh_node_transforms=[Pose(Rn[k], tn[k]) for k in range(problem.m)],
        keyframe_poses=[Pose(Rk[i], tk[i]) for i in range(problem.n_kf)],
        objective=obj,
    )
