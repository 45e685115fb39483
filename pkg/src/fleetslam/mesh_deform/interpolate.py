"""Full-mesh vertex interpolation from deformation-graph node transforms.

Each vertex is a weighted affine combination of its k nearest nodes:

    v~ = sum_j w_j(v) [ R_j (v - g_j) + t_j ]

with raw weights (1 - ||v - g_j|| / d_max)^2, d_max the distance to the
(k+1)-th nearest node, normalized to sum to one (k = 4 by default).
"""

from __future__ import annotations

import numpy as np

from .deformation import DeformationGraph, DeformationResult, LmoConfig
from .trimesh import TriMesh

__all__ = ["interpolation_weights", "interpolate_vertices"]


def _batch_weights(points: np.ndarray, dg: DeformationGraph, k: int):
    """KNN indices and normalized weights for a batch of query points."""
    if dg.n_nodes < k + 1:
        raise ValueError(f"need at least {k + 1} mesh nodes, have {dg.n_nodes}")
    dist, idx = dg.kdtree().query(points, k=k + 1)
    d_max = dist[:, k]
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (1.0 - dist[:, :k] / d_max[:, None]) ** 2
    degenerate = ~np.isfinite(raw).all(axis=1) | (raw.sum(axis=1) <= 1e-300)
    raw[degenerate] = 1.0  # all candidates at d_max (or coincident): uniform
    weights = raw / raw.sum(axis=1, keepdims=True)
    return idx[:, :k], weights


def interpolation_weights(
    v: np.ndarray, dg: DeformationGraph, k: int = 4
) -> list[tuple[int, float]]:
    """Weights of the k nearest mesh nodes for one query point."""
    idx, w = _batch_weights(np.asarray(v, dtype=float).reshape(1, 3), dg, k)
    return [(int(i), float(x)) for i, x in zip(idx[0], w[0])]


def interpolate_vertices(
    full: TriMesh,
    dg: DeformationGraph,
    result: DeformationResult,
    cfg: LmoConfig,
) -> TriMesh:
    """Deform every vertex of the full-resolution mesh; faces and
    semantic labels are copied through untouched."""
    if len(result.mesh_node_transforms) != dg.n_nodes:
        raise ValueError("result does not match the deformation graph")
    if full.n_vertices == 0:
        return full.copy()
    idx, w = _batch_weights(full.vertices, dg, cfg.interp_k)
    R = np.stack([p.rotation for p in result.mesh_node_transforms])
    t = np.stack([p.translation for p in result.mesh_node_transforms])
    g = dg.node_positions
    local = full.vertices[:, None, :] - g[idx]  # (n, k, 3)
    moved = np.einsum("nkij,nkj->nki", R[idx], local) + t[idx]
    new_vertices = np.einsum("nk,nki->ni", w, moved)
    return TriMesh(
        new_vertices,
        full.faces.copy(),
        None if full.labels is None else full.labels.copy(),
    )
