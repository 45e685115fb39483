"""Mesh accuracy evaluation: area-weighted surface sampling, rigid ICP
registration, then nearest-neighbor distance and label agreement."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import Correspondences, Pose, arun_align, compose
from .trimesh import TriMesh

__all__ = ["sample_mesh", "icp_align", "mesh_accuracy"]


def sample_mesh(
    mesh: TriMesh, density: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray | None]:
    """Uniform surface samples at `density` points per square meter.

    Faces are chosen proportionally to area, points uniformly by
    barycentric coordinates.  Returns (points, per-sample labels or None).
    """
    areas = mesh.face_areas()
    total_area = float(areas.sum())
    if total_area <= 0:
        raise ValueError("mesh has zero surface area")
    count = max(1, int(round(density * total_area)))
    faces = rng.choice(len(areas), size=count, p=areas / total_area)
    u = rng.random(count)
    v = rng.random(count)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    a = mesh.vertices[mesh.faces[faces, 0]]
    b = mesh.vertices[mesh.faces[faces, 1]]
    c = mesh.vertices[mesh.faces[faces, 2]]
    points = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    labels = mesh.labels[faces] if mesh.labels is not None else None
    return points, labels


def icp_align(
    source: np.ndarray, target: np.ndarray, iterations: int = 30
) -> tuple[np.ndarray, Pose]:
    """Point-to-point ICP with nearest-neighbor association and a fixed
    iteration count.  Returns (aligned source points, source->target pose)."""
    tree = cKDTree(target)
    transform = Pose.identity()
    moved = source
    for _ in range(iterations):
        _, nn = tree.query(moved)
        step = arun_align(Correspondences(moved, target[nn]))
        transform = compose(step, transform)
        moved = step.apply(moved)
    return moved, transform


def mesh_accuracy(
    estimate: TriMesh,
    truth: TriMesh,
    sample_density: float = 1000.0,
    seed: int = 0,
    icp_iterations: int = 30,
) -> tuple[float, float | None]:
    """(mean distance, label accuracy) of an estimated mesh against truth.

    Both meshes are sampled at `sample_density` points/m^2, the estimate
    samples are registered to the truth samples by ICP, and the mean
    distance from each ground-truth sample to its nearest estimated
    sample is reported.  Label accuracy is the fraction of ground-truth
    samples whose nearest estimated sample carries the same label (None
    when either mesh is unlabeled).
    """
    rng = np.random.default_rng(seed)
    est_pts, est_labels = sample_mesh(estimate, sample_density, rng)
    true_pts, true_labels = sample_mesh(truth, sample_density, rng)
    aligned, _ = icp_align(est_pts, true_pts, icp_iterations)
    tree = cKDTree(aligned)
    dist, nn = tree.query(true_pts)
    mean_distance = float(dist.mean())
    if est_labels is None or true_labels is None:
        return mean_distance, None
    label_accuracy = float(np.mean(est_labels[nn] == true_labels))
    return mean_distance, label_accuracy
