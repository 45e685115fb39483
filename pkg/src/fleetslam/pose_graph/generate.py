"""Synthetic datasets: grid-world generation, multi-robot partitioning,
and outlier injection."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..geometry import Pose, compose, inverse, random_rotation, rotation_about_z, so3_exp
from .types import (
    MeasurementKind,
    MultiRobotPoseGraph,
    PoseKey,
    RelativeMeasurement,
    Trajectory,
    infer_kind,
)

__all__ = ["generate_manhattan", "partition", "inject_outliers"]


def _noise_weights(sigma_rot: float, sigma_trans: float) -> tuple[float, float]:
    kappa = 1.0 / max(sigma_rot, 1e-3) ** 2
    tau = 1.0 / max(sigma_trans, 1e-3) ** 2
    return kappa, tau


def generate_manhattan(
    blocks: int,
    step: float = 1.0,
    noise: tuple[float, float] = (0.01, 0.05),
    loop_prob: float = 0.3,
    rng_seed: int = 0,
    grid_size: Optional[int] = None,
    turn_prob: float = 0.4,
) -> MultiRobotPoseGraph:
    """Grid-world trajectory with 90-degree turns and revisit loop closures.

    `blocks` is the number of poses; the walk moves one grid cell of size
    `step` per pose and is confined to a `grid_size` x `grid_size` board
    (default ~sqrt(blocks)/2 per side) so cells get revisited.  Odometry
    is the true relative pose corrupted by planar Gaussian noise
    (sigma_rot about z, sigma_trans on x/y); a loop closure is added
    between each non-consecutive pair of visits to the same cell with
    probability `loop_prob`.  Ground truth is stored on the graph.
    """
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    sigma_rot, sigma_trans = noise
    rng = np.random.default_rng(rng_seed)
    if grid_size is None:
        grid_size = max(4, int(round(np.sqrt(blocks) / 2.0)))

    # directions: +x, +y, -x, -y
    headings = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]])
    cell = np.array([grid_size // 2, grid_size // 2])
    heading = 0
    cells = [cell.copy()]
    dirs = [heading]
    for _ in range(blocks - 1):
        u = rng.random()
        if u < turn_prob / 2:
            order = [(heading + 1) % 4, heading, (heading + 3) % 4]
        elif u < turn_prob:
            order = [(heading + 3) % 4, heading, (heading + 1) % 4]
        else:
            order = [heading, (heading + 1) % 4, (heading + 3) % 4]
        order.append((heading + 2) % 4)  # reverse only when boxed in
        for h in order:
            nxt = cell + headings[h]
            if 0 <= nxt[0] < grid_size and 0 <= nxt[1] < grid_size:
                heading, cell = h, nxt
                break
        cells.append(cell.copy())
        dirs.append(heading)

    truth: Trajectory = {}
    for i, (c, h) in enumerate(zip(cells, dirs)):
        truth[PoseKey(0, i)] = Pose(
            rotation_about_z(h * np.pi / 2.0),
            np.array([c[0] * step, c[1] * step, 0.0]),
        )

    kappa, tau = _noise_weights(sigma_rot, sigma_trans)

    def noisy_relative(a: Pose, b: Pose) -> Pose:
        rel = compose(inverse(a), b)
        dth = rng.normal(0.0, sigma_rot) if sigma_rot > 0 else 0.0
        dt = np.zeros(3)
        if sigma_trans > 0:
            dt[:2] = rng.normal(0.0, sigma_trans, size=2)
        return Pose(rel.rotation @ rotation_about_z(dth), rel.translation + dt)

    measurements = []
    for i in range(blocks - 1):
        measurements.append(
            RelativeMeasurement(
                PoseKey(0, i),
                PoseKey(0, i + 1),
                noisy_relative(truth[PoseKey(0, i)], truth[PoseKey(0, i + 1)]),
                kappa,
                tau,
                MeasurementKind.ODOMETRY,
            )
        )

    visits: dict[tuple[int, int], list[int]] = {}
    for i, c in enumerate(cells):
        visits.setdefault((int(c[0]), int(c[1])), []).append(i)
    # loops in arrival order: the later pose "detects" the earlier one
    loop_pairs = []
    for members in visits.values():
        for a_pos in range(len(members)):
            for b_pos in range(a_pos + 1, len(members)):
                i, j = members[a_pos], members[b_pos]
                if j - i >= 2 and rng.random() < loop_prob:
                    loop_pairs.append((j, i))
    loop_pairs.sort()
    for j, i in loop_pairs:
        measurements.append(
            RelativeMeasurement(
                PoseKey(0, i),
                PoseKey(0, j),
                noisy_relative(truth[PoseKey(0, i)], truth[PoseKey(0, j)]),
                kappa,
                tau,
                MeasurementKind.INTRA_LOOP,
            )
        )

    return MultiRobotPoseGraph(measurements, ground_truth=truth, planar=True)


def partition(graph: MultiRobotPoseGraph, n_robots: int) -> MultiRobotPoseGraph:
    """Cut a single-robot graph into `n_robots` contiguous segments.

    Segment lengths differ by at most one pose.  Loop closures crossing a
    cut become inter-robot loops; the odometry edge at each cut point
    becomes an inter-robot loop as well.  No measurement is dropped or
    altered beyond relabeling.
    """
    if len(graph.robots) != 1:
        raise ValueError("partition expects a single-robot graph")
    robot = graph.robots[0]
    n = graph.num_poses[robot]
    if n_robots < 1 or n_robots > n:
        raise ValueError(f"n_robots must be in [1, {n}]")

    base, extra = divmod(n, n_robots)
    starts = []
    pos = 0
    for r in range(n_robots):
        starts.append(pos)
        pos += base + (1 if r < extra else 0)
    starts.append(n)

    def remap(key: PoseKey) -> PoseKey:
        for r in range(n_robots):
            if starts[r] <= key.index < starts[r + 1]:
                return PoseKey(r, key.index - starts[r])
        raise KeyError(key)

    measurements = []
    for m in graph.measurements:
        ka, kb = remap(m.key_from), remap(m.key_to)
        measurements.append(
            RelativeMeasurement(ka, kb, m.transform, m.kappa, m.tau, infer_kind(ka, kb))
        )
    remap_traj = lambda t: {remap(k): p for k, p in t.items()} if t else None
    return MultiRobotPoseGraph(
        measurements,
        ground_truth=remap_traj(graph.ground_truth),
        initial=remap_traj(graph.initial),
        planar=graph.planar,
        injected_outlier_indices=graph.injected_outlier_indices,
    )


def inject_outliers(
    graph: MultiRobotPoseGraph,
    count: int,
    rng_seed: int = 0,
    box_halfwidth: float = 10.0,
) -> MultiRobotPoseGraph:
    """Append `count` random outlier loop closures.

    Endpoints are drawn uniformly over existing keys (distinct,
    non-consecutive); transforms are uniform: rotation uniform on SO(3)
    (SO(2) for planar graphs), translation uniform in a box of half-width
    `box_halfwidth` (z = 0 for planar graphs).  Injected measurement
    indices are recorded in `injected_outlier_indices` for evaluation
    only; nothing downstream of the metrics reads them.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return graph
    rng = np.random.default_rng(rng_seed)
    keys = sorted(graph.keys())
    loops = [m for _, m in graph.loops()]
    pool = loops if loops else graph.measurements
    kappa = float(np.mean([m.kappa for m in pool]))
    tau = float(np.mean([m.tau for m in pool]))

    extra = []
    while len(extra) < count:
        a, b = rng.choice(len(keys), size=2, replace=False)
        ka, kb = keys[a], keys[b]
        if ka.robot_id == kb.robot_id and abs(ka.index - kb.index) <= 1:
            continue
        if graph.planar:
            R = rotation_about_z(rng.uniform(-np.pi, np.pi))
            t = np.array(
                [
                    rng.uniform(-box_halfwidth, box_halfwidth),
                    rng.uniform(-box_halfwidth, box_halfwidth),
                    0.0,
                ]
            )
        else:
            R = random_rotation(rng)
            t = rng.uniform(-box_halfwidth, box_halfwidth, size=3)
        extra.append(
            RelativeMeasurement(
                ka, kb, Pose(R, t), kappa, tau, infer_kind(ka, kb)
            )
        )
    first = len(graph.measurements)
    return graph.with_measurements(extra, range(first, first + count))
