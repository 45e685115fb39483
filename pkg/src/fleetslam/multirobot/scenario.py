"""Synthetic multi-robot scenarios and the scenario bundle format.

A scenario supplies everything the protocol needs per robot: an odometry
chain (in the robot's own frame), keyframes with place-recognition
descriptors and 3D keypoints, a semantically labeled mesh built in the
drifting odometric frame, keyframe-to-mesh-vertex observations, and
ground truth for evaluation only.

Place recognition is simulated from ground-truth location: keyframes in
the same place cell get (nearly) the same sparse nonnegative descriptor,
and a configurable aliasing probability copies one cell's signature to a
distant cell, which is what produces the false matches the outlier
rejection stage has to handle.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from ..geometry import Pose, compose, inverse, rotation_about_z
from ..mesh_deform import TriMesh, load_ply, save_ply
from ..pose_graph import (
    MeasurementKind,
    PoseKey,
    RelativeMeasurement,
    Trajectory,
    parse_g2o,
    read_tum,
    serialize_g2o,
    write_tum,
)
from ..pose_graph.types import MultiRobotPoseGraph

__all__ = [
    "Descriptor",
    "KeyframeData",
    "RendezvousSchedule",
    "RobotData",
    "Scenario",
    "ScenarioConfig",
    "generate_scenario",
    "save_scenario",
    "load_scenario",
]


@dataclass(frozen=True)
class Descriptor:
    """Place-recognition signature: fixed-length nonnegative, L2-normalized."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if np.any(v < 0):
            raise ValueError("descriptor entries must be nonnegative")
        norm = np.linalg.norm(v)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"descriptor must be L2-normalized, |v| = {norm}")
        object.__setattr__(self, "vector", v)


@dataclass
class KeyframeData:
    key: PoseKey
    descriptor: Descriptor
    keypoints: np.ndarray  # (n, 3) in the keyframe's own frame
    keypoint_descriptors: np.ndarray  # (n, 32) uint8

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float).reshape(-1, 3)
        self.keypoint_descriptors = np.asarray(
            self.keypoint_descriptors, dtype=np.uint8
        ).reshape(-1, 32)
        if len(self.keypoints) != len(self.keypoint_descriptors):
            raise ValueError("keypoints and keypoint descriptors must pair up")


@dataclass(frozen=True)
class RendezvousSchedule:
    """Contact windows (time step, robot a, robot b), or always-connected.

    Always-connected resolves to periodic windows for every robot pair
    (the discrete-event equivalent of continuous connectivity)."""

    windows: tuple = ()
    always_connected: bool = False
    contact_interval: int = 25

    def resolve(self, robots: Sequence[int], max_time: int) -> List[tuple]:
        if not self.always_connected:
            out = sorted((int(t), min(a, b), max(a, b)) for t, a, b in self.windows)
            return out
        pairs = [
            (a, b) for i, a in enumerate(sorted(robots)) for b in sorted(robots)[i + 1 :]
        ]
        times = list(range(self.contact_interval, max_time, self.contact_interval))
        times.append(max_time)
        return sorted((t, a, b) for t in times for a, b in pairs)


@dataclass
class RobotData:
    robot_id: int
    odometry: List[RelativeMeasurement]
    keyframes: List[KeyframeData]
    mesh: TriMesh
    observations: Dict[PoseKey, List[int]]  # keyframe -> full-mesh vertex ids
    ground_truth: Trajectory

    def odometric_trajectory(self) -> Trajectory:
        poses = [Pose.identity()]
        for m in self.odometry:
            poses.append(compose(poses[-1], m.transform))
        return {PoseKey(self.robot_id, i): p for i, p in enumerate(poses)}

    @property
    def n_keyframes(self) -> int:
        return len(self.keyframes)


@dataclass
class Scenario:
    name: str
    seed: int
    robots: List[RobotData]
    truth_meshes: Dict[int, TriMesh]
    schedule: RendezvousSchedule

    def robot(self, robot_id: int) -> RobotData:
        for r in self.robots:
            if r.robot_id == robot_id:
                return r
        raise KeyError(robot_id)

    def ground_truth(self) -> Trajectory:
        out: Trajectory = {}
        for r in self.robots:
            out.update(r.ground_truth)
        return out

    def max_time(self) -> int:
        return max(r.n_keyframes - 1 for r in self.robots)

    def total_keyframes(self) -> int:
        return sum(r.n_keyframes for r in self.robots)

    def total_keypoints(self) -> int:
        return sum(len(kf.keypoints) for r in self.robots for kf in r.keyframes)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "synthetic"
    n_robots: int = 3
    keyframes_per_robot: int = 90
    step: float = 1.0  # meters between keyframes
    lane_width: float = 3.0  # lawnmower lane spacing
    lane_overlap: float = 0.25  # fraction of band shared between robots
    sigma_rot: float = 0.004  # odometry noise, radians/step
    sigma_trans: float = 0.02  # odometry noise, meters/step
    landmark_density: float = 4.0  # landmarks per square meter
    keypoint_radius: float = 5.0
    place_cell: float = 3.0
    descriptor_dim: int = 32
    descriptor_sparsity: int = 4
    descriptor_noise: float = 0.05
    alias_pairs: int = 2  # distant place-cell pairs with cloned appearance
    mesh_cell: float = 1.0  # terrain triangulation spacing
    mesh_radius: float = 4.0  # corridor half-width around the path
    label_cell: float = 4.0  # semantic zone size
    n_labels: int = 6
    terrain_amplitude: float = 0.6
    contact_interval: int = 25
    seed: int = 0


def _terrain_height(x, y, amp):
    return amp * np.sin(x / 5.0) * np.cos(y / 7.0)


def _lawnmower(start_y: float, n: int, step: float, lane: float, width: float):
    """Back-and-forth sweep starting at (0, start_y); returns (n, 2) xy."""
    pts = []
    x, y = 0.0, start_y
    direction = 1
    per_lane = max(2, int(round(width / step)))
    k = 0
    while len(pts) < n:
        pts.append((x, y))
        if k < per_lane:
            x += direction * step
            k += 1
        else:
            y += lane
            direction = -direction
            k = 0
    return np.array(pts[:n])


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Deterministic synthetic world: overlapping lawnmower sweeps over a
    shared terrain, drifting odometry, location-derived descriptors with
    aliasing, and per-robot meshes reconstructed in the odometric frame."""
    rng = np.random.default_rng(cfg.seed)
    sweep_length = cfg.keyframes_per_robot * cfg.step / 6.0
    base = _lawnmower(0.0, cfg.keyframes_per_robot, cfg.step, cfg.lane_width, sweep_length)
    band_extent = float(base[:, 1].max() - base[:, 1].min()) + cfg.lane_width
    # consecutive robots share `lane_overlap` of their band; distant robots
    # may not overlap at all (connectivity then chains through the middle)
    starts = [r * band_extent * (1.0 - cfg.lane_overlap) for r in range(cfg.n_robots)]
    paths = {
        r: _lawnmower(
            starts[r], cfg.keyframes_per_robot, cfg.step, cfg.lane_width, sweep_length
        )
        for r in range(cfg.n_robots)
    }

    # world extent covering all paths with margin
    all_xy = np.concatenate(list(paths.values()))
    lo = all_xy.min(axis=0) - cfg.mesh_radius - 1.0
    hi = all_xy.max(axis=0) + cfg.mesh_radius + 1.0

    # ground-truth poses: heading along the path, camera 1.5 m up
    truth: Dict[int, List[Pose]] = {}
    for r, xy in paths.items():
        poses = []
        for i in range(len(xy)):
            nxt = xy[min(i + 1, len(xy) - 1)]
            prv = xy[max(i - 1, 0)]
            d = nxt - prv
            heading = float(np.arctan2(d[1], d[0])) if np.linalg.norm(d) > 0 else 0.0
            z = _terrain_height(xy[i, 0], xy[i, 1], cfg.terrain_amplitude) + 1.5
            poses.append(
                Pose(rotation_about_z(heading), np.array([xy[i, 0], xy[i, 1], z]))
            )
        truth[r] = poses

    # landmarks with random binary signatures
    area = float(np.prod(hi - lo))
    n_landmarks = max(64, int(cfg.landmark_density * area))
    lm_xy = lo + rng.random((n_landmarks, 2)) * (hi - lo)
    lm_z = _terrain_height(lm_xy[:, 0], lm_xy[:, 1], cfg.terrain_amplitude)
    lm_z = lm_z + rng.uniform(0.3, 2.5, size=n_landmarks)
    landmarks = np.column_stack([lm_xy, lm_z])
    lm_desc = rng.integers(0, 256, size=(n_landmarks, 32), dtype=np.uint8)
    from scipy.spatial import cKDTree

    # place-cell signatures: sparse nonnegative vectors
    def cell_of(xy):
        return (int(np.floor(xy[0] / cfg.place_cell)), int(np.floor(xy[1] / cfg.place_cell)))

    def cell_center(c):
        return (np.array(c, dtype=float) + 0.5) * cfg.place_cell

    cells = sorted({cell_of(xy) for path in paths.values() for xy in path})
    # greedy low-coherence code assignment: random sparse codes collide
    # often enough (shared support) to spray false place matches over the
    # whole map, which buries the verification stage in keypoint traffic
    cell_sig: Dict[tuple, np.ndarray] = {}
    chosen: list = []
    for c in cells:
        best, best_coh = None, np.inf
        for _ in range(200):
            v = np.zeros(cfg.descriptor_dim)
            idx = rng.choice(
                cfg.descriptor_dim, size=cfg.descriptor_sparsity, replace=False
            )
            v[idx] = rng.random(cfg.descriptor_sparsity) + 0.5
            v /= np.linalg.norm(v)
            coherence = max((float(v @ u) for u in chosen), default=0.0)
            if coherence < best_coh:
                best, best_coh = v, coherence
            if coherence < 0.4:
                break
        chosen.append(best)
        cell_sig[c] = best

    # perceptual aliasing: clone both the signature and the landmark
    # constellation of a distant cell, so the false match also survives
    # geometric verification and must be caught by outlier rejection.
    # Cells are drawn from the exclusive areas of ADJACENT robots, whose
    # shared band also produces genuine loops: the false loops then
    # compete against (and lose to) a larger consistent set, instead of
    # being the only evidence between two otherwise unrelated robots.
    reach = 1.5 * cfg.place_cell
    clearance = cfg.keypoint_radius + reach + cfg.place_cell

    def eligible(cell, pair):
        """A cell can carry a cloned constellation for `pair` only if no
        third robot can ever see it: false loops must land in a robot
        pair that also shares genuine loops, where the consistent
        majority can outvote them."""
        center = cell_center(cell)
        for other, xy in paths.items():
            if other in pair:
                continue
            dmin = float(np.min(np.linalg.norm(xy - center[None, :], axis=1)))
            if dmin < clearance:
                return False
        return True

    cells_by_robot = {r: sorted({cell_of(xy) for xy in paths[r]}) for r in paths}
    alias_done = 0
    attempt = 0
    while alias_done < cfg.alias_pairs and attempt < 400 and cfg.n_robots >= 2:
        attempt += 1
        ra = int(rng.integers(cfg.n_robots - 1))
        pair = (ra, ra + 1)
        cands_a = [c for c in cells_by_robot[ra] if eligible(c, pair)]
        cands_b = [c for c in cells_by_robot[ra + 1] if eligible(c, pair)]
        if not cands_a or not cands_b:
            continue
        ca = cands_a[int(rng.integers(len(cands_a)))]
        cb = cands_b[int(rng.integers(len(cands_b)))]
        pa, pb = cell_center(ca), cell_center(cb)
        if np.linalg.norm(pa - pb) < 4.0 * cfg.place_cell:
            continue
        src = np.flatnonzero(np.linalg.norm(lm_xy - pb[None, :], axis=1) <= reach)
        dst = np.flatnonzero(np.linalg.norm(lm_xy - pa[None, :], axis=1) <= reach)
        if len(src) == 0 or len(dst) == 0:
            continue
        # rebuild the destination neighborhood as a copy of the source one
        clone_xy = lm_xy[src] - pb[None, :] + pa[None, :]
        clone_z = landmarks[src, 2]
        take = min(len(dst), len(src))
        landmarks[dst[:take], 0] = clone_xy[:take, 0]
        landmarks[dst[:take], 1] = clone_xy[:take, 1]
        landmarks[dst[:take], 2] = clone_z[:take]
        lm_desc[dst[:take]] = lm_desc[src[:take]]
        if take < len(dst):  # move leftovers out of every keyframe's reach
            landmarks[dst[take:], 0] += 10000.0
        cell_sig[ca] = cell_sig[cb].copy()
        alias_done += 1
    lm_xy = landmarks[:, :2]
    lm_tree = cKDTree(lm_xy)

    # terrain mesh over the full extent, with semantic zone labels
    nx = int(np.ceil((hi[0] - lo[0]) / cfg.mesh_cell)) + 1
    ny = int(np.ceil((hi[1] - lo[1]) / cfg.mesh_cell)) + 1
    gx, gy = np.meshgrid(
        lo[0] + np.arange(nx) * cfg.mesh_cell, lo[1] + np.arange(ny) * cfg.mesh_cell
    )
    gz = _terrain_height(gx, gy, cfg.terrain_amplitude)
    world_vertices = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    faces = []
    for iy in range(ny - 1):
        for ix in range(nx - 1):
            a = iy * nx + ix
            faces.append([a, a + 1, a + nx])
            faces.append([a + 1, a + nx + 1, a + nx])
    world_faces = np.array(faces, dtype=np.int64)
    centers = world_vertices[world_faces].mean(axis=1)
    zone = np.floor(centers[:, :2] / cfg.label_cell).astype(np.int64)
    zone_ids = {z: rng.integers(cfg.n_labels) for z in map(tuple, np.unique(zone, axis=0))}
    world_labels = np.array([zone_ids[tuple(z)] for z in zone], dtype=np.int64)

    robots = []
    truth_meshes = {}
    for r in range(cfg.n_robots):
        poses = truth[r]
        # odometry: noisy true relative motion; robot frame starts at identity
        odom_meas = []
        kappa = 1.0 / cfg.sigma_rot**2 if cfg.sigma_rot > 0 else 1e6
        tau = 1.0 / cfg.sigma_trans**2 if cfg.sigma_trans > 0 else 1e6
        for i in range(len(poses) - 1):
            rel = compose(inverse(poses[i]), poses[i + 1])
            dR = rotation_about_z(rng.normal(0.0, cfg.sigma_rot)) if cfg.sigma_rot else np.eye(3)
            dt = rng.normal(0.0, cfg.sigma_trans, size=3) if cfg.sigma_trans else np.zeros(3)
            odom_meas.append(
                RelativeMeasurement(
                    PoseKey(r, i),
                    PoseKey(r, i + 1),
                    Pose(rel.rotation @ dR, rel.translation + dt),
                    kappa,
                    tau,
                    MeasurementKind.ODOMETRY,
                )
            )
        odom_poses = [Pose.identity()]
        for m in odom_meas:
            odom_poses.append(compose(odom_poses[-1], m.transform))

        keyframes = []
        for i, pose in enumerate(poses):
            near = lm_tree.query_ball_point(pose.translation[:2], cfg.keypoint_radius)
            near = sorted(near)
            pts_world = landmarks[near]
            local = inverse(pose).apply(pts_world) if near else np.zeros((0, 3))
            sig = cell_sig[cell_of(pose.translation[:2])]
            noisy = sig + rng.normal(0.0, cfg.descriptor_noise, size=len(sig))
            noisy = np.abs(noisy)
            keyframes.append(
                KeyframeData(
                    key=PoseKey(r, i),
                    descriptor=Descriptor(noisy / np.linalg.norm(noisy)),
                    keypoints=local,
                    keypoint_descriptors=lm_desc[near],
                )
            )

        # corridor submesh: world vertices near the path
        path_tree = cKDTree(np.array([p.translation[:2] for p in poses]))
        vdist, vowner = path_tree.query(world_vertices[:, :2])
        keep_v = vdist <= cfg.mesh_radius
        keep_faces = keep_v[world_faces].all(axis=1)
        vmap = -np.ones(len(world_vertices), dtype=np.int64)
        kept_idx = np.flatnonzero(keep_v)
        vmap[kept_idx] = np.arange(len(kept_idx))
        sub_faces = vmap[world_faces[keep_faces]]
        sub_labels = world_labels[keep_faces]
        sub_world = world_vertices[kept_idx]
        owner = vowner[kept_idx]  # observing keyframe per vertex
        # reconstruct in the odometric frame: v_odom = X_odom X_true^-1 v
        sub_odom = np.empty_like(sub_world)
        for i in np.unique(owner):
            warp = compose(odom_poses[i], inverse(poses[i]))
            sel = owner == i
            sub_odom[sel] = warp.apply(sub_world[sel])
        mesh = TriMesh(sub_odom, sub_faces, sub_labels.copy())
        truth_meshes[r] = TriMesh(sub_world, sub_faces.copy(), sub_labels.copy())

        observations: Dict[PoseKey, List[int]] = {}
        for i, pose in enumerate(poses):
            seen = np.flatnonzero(
                np.linalg.norm(sub_world[:, :2] - pose.translation[:2][None, :], axis=1)
                <= cfg.mesh_radius
            )
            observations[PoseKey(r, i)] = [int(v) for v in seen]

        robots.append(
            RobotData(
                robot_id=r,
                odometry=odom_meas,
                keyframes=keyframes,
                mesh=mesh,
                observations=observations,
                ground_truth={PoseKey(r, i): p for i, p in enumerate(poses)},
            )
        )

    schedule = RendezvousSchedule(
        always_connected=True, contact_interval=cfg.contact_interval
    )
    return Scenario(
        name=cfg.name,
        seed=cfg.seed,
        robots=robots,
        truth_meshes=truth_meshes,
        schedule=schedule,
    )


# ---------------------------------------------------------------------------
# bundle directory I/O
# ---------------------------------------------------------------------------


def _robot_dir(root: str, robot_id: int) -> str:
    return os.path.join(root, f"robot{robot_id:02d}")


def save_scenario(scenario: Scenario, root: str):
    """Write the bundle: per-robot odometry g2o, keyframes CSV, keypoints
    CSV, mesh PLY, observations CSV, ground-truth TUM; plus the schedule
    and truth meshes at the top level."""
    os.makedirs(root, exist_ok=True)
    manifest = {
        "name": scenario.name,
        "seed": scenario.seed,
        "robots": [r.robot_id for r in scenario.robots],
        "schedule": "always"
        if scenario.schedule.always_connected
        else "schedule.csv",
        "contact_interval": scenario.schedule.contact_interval,
    }
    with open(os.path.join(root, "scenario.yaml"), "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
    with open(os.path.join(root, "schedule.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "robot_a", "robot_b"])
        for t, a, b in scenario.schedule.windows:
            writer.writerow([t, a, b])
    truth_dir = os.path.join(root, "truth")
    os.makedirs(truth_dir, exist_ok=True)
    for r, mesh in scenario.truth_meshes.items():
        save_ply(mesh, os.path.join(truth_dir, f"robot{r:02d}_mesh.ply"))

    for robot in scenario.robots:
        d = _robot_dir(root, robot.robot_id)
        os.makedirs(d, exist_ok=True)
        graph = MultiRobotPoseGraph(robot.odometry)
        with open(os.path.join(d, "odometry.g2o"), "w") as fh:
            fh.write(serialize_g2o(graph, robot.odometric_trajectory()))
        with open(os.path.join(d, "keyframes.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            dim = len(robot.keyframes[0].descriptor.vector) if robot.keyframes else 0
            writer.writerow(["index"] + [f"d{k}" for k in range(dim)])
            for kf in robot.keyframes:
                writer.writerow(
                    [kf.key.index] + [f"{x:.9g}" for x in kf.descriptor.vector]
                )
        with open(os.path.join(d, "keypoints.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["keyframe_index", "x", "y", "z", "descriptor_hex"])
            for kf in robot.keyframes:
                for p, desc in zip(kf.keypoints, kf.keypoint_descriptors):
                    writer.writerow(
                        [
                            kf.key.index,
                            f"{p[0]:.9g}",
                            f"{p[1]:.9g}",
                            f"{p[2]:.9g}",
                            bytes(desc).hex(),
                        ]
                    )
        save_ply(robot.mesh, os.path.join(d, "mesh.ply"))
        with open(os.path.join(d, "observations.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["keyframe_index", "mesh_vertex_index"])
            for key in sorted(robot.observations):
                for v in robot.observations[key]:
                    writer.writerow([key.index, v])
        with open(os.path.join(d, "ground_truth.tum"), "w") as fh:
            fh.write(write_tum(robot.ground_truth, robot_id=robot.robot_id))


def load_scenario(root: str) -> Scenario:
    with open(os.path.join(root, "scenario.yaml")) as fh:
        manifest = yaml.safe_load(fh)
    robots = []
    truth_meshes = {}
    for rid in manifest["robots"]:
        d = _robot_dir(root, rid)
        with open(os.path.join(d, "odometry.g2o")) as fh:
            graph = parse_g2o(fh.read())
        odometry = [m for m in graph.measurements]
        keyframes = []
        with open(os.path.join(d, "keyframes.csv"), newline="") as fh:
            rows = list(csv.reader(fh))
        desc = {
            int(row[0]): np.array([float(x) for x in row[1:]]) for row in rows[1:]
        }
        kp: Dict[int, list] = {}
        with open(os.path.join(d, "keypoints.csv"), newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                idx = int(row[0])
                kp.setdefault(idx, []).append(
                    (
                        [float(row[1]), float(row[2]), float(row[3])],
                        np.frombuffer(bytes.fromhex(row[4]), dtype=np.uint8),
                    )
                )
        for idx in sorted(desc):
            pts = kp.get(idx, [])
            keyframes.append(
                KeyframeData(
                    key=PoseKey(rid, idx),
                    descriptor=Descriptor(desc[idx] / np.linalg.norm(desc[idx])),
                    keypoints=np.array([p for p, _ in pts]).reshape(-1, 3),
                    keypoint_descriptors=np.array([d_ for _, d_ in pts]).reshape(-1, 32),
                )
            )
        mesh = load_ply(os.path.join(d, "mesh.ply"))
        observations: Dict[PoseKey, List[int]] = {}
        with open(os.path.join(d, "observations.csv"), newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                observations.setdefault(PoseKey(rid, int(row[0])), []).append(
                    int(row[1])
                )
        with open(os.path.join(d, "ground_truth.tum")) as fh:
            gt = read_tum(fh.read(), robot_id=rid)
        robots.append(
            RobotData(rid, odometry, keyframes, mesh, observations, gt)
        )
        truth_path = os.path.join(root, "truth", f"robot{rid:02d}_mesh.ply")
        if os.path.exists(truth_path):
            truth_meshes[rid] = load_ply(truth_path)

    if manifest.get("schedule") == "always":
        schedule = RendezvousSchedule(
            always_connected=True,
            contact_interval=int(manifest.get("contact_interval", 25)),
        )
    else:
        windows = []
        with open(os.path.join(root, "schedule.csv"), newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                windows.append((int(row[0]), int(row[1]), int(row[2])))
        schedule = RendezvousSchedule(windows=tuple(windows))
    return Scenario(
        name=manifest["name"],
        seed=int(manifest["seed"]),
        robots=robots,
        truth_meshes=truth_meshes,
        schedule=schedule,
    )
