"""g2o text format I/O.

Supported records: VERTEX_SE2 / EDGE_SE2 and VERTEX_SE3:QUAT /
EDGE_SE3:QUAT, whitespace-delimited, one record per line.  2D records are
lifted to 3D at parse time (z = 0, rotation about z) so a single SE(3)
solver serves both.

Vertex ids encode the robot: global_id = robot_id * KEY_STRIDE + index.
Plain single-robot files (ids < KEY_STRIDE) therefore parse as robot 0
unchanged, and multi-robot graphs round-trip through the same scheme.

Information matrices are reduced to the isotropic (kappa, tau) pair used
everywhere in this package: kappa is the mean diagonal of the rotation
block, tau the mean diagonal of the translation block.
"""

from __future__ import annotations

import io
from typing import IO, Iterable, Union

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from ..errors import GraphFormatError, MissingPoseError
from ..geometry import Pose, rotation_about_z
from .types import (
    MeasurementKind,
    MultiRobotPoseGraph,
    PoseKey,
    RelativeMeasurement,
    Trajectory,
    infer_kind,
)

KEY_STRIDE = 1_000_000

__all__ = ["KEY_STRIDE", "parse_g2o", "serialize_g2o", "split_key", "join_key"]


def join_key(key: PoseKey) -> int:
    return key.robot_id * KEY_STRIDE + key.index


def split_key(gid: int) -> PoseKey:
    return PoseKey(gid // KEY_STRIDE, gid % KEY_STRIDE)


def _quat_to_matrix(qx, qy, qz, qw) -> np.ndarray:
    return ScipyRotation.from_quat([qx, qy, qz, qw]).as_matrix()


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    q = ScipyRotation.from_matrix(R).as_quat()  # (x, y, z, w)
    if q[3] < 0:  # canonical sign for byte-stable output
        q = -q
    return q


def _upper_triangular(values, dim, line):
    if len(values) != dim * (dim + 1) // 2:
        raise GraphFormatError(
            f"expected {dim * (dim + 1) // 2} information values, got {len(values)}",
            line,
        )
    info = np.zeros((dim, dim))
    k = 0
    for i in range(dim):
        for j in range(i, dim):
            info[i, j] = info[j, i] = values[k]
            k += 1
    return info


def parse_g2o(source: Union[str, IO[str]]) -> MultiRobotPoseGraph:
    """Parse a g2o stream or string into a MultiRobotPoseGraph.

    Vertex estimates are stored as the graph's `initial` trajectory (g2o
    files carry no ground truth).  Malformed lines raise GraphFormatError
    with the line number; edges referencing undeclared vertices likewise.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    lines = source.read().splitlines()

    initial: Trajectory = {}
    saw_2d = False
    saw_3d = False
    edges: list[tuple[int, list[str]]] = []

    for lineno, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        tag = tokens[0]
        try:
            if tag == "VERTEX_SE2":
                gid = int(tokens[1])
                x, y, th = map(float, tokens[2:5])
                initial[split_key(gid)] = Pose(
                    rotation_about_z(th), np.array([x, y, 0.0])
                )
                saw_2d = True
            elif tag == "VERTEX_SE3:QUAT":
                gid = int(tokens[1])
                vals = list(map(float, tokens[2:9]))
                if len(vals) != 7:
                    raise GraphFormatError("VERTEX_SE3:QUAT needs 7 values", lineno)
                initial[split_key(gid)] = Pose(
                    _quat_to_matrix(*vals[3:7]), np.array(vals[:3])
                )
                saw_3d = True
            elif tag in ("EDGE_SE2", "EDGE_SE3:QUAT"):
                edges.append((lineno, tokens))
            # unknown tags are ignored (g2o files often carry extras)
        except GraphFormatError:
            raise
        except (ValueError, IndexError) as exc:
            raise GraphFormatError(f"malformed {tag} record: {exc}", lineno) from exc

    measurements = []
    for lineno, tokens in edges:
        tag = tokens[0]
        try:
            a, b = int(tokens[1]), int(tokens[2])
            key_a, key_b = split_key(a), split_key(b)
            for key, gid in ((key_a, a), (key_b, b)):
                if key not in initial:
                    raise GraphFormatError(
                        f"edge references unknown vertex {gid}", lineno
                    )
            if tag == "EDGE_SE2":
                dx, dy, dth = map(float, tokens[3:6])
                info = _upper_triangular(list(map(float, tokens[6:])), 3, lineno)
                transform = Pose(rotation_about_z(dth), np.array([dx, dy, 0.0]))
                tau = float(np.mean(np.diag(info)[:2]))
                kappa = float(info[2, 2])
                saw_2d = True
            else:
                vals = list(map(float, tokens[3:10]))
                if len(vals) != 7:
                    raise GraphFormatError("EDGE_SE3:QUAT needs 7 values", lineno)
                info = _upper_triangular(list(map(float, tokens[10:])), 6, lineno)
                transform = Pose(_quat_to_matrix(*vals[3:7]), np.array(vals[:3]))
                tau = float(np.mean(np.diag(info)[:3]))
                kappa = float(np.mean(np.diag(info)[3:]))
                saw_3d = True
            if kappa <= 0 or tau <= 0:
                raise GraphFormatError(
                    f"non-positive information (kappa={kappa}, tau={tau})", lineno
                )
            measurements.append(
                RelativeMeasurement(
                    key_from=key_a,
                    key_to=key_b,
                    transform=transform,
                    kappa=kappa,
                    tau=tau,
                    kind=infer_kind(key_a, key_b),
                )
            )
        except GraphFormatError:
            raise
        except (ValueError, IndexError) as exc:
            raise GraphFormatError(f"malformed {tag} record: {exc}", lineno) from exc

    return MultiRobotPoseGraph(
        measurements,
        initial=initial or None,
        planar=saw_2d and not saw_3d,
    )


def _fmt(values: Iterable[float]) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def serialize_g2o(graph: MultiRobotPoseGraph, init: Trajectory) -> str:
    """Emit a g2o string readable by parse_g2o.

    Output is deterministic: vertices sorted by (robot, index), edges in
    insertion order, always in SE3:QUAT form.  `init` must cover every key
    of the graph.
    """
    out = io.StringIO()
    for key in graph.keys():
        pose = init.get(key)
        if pose is None:
            raise MissingPoseError(f"no initial value for {key}")
        q = _matrix_to_quat(pose.rotation)
        out.write(
            f"VERTEX_SE3:QUAT {join_key(key)} "
            f"{_fmt(pose.translation)} {_fmt(q)}\n"
        )
    for m in graph.measurements:
        q = _matrix_to_quat(m.transform.rotation)
        info = np.zeros((6, 6))
        info[:3, :3] = np.eye(3) * m.tau
        info[3:, 3:] = np.eye(3) * m.kappa
        upper = [info[i, j] for i in range(6) for j in range(i, 6)]
        out.write(
            f"EDGE_SE3:QUAT {join_key(m.key_from)} {join_key(m.key_to)} "
            f"{_fmt(m.transform.translation)} {_fmt(q)} {_fmt(upper)}\n"
        )
    return out.getvalue()
