"""TUM-style trajectory text I/O: one `stamp tx ty tz qx qy qz qw` line
per pose.  The stamp is the g2o global id (robot * KEY_STRIDE + index),
or the bare index for single-robot exports."""

from __future__ import annotations

import io
from typing import IO, Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from ..geometry import Pose
from .g2o import join_key, split_key
from .types import PoseKey, Trajectory

__all__ = ["write_tum", "read_tum"]


def write_tum(trajectory: Trajectory, robot_id: Optional[int] = None) -> str:
    """Serialize a trajectory; restrict to one robot when `robot_id` is
    given (stamps are then bare indices)."""
    out = io.StringIO()
    keys = sorted(k for k in trajectory if robot_id is None or k.robot_id == robot_id)
    for key in keys:
        pose = trajectory[key]
        q = ScipyRotation.from_matrix(pose.rotation).as_quat()
        if q[3] < 0:
            q = -q
        stamp = key.index if robot_id is not None else join_key(key)
        vals = " ".join(f"{v:.17g}" for v in (*pose.translation, *q))
        out.write(f"{stamp} {vals}\n")
    return out.getvalue()


def read_tum(source: Union[str, IO[str]], robot_id: Optional[int] = None) -> Trajectory:
    """Parse TUM text; stamps are interpreted as indices of `robot_id`
    when given, else as g2o global ids."""
    if isinstance(source, str):
        source = io.StringIO(source)
    trajectory: Trajectory = {}
    for raw in source.read().splitlines():
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        stamp = int(float(tokens[0]))
        tx, ty, tz, qx, qy, qz, qw = map(float, tokens[1:8])
        key = PoseKey(robot_id, stamp) if robot_id is not None else split_key(stamp)
        trajectory[key] = Pose(
            ScipyRotation.from_quat([qx, qy, qz, qw]).as_matrix(),
            np.array([tx, ty, tz]),
        )
    return trajectory
