from .types import (
    MeasurementKind,
    MultiRobotPoseGraph,
    PoseKey,
    RelativeMeasurement,
    Trajectory,
    infer_kind,
)
from .g2o import KEY_STRIDE, parse_g2o, serialize_g2o
from .generate import generate_manhattan, inject_outliers, partition
from .metrics import ate, pgo_cost
from .tum import read_tum, write_tum

__all__ = [
    "MeasurementKind",
    "MultiRobotPoseGraph",
    "PoseKey",
    "RelativeMeasurement",
    "Trajectory",
    "infer_kind",
    "KEY_STRIDE",
    "parse_g2o",
    "serialize_g2o",
    "generate_manhattan",
    "inject_outliers",
    "partition",
    "ate",
    "pgo_cost",
    "read_tum",
    "write_tum",
]
