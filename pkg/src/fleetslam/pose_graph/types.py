"""Multi-robot pose-graph data model."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional

from ..errors import DisconnectedGraphError
from ..geometry import Pose


class PoseKey(NamedTuple):
    robot_id: int
    index: int


# estimated trajectories are plain dicts keyed by PoseKey
Trajectory = Dict[PoseKey, Pose]


class MeasurementKind(Enum):
    ODOMETRY = "odometry"
    INTRA_LOOP = "intra_loop"
    INTER_LOOP = "inter_loop"


@dataclass(frozen=True)
class RelativeMeasurement:
    """Relative-pose factor: pose(key_to) ~ pose(key_from) * transform.

    kappa weights the chordal rotation residual (1/rad^2), tau the
    translation residual (1/m^2).
    """

    key_from: PoseKey
    key_to: PoseKey
    transform: Pose
    kappa: float
    tau: float
    kind: MeasurementKind

    def __post_init__(self):
        if self.kappa <= 0 or self.tau <= 0:
            raise ValueError("kappa and tau must be positive")
        if self.kind is MeasurementKind.ODOMETRY:
            if (
                self.key_from.robot_id != self.key_to.robot_id
                or self.key_to.index != self.key_from.index + 1
            ):
                raise ValueError(
                    f"odometry edge must connect consecutive keys of one robot, "
                    f"got {self.key_from} -> {self.key_to}"
                )
        elif self.kind is MeasurementKind.INTER_LOOP:
            if self.key_from.robot_id == self.key_to.robot_id:
                raise ValueError("inter-robot loop must connect distinct robots")

    def is_loop(self) -> bool:
        return self.kind is not MeasurementKind.ODOMETRY


def infer_kind(key_from: PoseKey, key_to: PoseKey) -> MeasurementKind:
    if key_from.robot_id != key_to.robot_id:
        return MeasurementKind.INTER_LOOP
    if abs(key_to.index - key_from.index) == 1:
        return MeasurementKind.ODOMETRY
    return MeasurementKind.INTRA_LOOP


class MultiRobotPoseGraph:
    """Per-robot odometry chains plus intra/inter-robot loop closures.

    Construction validates that every robot's odometry chain is complete
    (an edge between each consecutive index pair).  Instances are treated
    as immutable once built; derived indexes are computed eagerly.

    `injected_outlier_indices` tags measurements added by
    `inject_outliers` for evaluation only; the estimation pipeline never
    reads it.
    """

    def __init__(
        self,
        measurements: Iterable[RelativeMeasurement],
        ground_truth: Optional[Trajectory] = None,
        initial: Optional[Trajectory] = None,
        planar: bool = False,
        injected_outlier_indices: Iterable[int] = (),
    ):
        self.measurements: List[RelativeMeasurement] = list(measurements)
        self.ground_truth = dict(ground_truth) if ground_truth else None
        self.initial = dict(initial) if initial else None
        self.planar = planar
        self.injected_outlier_indices = frozenset(injected_outlier_indices)
        self._build_index()

    def _build_index(self):
        odometry: Dict[int, Dict[int, RelativeMeasurement]] = {}
        robots = set()
        max_index: Dict[int, int] = {}
        for m in self.measurements:
            for key in (m.key_from, m.key_to):
                robots.add(key.robot_id)
                max_index[key.robot_id] = max(
                    max_index.get(key.robot_id, 0), key.index
                )
            if m.kind is MeasurementKind.ODOMETRY:
                chain = odometry.setdefault(m.key_from.robot_id, {})
                if m.key_from.index in chain:
                    raise ValueError(
                        f"duplicate odometry edge at {m.key_from}"
                    )
                chain[m.key_from.index] = m
        for traj in (self.ground_truth, self.initial):
            if traj:
                for key in traj:
                    robots.add(key.robot_id)
                    max_index[key.robot_id] = max(
                        max_index.get(key.robot_id, 0), key.index
                    )
        self.robots: tuple[int, ...] = tuple(sorted(robots))
        self.num_poses: Dict[int, int] = {r: max_index[r] + 1 for r in self.robots}
        self._odometry = {
            r: [odometry.get(r, {}).get(i) for i in range(self.num_poses[r] - 1)]
            for r in self.robots
        }
        for r, chain in self._odometry.items():
            for i, m in enumerate(chain):
                if m is None:
                    raise DisconnectedGraphError(
                        f"robot {r} odometry chain has no edge {i} -> {i + 1}"
                    )

    # -- views ------------------------------------------------------------

    def keys(self) -> Iterator[PoseKey]:
        for r in self.robots:
            for i in range(self.num_poses[r]):
                yield PoseKey(r, i)

    @property
    def num_keys(self) -> int:
        return sum(self.num_poses.values())

    def odometry_chain(self, robot_id: int) -> List[RelativeMeasurement]:
        """Odometry edges of one robot, ordered by index."""
        return self._odometry[robot_id]

    def loops(self) -> List[tuple[int, RelativeMeasurement]]:
        """(measurement index, measurement) for every non-odometry edge."""
        return [
            (i, m) for i, m in enumerate(self.measurements) if m.is_loop()
        ]

    def with_measurements(
        self,
        extra: Iterable[RelativeMeasurement],
        extra_outlier_indices: Iterable[int] = (),
    ) -> "MultiRobotPoseGraph":
        """New graph with `extra` appended; existing edges are untouched."""
        return MultiRobotPoseGraph(
            self.measurements + list(extra),
            ground_truth=self.ground_truth,
            initial=self.initial,
            planar=self.planar,
            injected_outlier_indices=(
                set(self.injected_outlier_indices) | set(extra_outlier_indices)
            ),
        )
