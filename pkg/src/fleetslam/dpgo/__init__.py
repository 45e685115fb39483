from .lifted import (
    LiftedPose,
    LiftedProblem,
    align_robot_frames,
    chordal_init,
    lift_trajectory,
    propagated_init,
    round_solution,
)
from .rbcd import (
    RbcdConfig,
    RobotBlock,
    SolverTrace,
    block_update,
    public_pose_counts,
    rbcd_solve,
)
from .centralized import centralized_solve, local_pgo_baseline

__all__ = [
    "LiftedPose",
    "LiftedProblem",
    "align_robot_frames",
    "chordal_init",
    "lift_trajectory",
    "propagated_init",
    "round_solution",
    "RbcdConfig",
    "RobotBlock",
    "SolverTrace",
    "block_update",
    "public_pose_counts",
    "rbcd_solve",
    "centralized_solve",
    "local_pgo_baseline",
]
