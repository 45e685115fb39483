"""The inter-robot protocol: place-recognition queries, geometric
verification, incremental outlier rejection, distributed optimization,
all driven by a deterministic discrete-event schedule with every
transmission charged to the ledger.

Robots only learn about each other through delivered messages; the
runner is the "network" and is the single place where cross-robot data
moves.  A message_filter hook can drop messages to emulate link loss,
which the locality tests use.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from ..dpgo import (
    RbcdConfig,
    SolverTrace,
    chordal_init,
    public_pose_counts,
    rbcd_solve,
    round_solution,
)
from ..errors import DisconnectedGraphError
from ..geometry import Correspondences, Pose, RansacConfig, ransac_align
from ..pcm import (
    CandidateLoop,
    CliqueResult,
    ConsistencyGraph,
    PcmConfig,
    max_clique_incremental,
)
from ..pose_graph import (
    MeasurementKind,
    MultiRobotPoseGraph,
    PoseKey,
    RelativeMeasurement,
    Trajectory,
)
from .scenario import Descriptor, KeyframeData, RendezvousSchedule, Scenario
from .wire import ChannelLedger, Message, MessageKind, WireSchema

__all__ = [
    "VerificationConfig",
    "ProtocolConfig",
    "ProtocolResult",
    "BandwidthReport",
    "bow_similarity",
    "detect_loop_candidates",
    "match_keypoints",
    "geometric_verification",
    "run_protocol",
    "bandwidth_report",
]


def bow_similarity(a: Descriptor, b: Descriptor) -> float:
    """Cosine similarity clamped to [0, 1]."""
    va, vb = a.vector, b.vector
    if va.shape != vb.shape:
        raise ValueError(f"descriptor lengths differ: {va.shape} vs {vb.shape}")
    return float(np.clip(np.dot(va, vb), 0.0, 1.0))


@dataclass(frozen=True)
class VerificationConfig:
    min_inliers: int = 15
    inlier_threshold: float = 0.2  # meters
    ransac_iterations: int = 1000
    kappa: float = 2500.0  # weights assigned to accepted loops
    tau: float = 400.0
    seed: int = 0


@dataclass(frozen=True)
class ProtocolConfig:
    similarity_threshold: float = 0.5
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    pcm: PcmConfig = field(
        default_factory=lambda: PcmConfig(
            trans_threshold=0.5, rot_threshold=0.1, use_covariance_scaling=True
        )
    )
    # per-window refreshes rarely need a fully converged solve
    rbcd: RbcdConfig = field(
        default_factory=lambda: RbcdConfig(max_iterations=150, cost_tolerance=1e-7)
    )
    schema: WireSchema = field(default_factory=WireSchema)
    # False: one distributed solve after the last contact (the common
    # deployment); True: anytime refresh at every window that changed the
    # inlier set, each charged to the ledger
    dpgo_every_window: bool = False
    # a robot pair's loops are used only once its consistent clique has
    # this many members: a handful of mutually consistent false matches
    # (repeated structure seen by two robots that never actually meet)
    # otherwise slips through unopposed
    min_clique_size: int = 5
    # candidates returned per place-recognition query (bag-of-words style
    # retrieval keeps only the best few)
    max_matches_per_query: int = 3


def match_keypoints(
    desc_a: np.ndarray, desc_b: np.ndarray
) -> list[tuple[int, int]]:
    """Mutual nearest-neighbor matching under Hamming distance on binary
    keypoint descriptors ((n, 32) uint8 arrays)."""
    if len(desc_a) == 0 or len(desc_b) == 0:
        return []
    xor = desc_a[:, None, :] ^ desc_b[None, :, :]
    dist = np.bitwise_count(xor).sum(axis=2, dtype=np.int32)
    ab = dist.argmin(axis=1)
    ba = dist.argmin(axis=0)
    return [(i, int(j)) for i, j in enumerate(ab) if ba[j] == i]


def geometric_verification(
    kf_i: KeyframeData, kf_j: KeyframeData, cfg: VerificationConfig
) -> Optional[RelativeMeasurement]:
    """Estimate the relative pose between two matched keyframes.

    Descriptor matching gives putative correspondences, a 3-point RANSAC
    alignment vets them, and the loop is accepted only with at least
    cfg.min_inliers inliers.  Returns the measurement
    pose(kf_i) -> pose(kf_j) or None (rejection is a value, not an
    error)."""
    pairs = match_keypoints(kf_i.keypoint_descriptors, kf_j.keypoint_descriptors)
    if len(pairs) < 3:
        return None
    ia = np.array([p[0] for p in pairs])
    jb = np.array([p[1] for p in pairs])
    # keypoints of j mapped into i's frame: X_i^-1 X_j, i.e. from=i, to=j
    corr = Correspondences(kf_j.keypoints[jb], kf_i.keypoints[ia])
    seed = (
        cfg.seed,
        kf_i.key.robot_id,
        kf_i.key.index,
        kf_j.key.robot_id,
        kf_j.key.index,
    )
    result = ransac_align(
        corr,
        RansacConfig(
            inlier_threshold=cfg.inlier_threshold,
            max_iterations=cfg.ransac_iterations,
            min_inliers=max(3, cfg.min_inliers),
            seed=seed,
        ),
    )
    if not result.accepted or result.num_inliers < cfg.min_inliers:
        return None
    return RelativeMeasurement(
        key_from=kf_i.key,
        key_to=kf_j.key,
        transform=result.pose,
        kappa=cfg.kappa,
        tau=cfg.tau,
        kind=MeasurementKind.INTER_LOOP,
    )


def detect_loop_candidates(
    query_robot: int,
    target_robot: int,
    query_keyframes: List[KeyframeData],
    target_keyframes: List[KeyframeData],
    threshold: float,
    schema: WireSchema,
    ledger: Optional[ChannelLedger] = None,
    deliver: Optional[Callable[[Message], bool]] = None,
    top_k: Optional[int] = None,
) -> List[tuple[PoseKey, PoseKey, float]]:
    """One direction of a place-recognition exchange.

    The query robot ships the given keyframe descriptors; the target
    returns (query key, target key, score) pairs above the threshold,
    keeping only the `top_k` best per query when set.  Both transmissions
    are charged (PR)."""
    send = deliver or (lambda m: (ledger.record(m) if ledger else None) or True)
    if not query_keyframes:
        return []
    query_msg = Message(
        MessageKind.BOW_QUERY,
        query_robot,
        target_robot,
        schema.bow_query_bytes(len(query_keyframes)),
        payload=[(kf.key, kf.descriptor) for kf in query_keyframes],
    )
    if not send(query_msg):
        return []
    matches = []
    for qk, qd in query_msg.payload:
        scored = []
        for kf in target_keyframes:
            score = bow_similarity(qd, kf.descriptor)
            if score >= threshold:
                scored.append((qk, kf.key, score))
        if top_k is not None and len(scored) > top_k:
            scored.sort(key=lambda m: (-m[2], m[1]))
            scored = scored[:top_k]
        matches.extend(scored)
    reply = Message(
        MessageKind.BOW_MATCH,
        target_robot,
        query_robot,
        schema.bow_match_bytes(len(matches)),
        payload=matches,
    )
    if not send(reply):
        return []
    return matches


@dataclass
class BandwidthReport:
    dataset: str
    pr_bytes: int
    gv_bytes: int
    dpgo_bytes: int
    centralized_image_bytes: int
    centralized_keypoints_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.pr_bytes + self.gv_bytes + self.dpgo_bytes

    def to_csv(self) -> str:
        mb = 1.0 / 2**20
        out = io.StringIO()
        out.write(
            "dataset,PR_MB,GV_MB,DPGO_MB,total_MB,"
            "centralized_image_MB,centralized_keypoints_MB\n"
        )
        out.write(
            f"{self.dataset},{self.pr_bytes * mb:.6f},{self.gv_bytes * mb:.6f},"
            f"{self.dpgo_bytes * mb:.6f},{self.total_bytes * mb:.6f},"
            f"{self.centralized_image_bytes * mb:.6f},"
            f"{self.centralized_keypoints_bytes * mb:.6f}\n"
        )
        return out.getvalue()


def bandwidth_report(
    ledger: ChannelLedger, scenario: Scenario, schema: WireSchema
) -> BandwidthReport:
    """Category totals plus the two modeled centralized baselines (every
    keyframe shipped as a raw image, or as its keypoint payload)."""
    cats = ledger.bytes_by_category()
    return BandwidthReport(
        dataset=scenario.name,
        pr_bytes=cats["PR"],
        gv_bytes=cats["GV"],
        dpgo_bytes=cats["DPGO"],
        centralized_image_bytes=scenario.total_keyframes()
        * schema.image_bytes_per_keyframe,
        centralized_keypoints_bytes=scenario.total_keypoints()
        * schema.keypoint_bytes(),
    )


@dataclass
class ProtocolResult:
    trajectory: Trajectory  # final global estimate (robot 0 frame)
    anchors: Dict[int, Trajectory]  # per-robot corrected keyframe poses
    inlier_loops: List[RelativeMeasurement]
    accepted_loops: List[RelativeMeasurement]
    candidate_pairs: List[tuple[PoseKey, PoseKey]]
    ledger: ChannelLedger
    message_log: List[Message]
    solver_traces: List[SolverTrace]
    cliques: Dict[tuple, CliqueResult]


class _PairState:
    def __init__(self, graph: MultiRobotPoseGraph, pcm_cfg: PcmConfig):
        self.cg = ConsistencyGraph(graph, pcm_cfg)
        self.clique = CliqueResult(
            members=frozenset(), size=0, is_exact=False, explored_nodes=0
        )
        self.next_id = 0
        self.seen_pairs: set = set()
        self.loops: Dict[int, RelativeMeasurement] = {}
        self.last_query: Dict[tuple, int] = {}
        self.keypoints_sent: set = set()  # keyframes already shipped i -> j


def run_protocol(
    scenario: Scenario,
    schedule: Optional[RendezvousSchedule] = None,
    config: Optional[ProtocolConfig] = None,
    message_filter: Optional[Callable[[Message], bool]] = None,
) -> ProtocolResult:
    """Drive the full pipeline over the contact schedule.

    At every contact window the pair exchanges new descriptors, verifies
    candidate matches geometrically, updates the pairwise consistency
    graph and its incremental maximum clique, and (once all robots are
    connected by inlier loops) refreshes the distributed trajectory
    estimate, charging public-pose traffic per solver iteration.  Fully
    deterministic for a fixed scenario and schedule.
    """
    config = config or ProtocolConfig()
    schedule = schedule or scenario.schedule
    schema = config.schema
    ledger = ChannelLedger()
    log: List[Message] = []

    def deliver(msg: Message) -> bool:
        if message_filter is not None and not message_filter(msg):
            return False
        ledger.record(msg)
        log.append(msg)
        return True

    robots = {r.robot_id: r for r in scenario.robots}
    odometry_graph = MultiRobotPoseGraph(
        [m for r in scenario.robots for m in r.odometry]
    )
    pair_state: Dict[tuple, _PairState] = {}
    traces: List[SolverTrace] = []
    lifted = None
    solved_graph = None
    dirty = False

    windows = schedule.resolve(sorted(robots), scenario.max_time())
    for t, a, b in windows:
        i, j = min(a, b), max(a, b)
        state = pair_state.get((i, j))
        if state is None:
            state = pair_state[(i, j)] = _PairState(odometry_graph, config.pcm)

        # --- place recognition, both directions, new keyframes only -----
        matches = []
        for q, tgt in ((i, j), (j, i)):
            since = state.last_query.get((q, tgt), -1)
            new_kfs = [
                kf for kf in robots[q].keyframes if since < kf.key.index <= t
            ]
            tgt_kfs = [kf for kf in robots[tgt].keyframes if kf.key.index <= t]
            found = detect_loop_candidates(
                q,
                tgt,
                new_kfs,
                tgt_kfs,
                config.similarity_threshold,
                schema,
                deliver=deliver,
                top_k=config.max_matches_per_query,
            )
            state.last_query[(q, tgt)] = t
            for qk, tk, score in found:
                ki, kj = (qk, tk) if qk.robot_id == i else (tk, qk)
                matches.append((ki, kj))

        # --- geometric verification of new candidate pairs --------------
        new_loops: List[CandidateLoop] = []
        for ki, kj in sorted(set(matches)):
            if (ki, kj) in state.seen_pairs:
                continue
            state.seen_pairs.add((ki, kj))
            kf_i = robots[i].keyframes[ki.index]
            # the higher-id robot requests keypoints and verifies; keyframe
            # payloads already transferred are not re-sent
            if ki not in state.keypoints_sent:
                if not deliver(
                    Message(
                        MessageKind.KEYPOINT_REQUEST,
                        j,
                        i,
                        schema.keypoint_request_bytes(),
                    )
                ):
                    continue
                if not deliver(
                    Message(
                        MessageKind.KEYPOINT_RESPONSE,
                        i,
                        j,
                        schema.keypoint_response_bytes(len(kf_i.keypoints)),
                        payload=kf_i,
                    )
                ):
                    continue
                state.keypoints_sent.add(ki)
            kf_j = robots[j].keyframes[kj.index]
            measurement = geometric_verification(kf_i, kf_j, config.verification)
            if measurement is None:
                continue
            if not deliver(
                Message(
                    MessageKind.LOOP_CANDIDATE,
                    j,
                    i,
                    schema.loop_candidate_bytes(1),
                    payload=measurement,
                )
            ):
                continue
            new_loops.append(CandidateLoop(measurement, state.next_id))
            state.loops[state.next_id] = measurement
            state.next_id += 1

        # --- incremental outlier rejection at the host (lower id) -------
        if new_loops:
            state.cg.add_candidates(new_loops)
            clique = max_clique_incremental(state.cg, state.clique)
            if clique.members != state.clique.members:
                dirty = True
            state.clique = clique
            deliver(
                Message(
                    MessageKind.CLIQUE_UPDATE,
                    i,
                    j,
                    schema.clique_update_bytes(clique.size),
                    payload=sorted(clique.members),
                )
            )

        # --- distributed optimization over current inliers ---------------
        is_last_window = (t, a, b) == windows[-1]
        if dirty and (config.dpgo_every_window or is_last_window):
            inliers = [
                st.loops[m]
                for st in pair_state.values()
                if st.clique.size >= config.min_clique_size
                for m in sorted(st.clique.members)
            ]
            graph = odometry_graph.with_measurements(inliers)
            try:
                init = chordal_init(graph, config.rbcd.rank)
            except DisconnectedGraphError:
                init = None  # not all robots connected yet; wait
            if init is not None:
                counts = public_pose_counts(graph)

                def charge(iteration: int, robot_id: int):
                    for other, n_pub in sorted(counts.get(robot_id, {}).items()):
                        deliver(
                            Message(
                                MessageKind.PUBLIC_POSES,
                                robot_id,
                                other,
                                schema.public_poses_bytes(n_pub, config.rbcd.rank),
                            )
                        )

                # initial exchange of public poses, then one per update
                for r in sorted(counts):
                    charge(-1, r)
                lifted, trace = rbcd_solve(graph, config.rbcd, init=init, on_iteration=charge)
                traces.append(trace)
                solved_graph = graph
                dirty = False

    if lifted is not None:
        trajectory = round_solution(lifted)
    else:
        # no inter-robot information: every robot keeps its own odometry
        trajectory = {}
        for r in scenario.robots:
            trajectory.update(r.odometric_trajectory())

    anchors: Dict[int, Trajectory] = {}
    for r in scenario.robots:
        anchors[r.robot_id] = {
            k: p for k, p in trajectory.items() if k.robot_id == r.robot_id
        }
    inlier_loops = [
        st.loops[m]
        for st in pair_state.values()
        if st.clique.size >= config.min_clique_size
        for m in sorted(st.clique.members)
    ]
    accepted = [
        st.loops[k] for st in pair_state.values() for k in sorted(st.loops)
    ]
    pairs = sorted(
        {p for st in pair_state.values() for p in st.seen_pairs}
    )
    return ProtocolResult(
        trajectory=trajectory,
        anchors=anchors,
        inlier_loops=inlier_loops,
        accepted_loops=accepted,
        candidate_pairs=pairs,
        ledger=ledger,
        message_log=log,
        solver_traces=traces,
        cliques={pair: st.clique for pair, st in pair_state.items()},
    )
