from .wire import CATEGORY_OF, ChannelLedger, Message, MessageKind, WireSchema
from .scenario import (
    Descriptor,
    KeyframeData,
    RendezvousSchedule,
    RobotData,
    Scenario,
    ScenarioConfig,
    generate_scenario,
    load_scenario,
    save_scenario,
)
from .protocol import (
    BandwidthReport,
    ProtocolConfig,
    ProtocolResult,
    VerificationConfig,
    bandwidth_report,
    bow_similarity,
    detect_loop_candidates,
    geometric_verification,
    match_keypoints,
    run_protocol,
)

__all__ = [
    "CATEGORY_OF",
    "ChannelLedger",
    "Message",
    "MessageKind",
    "WireSchema",
    "Descriptor",
    "KeyframeData",
    "RendezvousSchedule",
    "RobotData",
    "Scenario",
    "ScenarioConfig",
    "generate_scenario",
    "load_scenario",
    "save_scenario",
    "BandwidthReport",
    "ProtocolConfig",
    "ProtocolResult",
    "VerificationConfig",
    "bandwidth_report",
    "bow_similarity",
    "detect_loop_candidates",
    "geometric_verification",
    "match_keypoints",
    "run_protocol",
]
