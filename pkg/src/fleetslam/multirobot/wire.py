"""Message kinds, the fixed wire schema, and byte-exact accounting.

Bandwidth numbers must be reproducible, so message sizes are computed
from a documented schema rather than measured from a serializer:
keys are 8 bytes, descriptors 32 floats x 4 bytes, a keypoint is
3 floats plus a 32-byte binary descriptor, and a public pose at rank r
is a key plus (3r + r) floats.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Tuple

__all__ = ["MessageKind", "WireSchema", "Message", "ChannelLedger", "CATEGORY_OF"]


class MessageKind(Enum):
    BOW_QUERY = "bow_query"
    BOW_MATCH = "bow_match"
    KEYPOINT_REQUEST = "keypoint_request"
    KEYPOINT_RESPONSE = "keypoint_response"
    LOOP_CANDIDATE = "loop_candidate"
    PUBLIC_POSES = "public_poses"
    CLIQUE_UPDATE = "clique_update"


# Table-style reporting buckets: place recognition, geometric
# verification, distributed PGO
CATEGORY_OF = {
    MessageKind.BOW_QUERY: "PR",
    MessageKind.BOW_MATCH: "PR",
    MessageKind.KEYPOINT_REQUEST: "GV",
    MessageKind.KEYPOINT_RESPONSE: "GV",
    MessageKind.LOOP_CANDIDATE: "GV",
    MessageKind.CLIQUE_UPDATE: "GV",
    MessageKind.PUBLIC_POSES: "DPGO",
}


@dataclass(frozen=True)
class WireSchema:
    descriptor_floats: int = 32
    float_bytes: int = 4
    key_bytes: int = 8
    count_bytes: int = 4
    score_bytes: int = 4
    keypoint_descriptor_bytes: int = 32
    member_id_bytes: int = 4
    image_bytes_per_keyframe: int = 614400  # 640x480 grayscale, 2 cameras

    def descriptor_bytes(self) -> int:
        return self.descriptor_floats * self.float_bytes

    def bow_query_bytes(self, n_keyframes: int) -> int:
        return n_keyframes * (self.key_bytes + self.descriptor_bytes())

    def bow_match_bytes(self, n_matches: int) -> int:
        return self.count_bytes + n_matches * (2 * self.key_bytes + self.score_bytes)

    def keypoint_request_bytes(self) -> int:
        return self.key_bytes

    def keypoint_bytes(self) -> int:
        return 3 * self.float_bytes + self.keypoint_descriptor_bytes

    def keypoint_response_bytes(self, n_keypoints: int) -> int:
        return self.key_bytes + self.count_bytes + n_keypoints * self.keypoint_bytes()

    def loop_candidate_bytes(self, n_candidates: int) -> int:
        # two keys, rotation quaternion + translation, kappa + tau
        per = 2 * self.key_bytes + 7 * self.float_bytes + 2 * self.float_bytes
        return self.count_bytes + n_candidates * per

    def public_pose_bytes(self, rank: int) -> int:
        return self.key_bytes + (3 * rank + rank) * self.float_bytes

    def public_poses_bytes(self, n_poses: int, rank: int) -> int:
        return self.count_bytes + n_poses * self.public_pose_bytes(rank)

    def clique_update_bytes(self, n_members: int) -> int:
        return self.count_bytes + n_members * self.member_id_bytes


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: int
    receiver: int
    byte_size: int
    payload: object = None


class ChannelLedger:
    """Cumulative bytes and message counts per (sender, receiver, kind).

    Every delivered message is recorded exactly once, so sender-side and
    receiver-side aggregates agree by construction.
    """

    def __init__(self):
        self._bytes: Dict[Tuple[int, int, MessageKind], int] = defaultdict(int)
        self._counts: Dict[Tuple[int, int, MessageKind], int] = defaultdict(int)

    def record(self, message: Message):
        if message.byte_size < 0:
            raise ValueError("byte_size must be non-negative")
        key = (message.sender, message.receiver, message.kind)
        self._bytes[key] += message.byte_size
        self._counts[key] += 1

    def entries(self):
        return [
            (s, r, k, self._bytes[(s, r, k)], self._counts[(s, r, k)])
            for (s, r, k) in sorted(self._bytes, key=lambda t: (t[0], t[1], t[2].value))
        ]

    def bytes_by_kind(self, kind: MessageKind) -> int:
        return sum(v for (s, r, k), v in self._bytes.items() if k is kind)

    def bytes_by_category(self) -> Dict[str, int]:
        out = {"PR": 0, "GV": 0, "DPGO": 0}
        for (s, r, k), v in self._bytes.items():
            out[CATEGORY_OF[k]] += v
        return out

    def sent_bytes(self, robot: int) -> int:
        return sum(v for (s, r, k), v in self._bytes.items() if s == robot)

    def received_bytes(self, robot: int) -> int:
        return sum(v for (s, r, k), v in self._bytes.items() if r == robot)

    @property
    def total_bytes(self) -> int:
        return sum(self._bytes.values())

    @property
    def total_messages(self) -> int:
        return sum(self._counts.values())
