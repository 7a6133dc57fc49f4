from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

NodeId = int


class Kind(str, Enum):
    PROPOSE = "ProposePulse"
    SUPPORT = "SupportPulse"
    RESET = "Reset"


@dataclass(frozen=True)
class Message:
    kind: Kind
    # only meaningful for SupportPulse: the sender's proposers set at send time
    proposers: frozenset[NodeId] | None = None

    def to_json(self) -> dict:
        out = {"kind": self.kind.value}
        if self.proposers is not None:
            out["proposers"] = sorted(self.proposers)
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "Message":
        props = doc.get("proposers")
        return cls(Kind(doc["kind"]), None if props is None else frozenset(props))


PROPOSE = Message(Kind.PROPOSE)
RESET = Message(Kind.RESET)


def support(proposers) -> Message:
    return Message(Kind.SUPPORT, frozenset(proposers))


@dataclass(frozen=True)
class Envelope:
    sender: NodeId
    receiver: NodeId
    msg: Message
    sent_at: int
    deliver_at: int

    def to_json(self) -> dict:
        return {
            "sender": self.sender,
            "receiver": self.receiver,
            "msg": self.msg.to_json(),
            "sent_at": self.sent_at,
            "deliver_at": self.deliver_at,
        }
