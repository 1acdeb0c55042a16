"""In-process message bus standing in for the A1/E2 interfaces.

Messages are typed records on named channels; delivery order per sender is
the publish order. Every message lands in an append-only run record that the
service and the tests replay.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, asdict
from typing import Callable, Optional

# channel names, one per modeled interface leg
A1_WEIGHTING = "a1/user-weighting"
A1_ORU = "a1/oru-management"
A1_MONITOR = "a1/monitoring"
E2_PRECODER = "e2/precoder"
E2_FEEDBACK = "e2/feedback"


@dataclass
class Message:
    sender: str
    channel: str
    kind: str
    payload: dict
    loop: int = 0
    seq: int = 0

    def as_record(self) -> dict:
        return asdict(self)


class MessageBus:
    """Typed channels with per-sender FIFO ordering and an append-only log."""

    def __init__(self, sink_path: Optional[str] = None):
        self._lock = threading.Lock()
        self._seq = 0
        self._subscribers: dict[str, list[Callable[[Message], None]]] = {}
        self._record: list[Message] = []
        self._sink_path = sink_path
        self._sink = open(sink_path, "a") if sink_path else None

    def subscribe(self, channel: str, handler: Callable[[Message], None]) -> None:
        with self._lock:
            self._subscribers.setdefault(channel, []).append(handler)

    def publish(self, sender: str, channel: str, kind: str, payload: dict,
                loop: int = 0) -> Message:
        with self._lock:
            self._seq += 1
            msg = Message(sender, channel, kind, payload, loop, self._seq)
            self._record.append(msg)
            if self._sink:
                self._sink.write(json.dumps(msg.as_record()) + "\n")
                self._sink.flush()
            handlers = list(self._subscribers.get(channel, []))
        for handler in handlers:
            handler(msg)
        return msg

    def record(self, channel: Optional[str] = None,
               loop: Optional[int] = None) -> list[Message]:
        with self._lock:
            msgs = list(self._record)
        if channel is not None:
            msgs = [m for m in msgs if m.channel == channel]
        if loop is not None:
            msgs = [m for m in msgs if m.loop == loop]
        return msgs

    def close(self) -> None:
        if self._sink:
            self._sink.close()
            self._sink = None
