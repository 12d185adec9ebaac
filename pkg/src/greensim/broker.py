"""In-process topic broker: wildcard subscriptions, retained telemetry, and
mandatory command routing.

Routing is linearizable per topic: one lock orders every publish, so each
subscriber sees messages from a given publisher in publish order. Command
envelopes never fan out to subscribers; they are handed to the registered
command sink (the gateway filter) no matter which topic they name, so the
engine cannot receive an unfiltered command by construction.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

from . import protocol
from .protocol import Envelope, is_command_topic, topic_matches


class BrokerError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


UNAUTHORIZED = "UNAUTHORIZED"
BAD_PATTERN = "BAD_PATTERN"


@dataclass
class Subscriber:
    client_id: str
    sink: object                      # callable(Envelope) -> None, must not block
    patterns: list = field(default_factory=list)


class Broker:
    def __init__(self):
        self._lock = threading.RLock()
        self._subscribers: dict[str, Subscriber] = {}
        self._retained: dict[str, Envelope] = {}
        self._command_sink = None
        self._order: list[str] = []   # fan-out order = registration order

    def set_command_sink(self, sink) -> None:
        """All CMD envelopes are delivered here and nowhere else."""
        self._command_sink = sink

    def register(self, client_id: str, sink) -> None:
        with self._lock:
            if client_id not in self._subscribers:
                self._order.append(client_id)
            self._subscribers[client_id] = Subscriber(client_id=client_id, sink=sink)

    def unregister(self, client_id: str) -> None:
        with self._lock:
            self._subscribers.pop(client_id, None)
            if client_id in self._order:
                self._order.remove(client_id)

    def subscribe(self, client_id: str, pattern: str) -> list[Envelope]:
        """Add a subscription; returns the retained envelopes replayed to the
        subscriber (already delivered through its sink)."""
        if not protocol.valid_pattern(pattern):
            raise BrokerError(BAD_PATTERN, pattern)
        with self._lock:
            sub = self._subscribers.get(client_id)
            if sub is None:
                raise BrokerError(UNAUTHORIZED, f"unknown client {client_id}")
            if pattern not in sub.patterns:
                sub.patterns.append(pattern)
            replayed = [env for topic, env in sorted(self._retained.items())
                        if topic_matches(pattern, topic)]
            for env in replayed:
                sub.sink(env)
            return replayed

    def unsubscribe(self, client_id: str, pattern: str) -> bool:
        with self._lock:
            sub = self._subscribers.get(client_id)
            if sub is None or pattern not in sub.patterns:
                return False
            sub.patterns.remove(pattern)
            return True

    def publish(self, env: Envelope) -> int:
        """Fan a PUB out to matching subscribers (or route a CMD to the
        command sink). Returns the number of deliveries."""
        if env.kind == "CMD":
            if self._command_sink is not None:
                self._command_sink(env)
            return 0
        with self._lock:
            if not is_command_topic(env.topic):
                self._retained[env.topic] = env
            count = 0
            for client_id in self._order:
                sub = self._subscribers.get(client_id)
                if sub is None:
                    continue
                if any(topic_matches(p, env.topic) for p in sub.patterns):
                    sub.sink(env)
                    count += 1
            return count

    def retained(self, topic: str) -> Envelope | None:
        with self._lock:
            return self._retained.get(topic)


class FanoutQueue:
    """Bounded per-connection egress buffer with two lanes: control messages
    (acks, errors, auth replies) are never dropped; telemetry drops oldest
    under back-pressure so a slow console cannot stall the engine."""

    CONTROL_KINDS = ("ACK", "ERR", "PONG")

    def __init__(self, telemetry_capacity: int = 256):
        self._control: deque = deque()
        self._telemetry: deque = deque(maxlen=telemetry_capacity)
        self._cond = threading.Condition()
        self.closed = False
        self.dropped = 0

    def put(self, env: Envelope) -> None:
        with self._cond:
            if self.closed:
                return
            if env.kind in self.CONTROL_KINDS:
                self._control.append(env)
            else:
                if len(self._telemetry) == self._telemetry.maxlen:
                    self.dropped += 1
                self._telemetry.append(env)
            self._cond.notify()

    def get(self, timeout: float | None = None) -> Envelope | None:
        with self._cond:
            if not self._control and not self._telemetry and not self.closed:
                self._cond.wait(timeout=timeout)
            if self._control:
                return self._control.popleft()
            if self._telemetry:
                return self._telemetry.popleft()
            return None

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()
