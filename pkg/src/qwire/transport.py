"""Header-driven sliding-window reliability for Quantum Wrapper circuits.

A retry can never resend the same qubits.  It regenerates: the source
produces a fresh payload with a new ``payload_id`` tied to the same client
request.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Any, Hashable

from .frame_codec import DecodeError, decode_header, decode_tail


class AckKind(str, enum.Enum):
    ACK = "ACK"
    NACK = "NACK"


class NackReason(str, enum.Enum):
    CHECKSUM = "checksum"
    RESERVED = "reserved"
    NO_ROUTE = "no_route"


@dataclass(frozen=True)
class AckMessage:
    kind: AckKind
    circuit_id: int | None
    payload_id: Hashable
    reason: NackReason | None = None


def on_egress_header(header_bits: bytes, tail_bits: bytes, payload_id: Hashable) -> AckMessage:
    """ACK/NACK from the classical wrapper bits only.

    ``payload_id`` is echoed back as an opaque token; no payload is passed in.
    A tail that does not match its header fails the same way a bad header does.
    """
    try:
        fields = decode_header(header_bits)
        decode_tail(tail_bits, header_bits)
    except DecodeError:
        return AckMessage(AckKind.NACK, None, payload_id, NackReason.CHECKSUM)
    if fields.reserved:
        return AckMessage(AckKind.NACK, fields.circuit_id, payload_id, NackReason.RESERVED)
    return AckMessage(AckKind.ACK, fields.circuit_id, payload_id)


class SendResult(enum.Enum):
    ACCEPTED = "accepted"
    WINDOW_FULL = "window_full"


class TimeoutAction(enum.Enum):
    REGENERATE = "regenerate"
    GIVE_UP = "give_up"
    STALE = "stale"


class RequestState(str, enum.Enum):
    IN_FLIGHT = "in_flight"
    DELIVERED = "delivered"
    GAVE_UP = "gave_up"


@dataclass
class Outstanding:
    request_id: Hashable
    header: bytes
    send_time_ns: int
    retries: int = 0


@dataclass
class TransportStats:
    requests: int = 0
    sent: int = 0
    delivered: int = 0
    regenerated: int = 0
    gave_up: int = 0
    duplicate_acks: int = 0
    nacks: int = 0
    timeouts: int = 0

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass
class SenderWindow:
    window_size: int = 8
    timeout_us: float = 10_000.0
    max_retries: int = 5
    outstanding: dict[Hashable, Outstanding] = field(default_factory=dict)
    stats: TransportStats = field(default_factory=TransportStats)

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        self._request_of: dict[Hashable, Hashable] = {}
        self._active: dict[Hashable, Hashable] = {}
        self.requests: dict[Hashable, RequestState] = {}

    @property
    def timeout_ns(self) -> int:
        return round(self.timeout_us * 1000)

    def has_room(self) -> bool:
        return len(self.outstanding) < self.window_size

    def send(self, datagram: Any, now_ns: int = 0, request_id: Hashable | None = None) -> SendResult:
        if not self.has_room():
            return SendResult.WINDOW_FULL
        pid = datagram.payload.payload_id
        request_id = pid if request_id is None else request_id
        if request_id in self.requests:
            raise ValueError(f"request {request_id!r} already registered; use regenerate()")
        self._register(pid, request_id, datagram.header_bits, now_ns, 0)
        self.requests[request_id] = RequestState.IN_FLIGHT
        self.stats.requests += 1
        return SendResult.ACCEPTED

    def _register(self, pid, request_id, header, now_ns, retries):
        if pid in self._request_of:
            raise ValueError(f"payload {pid!r} already issued; payloads cannot be resent")
        self.outstanding[pid] = Outstanding(request_id, bytes(header), now_ns, retries)
        self._request_of[pid] = request_id
        self._active[request_id] = pid
        self.stats.sent += 1

    def regenerate(self, old_payload_id: Hashable, datagram: Any, now_ns: int = 0) -> None:
        """Replace an outstanding payload by a freshly generated one for the same request."""
        old = self.outstanding.pop(old_payload_id)
        self._register(datagram.payload.payload_id, old.request_id, datagram.header_bits,
                       now_ns, old.retries + 1)
        self.stats.regenerated += 1

    def _retry_or_give_up(self, payload_id) -> TimeoutAction:
        entry = self.outstanding.get(payload_id)
        if entry is None:
            return TimeoutAction.STALE
        if entry.retries < self.max_retries:
            return TimeoutAction.REGENERATE
        del self.outstanding[payload_id]
        self._active.pop(entry.request_id, None)
        self.requests[entry.request_id] = RequestState.GAVE_UP
        self.stats.gave_up += 1
        return TimeoutAction.GIVE_UP

    def on_timeout(self, payload_id: Hashable) -> TimeoutAction:
        action = self._retry_or_give_up(payload_id)
        if action is not TimeoutAction.STALE:
            self.stats.timeouts += 1
        return action

    def on_nack(self, payload_id: Hashable) -> TimeoutAction:
        action = self._retry_or_give_up(payload_id)
        if action is not TimeoutAction.STALE:
            self.stats.nacks += 1
        return action

    def on_ack(self, ack: AckMessage) -> bool:
        """Apply an ACK; returns True when a window slot was freed."""
        if ack.kind is AckKind.NACK:
            raise ValueError("use on_nack for negative acknowledgements")
        request_id = self._request_of.get(ack.payload_id)
        if request_id is None or self.requests.get(request_id) is not RequestState.IN_FLIGHT:
            self.stats.duplicate_acks += 1
            return False
        self.requests[request_id] = RequestState.DELIVERED
        self.stats.delivered += 1
        active = self._active.pop(request_id, None)
        if active is not None:
            del self.outstanding[active]
            return True
        return False

    def request_id_of(self, payload_id: Hashable) -> Hashable | None:
        return self._request_of.get(payload_id)

    def pending(self) -> int:
        return sum(1 for s in self.requests.values() if s is RequestState.IN_FLIGHT)
