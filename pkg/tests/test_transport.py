import inspect
import itertools

import pytest

from qwire.frame_codec import HeaderFields, QwDatagram, encode_header, encode_tail
from qwire.transport import (
    AckKind,
    AckMessage,
    NackReason,
    RequestState,
    SendResult,
    SenderWindow,
    TimeoutAction,
    on_egress_header,
)


class Payload:
    _ids = itertools.count()

    def __init__(self):
        self.payload_id = f"p{next(self._ids)}"
        self.duration_us = 1130


def dg(label=7):
    return QwDatagram.wrap(HeaderFields(circuit_id=label, payload_duration_us=1130), Payload())


def ack(d):
    return AckMessage(AckKind.ACK, 7, d.payload.payload_id)


def test_window_capacity_and_slide():
    w = SenderWindow(window_size=4)
    sent = [dg() for _ in range(5)]
    results = [w.send(d) for d in sent]
    assert results == [SendResult.ACCEPTED] * 4 + [SendResult.WINDOW_FULL]
    assert w.on_ack(ack(sent[0]))
    assert w.send(sent[4]) is SendResult.ACCEPTED
    assert len(w.outstanding) == 4


def test_duplicate_ack_ignored():
    w = SenderWindow(window_size=2)
    d = dg()
    w.send(d)
    assert w.on_ack(ack(d))
    assert not w.on_ack(ack(d))
    assert w.stats.delivered == 1 and w.stats.duplicate_acks == 1


def test_egress_decision_uses_only_wrapper_bits():
    params = inspect.signature(on_egress_header).parameters
    assert list(params) == ["header_bits", "tail_bits", "payload_id"]
    h = encode_header(HeaderFields(circuit_id=11, payload_duration_us=5))
    good = on_egress_header(h, encode_tail(h), "x")
    assert good == AckMessage(AckKind.ACK, 11, "x")
    flipped = bytes([h[0]]) + bytes([h[1] ^ 2]) + h[2:]
    assert on_egress_header(flipped, encode_tail(h), "x").reason is NackReason.CHECKSUM
    other = encode_header(HeaderFields(circuit_id=12, payload_duration_us=5))
    nack = on_egress_header(h, encode_tail(other), "x")
    assert nack.kind is AckKind.NACK and nack.reason is NackReason.CHECKSUM


def test_timeout_regenerates_fresh_payload():
    w = SenderWindow(window_size=1, max_retries=2)
    d = dg()
    w.send(d, request_id="r")
    assert w.on_timeout(d.payload.payload_id) is TimeoutAction.REGENERATE
    d2 = dg()
    w.regenerate(d.payload.payload_id, d2)
    assert list(w.outstanding) == [d2.payload.payload_id]
    assert w.outstanding[d2.payload.payload_id].retries == 1
    with pytest.raises(ValueError):
        w.regenerate(d2.payload.payload_id, d2)  # same payload can never be issued twice


def test_max_retries_zero_gives_up_once():
    w = SenderWindow(window_size=2, max_retries=0)
    d = dg()
    w.send(d)
    assert w.on_timeout(d.payload.payload_id) is TimeoutAction.GIVE_UP
    assert w.on_timeout(d.payload.payload_id) is TimeoutAction.STALE
    assert w.stats.gave_up == 1
    assert w.requests[d.payload.payload_id] is RequestState.GAVE_UP


def test_stale_timer_is_noop():
    w = SenderWindow()
    assert w.on_timeout("nope") is TimeoutAction.STALE
    assert w.stats.timeouts == 0


def test_nack_triggers_immediate_regeneration():
    w = SenderWindow(max_retries=1)
    d = dg()
    w.send(d)
    assert w.on_nack(d.payload.payload_id) is TimeoutAction.REGENERATE
    assert w.stats.nacks == 1


@pytest.mark.parametrize("ack_first", [True, False])
def test_timeout_races_late_ack(ack_first):
    """Enumerate both interleavings of a timer firing and a late ACK."""
    w = SenderWindow(window_size=1, max_retries=3)
    d = dg()
    pid = d.payload.payload_id
    w.send(d, request_id="req")
    accepted_at_egress = [pid]
    if ack_first:
        assert w.on_ack(ack(d))
        assert w.on_timeout(pid) is TimeoutAction.STALE
        assert w.stats.regenerated == 0
    else:
        assert w.on_timeout(pid) is TimeoutAction.REGENERATE
        d2 = dg()
        w.regenerate(pid, d2)
        assert w.on_ack(ack(d))          # late ACK of the original still completes the request
        accepted_at_egress.append(d2.payload.payload_id)
        assert not w.on_ack(ack(d2))     # the spurious regeneration is deduplicated
        assert w.stats.regenerated == 1 and w.stats.duplicate_acks == 1
    assert w.requests["req"] is RequestState.DELIVERED
    assert w.stats.delivered == 1
    assert len(set(accepted_at_egress)) == len(accepted_at_egress)
    assert not w.outstanding


def test_ack_with_nack_kind_rejected():
    w = SenderWindow()
    with pytest.raises(ValueError):
        w.on_ack(AckMessage(AckKind.NACK, None, "x", NackReason.CHECKSUM))
