"""Bit-exact Quantum Wrapper header/tail codec.

Header layout (88 bits, MSB first, see ``docs/wire_format.md``)::

    preamble:16 | class:2 | circuit_id:20 | priority:3 | payload_duration_us:20 |
    entanglement_type:3 | qos:4 | tos:2 | crc16:16 | pad:2

The CRC-16-CCITT (poly 0x1021, init 0xFFFF) covers the first 70 bits.  The
4-octet tail is an end marker followed by an echo of that CRC, recomputed from
the header's checked bits.  (A CRC over all 11 header octets would be the same
constant residue for every valid header, so it could not bind a tail to its
header.)
"""

from __future__ import annotations

import binascii
import enum
from dataclasses import dataclass, field, replace
from typing import Any

PREAMBLE = 0x5A3C
END_MARKER = 0xC3A5
CRC_POLY = 0x1021
CRC_INIT = 0xFFFF

HEADER_BITS = 88
HEADER_OCTETS = 11
TAIL_OCTETS = 4
CHECKED_BITS = 70

# (name, width) in transmission order
FIELD_LAYOUT: tuple[tuple[str, int], ...] = (
    ("preamble", 16),
    ("header_class", 2),
    ("circuit_id", 20),
    ("priority", 3),
    ("payload_duration_us", 20),
    ("entanglement_type", 3),
    ("qos", 4),
    ("tos", 2),
    ("checksum", 16),
    ("pad", 2),
)


def _offsets() -> dict[str, tuple[int, int]]:
    out, pos = {}, 0
    for name, width in FIELD_LAYOUT:
        out[name] = (pos, width)
        pos += width
    return out


FIELD_OFFSETS = _offsets()


class HeaderClass(enum.IntEnum):
    A = 0  # circuit/flow datagram
    B = 1  # supervisory probe
    C = 2  # reserved
    D = 3  # reserved


class EntanglementType(enum.IntEnum):
    NONE = 0
    POLARIZATION = 1
    TIME_BIN = 2
    FREQUENCY_BIN = 3


class ServiceType(enum.IntEnum):
    REAL_TIME = 0
    NON_REAL_TIME = 1


class WavelengthAssignment(str, enum.Enum):
    TIME_MULTIPLEXED_SAME_WAVELENGTH = "time_multiplexed_same_wavelength"
    SEPARATE_WAVELENGTH = "separate_wavelength"


class CodecError(Exception):
    pass


class EncodingError(CodecError, ValueError):
    def __init__(self, field: str, value: int, width: int):
        super().__init__(f"{field}={value} does not fit in {width} bits")
        self.field = field


class DecodeError(CodecError):
    pass


class BadPreamble(DecodeError):
    pass


class ChecksumMismatch(DecodeError):
    pass


class BadEndMarker(DecodeError):
    pass


class InvalidField(DecodeError):
    pass


@dataclass(frozen=True)
class HeaderFields:
    header_class: HeaderClass = HeaderClass.A
    circuit_id: int = 0
    priority: int = 0
    payload_duration_us: int = 0
    entanglement_type: EntanglementType = EntanglementType.NONE
    qos: int = 0
    tos: ServiceType = ServiceType.REAL_TIME
    preamble: int = PREAMBLE
    # filled in by decode; ignored by encode and by equality
    checksum: int | None = field(default=None, compare=False)

    @property
    def reserved(self) -> bool:
        """True for classes C and D, which switches must reject."""
        return self.header_class in (HeaderClass.C, HeaderClass.D)

    def with_label(self, circuit_id: int) -> "HeaderFields":
        return replace(self, circuit_id=circuit_id, checksum=None)


def crc16_bits(value: int, nbits: int, crc: int = CRC_INIT) -> int:
    """CRC-16-CCITT over the ``nbits`` most significant bits of ``value``.

    Whole octets go through :func:`binascii.crc_hqx`; the trailing partial
    octet is shifted in bit by bit.
    """
    whole, rest = divmod(nbits, 8)
    if whole:
        head = value >> rest
        crc = binascii.crc_hqx(head.to_bytes(whole, "big"), crc)
    for i in range(rest - 1, -1, -1):
        bit = (value >> i) & 1
        top = (crc >> 15) & 1
        crc = (crc << 1) & 0xFFFF
        if top ^ bit:
            crc ^= CRC_POLY
    return crc


def crc16(data: bytes, crc: int = CRC_INIT) -> int:
    return binascii.crc_hqx(data, crc)


def _put(word: int, name: str, value: int) -> int:
    pos, width = FIELD_OFFSETS[name]
    value = int(value)
    if value < 0 or value >= (1 << width):
        raise EncodingError(name, value, width)
    return word | (value << (HEADER_BITS - pos - width))


def _get(word: int, name: str) -> int:
    pos, width = FIELD_OFFSETS[name]
    return (word >> (HEADER_BITS - pos - width)) & ((1 << width) - 1)


def encode_header(fields: HeaderFields) -> bytes:
    word = 0
    word = _put(word, "preamble", fields.preamble)
    word = _put(word, "header_class", fields.header_class)
    word = _put(word, "circuit_id", fields.circuit_id)
    word = _put(word, "priority", fields.priority)
    word = _put(word, "payload_duration_us", fields.payload_duration_us)
    word = _put(word, "entanglement_type", fields.entanglement_type)
    word = _put(word, "qos", fields.qos)
    word = _put(word, "tos", fields.tos)
    checksum = crc16_bits(word >> (HEADER_BITS - CHECKED_BITS), CHECKED_BITS)
    word = _put(word, "checksum", checksum)
    return word.to_bytes(HEADER_OCTETS, "big")


def decode_header(bits: bytes) -> HeaderFields:
    """Decode 11 header octets.

    Raises :class:`BadPreamble` or :class:`ChecksumMismatch` on corruption.
    Reserved classes decode normally; check ``HeaderFields.reserved``.
    """
    if len(bits) != HEADER_OCTETS:
        raise DecodeError(f"header must be {HEADER_OCTETS} octets, got {len(bits)}")
    word = int.from_bytes(bits, "big")
    if _get(word, "preamble") != PREAMBLE:
        raise BadPreamble(f"preamble {_get(word, 'preamble'):#06x}")
    checksum = _get(word, "checksum")
    if crc16_bits(word >> (HEADER_BITS - CHECKED_BITS), CHECKED_BITS) != checksum:
        raise ChecksumMismatch("header CRC mismatch")
    # pad bits sit outside the CRC; a nonzero pad is treated as a failed frame check
    if _get(word, "pad"):
        raise ChecksumMismatch("nonzero pad bits")
    try:
        ent = EntanglementType(_get(word, "entanglement_type"))
        tos = ServiceType(_get(word, "tos"))
    except ValueError as exc:
        raise InvalidField(str(exc)) from None
    return HeaderFields(
        header_class=HeaderClass(_get(word, "header_class")),
        circuit_id=_get(word, "circuit_id"),
        priority=_get(word, "priority"),
        payload_duration_us=_get(word, "payload_duration_us"),
        entanglement_type=ent,
        qos=_get(word, "qos"),
        tos=tos,
        preamble=PREAMBLE,
        checksum=checksum,
    )


def swap_label(bits: bytes, new_circuit_id: int) -> bytes:
    """Rewrite the circuit-ID label, recomputing the checksum."""
    fields = decode_header(bits)
    return encode_header(fields.with_label(new_circuit_id))


def _header_crc(header_bits: bytes) -> int:
    word = int.from_bytes(bytes(header_bits), "big")
    return crc16_bits(word >> (HEADER_BITS - CHECKED_BITS), CHECKED_BITS)


def encode_tail(header_bits: bytes) -> bytes:
    return END_MARKER.to_bytes(2, "big") + _header_crc(header_bits).to_bytes(2, "big")


def decode_tail(bits: bytes, header_bits: bytes) -> None:
    if len(bits) != TAIL_OCTETS:
        raise DecodeError(f"tail must be {TAIL_OCTETS} octets, got {len(bits)}")
    if int.from_bytes(bits[:2], "big") != END_MARKER:
        raise BadEndMarker("tail end marker mismatch")
    if int.from_bytes(bits[2:], "big") != _header_crc(header_bits):
        raise ChecksumMismatch("tail does not match header")


@dataclass
class QwDatagram:
    """Header octets, an opaque payload handle, and tail octets.

    The constructor does no validation so corrupted datagrams can exist in
    transit; use :meth:`wrap` to build a fresh, valid one.
    """

    header_bits: bytes
    payload: Any
    tail_bits: bytes
    wavelength_assignment: WavelengthAssignment = WavelengthAssignment.TIME_MULTIPLEXED_SAME_WAVELENGTH

    @classmethod
    def wrap(cls, fields: HeaderFields, payload: Any,
             wavelength_assignment: WavelengthAssignment = WavelengthAssignment.TIME_MULTIPLEXED_SAME_WAVELENGTH,
             ) -> "QwDatagram":
        if fields.header_class in (HeaderClass.A, HeaderClass.B) and fields.payload_duration_us <= 0:
            raise ValueError("class A/B datagrams need payload_duration_us > 0")
        duration = getattr(payload, "duration_us", None)
        if duration is not None and int(duration) != fields.payload_duration_us:
            raise ValueError(
                f"payload duration {duration} us != header duration {fields.payload_duration_us} us")
        header = encode_header(fields)
        return cls(header, payload, encode_tail(header), WavelengthAssignment(wavelength_assignment))

    def fields(self) -> HeaderFields:
        return decode_header(self.header_bits)
