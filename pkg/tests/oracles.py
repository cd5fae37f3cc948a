"""Independent reference implementations used only by the tests."""

import math

LAYOUT = [("preamble", 16), ("header_class", 2), ("circuit_id", 20), ("priority", 3),
          ("payload_duration_us", 20), ("entanglement_type", 3), ("qos", 4), ("tos", 2)]


def crc16_ccitt_shift_register(bits):
    """Plain bit-serial CRC-16-CCITT (poly 0x1021, init 0xFFFF) over a bit list."""
    reg = [1] * 16
    taps = [i for i in range(16) if (0x1021 >> i) & 1]
    for b in bits:
        fb = reg[15] ^ b
        new = [0] * 16
        for i in range(15, 0, -1):
            new[i] = reg[i - 1] ^ (fb if i in taps else 0)
        new[0] = fb
        reg = new
    return sum(bit << i for i, bit in enumerate(reg))


def header_bitstring(values):
    """Field dict -> 88-character '0'/'1' string built straight from the layout."""
    s = "".join(format(int(values[name]), f"0{w}b") for name, w in LAYOUT)
    crc = crc16_ccitt_shift_register([int(c) for c in s])
    return s + format(crc, "016b") + "00"


def bits_to_bytes(s):
    return int(s, 2).to_bytes(len(s) // 8, "big")


def q_for_ber(target, lo=0.0, hi=40.0):
    """Bisection on 0.5*erfc(q/sqrt 2) = target."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(mid / math.sqrt(2)) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
