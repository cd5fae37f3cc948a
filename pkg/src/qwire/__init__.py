"""qwire: Quantum Wrapper networking simulator."""

from .frame_codec import HeaderFields, QwDatagram, decode_header, encode_header, swap_label
from .photonics import HeaderMode, coincidence_stats, load_calibration

__version__ = "0.1.0"

__all__ = [
    "HeaderFields",
    "HeaderMode",
    "QwDatagram",
    "coincidence_stats",
    "decode_header",
    "encode_header",
    "load_calibration",
    "swap_label",
]
