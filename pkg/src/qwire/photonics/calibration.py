"""Fit the coincidence model to the measured CAR anchors and persist the result."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

from scipy.optimize import brentq

from .model import (
    ChannelState,
    DetectorModel,
    DutyCycle,
    HeaderMode,
    PairSourceModel,
    ReceiverModel,
    expected_car,
)

FIXTURE_VERSION = 1


@dataclass(frozen=True)
class CarAnchors:
    none_db: float = 16.0
    continuous_db: float = 3.7
    burst_db: float = 12.6
    launch_dbm: float = -21.0
    wdm_crosstalk_db: float = -50.0
    coincidence_window_ns: float = 2.0

    @classmethod
    def from_dict(cls, d: dict) -> "CarAnchors":
        known = {k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class Calibration:
    source: PairSourceModel
    detector: DetectorModel
    receiver: ReceiverModel = field(default_factory=ReceiverModel)
    duty: DutyCycle = field(default_factory=DutyCycle)
    launch_dbm: float = -21.0
    channel: ChannelState = field(default_factory=ChannelState)
    anchors: CarAnchors = field(default_factory=CarAnchors)

    def car_db(self, mode: HeaderMode, ch: ChannelState | None = None,
               launch_dbm: float | None = None) -> float:
        car = expected_car(self.source, self.detector, ch or self.channel, mode,
                           self.launch_dbm if launch_dbm is None else launch_dbm, self.duty)
        return 10.0 * math.log10(car)

    def to_dict(self) -> dict:
        return {
            "version": FIXTURE_VERSION,
            "source": asdict(self.source),
            "detector": asdict(self.detector),
            "receiver": asdict(self.receiver),
            "duty": asdict(self.duty),
            "launch_dbm": self.launch_dbm,
            "channel": asdict(self.channel),
            "anchors": asdict(self.anchors),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        return cls(
            source=PairSourceModel(**d["source"]),
            detector=DetectorModel(**d["detector"]),
            receiver=ReceiverModel(**d.get("receiver", {})),
            duty=DutyCycle(**d.get("duty", {})),
            launch_dbm=float(d.get("launch_dbm", -21.0)),
            channel=ChannelState(**d.get("channel", {})),
            anchors=CarAnchors.from_dict(d.get("anchors", {})),
        )


def calibrate(anchors: CarAnchors = CarAnchors(), *,
              detector_efficiency: float = 0.2,
              dark_count_rate_hz: float = 1000.0,
              heralding_efficiency_signal: float = 0.01,
              heralding_efficiency_idler: float = 0.5,
              receiver: ReceiverModel = ReceiverModel(),
              duty: DutyCycle = DutyCycle()) -> Calibration:
    """Solve for pair rate, crosstalk coupling and gate extinction.

    Each anchor pins one parameter, solved in turn:

    * no-header CAR depends only on the pair rate (taking the high-rate root,
      where multi-pair accidentals rather than dark counts limit the CAR);
    * continuous-header CAR then fixes how much leaked header light reaches
      the signal detector;
    * burst-header CAR fixes the residual light left by the gate extinction.
    """
    channel = ChannelState(attenuation_db=0.0, wdm_crosstalk_db=anchors.wdm_crosstalk_db)
    det = DetectorModel(efficiency=detector_efficiency, dark_count_rate_hz=dark_count_rate_hz,
                        coincidence_window_ns=anchors.coincidence_window_ns, gated=True,
                        gate_extinction_db=0.0, crosstalk_coupling=1.0)
    src = PairSourceModel(pair_rate_hz=1.0,
                          heralding_efficiency_signal=heralding_efficiency_signal,
                          heralding_efficiency_idler=heralding_efficiency_idler)

    def car(s, d, mode):
        return 10.0 * math.log10(expected_car(s, d, channel, mode, anchors.launch_dbm, duty))

    eta_s = heralding_efficiency_signal * detector_efficiency
    eta_i = heralding_efficiency_idler * detector_efficiency
    peak = dark_count_rate_hz / math.sqrt(eta_s * eta_i) if dark_count_rate_hz > 0 else 1.0
    pair_rate = brentq(lambda p: car(replace(src, pair_rate_hz=p), det, HeaderMode.NONE) - anchors.none_db,
                       peak, 1e12, xtol=1e-6, rtol=1e-12)
    src = replace(src, pair_rate_hz=pair_rate)

    coupling = brentq(lambda k: car(src, replace(det, crosstalk_coupling=k), HeaderMode.CONTINUOUS)
                      - anchors.continuous_db, 1e-12, 1.0, xtol=1e-15, rtol=1e-12)
    det = replace(det, crosstalk_coupling=coupling)

    extinction = brentq(lambda e: car(src, replace(det, gate_extinction_db=e), HeaderMode.BURST)
                        - anchors.burst_db, 0.0, 80.0, xtol=1e-10)
    det = replace(det, gate_extinction_db=extinction)

    return Calibration(source=src, detector=det, receiver=receiver, duty=duty,
                       launch_dbm=anchors.launch_dbm, channel=channel, anchors=anchors)


DEFAULT_FIXTURE = "calibration.json"


def save_calibration(cal: Calibration, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cal.to_dict(), indent=2) + "\n")


def load_calibration(path: str | Path | None = None) -> Calibration:
    if path is None:
        return _default_calibration()
    return Calibration.from_dict(json.loads(Path(path).read_text()))


@lru_cache(maxsize=1)
def _default_calibration() -> Calibration:
    text = resources.files("qwire.data").joinpath(DEFAULT_FIXTURE).read_text()
    return Calibration.from_dict(json.loads(text))
