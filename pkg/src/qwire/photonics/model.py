"""Analytic physical-layer model: header BER and payload coincidence statistics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import constants
from scipy.special import erfc, erfcinv

# Q-factor at which a Gaussian OOK receiver reaches BER = 1e-12
Q_AT_1E12 = float(math.sqrt(2.0) * erfcinv(2e-12))


class HeaderMode(str, enum.Enum):
    NONE = "none"
    CONTINUOUS = "continuous"
    BURST = "burst"


@dataclass(frozen=True)
class ChannelState:
    attenuation_db: float = 0.0
    length_km: float = 0.0
    dispersion_ps_nm_km: float = 17.0
    wdm_crosstalk_db: float = -50.0
    injected_noise_rate_per_ns: float = 0.0

    def __post_init__(self):
        if self.attenuation_db < 0:
            raise ValueError(f"attenuation_db must be >= 0, got {self.attenuation_db}")
        if self.length_km < 0:
            raise ValueError(f"length_km must be >= 0, got {self.length_km}")
        if self.wdm_crosstalk_db > 0:
            raise ValueError(f"wdm_crosstalk_db must be <= 0, got {self.wdm_crosstalk_db}")
        if self.injected_noise_rate_per_ns < 0:
            raise ValueError("injected_noise_rate_per_ns must be >= 0")

    def compose(self, downstream: "ChannelState") -> "ChannelState":
        """Concatenate with a following span.

        Losses and lengths add; dispersion becomes the length-weighted mean so
        that D*L adds; injected noise adds.  Crosstalk is a property of the
        receiving demultiplexer, so the downstream value wins.
        """
        length = self.length_km + downstream.length_km
        if length > 0:
            disp = (self.dispersion_ps_nm_km * self.length_km
                    + downstream.dispersion_ps_nm_km * downstream.length_km) / length
        else:
            disp = downstream.dispersion_ps_nm_km
        return ChannelState(
            attenuation_db=self.attenuation_db + downstream.attenuation_db,
            length_km=length,
            dispersion_ps_nm_km=disp,
            wdm_crosstalk_db=downstream.wdm_crosstalk_db,
            injected_noise_rate_per_ns=self.injected_noise_rate_per_ns + downstream.injected_noise_rate_per_ns,
        )

    @classmethod
    def lossless(cls) -> "ChannelState":
        return cls(attenuation_db=0.0, length_km=0.0, wdm_crosstalk_db=-math.inf)


@dataclass(frozen=True)
class PairSourceModel:
    pair_rate_hz: float
    heralding_efficiency_signal: float
    heralding_efficiency_idler: float
    signal_wavelength_nm: float = 1565.72
    header_wavelength_nm: float = 1561.42
    signal_bandwidth_nm: float = 40.0
    idler_loss_db: float = 0.0

    def __post_init__(self):
        for name in ("heralding_efficiency_signal", "heralding_efficiency_idler"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.signal_wavelength_nm == self.header_wavelength_nm:
            raise ValueError("signal and header wavelengths must differ")
        if self.pair_rate_hz < 0:
            raise ValueError("pair_rate_hz must be >= 0")


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float
    dark_count_rate_hz: float
    coincidence_window_ns: float = 2.0
    gated: bool = True
    gate_extinction_db: float = 20.0
    # fraction of leaked classical photons that survive the signal arm's filtering
    crosstalk_coupling: float = 1.0

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"efficiency must be in (0, 1], got {self.efficiency}")
        if self.coincidence_window_ns <= 0:
            raise ValueError("coincidence_window_ns must be > 0")
        if not 0 <= self.crosstalk_coupling <= 1:
            raise ValueError("crosstalk_coupling must be in [0, 1]")


@dataclass(frozen=True)
class ReceiverModel:
    sensitivity_dbm: float = -28.0
    noise_slope: float = 2.0

    def __post_init__(self):
        if self.noise_slope <= 0:
            raise ValueError("noise_slope must be > 0")


@dataclass(frozen=True)
class DutyCycle:
    header_us: float = 102.4
    payload_us: float = 1130.0
    period_us: float = 1232.4

    def __post_init__(self):
        if self.period_us < self.header_us + self.payload_us:
            raise ValueError("period_us must be >= header_us + payload_us")

    @property
    def payload_fraction(self) -> float:
        return self.payload_us / self.period_us

    @property
    def header_fraction(self) -> float:
        return self.header_us / self.period_us


@dataclass(frozen=True)
class CoincidenceStats:
    cc_total: float
    accidentals: float
    true_coincidences: float
    car_linear: float
    car_db: float
    integration_s: float
    zero_accidentals: bool = False


@dataclass(frozen=True)
class LinkMetrics:
    header_ber: float
    received_power_dbm: float
    stats: CoincidenceStats | None = None
    noise_photon_rate_hz: float | None = None
    attenuation_db: float | None = None


def received_power(launch_dbm: float, ch: ChannelState) -> float:
    return launch_dbm - ch.attenuation_db


def header_ber(rx_dbm: float, rx: ReceiverModel) -> float:
    """Gaussian-noise OOK BER, anchored at 1e-12 at the receiver sensitivity."""
    q = Q_AT_1E12 * 10.0 ** (rx.noise_slope * (rx_dbm - rx.sensitivity_dbm) / 20.0)
    return float(min(0.5, 0.5 * erfc(q / math.sqrt(2.0))))


def rx_power_for_ber(ber: float, rx: ReceiverModel) -> float:
    """Inverse of :func:`header_ber` on 0 < ber < 0.5."""
    if not 0 < ber < 0.5:
        raise ValueError(f"ber must be in (0, 0.5), got {ber}")
    q = math.sqrt(2.0) * float(erfcinv(2.0 * ber))
    return rx.sensitivity_dbm + 20.0 / rx.noise_slope * math.log10(q / Q_AT_1E12)


def dbm_to_watts(dbm: float) -> float:
    if dbm == -math.inf:
        return 0.0
    return 1e-3 * 10.0 ** (dbm / 10.0)


def photon_energy_j(wavelength_nm: float) -> float:
    return constants.h * constants.c / (wavelength_nm * 1e-9)


def crosstalk_photon_rate(launch_dbm: float, ch: ChannelState, wavelength_nm: float) -> float:
    """Classical photons/s leaking through the demultiplexer into the quantum port."""
    leak_dbm = launch_dbm - ch.attenuation_db + ch.wdm_crosstalk_db
    return dbm_to_watts(leak_dbm) / photon_energy_j(wavelength_nm)


def dispersion_spread(ch: ChannelState, bandwidth_nm: float) -> float:
    """Temporal spread in ps of a ``bandwidth_nm``-wide payload over the channel."""
    return ch.dispersion_ps_nm_km * ch.length_km * bandwidth_nm


def capture_fraction(spread_ps: float, window_ns: float) -> float:
    window_ps = window_ns * 1e3
    return min(1.0, window_ps / max(window_ps, spread_ps))


def header_exposure(mode: HeaderMode, det: DetectorModel, duty: DutyCycle) -> float:
    """Fraction of the header's leaked light seen by the signal detector while live."""
    mode = HeaderMode(mode)
    if mode is HeaderMode.NONE:
        return 0.0
    if mode is HeaderMode.CONTINUOUS:
        return 1.0
    residual = 10.0 ** (-det.gate_extinction_db / 10.0)
    if det.gated:
        return residual
    h = duty.header_fraction
    return h + (1.0 - h) * residual


def live_time_s(det: DetectorModel, duty: DutyCycle, integration_s: float) -> float:
    return integration_s * (duty.payload_fraction if det.gated else 1.0)


@dataclass(frozen=True)
class SinglesRates:
    signal_hz: float
    idler_hz: float
    true_pair_hz: float
    signal_noise_hz: float


def singles_rates(src: PairSourceModel, det: DetectorModel, ch: ChannelState,
                  header_mode: HeaderMode, launch_dbm: float, duty: DutyCycle) -> SinglesRates:
    eta_s = src.heralding_efficiency_signal * det.efficiency
    eta_i = src.heralding_efficiency_idler * det.efficiency
    t_s = 10.0 ** (-ch.attenuation_db / 10.0)
    t_i = 10.0 ** (-src.idler_loss_db / 10.0)
    xtalk = crosstalk_photon_rate(launch_dbm, ch, src.header_wavelength_nm)
    noise_photons = det.crosstalk_coupling * xtalk * header_exposure(header_mode, det, duty)
    noise_photons += ch.injected_noise_rate_per_ns * 1e9
    signal_noise = det.efficiency * noise_photons
    capture = capture_fraction(dispersion_spread(ch, src.signal_bandwidth_nm), det.coincidence_window_ns)
    return SinglesRates(
        signal_hz=src.pair_rate_hz * eta_s * t_s + signal_noise + det.dark_count_rate_hz,
        idler_hz=src.pair_rate_hz * eta_i * t_i + det.dark_count_rate_hz,
        true_pair_hz=src.pair_rate_hz * eta_s * eta_i * t_s * t_i * capture,
        signal_noise_hz=signal_noise,
    )


def expected_car(src: PairSourceModel, det: DetectorModel, ch: ChannelState,
                 header_mode: HeaderMode, launch_dbm: float, duty: DutyCycle) -> float:
    """Linear CAR from rates alone, with no count rounding."""
    r = singles_rates(src, det, ch, header_mode, launch_dbm, duty)
    ac_rate = r.signal_hz * r.idler_hz * det.coincidence_window_ns * 1e-9
    if ac_rate == 0:
        return math.inf
    return (r.true_pair_hz + ac_rate) / ac_rate


def coincidence_stats(src: PairSourceModel, det: DetectorModel, ch: ChannelState,
                      header_mode: HeaderMode, launch_dbm: float, duty: DutyCycle,
                      integration_s: float) -> CoincidenceStats:
    if integration_s <= 0:
        raise ValueError("integration_s must be > 0")
    r = singles_rates(src, det, ch, header_mode, launch_dbm, duty)
    live = live_time_s(det, duty, integration_s)
    ac = r.signal_hz * r.idler_hz * det.coincidence_window_ns * 1e-9 * live
    tc = r.true_pair_hz * live
    cc = tc + ac
    if round(ac) == 0:
        return CoincidenceStats(cc, ac, tc, math.inf, math.inf, integration_s, zero_accidentals=True)
    car = cc / ac
    return CoincidenceStats(cc, ac, tc, car, 10.0 * math.log10(car), integration_s)


def noise_count_rate(src: PairSourceModel, det: DetectorModel, ch: ChannelState,
                     header_mode: HeaderMode, launch_dbm: float, duty: DutyCycle) -> float:
    """Signal-detector clicks/s during an empty (probe) payload window."""
    r = singles_rates(replace(src, pair_rate_hz=0.0), det, ch, header_mode, launch_dbm, duty)
    return r.signal_hz


def car_vs_attenuation_sweep(src: PairSourceModel, det: DetectorModel, rx: ReceiverModel,
                             ch: ChannelState, header_mode: HeaderMode, launch_dbm: float,
                             duty: DutyCycle, integration_s: float,
                             attenuations: Sequence[float]) -> list[LinkMetrics]:
    att = np.asarray(list(attenuations), dtype=float)
    if att.size == 0:
        raise ValueError("attenuations must be nonempty")
    if np.any(np.diff(att) < 0):
        raise ValueError("attenuations must be nondecreasing")
    out = []
    for a in att:
        point = replace(ch, attenuation_db=float(a))
        rx_dbm = received_power(launch_dbm, point)
        out.append(LinkMetrics(
            header_ber=header_ber(rx_dbm, rx),
            received_power_dbm=rx_dbm,
            stats=coincidence_stats(src, det, point, header_mode, launch_dbm, duty, integration_s),
            attenuation_db=float(a),
        ))
    return out
