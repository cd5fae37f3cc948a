"""Physical-layer model of a Quantum Wrapper coexistence link."""

from .calibration import CarAnchors, Calibration, calibrate, load_calibration, save_calibration
from .model import (
    Q_AT_1E12,
    ChannelState,
    CoincidenceStats,
    DetectorModel,
    DutyCycle,
    HeaderMode,
    LinkMetrics,
    PairSourceModel,
    ReceiverModel,
    capture_fraction,
    car_vs_attenuation_sweep,
    coincidence_stats,
    crosstalk_photon_rate,
    dispersion_spread,
    expected_car,
    header_ber,
    header_exposure,
    noise_count_rate,
    received_power,
    rx_power_for_ber,
    singles_rates,
)
from .montecarlo import MonteCarloCounts, simulate_coincidences

__all__ = [
    "Q_AT_1E12", "CarAnchors", "Calibration", "ChannelState", "CoincidenceStats", "DetectorModel",
    "DutyCycle", "HeaderMode", "LinkMetrics", "MonteCarloCounts", "PairSourceModel", "ReceiverModel",
    "calibrate", "capture_fraction", "car_vs_attenuation_sweep", "coincidence_stats",
    "crosstalk_photon_rate", "dispersion_spread", "expected_car", "header_ber", "header_exposure",
    "load_calibration", "noise_count_rate", "received_power", "rx_power_for_ber", "save_calibration",
    "simulate_coincidences", "singles_rates",
]
