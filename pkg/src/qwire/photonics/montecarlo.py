"""Event-level Monte Carlo of photon-pair detection and windowed coincidence counting.

Used as an independent check on the analytic model: rates are rebuilt here from
the physical parameters, arrivals are Poisson-sampled, and coincidences are
found by pairing time stamps.  Accidentals come from delayed windows well
outside the correlation time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants

from .model import ChannelState, DetectorModel, DutyCycle, HeaderMode, PairSourceModel


@dataclass(frozen=True)
class MonteCarloCounts:
    cc: int
    ac: float          # mean count per delayed window
    ac_windows: int
    ac_total: int      # summed over delayed windows
    live_time_s: float
    signal_clicks: int
    idler_clicks: int


def _leak_photons_per_s(launch_dbm, ch, wavelength_nm):
    watts = 1e-3 * 10.0 ** ((launch_dbm - ch.attenuation_db + ch.wdm_crosstalk_db) / 10.0)
    return watts * wavelength_nm * 1e-9 / (constants.h * constants.c)


def _count_in_window(signal, idler_sorted, lo_ns, hi_ns):
    """Number of (s, i) pairs with lo <= s - i < hi."""
    upper = np.searchsorted(idler_sorted, signal - lo_ns, side="right")
    lower = np.searchsorted(idler_sorted, signal - hi_ns, side="right")
    return int(np.sum(upper - lower))


def simulate_coincidences(src: PairSourceModel, det: DetectorModel, ch: ChannelState,
                          header_mode: HeaderMode, launch_dbm: float, duty: DutyCycle,
                          integration_s: float, rng: np.random.Generator,
                          ac_windows: int = 20) -> MonteCarloCounts:
    header_mode = HeaderMode(header_mode)
    live = integration_s * duty.payload_fraction if det.gated else integration_s
    span_ns = live * 1e9

    p_s = src.heralding_efficiency_signal * det.efficiency * 10 ** (-ch.attenuation_db / 10)
    p_i = src.heralding_efficiency_idler * det.efficiency * 10 ** (-src.idler_loss_db / 10)
    rate = src.pair_rate_hz

    # thinning a Poisson pair stream gives three independent Poisson classes
    n_both = rng.poisson(rate * p_s * p_i * live)
    n_s_only = rng.poisson(rate * p_s * (1 - p_i) * live)
    n_i_only = rng.poisson(rate * (1 - p_s) * p_i * live)

    if header_mode is HeaderMode.NONE:
        leak_fraction = 0.0
    elif header_mode is HeaderMode.CONTINUOUS:
        leak_fraction = 1.0
    else:
        off = 10 ** (-det.gate_extinction_db / 10)
        leak_fraction = off if det.gated else duty.header_us / duty.period_us + (1 - duty.header_us / duty.period_us) * off
    noise_photons = (det.crosstalk_coupling * leak_fraction
                     * _leak_photons_per_s(launch_dbm, ch, src.header_wavelength_nm)
                     + ch.injected_noise_rate_per_ns * 1e9)
    n_noise = rng.poisson(det.efficiency * noise_photons * live)
    n_dark_s = rng.poisson(det.dark_count_rate_hz * live)
    n_dark_i = rng.poisson(det.dark_count_rate_hz * live)

    spread_ns = ch.dispersion_ps_nm_km * ch.length_km * src.signal_bandwidth_nm * 1e-3
    t_pair = rng.uniform(0.0, span_ns, n_both)
    delay = rng.uniform(0.0, spread_ns, n_both) if spread_ns > 0 else np.zeros(n_both)
    signal = np.concatenate([
        t_pair + delay,
        rng.uniform(0.0, span_ns, n_s_only),
        rng.uniform(0.0, span_ns, n_noise),
        rng.uniform(0.0, span_ns, n_dark_s),
    ])
    idler = np.sort(np.concatenate([
        t_pair,
        rng.uniform(0.0, span_ns, n_i_only),
        rng.uniform(0.0, span_ns, n_dark_i),
    ]))

    tau = det.coincidence_window_ns
    centre = spread_ns / 2.0
    cc = _count_in_window(signal, idler, centre - tau / 2, centre + tau / 2)
    # delayed windows start 50 window widths beyond the dispersion spread
    first = centre + spread_ns + 50 * tau
    ac_total = 0
    for k in range(ac_windows):
        lo = first + k * tau
        ac_total += _count_in_window(signal, idler, lo - tau / 2, lo + tau / 2)
    return MonteCarloCounts(cc=cc, ac=ac_total / ac_windows, ac_windows=ac_windows,
                            ac_total=ac_total, live_time_s=live,
                            signal_clicks=int(signal.size), idler_clicks=int(idler.size))
