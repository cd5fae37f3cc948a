import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from oracles import q_for_ber
from qwire.photonics import (
    Q_AT_1E12,
    CarAnchors,
    ChannelState,
    DetectorModel,
    DutyCycle,
    HeaderMode,
    PairSourceModel,
    ReceiverModel,
    calibrate,
    capture_fraction,
    car_vs_attenuation_sweep,
    coincidence_stats,
    crosstalk_photon_rate,
    dispersion_spread,
    header_ber,
    load_calibration,
    received_power,
    rx_power_for_ber,
    simulate_coincidences,
)

CAL = load_calibration()
SRC, DET, RX, DUTY = CAL.source, CAL.detector, CAL.receiver, CAL.duty


def stats_for(mode, ch=None, launch=-21.0, integration=100.0, det=DET):
    return coincidence_stats(SRC, det, ch or CAL.channel, mode, launch, DUTY, integration)


def poisson_3sigma(observed, mean):
    """Central Poisson interval with the same coverage as +/-3 sigma."""
    tail = stats.norm.sf(3.0)
    return stats.poisson.ppf(tail, mean) <= observed <= stats.poisson.ppf(1 - tail, mean)


@pytest.mark.parametrize("launch,att,expected", [(-21, 0, -21), (-28, 7, -35), (-21, 50, -71)])
def test_received_power(launch, att, expected):
    assert received_power(launch, ChannelState(attenuation_db=att)) == expected


def test_q_anchor_matches_bisection():
    q = q_for_ber(1e-12)
    assert Q_AT_1E12 == pytest.approx(q, rel=1e-9)
    assert Q_AT_1E12 == pytest.approx(7.034, abs=1e-3)


def test_ber_at_sensitivity():
    q = q_for_ber(1e-12)
    oracle = 0.5 * math.erfc(q / math.sqrt(2))
    ber = header_ber(RX.sensitivity_dbm, RX)
    assert abs(ber - 1e-12) <= 0.05e-12
    assert abs(ber - oracle) <= 0.05 * oracle


def test_ber_limits():
    assert header_ber(RX.sensitivity_dbm + 30, RX) == pytest.approx(0.0, abs=1e-300)
    assert header_ber(RX.sensitivity_dbm - 40, RX) == pytest.approx(0.5, abs=0.01)
    assert header_ber(-1e6, RX) <= 0.5


@given(st.floats(-80, 0), st.floats(0.01, 20))
def test_ber_monotone_and_bounded(rx_dbm, step):
    lo, hi = header_ber(rx_dbm, RX), header_ber(rx_dbm + step, RX)
    assert 0.0 <= hi <= lo <= 0.5


@given(st.floats(1e-15, 0.49))
def test_ber_inverse(ber):
    assert header_ber(rx_power_for_ber(ber, RX), RX) == pytest.approx(ber, rel=1e-6)


def test_crosstalk_rate_hand_check():
    watts = 10 ** (-71 / 10) * 1e-3
    energy = 6.62607015e-34 * 299792458.0 / 1561.42e-9
    rate = crosstalk_photon_rate(-21, ChannelState(wdm_crosstalk_db=-50), 1561.42)
    assert rate == pytest.approx(watts / energy, rel=1e-12)
    assert rate == pytest.approx(6.2e8, rel=0.01)


def test_crosstalk_disabled_and_linear():
    assert crosstalk_photon_rate(-21, ChannelState(wdm_crosstalk_db=-math.inf), 1561.42) == 0.0
    base = crosstalk_photon_rate(-21, ChannelState(), 1561.42)
    doubled = crosstalk_photon_rate(-21 + 10 * math.log10(2), ChannelState(), 1561.42)
    assert doubled == pytest.approx(2 * base, rel=1e-12)


def test_dispersion_spread():
    ch = ChannelState(length_km=5, dispersion_ps_nm_km=17)
    assert dispersion_spread(ch, 40) == pytest.approx(17 * 5 * 40)
    assert dispersion_spread(ch, 40) == pytest.approx(3400)
    assert dispersion_spread(ChannelState(length_km=0), 40) == 0
    assert dispersion_spread(ch, 20) == pytest.approx(dispersion_spread(ch, 40) / 2)


@given(st.floats(0, 5000), st.floats(0.1, 10))
def test_capture_fraction_is_one_inside_window(spread_ps, window_ns):
    cf = capture_fraction(spread_ps, window_ns)
    if spread_ps <= window_ns * 1e3:
        assert cf == 1.0
    else:
        assert cf == pytest.approx(window_ns * 1e3 / spread_ps)


@pytest.mark.parametrize("mode,anchor", [
    (HeaderMode.NONE, 16.0), (HeaderMode.CONTINUOUS, 3.7), (HeaderMode.BURST, 12.6)])
def test_calibrated_mode_anchors(mode, anchor):
    assert abs(stats_for(mode).car_db - anchor) <= 1.0


def test_mode_ordering():
    none, burst, cont = (stats_for(m).car_db for m in (HeaderMode.NONE, HeaderMode.BURST, HeaderMode.CONTINUOUS))
    assert none >= burst >= cont


def test_counts_invariants():
    s = stats_for(HeaderMode.BURST)
    assert s.cc_total == s.true_coincidences + s.accidentals
    assert s.cc_total >= s.accidentals >= 0
    assert s.car_linear == pytest.approx(s.cc_total / s.accidentals)
    assert s.car_db == pytest.approx(10 * math.log10(s.car_linear))


def test_zero_accidentals_sentinel():
    det = replace(DET, dark_count_rate_hz=0.0)
    weak = replace(SRC, pair_rate_hz=10.0)
    s = coincidence_stats(weak, det, CAL.channel, HeaderMode.NONE, -21, DUTY, 1.0)
    assert s.zero_accidentals and math.isinf(s.car_db)
    with pytest.raises(ValueError):
        coincidence_stats(SRC, DET, CAL.channel, HeaderMode.NONE, -21, DUTY, 0.0)


@settings(max_examples=60)
@given(st.floats(0, 30), st.floats(0.01, 10), st.sampled_from(list(HeaderMode)))
def test_car_nonincreasing_in_attenuation(att, step, mode):
    a = stats_for(mode, ChannelState(attenuation_db=att), integration=1e4).car_db
    b = stats_for(mode, ChannelState(attenuation_db=att + step), integration=1e4).car_db
    assert b <= a + 1e-12


@settings(max_examples=60)
@given(st.floats(0, 1e-1), st.floats(1e-6, 1e-1), st.sampled_from(list(HeaderMode)))
def test_car_nonincreasing_in_injected_noise(noise, step, mode):
    a = stats_for(mode, ChannelState(injected_noise_rate_per_ns=noise)).car_db
    b = stats_for(mode, ChannelState(injected_noise_rate_per_ns=noise + step)).car_db
    assert b <= a + 1e-12


def test_blind_spot_invisible_to_ber():
    clean = ChannelState()
    noisy = ChannelState(injected_noise_rate_per_ns=1e-2)
    ber_clean = header_ber(received_power(-21, clean), RX)
    ber_noisy = header_ber(received_power(-21, noisy), RX)
    assert ber_noisy - ber_clean == 0
    drop = stats_for(HeaderMode.BURST, clean).car_db - stats_for(HeaderMode.BURST, noisy).car_db
    assert drop > 10


def test_dispersion_lowers_car():
    short = stats_for(HeaderMode.BURST, ChannelState(length_km=0))
    long = stats_for(HeaderMode.BURST, ChannelState(length_km=5))
    assert long.car_db < short.car_db
    assert long.true_coincidences == pytest.approx(short.true_coincidences * 2000 / 3400)


SWEEP_ATT = np.arange(0.0, 15.5, 0.5)


def fig5_sweep():
    return car_vs_attenuation_sweep(SRC, DET, RX, CAL.channel, HeaderMode.BURST, -28.0, DUTY, 1000.0, SWEEP_ATT)


def test_sweep_zero_point_matches_direct_evaluation():
    first = fig5_sweep()[0]
    direct = coincidence_stats(SRC, DET, CAL.channel, HeaderMode.BURST, -28.0, DUTY, 1000.0)
    assert first.stats == direct
    assert first.received_power_dbm == -28.0


def test_sweep_monotone_and_correlated():
    sweep = fig5_sweep()
    car = np.array([m.stats.car_db for m in sweep])
    ber = np.array([m.header_ber for m in sweep])
    assert np.all(np.diff(car) < 0)
    assert np.all(np.diff(ber) > 0)
    rho = stats.spearmanr(-np.log10(ber), car).statistic
    assert rho >= 0.95


def test_sweep_validates_input():
    with pytest.raises(ValueError):
        car_vs_attenuation_sweep(SRC, DET, RX, CAL.channel, HeaderMode.BURST, -28, DUTY, 1, [])
    with pytest.raises(ValueError):
        car_vs_attenuation_sweep(SRC, DET, RX, CAL.channel, HeaderMode.BURST, -28, DUTY, 1, [3, 1])


@pytest.mark.parametrize("att", [0.0, 4.0, 8.0, 12.0, 15.0])
def test_monte_carlo_agrees_with_analytic(att):
    ch = ChannelState(attenuation_db=att)
    rng = np.random.default_rng(int(att * 10) + 7)
    mc = simulate_coincidences(SRC, DET, ch, HeaderMode.BURST, -28.0, DUTY, 1.0, rng)
    an = coincidence_stats(SRC, DET, ch, HeaderMode.BURST, -28.0, DUTY, 1.0)
    assert poisson_3sigma(mc.cc, an.cc_total)
    assert poisson_3sigma(mc.ac_total, an.accidentals * mc.ac_windows)


def test_monte_carlo_dispersion_capture():
    ch = ChannelState(length_km=5)
    mc = simulate_coincidences(SRC, DET, ch, HeaderMode.BURST, -21.0, DUTY, 1.0, np.random.default_rng(5))
    an = coincidence_stats(SRC, DET, ch, HeaderMode.BURST, -21.0, DUTY, 1.0)
    assert poisson_3sigma(mc.cc, an.cc_total)


def test_calibrate_reproduces_shipped_fixture():
    fitted = calibrate(CAL.anchors)
    assert fitted.source.pair_rate_hz == pytest.approx(SRC.pair_rate_hz, rel=1e-9)
    assert fitted.detector.crosstalk_coupling == pytest.approx(DET.crosstalk_coupling, rel=1e-6)
    assert fitted.detector.gate_extinction_db == pytest.approx(DET.gate_extinction_db, rel=1e-6)


def test_calibrate_other_anchors():
    cal = calibrate(CarAnchors(none_db=18.0, continuous_db=5.0, burst_db=11.0))
    assert cal.car_db(HeaderMode.NONE) == pytest.approx(18.0, abs=1e-6)
    assert cal.car_db(HeaderMode.CONTINUOUS) == pytest.approx(5.0, abs=1e-6)
    assert cal.car_db(HeaderMode.BURST) == pytest.approx(11.0, abs=1e-6)


def test_fixture_file_is_versioned_json():
    path = Path(__file__).parents[1] / "src" / "qwire" / "data" / "calibration.json"
    data = json.loads(path.read_text())
    assert data["version"] == 1
    assert data["anchors"]["wdm_crosstalk_db"] == -50.0


def test_channel_composition():
    a = ChannelState(attenuation_db=3, length_km=2, dispersion_ps_nm_km=17)
    b = ChannelState(attenuation_db=4, length_km=3, dispersion_ps_nm_km=4)
    c = a.compose(b)
    assert c.attenuation_db == 7 and c.length_km == 5
    assert dispersion_spread(c, 40) == pytest.approx(dispersion_spread(a, 40) + dispersion_spread(b, 40))


def test_type_validation():
    with pytest.raises(ValueError):
        ChannelState(attenuation_db=-1)
    with pytest.raises(ValueError):
        ChannelState(wdm_crosstalk_db=3)
    with pytest.raises(ValueError):
        PairSourceModel(1e6, 0.0, 0.5)
    with pytest.raises(ValueError):
        PairSourceModel(1e6, 0.5, 0.5, signal_wavelength_nm=1550, header_wavelength_nm=1550)
    with pytest.raises(ValueError):
        DetectorModel(0.2, 100, coincidence_window_ns=0)
    with pytest.raises(ValueError):
        ReceiverModel(noise_slope=0)
    with pytest.raises(ValueError):
        DutyCycle(header_us=200, payload_us=1130, period_us=1230)
