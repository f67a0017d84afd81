import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbanadapt.channel import PathLossTrace, synthetic_trace
from wbanadapt.errors import ComparisonError, ConfigError
from wbanadapt.netsim import (
    EmgPolicy,
    FixedPower,
    HrPolicy,
    ImuPolicy,
    RadioConfig,
    SummaryReport,
    compare_reports,
    energy_report,
    rssi,
    run_scenario,
    write_packets_csv,
)
from wbanadapt.signals import BiosignalTrace, SignalKind, synth_ecg, synth_emg

FT = 1 / 120


def periodic_trace(duration, period=1.1, phase=0.2, mean=79.0, swing=6.0):
    t = np.arange(int(round(duration / FT))) * FT
    return PathLossTrace("periodic", FT, mean - swing * np.cos(2 * math.pi * (t - phase) / period))


def imu_trace(duration, period=1.1, phase=0.55):
    t = np.arange(int(round(duration * 1000))) * 1e-3
    return BiosignalTrace(SignalKind.ACCEL, 1e-3, np.cos(2 * math.pi * (t - phase) / period))


def test_rssi_examples():
    sens = RadioConfig().sensitivity
    assert rssi(-4, 80) == -84 and rssi(-4, 80) >= sens
    assert rssi(-8, 80) == -88 and rssi(-8, 80) < sens
    assert rssi(0, 85) == -85 and rssi(0, 85) >= sens


def test_radio_config_validation():
    with pytest.raises(ConfigError):
        RadioConfig(power_levels=(-8.0, 2.0))
    with pytest.raises(ConfigError):
        RadioConfig().power_mw(2.0)
    r = RadioConfig()
    assert RadioConfig.from_dict(r.to_dict()) == r


def test_zero_path_loss_delivers_everything():
    tr = synthetic_trace(0.0, 5.0)
    for p in (-8.0, -4.0, 0.0, 4.0):
        rep = run_scenario(tr, FixedPower(p))
        assert rep.pdr == 1.0 and rep.generated == 50


def test_fixed_power_counts_and_energy():
    tr = synthetic_trace(80.0, 2.0, fade_db=10.0, fade_intervals=[(1.0, 1.5)])
    rep = run_scenario(tr, FixedPower(-4.0))
    assert rep.generated == 20 and rep.delivered == 15
    assert rep.delivered + rep.dropped == rep.generated
    assert rep.radio_energy_mj == pytest.approx(20 * 24.0 * 1e-3)
    assert all(pk.transmitted_at == [pk.generated_at] for pk in rep.packets)


@settings(max_examples=15)
@given(st.floats(60, 100), st.floats(0, 12), st.integers(0, 2**31 - 1))
def test_pdr_monotone_in_power(base, fade, seed):
    rng = np.random.default_rng(seed)
    pl = base + fade * rng.standard_normal(240)
    tr = PathLossTrace("x", FT, pl)
    pdrs = [run_scenario(tr, FixedPower(p)).pdr for p in (-8.0, -4.0, 0.0, 4.0)]
    assert pdrs == sorted(pdrs)


def test_duration_and_policy_errors():
    tr = synthetic_trace(60.0, 2.0)
    with pytest.raises(ConfigError):
        run_scenario(tr, FixedPower(-8.0), duration=3.0)
    with pytest.raises(ConfigError):
        run_scenario(tr, FixedPower(2.0))
    with pytest.raises(ConfigError):
        run_scenario(tr, ImuPolicy(-8.0, imu_trace(1.0)))
    with pytest.raises(ConfigError):
        run_scenario(tr, "fixed")


def test_imu_scheduler_beats_fixed_on_periodic_trace():
    tr = periodic_trace(33.0)
    imu = imu_trace(33.0)
    fixed = run_scenario(tr, FixedPower(-8.0), duration=30.0)
    for causal in (False, True):
        sched = run_scenario(tr, ImuPolicy(-8.0, imu, causal=causal), duration=30.0)
        assert sched.generated == fixed.generated == 300
        assert sched.pdr > fixed.pdr + 0.3
        assert sched.delivered + sched.dropped == sched.generated
        for pk in sched.packets:
            assert pk.transmitted_at == sorted(pk.transmitted_at)
            assert all(t >= pk.generated_at for t in pk.transmitted_at)
            if pk.delivered:
                assert pk.rssi[-1] >= -85.0
        assert sched.params["rss_reads"] >= 1 and sched.params["alpha"] is not None


@settings(max_examples=8, deadline=None)
@given(st.floats(0.9, 1.3), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_scheduler_benefit_property(period, pl_phase, imu_phase):
    # peaks clear the -85 dBm sensitivity at -8 dBm (PL 73), troughs do not (PL 85)
    tr = periodic_trace(25.0, period=period, phase=pl_phase * period)
    imu = imu_trace(25.0, period=period, phase=imu_phase * period)
    fixed = run_scenario(tr, FixedPower(-8.0), duration=22.0)
    sched = run_scenario(tr, ImuPolicy(-8.0, imu), duration=22.0)
    assert sched.pdr > fixed.pdr


def test_imu_stop_falls_back_to_immediate():
    tr = periodic_trace(20.0, mean=60.0)
    t = np.arange(20_000) * 1e-3
    acc = np.where(t < 8.0, np.cos(2 * math.pi * (t - 0.55) / 1.1), 0.0)
    rep = run_scenario(tr, ImuPolicy(-8.0, BiosignalTrace(SignalKind.ACCEL, 1e-3, acc)))
    assert rep.params["periodicity_losses"] >= 1
    late = [pk for pk in rep.packets if pk.generated_at > 12.0]
    assert all(pk.transmitted_at == [pk.generated_at] for pk in late)
    assert rep.pdr == 1.0


def test_tpc_policies_apply_commanded_power():
    tr = synthetic_trace(70.0, 10.0)
    emg = synth_emg(50, 800, [(3.0, 6.0)], 10.0, seed=2)
    rep = run_scenario(tr, EmgPolicy(emg, p_low=-8.0, p_high=0.0))
    powers = {round(pk.generated_at, 3): pk.tx_power[0] for pk in rep.packets}
    assert powers[1.0] == -8.0 and powers[4.0] == 0.0 and powers[8.0] == -8.0
    ecg = synth_ecg([(0.0, 70.0), (4.0, 110.0)], 10.0)
    rep = run_scenario(tr, HrPolicy(ecg))
    assert rep.packets[10].tx_power[0] == -8.0 and rep.packets[-1].tx_power[0] == 4.0
    with pytest.raises(ConfigError):
        run_scenario(tr, EmgPolicy(synth_emg(50, 800, [], 5.0)))


def test_labels_mean_rss():
    tr = synthetic_trace(80.0, 4.0, fade_db=10.0, fade_intervals=[(2.0, 4.0)])
    rep = run_scenario(tr, FixedPower(-4.0), labels={"clear": (0.0, 2.0), "faded": (2.0, 4.0)})
    assert rep.mean_rss_dbm == {"clear": pytest.approx(-84.0), "faded": pytest.approx(-94.0)}


def test_determinism_byte_identical(tmp_path):
    tr = periodic_trace(13.0)
    imu = imu_trace(13.0)
    a = run_scenario(tr, ImuPolicy(-8.0, imu), duration=10.0)
    b = run_scenario(tr, ImuPolicy(-8.0, imu), duration=10.0)
    assert a.to_json() == b.to_json()
    write_packets_csv(a, tmp_path / "a.csv")
    write_packets_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "seq,gen_t,tx_t,power_dbm,pl_db,rssi_dbm,delivered"


def _summary(pdr, fractions, policy="p"):
    return SummaryReport(policy, RadioConfig(), 1000, pdr, fractions)


def test_energy_examples():
    fixed = _summary(0.46, {-8.0: 1.0})
    sched = _summary(0.87, {-8.0: 1.0})
    ef = energy_report(fixed, "one_retry_always_succeeds")
    es = energy_report(sched, "one_retry_always_succeeds")
    assert ef.attempts_per_packet == pytest.approx(1.54)
    assert es.mw_per_packet / ef.mw_per_packet - 1 == pytest.approx(-0.266, abs=5e-4)

    lo, hi = _summary(1.0, {-4.0: 1.0}), _summary(1.0, {4.0: 1.0})
    assert energy_report(hi).mw_per_packet / energy_report(lo).mw_per_packet - 1 == pytest.approx(0.3125)

    emg = _summary(1.0, {-4.0: 0.488, 4.0: 0.512})
    assert energy_report(emg).mw_per_packet / 24.0 - 1 == pytest.approx(0.16, abs=1e-3)

    with pytest.raises(ConfigError):
        energy_report(fixed, "two_retries")


def test_energy_matches_report_integral():
    tr = synthetic_trace(82.0, 3.0, fade_db=10.0, fade_intervals=[(1.0, 2.0)])
    rep = run_scenario(tr, FixedPower(-4.0))
    e = energy_report(rep)
    assert e.total_mj == pytest.approx(rep.radio_energy_mj)


def test_compare_reports():
    rows = compare_reports([_summary(0.46, {-8.0: 1.0}, "fixed"), _summary(0.87, {-8.0: 1.0}, "imu")])
    assert rows[1]["pdr_delta_pp"] == pytest.approx(41.0)
    assert rows[1]["power_change_pct"] == pytest.approx(-26.6, abs=0.05)
    assert rows[0]["power_change_pct"] == 0.0
    other = SummaryReport("x", RadioConfig(sensitivity=-90.0), 10, 1.0, {-8.0: 1.0})
    with pytest.raises(ComparisonError):
        compare_reports([_summary(1.0, {-8.0: 1.0}), other])
    with pytest.raises(ComparisonError):
        compare_reports([])


def test_summary_json_round_trip():
    rep = run_scenario(synthetic_trace(82.0, 2.0), FixedPower(-4.0))
    s = SummaryReport.from_json(rep.to_json())
    assert s == SummaryReport.of(rep)
    doc = json.loads(rep.to_json())
    assert doc["generated"] == doc["delivered"] + doc["dropped"]
    with pytest.raises(ConfigError):
        SummaryReport.from_json('{"policy": "x"}')
