"""Deterministic packet-level simulation of one on-body link.

An application source emits a packet every ``packet_interval`` seconds. The
policy decides when (IMU scheduling) or at which power (fixed, EMG/HR TPC)
each packet goes out. A packet is delivered iff ``P_tx - PL >= sensitivity``
at the frame in which it is transmitted.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .adaptive import (
    RADIO_LEVELS_DBM,
    CommandKind,
    ImuScheduler,
    RadioCommand,
    ecg_tpc,
    emg_tpc,
    power_at,
)
from .analytics import moving_average
from .channel import PathLossTrace
from .errors import ComparisonError, ConfigError
from .signals import BiosignalTrace, PeakList, StreamingPeakDetector

log = logging.getLogger(__name__)

# Radio power draw per Tx level (mW). -8/-4/+4 dBm are the published figures
# for the evaluation radio; 0 dBm is linearly interpolated between -4 and +4.
DEFAULT_ENERGY_TABLE = {-8.0: 21.0, -4.0: 24.0, 0.0: 27.75, 4.0: 31.5}
DEFAULT_SENSITIVITY_DBM = -85.0


@dataclass(frozen=True)
class RadioConfig:
    power_levels: tuple[float, ...] = RADIO_LEVELS_DBM
    sensitivity: float = DEFAULT_SENSITIVITY_DBM
    energy_table: Mapping[float, float] = field(default_factory=lambda: dict(DEFAULT_ENERGY_TABLE))
    airtime_per_packet: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "power_levels", tuple(float(p) for p in self.power_levels))
        object.__setattr__(
            self, "energy_table", {float(k): float(v) for k, v in self.energy_table.items()}
        )
        if not self.airtime_per_packet > 0:
            raise ConfigError("airtime must be positive")
        for p in self.power_levels:
            if p not in self.energy_table:
                raise ConfigError(f"power level {p} dBm has no energy table entry")

    def check_level(self, p: float) -> None:
        if p not in self.power_levels:
            raise ConfigError(f"power {p} dBm is not one of the radio levels {self.power_levels}")

    def power_mw(self, p: float) -> float:
        try:
            return self.energy_table[float(p)]
        except KeyError:
            raise ConfigError(f"no energy table entry for {p} dBm") from None

    def to_dict(self) -> dict:
        return {
            "power_levels": list(self.power_levels),
            "sensitivity_dbm": self.sensitivity,
            "energy_table_mw": {f"{k:g}": v for k, v in sorted(self.energy_table.items())},
            "airtime_s": self.airtime_per_packet,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RadioConfig":
        return cls(
            power_levels=tuple(d["power_levels"]),
            sensitivity=float(d["sensitivity_dbm"]),
            energy_table={float(k): float(v) for k, v in d["energy_table_mw"].items()},
            airtime_per_packet=float(d["airtime_s"]),
        )


def rssi(p_tx: float, pl: float) -> float:
    """Received signal strength in dBm."""
    return p_tx - pl


# -- policies --------------------------------------------------------------

@dataclass(frozen=True)
class FixedPower:
    power: float
    name: str = "fixed"


@dataclass(frozen=True)
class ImuPolicy:
    """IMU-peak transmission scheduling at a fixed power.

    ``imu`` is the synthesized accelerometer trace of the Tx node. RSS peaks
    for calibration are taken from the path-loss trace smoothed over
    ``rss_smoothing`` seconds. Packets are buffered from the start, including
    during calibration, and released at scheduled instants. ``drop_limit``
    consecutive failed transmission instants force a re-calibration
    (``None`` disables it). If IMU peaks stop for two periods the link falls
    back to immediate transmission until peaks resume. With ``causal`` the
    scheduler only learns of an IMU peak when the streaming detector confirms
    it, and late transmission times are clipped to that instant.
    """

    power: float
    imu: BiosignalTrace = field(repr=False)
    rss_smoothing: float = 0.1
    drop_limit: int | None = 3
    causal: bool = False
    timeout_periods: float = 2.0
    name: str = "imu"


@dataclass(frozen=True)
class EmgPolicy:
    emg: BiosignalTrace = field(repr=False)
    v_thr: float = 610.0
    p_low: float = -4.0
    p_high: float = 4.0
    name: str = "emg"


@dataclass(frozen=True)
class HrPolicy:
    ecg: BiosignalTrace = field(repr=False)
    hr_thr: float = 92.0
    p_low: float = -8.0
    p_high: float = 4.0
    cadence: float = 3.0
    name: str = "hr"


Policy = Union[FixedPower, ImuPolicy, EmgPolicy, HrPolicy]


# -- results ---------------------------------------------------------------

@dataclass
class PacketRecord:
    seq: int
    generated_at: float
    transmitted_at: list[float] = field(default_factory=list)
    tx_power: list[float] = field(default_factory=list)
    pl: list[float] = field(default_factory=list)
    rssi: list[float] = field(default_factory=list)
    delivered: bool = False


@dataclass
class SimReport:
    policy: str
    radio: RadioConfig
    packets: list[PacketRecord]
    duration: float
    params: dict = field(default_factory=dict)
    mean_rss_dbm: dict[str, float] = field(default_factory=dict)
    commands: list[RadioCommand] = field(default_factory=list, repr=False)

    @property
    def generated(self) -> int:
        return len(self.packets)

    @property
    def delivered(self) -> int:
        return sum(p.delivered for p in self.packets)

    @property
    def dropped(self) -> int:
        return self.generated - self.delivered

    @property
    def pdr(self) -> float:
        return self.delivered / self.generated if self.packets else 0.0

    @property
    def attempts(self) -> int:
        return sum(len(p.transmitted_at) for p in self.packets)

    @property
    def radio_energy_mj(self) -> float:
        airtime = self.radio.airtime_per_packet
        return sum(self.radio.power_mw(p) * airtime for pk in self.packets for p in pk.tx_power)

    def attempt_power_fractions(self) -> dict[float, float]:
        counts: dict[float, int] = {}
        for pk in self.packets:
            for p in pk.tx_power:
                counts[p] = counts.get(p, 0) + 1
        total = sum(counts.values())
        return {p: c / total for p, c in sorted(counts.items())} if total else {}

    def mean_rss(self, start: float, end: float) -> float:
        vals = [r for pk in self.packets for t, r in zip(pk.transmitted_at, pk.rssi)
                if start <= t < end]
        return float(np.mean(vals)) if vals else math.nan

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "params": self.params,
            "radio": self.radio.to_dict(),
            "duration_s": self.duration,
            "generated": self.generated,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "pdr": round(self.pdr, 9),
            "attempts": self.attempts,
            "attempt_power_fractions": {
                f"{k:g}": round(v, 9) for k, v in self.attempt_power_fractions().items()
            },
            "radio_energy_mj": round(self.radio_energy_mj, 9),
            "mean_rss_dbm": {k: round(v, 6) for k, v in self.mean_rss_dbm.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def write_packets_csv(report: SimReport, path: str | Path) -> None:
    """One row per transmission attempt; never-sent packets get empty tx fields."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seq", "gen_t", "tx_t", "power_dbm", "pl_db", "rssi_dbm", "delivered"])
        for pk in report.packets:
            if not pk.transmitted_at:
                w.writerow([pk.seq, f"{pk.generated_at:.6f}", "", "", "", "", 0])
            for t, p, pl, r in zip(pk.transmitted_at, pk.tx_power, pk.pl, pk.rssi):
                w.writerow([pk.seq, f"{pk.generated_at:.6f}", f"{t:.6f}", f"{p:g}",
                            f"{pl:.6f}", f"{r:.6f}", int(pk.delivered)])


@dataclass(frozen=True)
class SummaryReport:
    """Summary-level view of a SimReport as read back from JSON."""

    policy: str
    radio: RadioConfig
    generated: int
    pdr: float
    attempt_power_fractions: dict[float, float]
    params: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, text: str) -> "SummaryReport":
        d = json.loads(text)
        try:
            return cls(
                policy=d["policy"],
                radio=RadioConfig.from_dict(d["radio"]),
                generated=int(d["generated"]),
                pdr=float(d["pdr"]),
                attempt_power_fractions={
                    float(k): float(v) for k, v in d["attempt_power_fractions"].items()
                },
                params=d.get("params", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed report: {exc}") from None

    @classmethod
    def of(cls, report: SimReport) -> "SummaryReport":
        return cls(report.policy, report.radio, report.generated, report.pdr,
                   report.attempt_power_fractions(), report.params)


# -- energy accounting -----------------------------------------------------

@dataclass(frozen=True)
class EnergySummary:
    model: str
    attempts_per_packet: float
    mw_per_packet: float  # radio power summed over the attempts of one packet
    total_mj: float


RETX_MODELS = ("none", "one_retry_always_succeeds")


def energy_report(report: SimReport | SummaryReport, model: str = "none") -> EnergySummary:
    """Radio power per generated packet, optionally with one guaranteed retry.

    Under ``one_retry_always_succeeds`` each failed packet costs one extra
    attempt at the power it failed with, so attempts per packet become
    ``1 + (1 - PDR)``. The retry model is for energy accounting only.
    """
    if model not in RETX_MODELS:
        raise ConfigError(f"unknown retransmission model {model!r}")
    summary = report if isinstance(report, SummaryReport) else SummaryReport.of(report)
    radio = summary.radio
    fractions = summary.attempt_power_fractions
    if not fractions:
        return EnergySummary(model, 0.0, 0.0, 0.0)
    mean_level_mw = sum(radio.power_mw(p) * f for p, f in fractions.items())
    attempts = 1.0 if model == "none" else 1.0 + (1.0 - summary.pdr)
    mw = mean_level_mw * attempts
    total = mw * radio.airtime_per_packet * summary.generated
    return EnergySummary(model, attempts, mw, total)


def relative_change(new: float, base: float) -> float:
    return new / base - 1.0


def compare_reports(reports: Sequence[SimReport | SummaryReport], baseline: int = 0,
                    model: str = "one_retry_always_succeeds") -> list[dict]:
    """Per-report PDR and power relative to ``reports[baseline]``."""
    summaries = [r if isinstance(r, SummaryReport) else SummaryReport.of(r) for r in reports]
    if not summaries:
        raise ComparisonError("no reports to compare")
    ref_radio = summaries[0].radio
    for s in summaries[1:]:
        if s.radio != ref_radio:
            raise ComparisonError("reports use different radio configurations")
    base = summaries[baseline]
    base_e = energy_report(base, model)
    rows = []
    for s in summaries:
        e = energy_report(s, model)
        rows.append({
            "policy": s.policy,
            "pdr": s.pdr,
            "pdr_delta_pp": 100.0 * (s.pdr - base.pdr),
            "mw_per_packet": e.mw_per_packet,
            "power_change_pct": 100.0 * relative_change(e.mw_per_packet, base_e.mw_per_packet)
            if base_e.mw_per_packet else 0.0,
        })
    return rows


# -- simulation ------------------------------------------------------------

def _imu_peak_events(imu: BiosignalTrace) -> list[tuple[float, float]]:
    """(peak time, confirmation time) pairs from the adaptive streaming detector."""
    det = StreamingPeakDetector(imu.sample_interval)
    out = []
    for k, v in enumerate(imu.samples):
        t = det.push(float(v))
        if t is not None:
            out.append((t, k * imu.sample_interval))
    return out


def rss_peaks(trace: PathLossTrace, smoothing: float, min_separation: float) -> PeakList:
    """Peaks of the received signal (negated path loss) after a running mean."""
    rss = -moving_average(trace.samples, max(smoothing, trace.frame_time), trace.frame_time)
    det = StreamingPeakDetector(trace.frame_time, min_separation=min_separation)
    return det.run(rss)


class _Link:
    def __init__(self, trace: PathLossTrace, radio: RadioConfig):
        self.trace = trace
        self.radio = radio

    def send(self, pk: PacketRecord, t: float, power: float) -> bool:
        pl = float(self.trace.samples[self.trace.frame_at(t)])
        r = rssi(power, pl)
        pk.transmitted_at.append(t)
        pk.tx_power.append(power)
        pk.pl.append(pl)
        pk.rssi.append(r)
        pk.delivered = r >= self.radio.sensitivity
        return pk.delivered


def _packet_times(duration: float, interval: float) -> np.ndarray:
    n = int(math.floor(duration / interval - 1e-9)) + 1
    return np.arange(n) * interval


def run_scenario(
    trace: PathLossTrace,
    policy: Policy,
    radio: RadioConfig = RadioConfig(),
    packet_interval: float = 0.1,
    duration: float | None = None,
    labels: Mapping[str, tuple[float, float]] | None = None,
) -> SimReport:
    """Simulate ``duration`` seconds of traffic over ``trace`` under ``policy``."""
    if duration is None:
        duration = trace.duration
    if duration > trace.duration + 1e-9:
        raise ConfigError(f"duration {duration} s exceeds trace length {trace.duration:.3f} s")
    if not packet_interval > 0:
        raise ConfigError("packet interval must be positive")
    link = _Link(trace, radio)
    gen_times = _packet_times(duration, packet_interval)
    packets = [PacketRecord(i, float(t)) for i, t in enumerate(gen_times)]
    commands: list[RadioCommand] = []
    params: dict = {}

    if isinstance(policy, FixedPower):
        radio.check_level(policy.power)
        params = {"power_dbm": policy.power}
        for pk in packets:
            link.send(pk, pk.generated_at, policy.power)
    elif isinstance(policy, (EmgPolicy, HrPolicy)):
        if isinstance(policy, EmgPolicy):
            commands = emg_tpc(policy.emg, policy.v_thr, policy.p_low, policy.p_high)
            params = {"v_thr_uv": policy.v_thr}
            signal = policy.emg
        else:
            commands = ecg_tpc(policy.ecg, policy.hr_thr, policy.p_low, policy.p_high,
                               cadence=policy.cadence)
            params = {"hr_thr_bpm": policy.hr_thr, "cadence_s": policy.cadence}
            signal = policy.ecg
        radio.check_level(policy.p_low)
        radio.check_level(policy.p_high)
        params.update(p_low_dbm=policy.p_low, p_high_dbm=policy.p_high)
        if signal.duration + 1e-9 < duration:
            raise ConfigError("biosignal is shorter than the simulated duration")
        idx = 0
        power = policy.p_low
        for pk in packets:
            while idx < len(commands) and commands[idx].time <= pk.generated_at + 1e-12:
                power = commands[idx].power
                idx += 1
            link.send(pk, pk.generated_at, power)
    elif isinstance(policy, ImuPolicy):
        radio.check_level(policy.power)
        if policy.imu.duration + 1e-9 < duration:
            raise ConfigError("IMU stream is shorter than the simulated duration")
        params = {"power_dbm": policy.power, "causal": policy.causal,
                  "drop_limit": policy.drop_limit}
        commands, stats = _run_imu(link, packets, policy, duration)
        params.update(stats)
    else:
        raise ConfigError(f"unsupported policy {policy!r}")

    report = SimReport(policy.name, radio, packets, duration, params, commands=commands)
    for name, (a, b) in (labels or {}).items():
        report.mean_rss_dbm[name] = report.mean_rss(a, b)
    return report


def _run_imu(link: _Link, packets: list[PacketRecord], policy: ImuPolicy,
             duration: float) -> tuple[list[RadioCommand], dict]:
    """Event loop for IMU scheduling.

    Packets are generated until ``duration``; scheduled transmissions may run
    until the end of the trace so the last buffered packets can drain.
    """
    horizon = link.trace.duration
    peaks = _imu_peak_events(policy.imu)
    sched = ImuScheduler(policy.timeout_periods)
    # Event priorities at equal times: IMU, RSS, packet generation, transmit.
    IMU, RSS, GEN, TX = range(4)
    heap: list[tuple] = []
    for t_peak, t_conf in peaks:
        t_event = t_conf if policy.causal else t_peak
        if t_event < horizon:
            heapq.heappush(heap, (t_event, IMU, t_peak))
    for pk in packets:
        heapq.heappush(heap, (pk.generated_at, GEN, pk.seq))

    CALIBRATING, SCHEDULED, STATIC = "calibrating", "scheduled", "static"
    mode = CALIBRATING
    buffer: list[PacketRecord] = []
    commands: list[RadioCommand] = []
    epoch = 0
    fails = 0
    recalibrations = 0
    periodicity_losses = 0
    rss_fed = False
    last_imu: list[float] = []

    def feed_rss():
        # RSS peaks are offered only while the scheduler is calibrating.
        nonlocal rss_fed
        if rss_fed or not sched.needs_rss:
            return
        rss_fed = True
        t1, t2 = sched._imu[0], sched._imu[1]
        for tp in rss_peaks(link.trace, policy.rss_smoothing, 0.5 * (t2 - t1)).times:
            if t2 < tp < horizon:
                heapq.heappush(heap, (float(tp), RSS, epoch))

    def flush(now: float) -> bool:
        ok = False
        for pk in buffer:
            ok |= link.send(pk, now, policy.power)
        buffer.clear()
        return ok

    def restart(new_mode: str):
        nonlocal mode, epoch, rss_fed
        sched.recalibrate()
        epoch += 1
        rss_fed = False
        mode = new_mode

    def push_tx(cmds, now):
        for c in cmds:
            commands.append(c)
            heapq.heappush(heap, (max(c.time, now), TX, epoch))

    while heap:
        t, kind, payload = heapq.heappop(heap)
        if kind == IMU:
            last_imu.append(payload)
            if mode == STATIC:
                mode = CALIBRATING
            push_tx(sched.on_imu_peak(payload), t)
            feed_rss()
        elif kind == RSS:
            if payload != epoch or not sched.needs_rss:
                continue
            push_tx(sched.on_rss_peak(t), t)
            if sched.calibrated:
                mode = SCHEDULED
        elif kind == GEN:
            pk = packets[payload]
            if mode != STATIC and last_imu:
                gaps = np.diff(last_imu[-3:])
                period = float(np.median(gaps)) if gaps.size else 1.0
                if t - last_imu[-1] > 2.0 * period:
                    periodicity_losses += 1
                    restart(STATIC)
                    flush(t)
            if mode == STATIC:
                link.send(pk, t, policy.power)
            else:
                buffer.append(pk)
        elif kind == TX:
            if payload != epoch or not buffer:
                continue
            if flush(t):
                fails = 0
            else:
                fails += 1
                if policy.drop_limit is not None and fails >= policy.drop_limit:
                    fails = 0
                    recalibrations += 1
                    restart(CALIBRATING)
    stats = {
        "alpha": None if sched.calibration is None else round(sched.calibration.alpha, 9),
        "calibrations": sched.calibrations,
        "recalibrations": recalibrations,
        "periodicity_losses": periodicity_losses,
        "rss_reads": sched.rss_reads,
        "unsent_at_end": len(buffer),
    }
    return commands, stats
