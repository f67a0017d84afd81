"""Adaptation controllers: IMU-driven transmission scheduling, EMG- and
heart-rate-driven transmission power control, and the network state machine.

Every controller is a deterministic single-owner state machine fed one
ordered stream; batch helpers wrap the streaming classes.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CalibrationError, ConfigError
from .signals import BiosignalTrace, HeartRateTracker

log = logging.getLogger(__name__)

RADIO_LEVELS_DBM = (-8.0, -4.0, 0.0, 4.0)


class CommandKind(enum.Enum):
    SCHEDULE_TX = "SCHEDULE_TX"
    SET_POWER = "SET_POWER"


@dataclass(frozen=True)
class RadioCommand:
    kind: CommandKind
    time: float
    power: float | None = None


def write_commands_csv(commands: Iterable[RadioCommand], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "command", "value"])
        for c in commands:
            value = "" if c.power is None else f"{c.power:g}"
            w.writerow([f"{c.time:.6f}", c.kind.value, value])


# -- periodic movement scheduling -------------------------------------------

def calibrate_alpha(t_imu_1: float, t_imu_2: float, t_pathloss_p: float) -> float:
    """Phase coefficient linking the IMU stride period to the next RSS peak."""
    period = t_imu_2 - t_imu_1
    if not period > 0:
        raise CalibrationError(f"IMU peaks must be increasing, got {t_imu_1}, {t_imu_2}")
    return (t_pathloss_p - t_imu_2) / period


def next_tx_time(t_imu_i: float, t_imu_prev: float, alpha: float) -> float:
    return t_imu_i + alpha * (t_imu_i - t_imu_prev)


def is_periodic(peak_times: Sequence[float], tolerance: float = 0.2, min_peaks: int = 3) -> bool:
    """At least ``min_peaks`` recent peaks whose intervals stay within
    ``tolerance`` of their median."""
    if len(peak_times) < min_peaks:
        return False
    recent = np.diff(np.asarray(peak_times[-min_peaks:], dtype=float))
    med = float(np.median(recent))
    return med > 0 and bool(np.all(np.abs(recent - med) <= tolerance * med))


@dataclass
class CalibrationState:
    t_imu_1: float
    t_imu_2: float
    t_pathloss_p: float
    alpha: float


class ImuScheduler:
    """Transmission scheduling from IMU peaks.

    The first two IMU peaks and the first RSS peak after the second one fix
    ``alpha``; afterwards each IMU peak ``t_i`` schedules a transmission at
    ``t_i + alpha * (t_i - t_{i-1})`` and RSS input is no longer read. If no
    RSS peak shows up within ``timeout_periods`` IMU periods, calibration
    restarts from the latest two IMU peaks.
    """

    def __init__(self, timeout_periods: float = 2.0):
        self.timeout_periods = timeout_periods
        self.calibration: CalibrationState | None = None
        self.rss_reads = 0
        self.calibrations = 0
        self.timeouts = 0
        self._imu: list[float] = []
        self._last_tx = -math.inf

    @property
    def calibrated(self) -> bool:
        return self.calibration is not None

    @property
    def needs_rss(self) -> bool:
        return self.calibration is None and len(self._imu) >= 2

    @property
    def alpha(self) -> float | None:
        return None if self.calibration is None else self.calibration.alpha

    def recalibrate(self) -> None:
        """Forget alpha; the next two IMU peaks start a new calibration."""
        self.calibration = None
        self._imu = []

    def on_imu_peak(self, t: float) -> list[RadioCommand]:
        if self._imu and t <= self._imu[-1]:
            raise ValueError("IMU peaks must arrive in increasing time order")
        self._imu.append(t)
        if self.calibration is None:
            if len(self._imu) > 2 and self._timed_out(t):
                self.timeouts += 1
                log.debug("calibration timeout at t=%.3f, retrying", t)
                self._imu = self._imu[-2:]
            return []
        if len(self._imu) < 2:
            return []
        self._imu = self._imu[-2:]
        return self._schedule(self._imu[-1], self._imu[-2])

    def _timed_out(self, t: float) -> bool:
        t1, t2 = self._imu[0], self._imu[1]
        return t - t2 > self.timeout_periods * (t2 - t1)

    def on_rss_peak(self, t: float) -> list[RadioCommand]:
        """Offer an RSS peak; only consumed while calibrating."""
        if not self.needs_rss:
            return []
        self.rss_reads += 1
        if t < self._imu[1] or self._timed_out(t):
            return []
        t1, t2 = self._imu[0], self._imu[1]
        self.calibration = CalibrationState(t1, t2, t, calibrate_alpha(t1, t2, t))
        self.calibrations += 1
        # IMU peaks that arrived after t2 but before the RSS peak schedule now.
        out = []
        later = self._imu[1:]
        for prev, cur in zip(later, later[1:]):
            out.extend(self._schedule(cur, prev))
        self._imu = later[-2:]
        return out

    def _schedule(self, t_i: float, t_prev: float) -> list[RadioCommand]:
        t_tx = next_tx_time(t_i, t_prev, self.calibration.alpha)
        if t_tx <= self._last_tx:
            return []
        self._last_tx = t_tx
        return [RadioCommand(CommandKind.SCHEDULE_TX, t_tx)]


def imu_schedule(imu_peaks: Sequence[float], rss_peaks: Sequence[float],
                 timeout_periods: float = 2.0) -> tuple[list[RadioCommand], ImuScheduler]:
    """Run :class:`ImuScheduler` over time-ordered peak lists (IMU wins ties)."""
    sched = ImuScheduler(timeout_periods)
    events = sorted([(t, 0) for t in imu_peaks] + [(t, 1) for t in rss_peaks])
    out: list[RadioCommand] = []
    for t, src in events:
        if src == 0:
            out.extend(sched.on_imu_peak(t))
        elif sched.needs_rss:
            out.extend(sched.on_rss_peak(t))
    return out, sched


# -- biosignal-driven TPC ----------------------------------------------------

def _check_levels(p_low: float, p_high: float, levels: Sequence[float]) -> None:
    for p in (p_low, p_high):
        if p not in levels:
            raise ConfigError(f"power {p} dBm is not a radio level {tuple(levels)}")
    if p_low > p_high:
        raise ConfigError("p_low must not exceed p_high")


class EmgTpc:
    """Power selection from the EMG excursion in fixed 100-sample windows.

    At the end of every window the power becomes ``p_high`` if
    ``max - min > v_thr`` else ``p_low``. With ``emit_on_change`` only
    actual changes produce a command.
    """

    def __init__(self, v_thr: float, p_low: float, p_high: float, window: int = 100,
                 sample_interval: float = 1e-3, emit_on_change: bool = True,
                 levels: Sequence[float] = RADIO_LEVELS_DBM):
        _check_levels(p_low, p_high, levels)
        self.v_thr = v_thr
        self.p_low = p_low
        self.p_high = p_high
        self.window = window
        self.dt = sample_interval
        self.emit_on_change = emit_on_change
        self.power = p_low
        self._k = 0
        self._i = 0
        self._vmax = -math.inf
        self._vmin = math.inf

    def push(self, v: float) -> RadioCommand | None:
        self._k += 1
        self._i += 1
        if v > self._vmax:
            self._vmax = v
        if v < self._vmin:
            self._vmin = v
        if self._i < self.window:
            return None
        new = self.p_high if (self._vmax - self._vmin) > self.v_thr else self.p_low
        self._vmax, self._vmin, self._i = -math.inf, math.inf, 0
        changed = new != self.power
        self.power = new
        if changed or not self.emit_on_change:
            return RadioCommand(CommandKind.SET_POWER, self._k * self.dt, new)
        return None


class HrTpc:
    """Power selection from heart rate, re-evaluated every ``cadence`` seconds.

    ``HR > hr_thr`` selects ``p_high``. An absent HR (0, no beats yet) keeps
    ``p_low``.
    """

    def __init__(self, hr_thr: float, p_low: float, p_high: float, cadence: float = 3.0,
                 sample_interval: float = 1e-3, emit_on_change: bool = True,
                 levels: Sequence[float] = RADIO_LEVELS_DBM):
        _check_levels(p_low, p_high, levels)
        self.hr_thr = hr_thr
        self.p_low = p_low
        self.p_high = p_high
        self.dt = sample_interval
        self.every = max(1, int(round(cadence / sample_interval)))
        self.emit_on_change = emit_on_change
        self.power = p_low
        self._k = 0

    def push(self, hr: float) -> RadioCommand | None:
        self._k += 1
        if self._k % self.every:
            return None
        new = self.p_high if (hr > 0 and hr > self.hr_thr) else self.p_low
        changed = new != self.power
        self.power = new
        if changed or not self.emit_on_change:
            return RadioCommand(CommandKind.SET_POWER, self._k * self.dt, new)
        return None


def emg_tpc(trace: BiosignalTrace, v_thr: float, p_low: float, p_high: float,
            emit_on_change: bool = True) -> list[RadioCommand]:
    ctl = EmgTpc(v_thr, p_low, p_high, sample_interval=trace.sample_interval,
                 window=max(1, int(round(0.1 / trace.sample_interval))),
                 emit_on_change=emit_on_change)
    return [c for c in (ctl.push(float(v)) for v in trace.samples) if c is not None]


def hr_tpc(hr_trace: BiosignalTrace, hr_thr: float, p_low: float, p_high: float,
           cadence: float = 3.0, emit_on_change: bool = True) -> list[RadioCommand]:
    ctl = HrTpc(hr_thr, p_low, p_high, cadence=cadence,
                sample_interval=hr_trace.sample_interval, emit_on_change=emit_on_change)
    return [c for c in (ctl.push(float(v)) for v in hr_trace.samples) if c is not None]


def ecg_tpc(ecg: BiosignalTrace, hr_thr: float, p_low: float, p_high: float,
            cadence: float = 3.0, emit_on_change: bool = True) -> list[RadioCommand]:
    """HR-controlled TPC straight from ECG samples."""
    tracker = HeartRateTracker(ecg.sample_interval)
    ctl = HrTpc(hr_thr, p_low, p_high, cadence=cadence,
                sample_interval=ecg.sample_interval, emit_on_change=emit_on_change)
    out = []
    for v in ecg.samples:
        c = ctl.push(tracker.push(float(v)))
        if c is not None:
            out.append(c)
    return out


def power_at(commands: Sequence[RadioCommand], t: float, initial: float) -> float:
    """Power in force at time ``t`` given SET_POWER commands (effective at their time)."""
    p = initial
    for c in commands:
        if c.kind is CommandKind.SET_POWER and c.time <= t + 1e-12:
            p = c.power
        elif c.time > t:
            break
    return p


# -- network state machine -------------------------------------------------

class NetworkState(enum.Enum):
    STATIC = "STATIC"
    IMU_CALIBRATION = "IMU_CALIBRATION"
    IMU_SCHEDULED = "IMU_SCHEDULED"
    EMG_TPC = "EMG_TPC"
    HR_TPC = "HR_TPC"


EVENTS = (
    "imu_periodicity_detected",
    "imu_periodicity_lost",
    "calibration_done",
    "emg_active",
    "emg_idle",
    "hr_above",
    "hr_below",
    "multi_packet_drop",
    "packet_delivered",
)
# tie-break order for simultaneous events: IMU, EMG, ECG, radio
_SOURCE_PRIORITY = {
    "imu_periodicity_detected": 0, "imu_periodicity_lost": 0, "calibration_done": 0,
    "emg_active": 1, "emg_idle": 1,
    "hr_above": 2, "hr_below": 2,
    "multi_packet_drop": 3, "packet_delivered": 3,
}
_TPC = (NetworkState.EMG_TPC, NetworkState.HR_TPC)
_IMU = (NetworkState.IMU_CALIBRATION, NetworkState.IMU_SCHEDULED)


@dataclass
class NetworkStateMachine:
    """Integrates the controllers. ``multi_packet_drop`` events count single
    drops; ``drop_limit`` consecutive ones trigger re-calibration, and
    ``packet_delivered`` resets the count.

    While a TPC state holds, IMU events update the state to resume to.
    """

    drop_limit: int = 3
    state: NetworkState = NetworkState.STATIC
    resume: NetworkState = NetworkState.STATIC
    emg_on: bool = False
    hr_on: bool = False
    drops: int = 0
    history: list[tuple[float, NetworkState]] = field(default_factory=list)

    def handle(self, event: str, t: float = 0.0) -> NetworkState:
        if event not in EVENTS:
            raise ValueError(f"unknown event {event!r}; expected one of {EVENTS}")
        before = self.state
        getattr(self, f"_on_{event}")()
        if self.state is not before:
            self.history.append((t, self.state))
        return self.state

    def run(self, events: Iterable[tuple[float, str]]) -> list[NetworkState]:
        """Feed ``(time, event)`` pairs sorted by time, then sensor priority."""
        ordered = sorted(events, key=lambda e: (e[0], _SOURCE_PRIORITY.get(e[1], 99)))
        return [self.handle(ev, t) for t, ev in ordered]

    def _base(self) -> NetworkState:
        return self.resume if self.state in _TPC else self.state

    def _set_base(self, s: NetworkState) -> None:
        if self.state in _TPC:
            self.resume = s
        else:
            self.state = s

    def _on_imu_periodicity_detected(self):
        if self._base() is NetworkState.STATIC:
            self._set_base(NetworkState.IMU_CALIBRATION)

    def _on_imu_periodicity_lost(self):
        if self._base() in _IMU:
            self._set_base(NetworkState.STATIC)

    def _on_calibration_done(self):
        if self.state is NetworkState.IMU_CALIBRATION:
            self.state = NetworkState.IMU_SCHEDULED
            self.drops = 0

    def _on_multi_packet_drop(self):
        if self.state is not NetworkState.IMU_SCHEDULED:
            return
        self.drops += 1
        if self.drops >= self.drop_limit:
            self.state = NetworkState.IMU_CALIBRATION
            self.drops = 0

    def _on_packet_delivered(self):
        self.drops = 0

    def _on_emg_active(self):
        self.emg_on = True
        if self.state not in _TPC:
            self.resume = self.state
        self.state = NetworkState.EMG_TPC

    def _on_emg_idle(self):
        self.emg_on = False
        if self.state is NetworkState.EMG_TPC:
            self.state = NetworkState.HR_TPC if self.hr_on else self.resume

    def _on_hr_above(self):
        self.hr_on = True
        if self.state is NetworkState.EMG_TPC:
            return
        if self.state is not NetworkState.HR_TPC:
            self.resume = self.state
        self.state = NetworkState.HR_TPC

    def _on_hr_below(self):
        self.hr_on = False
        if self.state is NetworkState.HR_TPC:
            self.state = self.resume
