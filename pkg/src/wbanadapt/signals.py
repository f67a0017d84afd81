"""Biosignal containers, peak detection, heart-rate extraction and generators."""

from __future__ import annotations

import csv
import enum
import math
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import find_peaks

from .errors import ConfigError, CSVFormatError


class SignalKind(enum.Enum):
    EMG = "uV"
    ECG = "mV"
    ACCEL = "m/s^2"

    @property
    def unit(self) -> str:
        return self.value


@dataclass(frozen=True, eq=False)
class BiosignalTrace:
    """Uniformly sampled signal. ``samples[k]`` is taken at ``k * sample_interval``."""

    kind: SignalKind
    sample_interval: float
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.sample_interval > 0:
            raise ConfigError(f"sample interval must be positive, got {self.sample_interval}")
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 1:
            raise ConfigError("samples must be one-dimensional")
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.sample_interval

    @property
    def duration(self) -> float:
        return len(self) * self.sample_interval


@dataclass(frozen=True, eq=False)
class PeakList:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("peak times must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return self.times.shape[0]

    def intervals(self) -> np.ndarray:
        return np.diff(self.times)


def _separation_samples(min_separation: float, dt: float) -> int:
    # Guard against 0.5/1e-3 = 499.99999.
    return max(1, math.ceil(min_separation / dt - 1e-9))


def detect_peaks(
    trace: BiosignalTrace,
    min_separation: float,
    min_prominence: float | None = None,
) -> PeakList:
    """Offline peak detection.

    Local maxima with prominence at least ``min_prominence`` are kept greedily
    in decreasing height order, discarding any within ``min_separation`` of an
    already kept peak. ``min_prominence=None`` uses half the sample standard
    deviation.
    """
    if not min_separation > 0:
        raise ConfigError("min_separation must be positive")
    x = trace.samples
    if x.size < 3:
        return PeakList(np.empty(0))
    if min_prominence is None:
        min_prominence = 0.5 * float(np.std(x))
    idx, _ = find_peaks(
        x,
        distance=_separation_samples(min_separation, trace.sample_interval),
        prominence=max(min_prominence, np.finfo(float).tiny),
    )
    return PeakList(idx * trace.sample_interval)


class StreamingPeakDetector:
    """Causal peak detector: a peak is reported once ``min_separation`` has
    elapsed after it with no higher sample.

    With ``min_separation=None`` the refractory period adapts to 0.4 x the
    running median inter-peak interval (0.3 s until two peaks are known).
    With ``min_prominence=None`` the threshold is 0.5 x the running standard
    deviation of the input.
    """

    BOOTSTRAP_SEPARATION = 0.3

    def __init__(self, sample_interval: float, min_separation: float | None = None,
                 min_prominence: float | None = None):
        self.dt = sample_interval
        self.fixed_separation = min_separation
        self.fixed_prominence = min_prominence
        self.index = -1
        self._cand: tuple[int, float] | None = None
        self._left_min = math.inf
        self._right_min = math.inf
        self._intervals: list[float] = []
        self._last_peak: float | None = None
        # Welford accumulators for the adaptive prominence threshold.
        self._n = 0
        self._mean = 0.0
        self._m2 = 0.0

    @property
    def separation(self) -> float:
        if self.fixed_separation is not None:
            return self.fixed_separation
        if len(self._intervals) < 2:
            return self.BOOTSTRAP_SEPARATION
        return 0.4 * float(np.median(self._intervals[-8:]))

    @property
    def prominence(self) -> float:
        if self.fixed_prominence is not None:
            return self.fixed_prominence
        if self._n < 2:
            return math.inf
        return 0.5 * math.sqrt(self._m2 / self._n)

    def push(self, x: float) -> float | None:
        """Feed one sample; return the time of a newly confirmed peak, if any."""
        self.index += 1
        i = self.index
        self._n += 1
        delta = x - self._mean
        self._mean += delta / self._n
        self._m2 += delta * (x - self._mean)

        if self._last_peak is not None and (i * self.dt - self._last_peak) < self.separation - 1e-12:
            # inside the refractory period of the last emitted peak
            self._left_min = min(self._left_min, x)
            return None

        if self._cand is None or x > self._cand[1]:
            if self._cand is not None:
                self._left_min = min(self._left_min, self._right_min, self._cand[1])
            self._cand = (i, x)
            self._right_min = math.inf
            return None

        self._right_min = min(self._right_min, x)
        cand_i, cand_x = self._cand
        if (i - cand_i) < _separation_samples(self.separation, self.dt):
            return None
        prom = cand_x - max(self._left_min, self._right_min)
        self._cand = None
        if prom >= self.prominence and math.isfinite(self._left_min):
            t = cand_i * self.dt
            if self._last_peak is not None:
                self._intervals.append(t - self._last_peak)
            self._last_peak = t
            self._left_min = self._right_min
            self._right_min = math.inf
            return t
        self._left_min = min(self._left_min, self._right_min)
        self._right_min = math.inf
        return None

    def run(self, samples: Iterable[float]) -> PeakList:
        found = [t for t in (self.push(float(x)) for x in samples) if t is not None]
        return PeakList(np.asarray(found))


def emg_window_excursion(window: Sequence[float]) -> tuple[float, float]:
    """Exact (max, min) of one EMG window.

    Both extremes are tracked from the first sample of the window, so windows
    lying entirely below zero (or above the 100 mV sentinel used by fixed
    initial values) still report their true excursion.
    """
    arr = np.asarray(window, dtype=float)
    if arr.size == 0:
        raise ValueError("EMG window is empty")
    return float(arr.max()), float(arr.min())


class HeartRateTracker:
    """Streaming heart-rate extraction from ECG samples.

    Running max/min envelopes decay toward the signal with time constant
    ``decay_tau``. A beat is an upward crossing of
    ``v_min + 0.25 * (v_max - v_min)``; the HR is 60 divided by the time
    between consecutive beats and is held between beats. ``rate`` is 0.0
    until two beats have been seen.
    """

    def __init__(self, sample_interval: float = 1e-3, decay_tau: float | None = 5.0,
                 refractory: float = 0.25):
        self.dt = sample_interval
        self.decay = 0.0 if not decay_tau else sample_interval / decay_tau
        self.refractory = refractory
        self.v_max: float | None = None
        self.v_min: float | None = None
        self.rate = 0.0
        self._prev: float | None = None
        self._last_beat: float | None = None
        self._k = -1

    @staticmethod
    def threshold(v_min: float, v_max: float) -> float:
        return v_min + 0.25 * (v_max - v_min)

    def push(self, v: float) -> float:
        self._k += 1
        t = self._k * self.dt
        if self.v_max is None:
            self.v_max = self.v_min = v
        else:
            self.v_max -= (self.v_max - v) * self.decay
            self.v_min -= (self.v_min - v) * self.decay
            self.v_max = max(self.v_max, v)
            self.v_min = min(self.v_min, v)
        thr = self.threshold(self.v_min, self.v_max)
        if self._prev is not None and self._prev < thr <= v and self.v_max > self.v_min:
            if self._last_beat is None:
                self._last_beat = t
            elif t - self._last_beat >= self.refractory:
                self.rate = 60.0 / (t - self._last_beat)
                self._last_beat = t
        self._prev = v
        return self.rate


def calc_hr(trace: BiosignalTrace, decay_tau: float | None = 5.0) -> BiosignalTrace:
    """Heart rate (bpm) for every ECG sample, 0.0 while no rate is known."""
    tracker = HeartRateTracker(trace.sample_interval, decay_tau=decay_tau)
    out = np.fromiter((tracker.push(float(v)) for v in trace.samples), float, len(trace))
    return BiosignalTrace(SignalKind.ECG, trace.sample_interval, out)


def _check_intervals(intervals: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    ordered = sorted((float(a), float(b)) for a, b in intervals)
    for a, b in ordered:
        if b <= a:
            raise ConfigError(f"burst interval ({a}, {b}) is empty")
    for (_, b0), (a1, _) in zip(ordered, ordered[1:]):
        if a1 < b0:
            raise ConfigError("burst intervals overlap")
    return ordered


def synth_emg(
    rest_noise_amp: float,
    burst_amp: float,
    burst_intervals: Sequence[tuple[float, float]],
    duration: float,
    sample_interval: float = 1e-3,
    seed: int = 0,
) -> BiosignalTrace:
    """Zero-mean uniform noise (µV) whose amplitude rises inside bursts."""
    if rest_noise_amp < 0 or burst_amp < 0:
        raise ConfigError("amplitudes must be nonnegative")
    intervals = _check_intervals(burst_intervals)
    n = int(round(duration / sample_interval))
    t = np.arange(n) * sample_interval
    amp = np.full(n, float(rest_noise_amp))
    for a, b in intervals:
        amp[(t >= a - 1e-12) & (t < b - 1e-12)] = burst_amp
    rng = np.random.default_rng(seed)
    return BiosignalTrace(SignalKind.EMG, sample_interval, amp * rng.uniform(-1.0, 1.0, n))


def _bpm_at(profile: Sequence[tuple[float, float]], t: float) -> float:
    bpm = profile[0][1]
    for start, value in profile:
        if t >= start:
            bpm = value
    return bpm


def beat_times(profile: Sequence[tuple[float, float]], duration: float,
               first_beat: float = 0.2) -> np.ndarray:
    """R-peak instants for a piecewise-constant ``(start_s, bpm)`` profile."""
    profile = sorted((float(s), float(b)) for s, b in profile)
    if not profile:
        raise ConfigError("heart-rate profile is empty")
    for _, bpm in profile:
        if not 30.0 <= bpm <= 220.0:
            raise ConfigError(f"heart rate {bpm} bpm outside [30, 220]")
    beats = []
    t = first_beat
    while t < duration:
        beats.append(t)
        t += 60.0 / _bpm_at(profile, t)
    return np.asarray(beats)


def synth_ecg(
    hr_profile: Sequence[tuple[float, float]],
    duration: float,
    sample_interval: float = 1e-3,
    r_amplitude: float = 1.0,
    r_width: float = 0.02,
    baseline_noise: float = 0.0,
    seed: int = 0,
) -> BiosignalTrace:
    """Triangular R spikes (mV) on a flat baseline following ``hr_profile``."""
    n = int(round(duration / sample_interval))
    t = np.arange(n) * sample_interval
    x = np.zeros(n)
    half = r_width / 2.0
    for b in beat_times(hr_profile, duration):
        lo = np.searchsorted(t, b - half)
        hi = np.searchsorted(t, b + half, side="right")
        seg = t[lo:hi]
        x[lo:hi] = np.maximum(x[lo:hi], r_amplitude * (1.0 - np.abs(seg - b) / half))
    if baseline_noise > 0:
        x += np.random.default_rng(seed).normal(0.0, baseline_noise, n)
    return BiosignalTrace(SignalKind.ECG, sample_interval, x)


def write_trace_csv(trace: BiosignalTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "value"])
        for t, v in zip(trace.times, trace.samples):
            w.writerow([f"{t:.6f}", f"{v:.6f}"])


def sample_spacing(times: np.ndarray) -> float:
    """Sample spacing from 6-decimal time stamps.

    The end-to-end span gives the spacing to about 1e-9 relative; if a nearby
    simple fraction (such as 1/120) reproduces every stamp, that is used.
    """
    dt = float(times[-1] - times[0]) / (len(times) - 1)
    if not dt > 0:
        raise CSVFormatError("time stamps must increase", 2)
    snapped = float(Fraction(dt).limit_denominator(100_000))
    k = np.arange(len(times))
    if np.all(np.abs(times[0] + k * snapped - times) <= 5.01e-7):
        return snapped
    return dt


def read_trace_csv(path: str | Path, kind: SignalKind) -> BiosignalTrace:
    """Read a ``t_s,value`` CSV with uniformly spaced time stamps."""
    times, values = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t_s", "value"]:
            raise CSVFormatError(f"expected header t_s,value, got {header}", 1)
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, v = (float(c) for c in row)
            except ValueError:
                raise CSVFormatError(f"malformed row {row}", rowno) from None
            times.append(t)
            values.append(v)
    if len(times) < 2:
        raise CSVFormatError("need at least two samples")
    return BiosignalTrace(kind, sample_spacing(np.asarray(times)), np.asarray(values))
