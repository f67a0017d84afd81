"""Channel stability metrics: running mean, autocorrelation, coherence time, CVF."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, InsufficientDataError


@dataclass(frozen=True)
class CoherenceTime:
    seconds: float
    censored: bool = False  # correlation never dropped below threshold up to max lag


@dataclass
class StabilityReport:
    coherence_time: float
    coherence_censored: bool
    autocorr: list[tuple[float, float]]
    cvf_series: list[float]
    cvf_cdf: list[tuple[float, float]]
    threshold: float = 0.7
    window_s: float = 0.1
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "coherence_time": round(self.coherence_time, 9),
            "coherence_censored": self.coherence_censored,
            "threshold": self.threshold,
            "cvf_window_s": self.window_s,
            "autocorr": [[round(l, 9), round(r, 9)] for l, r in self.autocorr],
            "cvf_series": [round(v, 9) for v in self.cvf_series],
            "cvf_cdf": [[round(v, 9), round(f, 9)] for v, f in self.cvf_cdf],
            "meta": self.meta,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _window_samples(window: float, dt: float) -> int:
    return max(1, int(round(window / dt)))


def moving_average(x, window: float, sample_interval: float) -> np.ndarray:
    """Centered running mean over ``window`` seconds; shrinks at the edges.

    An even sample count ``w`` spans ``w // 2`` samples before and
    ``w - w // 2 - 1`` after each point.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise InsufficientDataError("moving average of an empty series")
    if window < sample_interval - 1e-12:
        raise ValueError("window shorter than the sample spacing")
    w = _window_samples(window, sample_interval)
    before, after = w // 2, w - w // 2 - 1
    csum = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(x.size)
    lo = np.maximum(idx - before, 0)
    hi = np.minimum(idx + after + 1, x.size)
    return (csum[hi] - csum[lo]) / (hi - lo)


def autocorrelation(x, max_lag: float, sample_interval: float) -> list[tuple[float, float]]:
    """Biased normalized autocorrelation of the mean-removed series.

    Returns ``(lag_seconds, r)`` for lags ``0..max_lag``.
    """
    x = np.asarray(x, dtype=float)
    max_k = int(math.floor(max_lag / sample_interval + 1e-9))
    if x.size < max(2, 2 * max_k):
        raise InsufficientDataError(
            f"series of {x.size} samples is too short for a max lag of {max_k} samples"
        )
    y = x - x.mean()
    denom = float(y @ y)
    if denom <= 1e-20 * max(1.0, float(np.abs(x).max()) ** 2 * x.size):
        raise DomainError("autocorrelation of a constant series is undefined")
    n = y.size
    # FFT with zero padding gives the linear (non-circular) lag products.
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(y, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[: max_k + 1]
    r = np.clip(acov / denom, -1.0, 1.0)
    r[0] = 1.0
    return [(k * sample_interval, float(r[k])) for k in range(max_k + 1)]


def coherence_time(autocorr: list[tuple[float, float]], threshold: float = 0.7) -> CoherenceTime:
    """Largest lag ``L`` such that ``r >= threshold`` at every lag up to ``L``."""
    if not autocorr or autocorr[0][0] != 0:
        raise ValueError("autocorrelation must start at lag 0")
    if autocorr[0][1] < threshold:
        return CoherenceTime(0.0)
    last = 0.0
    for lag, r in autocorr:
        if r < threshold:
            return CoherenceTime(last)
        last = lag
    return CoherenceTime(last, censored=True)


def db_to_amplitude(pl_db) -> np.ndarray:
    """Path loss in dB to linear channel amplitude ``10 ** (-PL / 20)``."""
    return 10.0 ** (-np.asarray(pl_db, dtype=float) / 20.0)


def cvf(h, window: float, sample_interval: float) -> np.ndarray:
    """Channel variation factor per non-overlapping window of linear magnitudes.

    ``sqrt(var(h) / mean(h**2))`` with population variance. A trailing
    partial window is dropped.
    """
    h = np.asarray(h, dtype=float)
    m = _window_samples(window, sample_interval)
    if m < 2:
        raise InsufficientDataError("a CVF window needs at least 2 samples")
    n_win = h.size // m
    if n_win == 0:
        raise InsufficientDataError("series shorter than one CVF window")
    blocks = h[: n_win * m].reshape(n_win, m)
    ms = np.mean(blocks**2, axis=1)
    if np.any(ms == 0):
        raise DomainError("CVF undefined for an all-zero window")
    # np.var leaves ~1e-17 residue on constant blocks; those are exactly 0
    var = np.where(np.ptp(blocks, axis=1) == 0, 0.0, np.var(blocks, axis=1))
    return np.sqrt(var / ms)


def cvf_cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF as ``(value, fraction <= value)`` for each distinct value."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise InsufficientDataError("CDF of an empty series")
    uniq, counts = np.unique(v, return_counts=True)
    frac = np.cumsum(counts) / v.size
    frac[-1] = 1.0
    return [(float(a), float(b)) for a, b in zip(uniq, frac)]


def stability_report(
    pl_db,
    sample_interval: float,
    max_lag: float = 1.0,
    window: float = 0.1,
    threshold: float = 0.7,
) -> StabilityReport:
    """Autocorrelation (on dB values) plus CVF (on linear amplitude) of a trace.

    A constant trace reports a coherence time censored at ``max_lag`` and an
    all-zero CVF series.
    """
    x = np.asarray(pl_db, dtype=float)
    max_k = int(math.floor(max_lag / sample_interval + 1e-9))
    if x.size < 2 * max_k:
        max_lag = (x.size // 2) * sample_interval
    try:
        ac = autocorrelation(x, max_lag, sample_interval)
        ct = coherence_time(ac, threshold)
    except DomainError:
        n_lags = int(math.floor(max_lag / sample_interval + 1e-9)) + 1
        ac = [(k * sample_interval, 1.0) for k in range(n_lags)]
        ct = CoherenceTime(ac[-1][0], censored=True)
    series = cvf(db_to_amplitude(x), window, sample_interval)
    return StabilityReport(
        coherence_time=ct.seconds,
        coherence_censored=ct.censored,
        autocorr=ac,
        cvf_series=[float(v) for v in series],
        cvf_cdf=cvf_cdf(series),
        threshold=threshold,
        window_s=window,
    )


def write_series_csv(rows, header: tuple[str, str], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for a, b in rows:
            w.writerow([f"{a:.6f}", f"{b:.6f}"])
