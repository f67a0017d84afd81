"""On-body path-loss emulation for a single Tx-Rx link.

Per frame, the straight Tx-Rx segment is split into the part in free space
and the part shadowed by the torso cylinder. The shadowed chord is replaced
by the shortest path over the cylinder surface, and the two lengths feed a
2.4 GHz Friis term and an IEEE 802.15.6 CM3A body-surface term.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.random import Philox

from .bvh import MotionClip
from .errors import CSVFormatError, DomainError, GeometryError
from .kinematics import (
    BodyCylinder,
    NodePlacement,
    TorsoSpec,
    _cylinder_from_points,
    forward_kinematics,
)
from .signals import sample_spacing

FRIIS_1M_DB = 40.0542  # free-space loss at 1 m, 2.4 GHz
CM3A_SLOPE_DB = 6.6
CM3A_INTERCEPT_DB = 36.1
DEFAULT_SIGMA_N_DB = 3.8
MIN_CHORD_M = 1e-3
SURFACE_TOL_M = 1e-6


@dataclass(frozen=True)
class PathSegmentation:
    d_fs: float
    d_bs: float
    intersects: bool
    entry: np.ndarray | None = field(default=None, repr=False, compare=False)
    exit: np.ndarray | None = field(default=None, repr=False, compare=False)


def _cylinder_frame(cyl: BodyCylinder) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``cyl.axis`` to a right-handed basis."""
    a = cyl.axis
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(a, u)


def _axial_radial(p: np.ndarray, cyl: BodyCylinder) -> tuple[float, np.ndarray]:
    rel = np.asarray(p, dtype=float) - cyl.base_center
    z = float(rel @ cyl.axis)
    return z, rel - z * cyl.axis


def is_inside(p: np.ndarray, cyl: BodyCylinder) -> bool:
    """Strictly inside the closed cylinder volume."""
    z, q = _axial_radial(p, cyl)
    return 0.0 < z < cyl.height and float(np.linalg.norm(q)) < cyl.radius


def helix_distance(p1: np.ndarray, p2: np.ndarray, cyl: BodyCylinder) -> float:
    """Geodesic length over the lateral surface between two surface points.

    On the unrolled cylinder this is the straight line with legs ``r * dtheta``
    (``dtheta`` wrapped to [0, pi]) and the axial separation.
    """
    u, v = _cylinder_frame(cyl)
    angles, heights = [], []
    for p in (p1, p2):
        z, q = _axial_radial(p, cyl)
        if abs(float(np.linalg.norm(q)) - cyl.radius) > SURFACE_TOL_M:
            raise GeometryError(
                f"point at distance {np.linalg.norm(q):.9f} from axis is not on the surface"
            )
        angles.append(math.atan2(float(q @ v), float(q @ u)))
        heights.append(z)
    dtheta = abs(angles[1] - angles[0]) % (2 * math.pi)
    if dtheta > math.pi:
        dtheta = 2 * math.pi - dtheta
    return math.hypot(cyl.radius * dtheta, heights[1] - heights[0])


def segment_path(tx: np.ndarray, rx: np.ndarray, cyl: BodyCylinder) -> PathSegmentation:
    """Split the Tx-Rx segment into free-space and body-surface lengths.

    The torso counts as intersected only when the open segment crosses the
    lateral surface twice inside the cylinder's height and the chord between
    the crossings is at least 1 mm long.
    """
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    full = float(np.linalg.norm(rx - tx))
    if full == 0.0:
        raise GeometryError("Tx and Rx coincide")
    for label, p in (("Tx", tx), ("Rx", rx)):
        if is_inside(p, cyl):
            raise GeometryError(f"{label} node lies inside the torso cylinder")
    los = PathSegmentation(d_fs=full, d_bs=0.0, intersects=False)

    z0, q0 = _axial_radial(tx, cyl)
    z1, q1 = _axial_radial(rx, cyl)
    dq = q1 - q0
    a = float(dq @ dq)
    if a < 1e-18:
        return los
    b = 2.0 * float(q0 @ dq)
    c = float(q0 @ q0) - cyl.radius**2
    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        return los
    sq = math.sqrt(disc)
    t1 = (-b - sq) / (2.0 * a)
    t2 = (-b + sq) / (2.0 * a)
    if not (0.0 < t1 and t2 < 1.0):
        return los
    dz = z1 - z0
    for t in (t1, t2):
        z = z0 + t * dz
        if not (0.0 <= z <= cyl.height):
            return los
    chord = (t2 - t1) * full
    if chord < MIN_CHORD_M:
        return los
    entry = tx + t1 * (rx - tx)
    exit_ = tx + t2 * (rx - tx)
    return PathSegmentation(
        d_fs=full - chord,
        d_bs=helix_distance(entry, exit_, cyl),
        intersects=True,
        entry=entry,
        exit=exit_,
    )


def pl_fs(d_fs):
    """Free-space path loss in dB at 2.4 GHz, distance in meters."""
    d = np.asarray(d_fs, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError(f"free-space distance must be positive, got {d_fs}")
    out = 20.0 * np.log10(d) + FRIIS_1M_DB
    return float(out) if out.ndim == 0 else out


def pl_bs(d_bs, draw=0.0):
    """Body-surface (CM3A) path loss in dB, plus the shadowing draw ``draw`` in dB."""
    d = np.asarray(d_bs, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError(f"body-surface distance must be positive, got {d_bs}")
    out = CM3A_SLOPE_DB * np.log10(d) + CM3A_INTERCEPT_DB + np.asarray(draw, dtype=float)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ShadowingModel:
    """Zero-mean Gaussian shadowing, one independent draw per (link, frame).

    Draws come from a Philox counter generator keyed by the seed and the link
    id, with the frame index as the counter. Any frame can be evaluated on
    its own and gets the same value it would inside a full trace.
    """

    sigma_n: float = DEFAULT_SIGMA_N_DB
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_n >= 0:
            raise DomainError(f"sigma_N must be nonnegative, got {self.sigma_n}")

    def _key(self, link_id: str) -> np.ndarray:
        return np.array(
            [self.seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(link_id.encode("utf-8"))], dtype=np.uint64
        )

    @staticmethod
    def _box_muller(raw: np.ndarray) -> np.ndarray:
        u1 = ((raw[..., 0] >> np.uint64(11)).astype(float) + 1.0) * 2.0**-53  # (0, 1]
        u2 = (raw[..., 1] >> np.uint64(11)).astype(float) * 2.0**-53  # [0, 1)
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def draws(self, link_id: str, n_frames: int) -> np.ndarray:
        """Shadowing values in dB for frames ``0..n_frames-1``."""
        raw = Philox(key=self._key(link_id)).random_raw(4 * n_frames).reshape(n_frames, 4)
        return self.sigma_n * self._box_muller(raw)

    def draw(self, link_id: str, frame: int) -> float:
        """Shadowing value in dB for a single frame."""
        raw = Philox(key=self._key(link_id), counter=int(frame)).random_raw(4).reshape(1, 4)
        return float(self.sigma_n * self._box_muller(raw)[0])


@dataclass(frozen=True, eq=False)
class PathLossTrace:
    """Per-frame path loss (dB) of one link with optional geometric components."""

    link_id: str
    frame_time: float
    samples: np.ndarray
    d_fs: np.ndarray | None = None
    d_bs: np.ndarray | None = None
    n_db: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(s)):
            raise GeometryError("path-loss trace contains non-finite samples")
        object.__setattr__(self, "samples", s)
        for name in ("d_fs", "d_bs", "n_db"):
            comp = getattr(self, name)
            if comp is not None:
                comp = np.asarray(comp, dtype=float)
                if comp.shape != s.shape:
                    raise ValueError(f"component {name} length differs from samples")
                object.__setattr__(self, name, comp)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.frame_time

    @property
    def duration(self) -> float:
        return len(self) * self.frame_time

    def frame_at(self, t: float) -> int:
        """Index of the frame covering time ``t`` (clamped to the trace)."""
        k = int(math.floor(t / self.frame_time + 1e-9))
        return min(max(k, 0), len(self) - 1)

    def __eq__(self, other):
        if not isinstance(other, PathLossTrace):
            return NotImplemented

        def same(a, b):
            return (a is None and b is None) or (
                a is not None and b is not None and np.array_equal(a, b)
            )

        return (
            self.link_id == other.link_id
            and self.frame_time == other.frame_time
            and all(same(getattr(self, f), getattr(other, f))
                    for f in ("samples", "d_fs", "d_bs", "n_db"))
        )


def path_loss_trace(
    clip: MotionClip,
    tx: NodePlacement,
    rx: NodePlacement,
    torso: TorsoSpec = TorsoSpec(),
    shadow: ShadowingModel = ShadowingModel(),
    link_id: str | None = None,
) -> PathLossTrace:
    """Emulate the link's path loss for every frame of ``clip``.

    Frames where the torso is intersected get ``PL_fs(d_fs) + PL_bs(d_bs) + N``;
    line-of-sight frames get ``PL_fs`` over the full Tx-Rx distance.
    """
    if clip.frame_count == 0:
        raise GeometryError("clip has no frames")
    link_id = link_id or f"{tx.joint}->{rx.joint}"
    positions, rotations = forward_kinematics(clip)
    for p in (tx, rx):
        if p.joint not in positions:
            raise KeyError(f"unknown joint {p.joint!r}")
    tx_pos = positions[tx.joint] + np.einsum("fij,j->fi", rotations[tx.joint], np.asarray(tx.offset, float))
    rx_pos = positions[rx.joint] + np.einsum("fij,j->fi", rotations[rx.joint], np.asarray(rx.offset, float))
    hip = np.mean([positions[h] for h in torso.hips], axis=0)
    neck = positions[torso.neck]
    n_draws = shadow.draws(link_id, clip.frame_count)

    n = clip.frame_count
    d_fs = np.empty(n)
    d_bs = np.zeros(n)
    n_applied = np.zeros(n)
    for k in range(n):
        try:
            cyl = _cylinder_from_points(hip[k], neck[k], torso.radius)
            seg = segment_path(tx_pos[k], rx_pos[k], cyl)
        except GeometryError as exc:
            raise GeometryError(str(exc), frame=k) from None
        d_fs[k] = seg.d_fs
        if seg.intersects:
            d_bs[k] = seg.d_bs
            n_applied[k] = n_draws[k]
    pl = pl_fs(d_fs)
    shadowed = d_bs > 0
    if np.any(shadowed):
        pl[shadowed] += pl_bs(d_bs[shadowed], n_applied[shadowed])
    return PathLossTrace(link_id, clip.frame_time, pl, d_fs, d_bs, n_applied)


def synthetic_trace(
    base_db: float,
    duration: float,
    frame_time: float = 1.0 / 120.0,
    fade_db: float = 0.0,
    fade_intervals: Sequence[tuple[float, float]] = (),
    shadow: ShadowingModel | None = None,
    link_id: str = "synthetic",
) -> PathLossTrace:
    """Constant path loss plus extra fade inside given intervals and optional shadowing.

    Stands in for an emulated trace in scenarios whose channel degradation is
    tied to an external event (e.g. a held object) rather than to kinematics.
    """
    n = int(round(duration / frame_time))
    t = np.arange(n) * frame_time
    pl = np.full(n, float(base_db))
    for a, b in fade_intervals:
        pl[(t >= a - 1e-12) & (t < b - 1e-12)] += fade_db
    n_db = shadow.draws(link_id, n) if shadow is not None else np.zeros(n)
    return PathLossTrace(link_id, frame_time, pl + n_db, n_db=n_db)


TRACE_CSV_HEADER = ["frame", "time_s", "pl_db", "d_fs_m", "d_bs_m", "n_db"]


def _fmt(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_trace_csv(trace: PathLossTrace, path: str | Path) -> None:
    n = len(trace)
    zeros = np.zeros(n)
    nan = np.full(n, np.nan)
    d_fs = trace.d_fs if trace.d_fs is not None else nan
    d_bs = trace.d_bs if trace.d_bs is not None else zeros
    n_db = trace.n_db if trace.n_db is not None else zeros
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_CSV_HEADER)
        for k in range(n):
            w.writerow([k, _fmt(k * trace.frame_time), _fmt(trace.samples[k]),
                        _fmt(d_fs[k]), _fmt(d_bs[k]), _fmt(n_db[k])])


def read_trace_csv(path: str | Path, link_id: str | None = None) -> PathLossTrace:
    """Read a trace CSV. A two-column ``t_s,value`` RSS file is also accepted
    (values are negated into path loss relative to 0 dBm)."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CSVFormatError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if r]
    if len(body) < 2:
        raise CSVFormatError("need at least two rows", len(rows))
    if header == ["t_s", "value"]:
        cols = [[], []]
        for rowno, row in body:
            try:
                t, v = (float(c) for c in row)
            except ValueError:
                raise CSVFormatError(f"malformed row {row}", rowno) from None
            cols[0].append(t)
            cols[1].append(-v)
        dt = sample_spacing(np.asarray(cols[0]))
        return PathLossTrace(link_id or path.stem, dt, np.asarray(cols[1]))
    if header != TRACE_CSV_HEADER:
        raise CSVFormatError(f"unexpected header {header}", 1)
    data = []
    for rowno, row in body:
        if len(row) != len(TRACE_CSV_HEADER):
            raise CSVFormatError(f"expected {len(TRACE_CSV_HEADER)} fields, got {len(row)}", rowno)
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise CSVFormatError(f"malformed row {row}", rowno) from None
    arr = np.asarray(data)
    dt = sample_spacing(arr[:, 1])
    d_fs = None if np.all(np.isnan(arr[:, 3])) else arr[:, 3]
    return PathLossTrace(link_id or path.stem, dt, arr[:, 2], d_fs, arr[:, 4], arr[:, 5])


def trace_to_json(trace: PathLossTrace) -> str:
    """Compact JSON rendering with the same 6-decimal formatting as the CSV."""
    def fmt(arr):
        return None if arr is None else [float(_fmt(x)) for x in arr]

    doc = {
        "link_id": trace.link_id,
        "frame_time": trace.frame_time,
        "pl_db": fmt(trace.samples),
        "d_fs_m": fmt(trace.d_fs),
        "d_bs_m": fmt(trace.d_bs),
        "n_db": fmt(trace.n_db),
    }
    return json.dumps(doc, separators=(",", ":"))
