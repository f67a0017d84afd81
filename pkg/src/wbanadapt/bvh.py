"""Biovision Hierarchy (BVH) motion-capture parser.

Only reading is supported here. A serializer for round-trip tests lives in
``wbanadapt.testing.bvhwrite``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BVHParseError, StructureError

CHANNEL_NAMES = (
    "Xposition", "Yposition", "Zposition",
    "Xrotation", "Yrotation", "Zrotation",
)
POSITION_CHANNELS = frozenset(CHANNEL_NAMES[:3])
ROTATION_CHANNELS = frozenset(CHANNEL_NAMES[3:])


@dataclass(frozen=True)
class Joint:
    """One node of the skeleton hierarchy.

    ``offset`` is expressed in the clip's length unit (meters once scaled).
    End sites carry no channels and no children.
    """

    name: str
    offset: tuple[float, float, float]
    channels: tuple[str, ...] = ()
    children: tuple["Joint", ...] = ()
    is_end_site: bool = False

    def __post_init__(self):
        if len(self.offset) != 3:
            raise StructureError(f"joint {self.name!r}: offset must have 3 components")
        if len(set(self.channels)) != len(self.channels):
            raise StructureError(f"joint {self.name!r}: duplicate channels {self.channels}")
        for ch in self.channels:
            if ch not in CHANNEL_NAMES:
                raise StructureError(f"joint {self.name!r}: unknown channel {ch!r}")
        if self.is_end_site and (self.channels or self.children):
            raise StructureError(f"end site {self.name!r} cannot have channels or children")

    def walk(self):
        """Yield every joint of the subtree depth-first, self first."""
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True, eq=False)
class MotionClip:
    """Parsed skeleton plus per-frame channel values.

    ``frames`` has shape ``(frame_count, channel_count)``; columns follow the
    depth-first joint order, each joint contributing its declared channels in
    file order.
    """

    root: Joint
    frame_time: float
    frames: np.ndarray = field(repr=False)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim == 1 and frames.size == 0:
            frames = frames.reshape(0, self.channel_count)
        if frames.ndim != 2 or frames.shape[1] != self.channel_count:
            raise StructureError(
                f"frame rows must hold {self.channel_count} values, got shape {frames.shape}"
            )
        if not self.frame_time > 0:
            raise StructureError(f"frame time must be positive, got {self.frame_time}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return self.frame_count * self.frame_time

    @property
    def joints(self) -> list[Joint]:
        """All joints, end sites included, in depth-first order."""
        return list(self.root.walk())

    @property
    def channel_count(self) -> int:
        return sum(len(j.channels) for j in self.root.walk())

    def channel_slices(self) -> dict[str, slice]:
        """Column range of each joint's channels inside a frame row."""
        out = {}
        start = 0
        for joint in self.root.walk():
            out[joint.name] = slice(start, start + len(joint.channels))
            start += len(joint.channels)
        return out

    def joint(self, name: str) -> Joint:
        for j in self.root.walk():
            if j.name == name:
                return j
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, MotionClip):
            return NotImplemented
        return (
            self.root == other.root
            and self.frame_time == other.frame_time
            and np.array_equal(self.frames, other.frames)
        )


class _Tokens:
    def __init__(self, lines: list[str]):
        self.items: list[tuple[str, int]] = []
        for lineno, line in enumerate(lines, start=1):
            for tok in line.split():
                self.items.append((tok, lineno))
        self.pos = 0

    def peek(self) -> tuple[str, int] | None:
        return self.items[self.pos] if self.pos < len(self.items) else None

    def next(self, what: str) -> tuple[str, int]:
        if self.pos >= len(self.items):
            last = self.items[-1][1] if self.items else 1
            raise BVHParseError(f"unexpected end of hierarchy, expected {what}", last)
        tok = self.items[self.pos]
        self.pos += 1
        return tok

    def expect(self, literal: str) -> int:
        tok, line = self.next(repr(literal))
        if tok != literal:
            raise BVHParseError(f"expected {literal!r}, found {tok!r}", line)
        return line

    def number(self, what: str) -> float:
        tok, line = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise BVHParseError(f"malformed number {tok!r} in {what}", line) from None


def _parse_joint(tokens: _Tokens, name: str, scale: float) -> Joint:
    tokens.expect("{")
    tokens.expect("OFFSET")
    offset = tuple(tokens.number("OFFSET") * scale for _ in range(3))
    channels: tuple[str, ...] = ()
    tok = tokens.peek()
    if tok is not None and tok[0] == "CHANNELS":
        tokens.next("CHANNELS")
        n_tok, n_line = tokens.next("channel count")
        try:
            n = int(n_tok)
        except ValueError:
            raise BVHParseError(f"malformed channel count {n_tok!r}", n_line) from None
        if not 0 <= n <= 6:
            raise BVHParseError(f"channel count {n} outside 0..6", n_line)
        chans = []
        for _ in range(n):
            ch, ch_line = tokens.next("channel name")
            if ch not in CHANNEL_NAMES:
                raise BVHParseError(f"unknown channel {ch!r}", ch_line)
            chans.append(ch)
        channels = tuple(chans)
    children: list[Joint] = []
    while True:
        tok, line = tokens.next("'}' or child joint")
        if tok == "}":
            break
        if tok == "JOINT":
            child_name, _ = tokens.next("joint name")
            children.append(_parse_joint(tokens, child_name, scale))
        elif tok == "End":
            tokens.expect("Site")
            tokens.expect("{")
            tokens.expect("OFFSET")
            end_offset = tuple(tokens.number("End Site OFFSET") * scale for _ in range(3))
            tokens.expect("}")
            children.append(Joint(f"{name}_End", end_offset, is_end_site=True))
        else:
            raise BVHParseError(f"unexpected token {tok!r} in joint {name!r}", line)
    try:
        return Joint(name, offset, channels, tuple(children))
    except StructureError as exc:
        raise BVHParseError(str(exc), line) from None


def _header_value(line: str, key: str, lineno: int) -> str:
    stripped = line.strip()
    if not stripped.startswith(key):
        raise BVHParseError(f"expected {key!r}", lineno)
    return stripped[len(key):].strip()


def parse_bvh(text: str, scale: float = 1.0) -> MotionClip:
    """Parse BVH text into a :class:`MotionClip`.

    Args:
        text: full file contents (LF or CRLF line endings).
        scale: multiplier applied to offsets and position channels, e.g. to
            convert dataset units to meters.

    Raises:
        BVHParseError: on malformed tokens or unbalanced braces.
        StructureError: on wrong frame row length, frame count mismatch or a
            non-positive frame time.
    """
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    motion_idx = None
    for i, line in enumerate(lines):
        if line.strip() == "MOTION":
            motion_idx = i
            break
    if motion_idx is None:
        raise BVHParseError("missing MOTION section", len(lines))

    tokens = _Tokens(lines[:motion_idx])
    tokens.expect("HIERARCHY")
    tokens.expect("ROOT")
    root_name, _ = tokens.next("root name")
    root = _parse_joint(tokens, root_name, scale)
    extra = tokens.peek()
    if extra is not None:
        raise BVHParseError(f"unexpected token {extra[0]!r} after ROOT block", extra[1])

    body = [(i + 1, l) for i, l in enumerate(lines) if i > motion_idx and l.strip()]
    if len(body) < 2:
        raise BVHParseError("MOTION section needs 'Frames:' and 'Frame Time:'", len(lines))
    (frames_line, frames_txt), (ft_line, ft_txt) = body[0], body[1]
    try:
        frame_count = int(_header_value(frames_txt, "Frames:", frames_line))
    except ValueError:
        raise BVHParseError("malformed frame count", frames_line) from None
    try:
        frame_time = float(_header_value(ft_txt, "Frame Time:", ft_line))
    except ValueError:
        raise BVHParseError("malformed frame time", ft_line) from None
    if frame_count < 0:
        raise StructureError(f"negative frame count {frame_count}")
    if not frame_time > 0:
        raise StructureError(f"frame time must be positive, got {frame_time}")

    n_channels = sum(len(j.channels) for j in root.walk())
    rows = body[2:]
    if len(rows) != frame_count:
        raise StructureError(f"header declares {frame_count} frames, found {len(rows)} rows")
    data = np.empty((frame_count, n_channels))
    pos_mask = np.array(
        [ch in POSITION_CHANNELS for j in root.walk() for ch in j.channels], dtype=bool
    )
    for k, (lineno, row) in enumerate(rows):
        parts = row.split()
        if len(parts) != n_channels:
            raise StructureError(
                f"line {lineno}: frame {k} has {len(parts)} values, expected {n_channels}"
            )
        try:
            data[k] = [float(p) for p in parts]
        except ValueError:
            raise BVHParseError(f"malformed number in frame {k}", lineno) from None
    if scale != 1.0:
        data[:, pos_mask] *= scale
    return MotionClip(root=root, frame_time=frame_time, frames=data)


def load_bvh(path: str | Path, scale: float = 1.0) -> MotionClip:
    """Read and parse a BVH file from disk."""
    return parse_bvh(Path(path).read_text(), scale=scale)
