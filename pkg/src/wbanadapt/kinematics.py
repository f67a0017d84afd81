"""Forward kinematics, skeleton scaling, torso fitting and IMU synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .bvh import POSITION_CHANNELS, ROTATION_CHANNELS, Joint, MotionClip
from .errors import GeometryError, InsufficientDataError
from .signals import BiosignalTrace, SignalKind

# Stature: roughly the mean height of adult men in national anthropometric
# surveys. Torso radius: a round figure between adult chest half-depth and
# half-breadth. Both are overridable.
DEFAULT_STATURE_M = 1.753
DEFAULT_TORSO_RADIUS_M = 0.15
UP_AXIS = 1  # BVH convention: Y is up


@dataclass(frozen=True)
class PoseFrame:
    """World-space joint positions (meters) and cumulative orientations at one instant."""

    time: float
    joint_positions: dict[str, np.ndarray]
    joint_rotations: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name, p in self.joint_positions.items():
            if not np.all(np.isfinite(p)):
                raise GeometryError(f"non-finite position for joint {name!r}")


@dataclass(frozen=True)
class BodyCylinder:
    """Finite right circular cylinder approximating the torso."""

    base_center: np.ndarray
    axis: np.ndarray
    radius: float
    height: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise GeometryError(f"cylinder axis must be unit length, got norm {np.linalg.norm(axis)}")
        if not (self.radius > 0 and self.height > 0):
            raise GeometryError("cylinder radius and height must be positive")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "base_center", np.asarray(self.base_center, dtype=float))


@dataclass(frozen=True)
class TorsoSpec:
    """Which joints bound the torso cylinder, and its radius.

    The hip centre is the mean of the ``hips`` joints.
    """

    hips: tuple[str, ...] = ("Hips",)
    neck: str = "Neck"
    radius: float = DEFAULT_TORSO_RADIUS_M


@dataclass(frozen=True)
class NodePlacement:
    """Sensor node attached to a joint, offset in the joint's local frame (meters)."""

    joint: str
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)


def _local_transforms(joint: Joint, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame local translation (F,3) and rotation matrices (F,3,3)."""
    n = values.shape[0]
    trans = np.tile(np.asarray(joint.offset, dtype=float), (n, 1))
    rot_cols, rot_axes = [], ""
    for i, ch in enumerate(joint.channels):
        if ch in POSITION_CHANNELS:
            trans[:, "XYZ".index(ch[0])] += values[:, i]
        elif ch in ROTATION_CHANNELS:
            rot_cols.append(i)
            rot_axes += ch[0]
    if rot_cols:
        # Uppercase = intrinsic: R = R_a1 @ R_a2 @ R_a3 in file order.
        rot = Rotation.from_euler(rot_axes, values[:, rot_cols], degrees=True).as_matrix()
    else:
        rot = np.broadcast_to(np.eye(3), (n, 3, 3))
    return trans, rot


def forward_kinematics(
    clip: MotionClip, frames: slice | np.ndarray | None = None
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """World positions ``(F,3)`` and cumulative rotations ``(F,3,3)`` for every joint.

    End sites are included. ``frames`` selects a subset of frame rows.
    """
    data = clip.frames if frames is None else clip.frames[frames]
    slices = clip.channel_slices()
    positions: dict[str, np.ndarray] = {}
    rotations: dict[str, np.ndarray] = {}

    def visit(joint: Joint, parent_pos, parent_rot):
        trans, rot = _local_transforms(joint, data[:, slices[joint.name]])
        if parent_pos is None:
            pos = trans
            cum = np.array(rot)
        else:
            pos = parent_pos + np.einsum("fij,fj->fi", parent_rot, trans)
            cum = np.matmul(parent_rot, rot)
        positions[joint.name] = pos
        rotations[joint.name] = cum
        for child in joint.children:
            visit(child, pos, cum)

    visit(clip.root, None, None)
    return positions, rotations


def pose_at_frame(clip: MotionClip, frame_index: int) -> PoseFrame:
    """World-space pose of one frame. End sites are not included."""
    if not 0 <= frame_index < clip.frame_count:
        raise IndexError(f"frame index {frame_index} outside 0..{clip.frame_count - 1}")
    positions, rotations = forward_kinematics(clip, slice(frame_index, frame_index + 1))
    end_sites = {j.name for j in clip.joints if j.is_end_site}
    return PoseFrame(
        time=frame_index * clip.frame_time,
        joint_positions={k: v[0] for k, v in positions.items() if k not in end_sites},
        joint_rotations={k: v[0] for k, v in rotations.items() if k not in end_sites},
    )


def measured_height(clip: MotionClip, up_axis: int = UP_AXIS) -> float:
    """Vertical extent of the first frame's pose, end sites included."""
    if clip.frame_count < 1:
        raise InsufficientDataError("clip has no frames")
    positions, _ = forward_kinematics(clip, slice(0, 1))
    heights = np.array([p[0, up_axis] for p in positions.values()])
    return float(heights.max() - heights.min())


def _scale_joint(joint: Joint, s: float) -> Joint:
    return replace(
        joint,
        offset=tuple(float(c) * s for c in joint.offset),
        children=tuple(_scale_joint(c, s) for c in joint.children),
    )


def scale_to_height(clip: MotionClip, target_height: float, up_axis: int = UP_AXIS) -> MotionClip:
    """Uniformly rescale offsets and translations so the first frame spans ``target_height``."""
    if not target_height > 0:
        raise GeometryError(f"target height must be positive, got {target_height}")
    current = measured_height(clip, up_axis)
    if current <= 1e-3:
        raise GeometryError(f"degenerate skeleton: measured height {current:.3g}")
    s = target_height / current
    if s == 1.0:
        return clip
    pos_mask = np.array(
        [ch in POSITION_CHANNELS for j in clip.root.walk() for ch in j.channels], dtype=bool
    )
    frames = np.array(clip.frames)
    frames[:, pos_mask] *= s
    return MotionClip(root=_scale_joint(clip.root, s), frame_time=clip.frame_time, frames=frames)


def _cylinder_from_points(hip: np.ndarray, neck: np.ndarray, radius: float) -> BodyCylinder:
    v = neck - hip
    h = float(np.linalg.norm(v))
    if h <= 1e-9:
        raise GeometryError("hip centre and neck coincide")
    return BodyCylinder(base_center=hip, axis=v / h, radius=radius, height=h)


def fit_torso_cylinder(pose: PoseFrame, torso: TorsoSpec = TorsoSpec()) -> BodyCylinder:
    """Cylinder from the hip centre along the hip->neck vector."""
    try:
        hip = np.mean([pose.joint_positions[h] for h in torso.hips], axis=0)
        neck = np.asarray(pose.joint_positions[torso.neck], dtype=float)
    except KeyError as exc:
        raise KeyError(f"torso joint {exc.args[0]!r} not in pose") from None
    return _cylinder_from_points(hip, neck, torso.radius)


def torso_cylinders(clip: MotionClip, torso: TorsoSpec = TorsoSpec()) -> list[BodyCylinder]:
    """One fitted torso cylinder per frame."""
    positions, _ = forward_kinematics(clip)
    hip = np.mean([positions[h] for h in torso.hips], axis=0)
    neck = positions[torso.neck]
    out = []
    for k in range(clip.frame_count):
        try:
            out.append(_cylinder_from_points(hip[k], neck[k], torso.radius))
        except GeometryError as exc:
            raise GeometryError(str(exc), frame=k) from None
    return out


def node_position(pose: PoseFrame, placement: NodePlacement) -> np.ndarray:
    """World position of a node: joint position plus the rotated local offset."""
    if placement.joint not in pose.joint_positions:
        raise KeyError(f"unknown joint {placement.joint!r}")
    pos = np.asarray(pose.joint_positions[placement.joint], dtype=float)
    offset = np.asarray(placement.offset, dtype=float)
    if not offset.any():
        return pos.copy()
    rot = pose.joint_rotations.get(placement.joint, np.eye(3))
    return pos + rot @ offset


def node_trajectory(clip: MotionClip, placement: NodePlacement) -> np.ndarray:
    """Node world position for every frame, shape ``(frame_count, 3)``."""
    positions, rotations = forward_kinematics(clip)
    if placement.joint not in positions:
        raise KeyError(f"unknown joint {placement.joint!r}")
    offset = np.asarray(placement.offset, dtype=float)
    return positions[placement.joint] + np.einsum("fij,j->fi", rotations[placement.joint], offset)


def walking_axis(positions: np.ndarray) -> np.ndarray:
    """Camera-coordinate unit axis along which ``positions`` vary the most."""
    positions = np.asarray(positions, dtype=float)
    axis = np.zeros(3)
    axis[int(np.argmax(positions.var(axis=0)))] = 1.0
    return axis


def synth_imu(
    positions: np.ndarray, frame_time: float, axis: np.ndarray | None = None
) -> BiosignalTrace:
    """Acceleration along ``axis`` from a uniformly sampled position series.

    Interior samples use the central second difference; the two endpoints
    reuse the nearest interior stencil (one-sided second difference).
    ``positions`` may be ``(N,3)`` or already projected ``(N,)``.
    """
    p = np.asarray(positions, dtype=float)
    if p.ndim == 2:
        if axis is None:
            axis = walking_axis(p)
        p = p @ np.asarray(axis, dtype=float)
    if p.shape[0] < 3:
        raise InsufficientDataError("IMU synthesis needs at least 3 samples")
    acc = np.empty_like(p)
    acc[1:-1] = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / frame_time**2
    acc[0] = acc[1]
    acc[-1] = acc[-2]
    return BiosignalTrace(SignalKind.ACCEL, frame_time, acc)
