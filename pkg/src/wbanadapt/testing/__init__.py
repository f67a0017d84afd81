"""Fixtures for tests and demos: BVH serialization and synthetic motion clips.

Nothing in the emulation pipeline imports this package.
"""

from .bvhwrite import dump_bvh, write_bvh
from .gait import standing_clip, t_pose_clip, walking_clip

__all__ = ["dump_bvh", "write_bvh", "standing_clip", "t_pose_clip", "walking_clip"]
