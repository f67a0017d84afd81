"""Motion-capture driven on-body channel emulation and biosignal-aware link
adaptation for wireless body area networks."""

from .bvh import Joint, MotionClip, load_bvh, parse_bvh
from .channel import PathLossTrace, ShadowingModel, path_loss_trace, pl_bs, pl_fs, segment_path
from .errors import WbanError
from .kinematics import NodePlacement, TorsoSpec, scale_to_height
from .netsim import RadioConfig, SimReport, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Joint", "MotionClip", "load_bvh", "parse_bvh",
    "PathLossTrace", "ShadowingModel", "path_loss_trace", "pl_bs", "pl_fs", "segment_path",
    "WbanError", "NodePlacement", "TorsoSpec", "scale_to_height",
    "RadioConfig", "SimReport", "run_scenario",
]
