"""Multi-fisheye plane-sweep stereo and TSDF dense mapping at desk scale."""

__version__ = "0.1.0"

from .depthfilter import FilterConfig, apply_filters
from .evalkit import MapQuality, accuracy_completeness, depth_error_stats
from .geometry import CameraRig, FisheyeCamera, Pose, camera_rays
from .masking import DetectionBox, apply_masks, load_detections
from .pipeline import (
    RunConfig, generate_dataset, preset_run, preset_scene, run_pipeline,
)
from .planesweep import DepthMap, SweepConfig, generate_planes, multiscale_depth, sweep
from .synthworld import Scene, default_rig, render_frame, script_trajectory
from .tsdf import TsdfVolume

__all__ = [
    "CameraRig", "DepthMap", "DetectionBox", "FilterConfig", "FisheyeCamera",
    "MapQuality", "Pose", "RunConfig", "Scene", "SweepConfig", "TsdfVolume",
    "accuracy_completeness", "apply_filters", "apply_masks", "camera_rays",
    "default_rig", "depth_error_stats", "generate_dataset", "generate_planes",
    "load_detections", "multiscale_depth", "preset_run", "preset_scene",
    "render_frame", "run_pipeline", "script_trajectory", "sweep",
]
