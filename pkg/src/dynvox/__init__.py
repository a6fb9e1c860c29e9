"""Volumetric mapping of static scenes and moving rigid objects.

A world-frame static map plus one body-frame submap per tracked object;
free space seen around objects is carved into the static map.
"""

from .config import FusionConfig, RunConfig, SubmapPolicy
from .geometry import Motion, Pose, propagate_pose, se3_apply, se3_compose, se3_inverse, world_to_local
from .submaps import MapRegistry, Scan, observe_scan
from .voxel_grid import SparseGrid, VoxelState

__version__ = "0.1.0"

__all__ = [
    "FusionConfig",
    "MapRegistry",
    "Motion",
    "Pose",
    "RunConfig",
    "Scan",
    "SparseGrid",
    "SubmapPolicy",
    "VoxelState",
    "observe_scan",
    "propagate_pose",
    "se3_apply",
    "se3_compose",
    "se3_inverse",
    "world_to_local",
]
