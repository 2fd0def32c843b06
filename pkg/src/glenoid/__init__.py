"""Automated glenoid bone-loss measurement from a 3-D segmentation and rim landmarks."""

from .config import RunConfig
from .errors import GeometryError, GlenoidError, MaskFormatError, OptimizerError, StageError
from .geometry import measure_bone_loss, tune_diameter_ratio
from .points import PointSet3
from .volume import VoxelMask, read_mask, write_mask

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "GeometryError", "GlenoidError", "MaskFormatError", "OptimizerError", "StageError",
    "measure_bone_loss", "tune_diameter_ratio", "PointSet3", "VoxelMask", "read_mask", "write_mask",
]
