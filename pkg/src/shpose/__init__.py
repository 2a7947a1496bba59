"""Stacked-hourglass detector for seven upper-limb keypoints."""
from .decode import DecodedKeypoints, argmax_decode, decode, integral_decode
from .geometry import BoxRegion, CoordTransform, ImageBuffer
from .heatmap import JOINT_NAMES, KeypointSet
from .model import ModelConfig, StackedHourglass, build_model
from .pipeline import PoseEstimate, estimate_cascade, estimate_end_to_end

__version__ = "0.1.0"
