"""Game-state reconstruction toolkit: pitch registration and camera
calibration, projection, athlete tracking, tracklet post-processing,
evaluation metrics, synthetic scenes and annotation I/O."""
from ._accel import USE_NUMBA
from .camera import CameraParams
from .pitch import PitchDimensions, PitchModel, build_pitch, keypoint_catalogue

__version__ = "0.1.0"

__all__ = ["USE_NUMBA", "CameraParams", "PitchDimensions", "PitchModel", "build_pitch", "keypoint_catalogue"]
