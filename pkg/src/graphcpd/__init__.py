"""Online graph-based change-point detection for multiband image sequences."""

from .dataio import ChangeMask, Frame, ImageSequence, Labeling
from .detector import ChangeDetector, DetectorConfig, detect_sequence
from .errors import ConfigError, DimensionError, FormatError, GraphCPDError
from .superpixel import SuperpixelParams, slic_segment

__version__ = "0.1.0"

__all__ = [
    "ChangeDetector", "ChangeMask", "ConfigError", "DetectorConfig", "DimensionError", "FormatError",
    "Frame", "GraphCPDError", "ImageSequence", "Labeling", "SuperpixelParams", "detect_sequence",
    "slic_segment",
]
