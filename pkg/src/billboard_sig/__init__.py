"""Billboard significance analysis from driver-perspective recordings."""

__version__ = "0.1.0"

from .forest import ForestConfig, RandomForest
from .gaze import SignificanceCategory
from .geometry import BoundingBox, ImageDims, Region, iou
from .hota import evaluate_hota, evaluate_hota_multi
from .tracking import SortTracker, TrackerConfig

__all__ = [
    "BoundingBox",
    "ForestConfig",
    "ImageDims",
    "RandomForest",
    "Region",
    "SignificanceCategory",
    "SortTracker",
    "TrackerConfig",
    "evaluate_hota",
    "evaluate_hota_multi",
    "iou",
]
