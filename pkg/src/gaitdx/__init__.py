"""Plantar-pressure gait diagnosis: recordings, preprocessing, features, CNNs and evaluation."""

from .recording import Foot, Label, Recording
from .preprocess import CaseBundle, GrayscaleImage, ImageKind, PressureImage

__all__ = [
    "CaseBundle",
    "Foot",
    "GrayscaleImage",
    "ImageKind",
    "Label",
    "PressureImage",
    "Recording",
]
__version__ = "0.1.0"
