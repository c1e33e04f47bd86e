"""slimsplat: trainable, compressible Gaussian splatting on the CPU."""

from .cameras import Camera, look_at
from .cloud import CloudGrads, GaussianCloud
from .config import TrainConfig, load_config
from .rasterizer import RenderOutput, RenderSettings, render_backward, render_forward
from .schedule import BlurSpec, SfmPoints, Timeline
from .training import FitReport, fit, total_loss

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "CloudGrads",
    "GaussianCloud",
    "TrainConfig",
    "RenderOutput",
    "RenderSettings",
    "BlurSpec",
    "SfmPoints",
    "Timeline",
    "FitReport",
    "fit",
    "load_config",
    "look_at",
    "render_backward",
    "render_forward",
    "total_loss",
]
