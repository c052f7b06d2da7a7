"""Semantic 2D Gaussian splatting: differentiable rasterization, feature
distillation, open-vocabulary object extraction, rigid tracking, and a
diffusion manipulation policy."""

__version__ = "0.1.0"

from .geometry import Camera, RigidTransform, compose, look_at_camera
from .scene import SceneModel, SplatPrimitive, splat_frame
from .semantics import FeatureMaps, SemanticDecoder

__all__ = [
    "Camera",
    "RigidTransform",
    "compose",
    "look_at_camera",
    "SceneModel",
    "SplatPrimitive",
    "splat_frame",
    "FeatureMaps",
    "SemanticDecoder",
    "__version__",
]
