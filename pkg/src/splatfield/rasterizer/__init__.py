"""Differentiable multi-channel splat rasterization (tiled + reference)."""

from .common import (
    ALPHA_MAX,
    ALPHA_MIN,
    NEAR_PLANE,
    TRANSMITTANCE_MIN,
    ParamGradients,
    RenderOutput,
    ray_splat_intersect,
    splat_alpha,
)
from .engine import depth_to_normal, depth_to_normal_backward, render, render_backward
from .reference import reference_render

__all__ = [
    "ALPHA_MAX",
    "ALPHA_MIN",
    "NEAR_PLANE",
    "TRANSMITTANCE_MIN",
    "ParamGradients",
    "RenderOutput",
    "ray_splat_intersect",
    "splat_alpha",
    "render",
    "render_backward",
    "reference_render",
    "depth_to_normal",
    "depth_to_normal_backward",
]
