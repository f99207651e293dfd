"""strokeopt: fits a budget of Bezier strokes to a raster image by gradient descent."""

__version__ = "0.1.0"

from .geometry import Sketch, Stroke, eval_bezier, flatten, from_params, to_params
from .raster import RasterConfig, composite_to_rgb, kernel_name, render, render_backward

__all__ = [
    "Sketch",
    "Stroke",
    "eval_bezier",
    "flatten",
    "from_params",
    "to_params",
    "RasterConfig",
    "render",
    "render_backward",
    "composite_to_rgb",
    "kernel_name",
    "__version__",
]
