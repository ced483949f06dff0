"""Dense monocular visual-odometry front-end.

Direct image alignment against a keyframe whose per-pixel depth and
inlier probability come from externally supplied priors and are refined
online by a Beta-Gaussian measurement filter.
"""

from ._kernels import active_backend
from .geometry import Intrinsics, Pose
from .pipeline import PipelineConfig, run, run_snippets

__version__ = "0.1.0"

__all__ = [
    "Intrinsics",
    "Pose",
    "PipelineConfig",
    "run",
    "run_snippets",
    "active_backend",
    "__version__",
]
