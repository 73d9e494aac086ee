"""Toolkit for certifying and parameterizing discrete 2-surfaces.

The package ingests weighted point samples (or triangle meshes) of a
2-surface in R^n, certifies multiscale flatness/density/tilt hypotheses,
estimates first-variation mean curvature, and constructs two kinds of
controlled parameterizations: a stagewise projection map with distortion
reports and an energy-minimizing conformal disk map with A2 / BMO /
inverse-Hoelder diagnostics.
"""

__version__ = "0.1.0"

from .config import AnalysisConfig, DEFAULT_CONFIG
from .geometry import (
    Ball,
    Plane,
    WeightedSurfaceSample,
    fit_plane_pca,
    grassmann_project,
    hausdorff_distance,
    projector_distance,
)

__all__ = [
    "AnalysisConfig",
    "DEFAULT_CONFIG",
    "Ball",
    "Plane",
    "WeightedSurfaceSample",
    "fit_plane_pca",
    "grassmann_project",
    "hausdorff_distance",
    "projector_distance",
    "__version__",
]
