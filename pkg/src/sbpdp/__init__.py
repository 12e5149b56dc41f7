"""Degree-preserving SBP operators and non-conforming SAT coupling in 2D.

The package is organized around the pipeline

    sbp1d     -- 1D operator construction and certification
    glue      -- interface projection operators onto intermediate grids
    tensor2d  -- 2D tensor-product operators and face restrictions
    mesh      -- Cartesian element meshes with periodic interfaces
    advect    -- semi-discrete advection right-hand side and time stepping
    analysis  -- errors, convergence orders, spectra, conservation metrics
    cli       -- experiment driver (``sbp-dp``)
"""

__version__ = "0.1.0"

from .errors import (
    BlocksOverlapError,
    ConfigurationError,
    ConstructionInfeasibleError,
    InstabilityError,
    OptimizationFailedError,
    ProjectionInfeasibleError,
    SearchFailedError,
    SpectrumTooLargeError,
)

__all__ = [
    "BlocksOverlapError",
    "ConfigurationError",
    "ConstructionInfeasibleError",
    "InstabilityError",
    "OptimizationFailedError",
    "ProjectionInfeasibleError",
    "SearchFailedError",
    "SpectrumTooLargeError",
]
