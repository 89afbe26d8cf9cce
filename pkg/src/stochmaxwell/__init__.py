"""Numerical laboratory for recovering the strength of a white-noise current
source in the time-harmonic Maxwell system from tangential boundary traces.

The pipeline: free-space dyadic Green convolution and a Lippmann-Schwinger
volume solver (forward problem), a spherical capacity operator turning
boundary traces into volume pairings, complex-geometric-optics test solutions
that isolate Fourier modes of the source strength through the Ito isometry,
and a regularized Fourier synthesis whose accuracy is logarithmic in the
measured data size.
"""

from .geometry import (
    Bump,
    ConfigurationError,
    Grid3,
    MediumSpec,
    ScalarFieldC,
    SourceStrength,
    SphereMesh,
    VectorFieldC3,
)
from .greens import FreeConvolver, dyadic_green, helmholtz_g
from .forward import MaxwellSolver, SolverError, solve_maxwell, pde_residual
from .sphharm import VshBasis
from .capacity import CapacityOperator, boundary_functional, build_capacity
from .ensemble import generate_ensemble, read_ensemble, write_ensemble
from .cgo import CgoParams, CgoSolution, StabilityConstants, build_zeta_eta, solve_cgo_remainder
from .reconstruct import (
    ReconstructionResult,
    estimate_correlation,
    measure_epsilon,
    reconstruct_sigma,
    select_parameters,
    stability_sweep,
)
from .config import ExperimentConfig

__version__ = "0.1.0"

__all__ = [
    "Bump",
    "ConfigurationError",
    "Grid3",
    "MediumSpec",
    "ScalarFieldC",
    "SourceStrength",
    "SphereMesh",
    "VectorFieldC3",
    "FreeConvolver",
    "dyadic_green",
    "helmholtz_g",
    "MaxwellSolver",
    "SolverError",
    "solve_maxwell",
    "pde_residual",
    "VshBasis",
    "CapacityOperator",
    "boundary_functional",
    "build_capacity",
    "generate_ensemble",
    "read_ensemble",
    "write_ensemble",
    "CgoParams",
    "CgoSolution",
    "StabilityConstants",
    "build_zeta_eta",
    "solve_cgo_remainder",
    "ReconstructionResult",
    "estimate_correlation",
    "measure_epsilon",
    "reconstruct_sigma",
    "select_parameters",
    "stability_sweep",
    "ExperimentConfig",
    "__version__",
]
