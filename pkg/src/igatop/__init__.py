"""Isogeometric level-set topology optimization for 2D heat manipulators.

The package solves steady heat conduction on multi-patch NURBS geometries
with Nitsche interface coupling, computes adjoint sensitivities of
cloak/camouflage-style objectives with respect to level-set expansion
coefficients, and drives a damped-BFGS SQP optimizer with Tikhonov and
volume regularization plus level-set reinitialization.
"""

from igatop.errors import (
    AssemblyError,
    ConfigError,
    DomainError,
    GeometryError,
    IgatopError,
    ModelError,
    RefinementError,
    SolverError,
)

__all__ = [
    "IgatopError",
    "ConfigError",
    "DomainError",
    "GeometryError",
    "RefinementError",
    "ModelError",
    "AssemblyError",
    "SolverError",
]

__version__ = "0.1.0"
