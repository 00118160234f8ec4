"""Impulse control and finite-time stabilization of the heat equation with dynamic boundary conditions."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    ContractViolation,
    DegenerateRegionError,
    ImpheatError,
    InsufficientBasisError,
    InsufficientDataError,
    NumericalError,
)
from .mesh import DomainSpec, Mesh, Region, build_mesh, region_nodes  # noqa: E402
from .operators import DiscreteOperator, WeightFunction, assemble, control_map  # noqa: E402
from .spectral import EigenBasis, eigensolve, project_high, project_low  # noqa: E402

__all__ = [
    "ConfigurationError",
    "ContractViolation",
    "DegenerateRegionError",
    "DiscreteOperator",
    "DomainSpec",
    "EigenBasis",
    "ImpheatError",
    "InsufficientBasisError",
    "InsufficientDataError",
    "Mesh",
    "NumericalError",
    "Region",
    "WeightFunction",
    "assemble",
    "build_mesh",
    "control_map",
    "eigensolve",
    "project_high",
    "project_low",
    "region_nodes",
]
