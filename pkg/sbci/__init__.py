"""SBCI Module - Dynamics-inspired eigensolvers for sparse CI Hamiltonians."""

from sbci.config import (
    SOLVER_CONFIG,
    FCI_CONFIG,
    SolverConfig,
    DavidsonConfig,
    solver_config,
    ensure_directories,
)

__all__ = [
    'SOLVER_CONFIG',
    'FCI_CONFIG',
    'SolverConfig',
    'DavidsonConfig',
    'solver_config',
    'ensure_directories',
]
