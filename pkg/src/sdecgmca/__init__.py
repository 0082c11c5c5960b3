"""
Joint deconvolution and blind source separation of spherical data.

The package provides spherical harmonic transforms on a Gauss-Legendre
grid, an isotropic starlet on the sphere, a scene simulator, the
alternating sparse solver with its four Tikhonov regularization
strategies, separation metrics and a batch command line.
"""

from .errors import ConfigurationError, ContractError, SingularMatrixError
from .metrics import align, ca_db, degrade_to_worst, nmse_db
from .simulate import Scene, SceneConfig, simulate
from .solver import (Phase, RegStrategy, SolverConfig, SolverState, Strategy, gmca_baseline,
                     solve, update_a, update_s_tikhonov)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ContractError", "SingularMatrixError", "align", "ca_db",
    "degrade_to_worst", "nmse_db", "Scene", "SceneConfig", "simulate", "Phase",
    "RegStrategy", "SolverConfig", "SolverState", "Strategy", "gmca_baseline", "solve",
    "update_a", "update_s_tikhonov",
]
