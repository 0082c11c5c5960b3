"""Exception types shared across the package."""

import numpy as np


class ConfigurationError(ValueError):
    """Invalid sizes, band limits or configuration values."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A small system could not be factorized (non positive pivot)."""


class ContractError(ValueError):
    """Input violates a documented precondition (e.g. asymmetric matrix)."""
