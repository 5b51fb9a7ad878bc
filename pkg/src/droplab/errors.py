"""Exception types shared across droplab modules."""


class DroplabError(Exception):
    """Base class for all droplab errors."""


class ConfigurationError(DroplabError):
    """Invalid parameters, mismatched grids, or malformed run configs."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = list(details) if details else []


class PreconditionError(DroplabError):
    """An operation was called outside its documented domain."""


class BoxSizeError(DroplabError):
    """The droplet reached the margin of the computational box."""


class BracketError(DroplabError):
    """Boundary-constant bisection could not bracket the target mass."""


class ConvergenceError(DroplabError):
    """Iterative solve did not converge within the sweep budget."""

    def __init__(self, message, residual=None, sweeps=None):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class DegenerateDropletError(DroplabError):
    """Requested mass is below the resolution of a few grid cells."""


class InconsistencyError(DroplabError):
    """Cross-checked quantities disagree beyond tolerance."""


class ResolutionError(DroplabError):
    """Quadrature grid cannot resolve the requested polynomial degree."""


class IOFormatError(DroplabError):
    """Malformed field/mask dump or sidecar."""
