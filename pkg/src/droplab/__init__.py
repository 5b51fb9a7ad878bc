"""droplab: weighted equilibrium droplets, Laplacian growth, Coulomb gas."""

from . import detgas, droplet, evolution, field, gas, obstacle, potential
from .field import Grid2D, RegionMask, ScalarField
from .obstacle import Droplet, ObstacleSolution
from .potential import Localization, PotentialSpec

__version__ = "0.1.0"

__all__ = [
    "Grid2D", "ScalarField", "RegionMask",
    "PotentialSpec", "Localization",
    "ObstacleSolution", "Droplet",
    "field", "potential", "obstacle", "droplet", "evolution", "gas", "detgas",
    "__version__",
]
