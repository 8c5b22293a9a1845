"""rcflow: invertible reaction-coordinate discovery with Brownian reduced kinetics.

The package learns a bijective split of a stochastic system's state into a
low-dimensional reaction coordinate driven by Brownian dynamics plus Gaussian
noise coordinates, then validates the reduced kinetics against the full
dynamics through Markov state model timescales.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, DivergenceError, NumericError, RcflowError
from .trajectory import Trajectory, load_trajectory, save_trajectory

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "NumericError",
    "RcflowError",
    "Trajectory",
    "load_trajectory",
    "save_trajectory",
    "__version__",
]
