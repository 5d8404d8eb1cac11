"""Kinetic equation and fluctuation analysis for weakly interacting lattice fermions."""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractError, ConvergenceError, DomainError,  # noqa: E402
                     FermiKineticsError, NumericalError, ResourceError)
from .lattice import *  # noqa: E402,F401,F403
from .collision import *  # noqa: E402,F401,F403
from .kinetics import *  # noqa: E402,F401,F403
from .quasifree import *  # noqa: E402,F401,F403
from .fluctuations import *  # noqa: E402,F401,F403
from . import collision, fluctuations, fockoracle, io, kinetics, lattice, quasifree  # noqa: E402,F401

__all__ = [
    "__version__",
    "FermiKineticsError",
    "ConfigError",
    "ContractError",
    "DomainError",
    "ResourceError",
    "NumericalError",
    "ConvergenceError",
    "fockoracle",
    "io",
]
for _mod in (lattice, collision, kinetics, quasifree, fluctuations):
    __all__ += _mod.__all__
del _mod
