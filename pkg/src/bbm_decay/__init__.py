"""Branching Brownian motion with competitive mass decay: simulation and numerics."""

from .curves import B, G, GStar, Median, Shifted, cstar, eval_curve
from .density import front_D, front_d, zeta_at, zeta_profile, zmax
from .engine import (CapacityError, ConfigurationError, PopulationState, SimConfig,
                     UsageError, init_ensemble, init_population, run, step)

__version__ = "0.1.0"
