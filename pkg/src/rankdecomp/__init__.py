"""Grid-level checks of rank decompositions and local-time identities for semimartingale ensembles."""

from .grid_paths import CadlagPath, Ensemble, GridMismatchError, TimeGrid, ito_sum, make_grid, pointwise
from .identities import REGISTRY, ResidualReport, UnsupportedInputError, run_identity
from .localtime import (
    LocalTimePath,
    PreconditionError,
    crossing_local_time,
    indicator_local_time,
    occupation_local_time,
    tanaka_local_time,
)
from .rank import EXACT, EpsilonPolicy, occupancy, rank_ensemble
from .simulate import JumpLaw, ModelSpec, SeedPolicy, fixture, simulate

__version__ = "0.1.0"
