"""Simulation and mean-field approximation toolkit for local
density-dependent Markov population processes on weighted directed
hypergraphs."""

__version__ = "0.1.0"

from .hypergraph import (
    RawHypergraph,
    WeightedHypergraph,
    degree_report,
    generate,
    normalize,
    regularity_report,
)
from .models import (
    affine_model,
    glauber_model,
    majority_model,
    sis_model,
    voter_model,
)
from .meanfield import (
    NimfaSolution,
    PartitionSpec,
    ReducedSolution,
    activity_solve,
    hmfa_solve,
    imfa_solve,
    metapop_reduce,
    metapop_solve,
    nimfa_solve,
    partition_reduce,
)
from .stochastic import (
    CoupledRun,
    MasterSolution,
    PopulationState,
    Trajectory,
    coupled_ensemble,
    master_solve,
    simulate,
    simulate_coupled,
    simulate_ensemble,
)
from .analysis import (
    BoundReport,
    ErrorReport,
    estimate_errors,
    evaluate_bounds,
    fit_scaling,
)

__all__ = [name for name in dir() if not name.startswith("_")]
