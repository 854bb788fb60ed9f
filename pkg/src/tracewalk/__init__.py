"""Simulation and analysis of nested biased walks, where each walk moves
on the trace left by the previous one, with the phase criterion deciding
ballistic versus sub-ballistic behavior."""

from .bias import (
    BiasDistribution,
    Condition1Report,
    ConductanceParams,
    boosted_axes_bias,
    check_condition1,
    conductance,
    conductance_params,
    drift,
    lateral_concentration_bias,
    log_odds,
    ratio_bias,
    restricted_kernel,
    shrinking_drift_bias,
)
from .engine import (
    BacktrackCensus,
    BudgetExhausted,
    IsolatedVertex,
    NestedRun,
    PathTooShort,
    SimulationConfig,
    UnsettledNeighborhood,
    backtrack_census,
    nested_simulate,
    simulate_level0,
    step,
    stream_for,
    velocity_estimate,
)
from .phase import (
    NoPositiveRoot,
    PhaseReport,
    backtrack_bound,
    boosted_root_closed_form,
    classify,
    phi,
    phi_prime,
    rate_function,
    simplicity_series,
    simplicity_summand,
    solve_root,
    trap_drift,
)
from .regen import (
    CertificationError,
    FrontierScanner,
    InsufficientBlocks,
    RegenerationRecord,
    TrapCensus,
    cut_points,
    regenerations,
    trap_events,
    trap_scaling,
    uber_levels,
)
from .resistance import (
    FiniteNetwork,
    NeverReturnBracket,
    SingularSystem,
    effective_resistance,
    escape_probability,
    hit_before,
    never_return_probability,
    ray_tail_resistance,
    truncated_network,
)
from .trace import (
    DiscontinuousExtension,
    NonAdjacentStep,
    TraceGraph,
    VertexAbsent,
    WalkPath,
)

__version__ = "0.1.0"
