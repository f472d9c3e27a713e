"""Herd-immunity thresholds in heterogeneous SIR populations.

The density engine evolves the susceptibility distribution of the
still-susceptible pool step by step; the stochastic simulator and the exact
enumerator provide independent checks, and the interventions module uses the
engine to plan vaccine allocation.
"""

from importlib.metadata import PackageNotFoundError, version as _version

from .density import (
    PopulationState,
    RTrajectory,
    check_convexity,
    check_mlrp,
    check_ratio_bound,
    initial_state,
    r_trajectory,
    run_to_threshold,
    step_density,
)
from .interventions import Region, allocate_accounting, allocate_oblivious, cost_of_region, timing_sweep
from .profile import ProfileSpec, SpreadingProfile, build_profile, calibrate_r0, explicit_nodes
from .stochastic import brute_force_r, estimate_r_curve, simulate

try:
    __version__ = _version("artifact")
except PackageNotFoundError:
    __version__ = "0.0.0"
