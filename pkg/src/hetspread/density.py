"""Deterministic evolution of the susceptibility density.

The state after ``n`` infections is a weight vector over the profile's atoms
(the support never grows) together with the number of susceptibles left.
Each step removes susceptibility-proportionally: an atom with susceptibility
``s`` survives the step with probability ``1 - s / T``, where ``T`` is the
mean-field total susceptibility ``remaining * E[s]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .profile import SpreadingProfile

MASS_TOL = 1e-10
ANALYTIC_TOL = 1e-9
EQUALITY_TOL = 1e-12
MLRP_FLOOR = 1e-15
DEFAULT_OVERSHOOT = 0.1

TRAJECTORY_HEADER = ("n", "R", "remaining", "mean_s")


class DensityError(RuntimeError):
    """The mean-field recursion left its domain of validity."""


@dataclass(frozen=True, eq=False)
class PopulationState:
    step: int
    weights: np.ndarray
    remaining: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > MASS_TOL:
            raise ValueError("weights: must be non-negative and sum to 1")
        if self.remaining < 0 or self.step < 0:
            raise ValueError("step and remaining must be non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def mean_s(self, profile: SpreadingProfile) -> float:
        return float(np.dot(self.weights, profile.s))


def initial_state(profile: SpreadingProfile) -> PopulationState:
    return PopulationState(0, profile.w, profile.n0)


def _dominated(profile, state):
    return DensityError(
        f"step {state.step}: an atom's susceptibility exceeds the total susceptibility "
        f"of the {state.remaining} remaining individuals; the population is too small "
        "for the mean-field recursion"
    )


def step_density(state: PopulationState, profile: SpreadingProfile) -> PopulationState:
    """Advance ``state`` by one infection."""
    return advance(state, profile, 1)


def advance(state: PopulationState, profile: SpreadingProfile, n_steps: int) -> PopulationState:
    """Advance ``state`` by ``n_steps`` infections (``step_density`` repeated)."""
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if n_steps and state.remaining - n_steps < 1:
        raise ValueError(
            f"cannot take {n_steps} steps with {state.remaining} susceptibles remaining"
        )
    w, done, status = _kernels.advance(
        np.array(state.weights), profile.s, profile.sphi, state.remaining, n_steps
    )
    if status != _kernels.OK:
        raise _dominated(profile, PopulationState(state.step + done, w, state.remaining - done))
    return PopulationState(state.step + done, w, state.remaining - done)


def reproduction_number(state: PopulationState, profile: SpreadingProfile) -> float:
    return state.remaining * float(np.dot(state.weights, profile.sphi))


@dataclass(frozen=True, eq=False)
class RTrajectory:
    """R(n) sampled at every step from ``start`` on.

    ``values[j]`` is R at step ``start + j``. ``hit_step`` is the first step
    with R < 1 (``None`` if never reached).
    """

    values: np.ndarray
    remaining: np.ndarray
    mean_s: np.ndarray
    n0: int
    hit_step: int | None
    start: int = 0
    final_state: PopulationState | None = field(default=None, repr=False)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.values.size)

    @property
    def hit_fraction(self) -> float | None:
        return None if self.hit_step is None else self.hit_step / self.n0

    @property
    def first_differences(self) -> np.ndarray:
        return self.values[:-1] - self.values[1:]

    def at(self, n: int) -> float:
        return float(self.values[n - self.start])

    def write_csv(self, path, decimate: int = 1) -> None:
        """Write ``n,R,remaining,mean_s`` rows, keeping every ``decimate``-th
        step plus the final one."""
        idx = np.arange(0, self.values.size, max(1, decimate))
        if idx[-1] != self.values.size - 1:
            idx = np.append(idx, self.values.size - 1)
        write_trajectory_csv(
            path,
            self.start + idx,
            self.values[idx],
            self.remaining[idx],
            self.mean_s[idx],
        )


def write_trajectory_csv(path, n, values, remaining, mean_s) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRAJECTORY_HEADER)
        for row in zip(n.tolist(), values.tolist(), remaining.tolist(), mean_s.tolist()):
            out.writerow((row[0], repr(row[1]), row[2], repr(row[3])))


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(n, R, remaining, mean_s)`` columns of a trajectory file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no rows")
    cols = list(zip(*rows))
    return (
        np.array(cols[0], dtype=np.int64),
        np.array(cols[1], dtype=np.float64),
        np.array(cols[2], dtype=np.int64),
        np.array(cols[3], dtype=np.float64),
    )


def r_trajectory(
    profile: SpreadingProfile,
    *,
    state: PopulationState | None = None,
    overshoot: int | None = None,
    max_steps: int | None = None,
) -> RTrajectory:
    """Iterate the density recursion and record R(n).

    Args:
        profile: calibrated spreading profile.
        state: starting state, the fully susceptible population by default.
        overshoot: steps to keep going after R first drops below 1. Defaults
            to 10% of ``n0``; a negative value runs until fewer than two
            susceptibles remain.
        max_steps: hard cap on the number of steps taken.

    Raises:
        DensityError: when one atom dominates the remaining total
            susceptibility before the stopping point.
    """
    if state is None:
        state = initial_state(profile)
    if overshoot is None:
        overshoot = max(1, math.ceil(DEFAULT_OVERSHOOT * profile.n0))
    if max_steps is None:
        max_steps = state.remaining
    values, remaining, mean_s, hit, w, status = _kernels.trajectory(
        np.array(state.weights), profile.s, profile.sphi, state.remaining, max_steps, overshoot
    )
    last = PopulationState(state.step + values.size - 1, w, int(remaining[-1]))
    if status != _kernels.OK:
        raise _dominated(profile, last)
    return RTrajectory(
        values=values,
        remaining=remaining,
        mean_s=mean_s,
        n0=profile.n0,
        hit_step=None if hit < 0 else state.step + int(hit),
        start=state.step,
        final_state=last,
    )


def run_to_threshold(
    profile: SpreadingProfile,
    state: PopulationState | None = None,
    max_steps: int | None = None,
) -> tuple[int | None, PopulationState]:
    """Step until R first drops below 1, keeping only the end state.

    Returns ``(hit_step, state)``: the step at which R < 1 (``None`` if
    ``max_steps`` ran out or the pool was exhausted first) and the state
    reached. Same recursion as :func:`r_trajectory`, without the record.
    """
    hit, _, last = threshold_crossing(profile, state, max_steps)
    return hit, last


def threshold_crossing(
    profile: SpreadingProfile,
    state: PopulationState | None = None,
    max_steps: int | None = None,
) -> tuple[int | None, float | None, PopulationState]:
    """Like :func:`run_to_threshold`, also returning where R crosses 1 when
    interpolated linearly between the last step with R >= 1 and the first
    with R < 1. The crossing lies in ``(hit_step - 1, hit_step]``, or is
    ``hit_step`` itself when R starts below 1.
    """
    if state is None:
        state = initial_state(profile)
    if max_steps is None:
        max_steps = state.remaining
    hit, done, w, remaining, status, r_prev, r_last = _kernels.threshold(
        np.array(state.weights), profile.s, profile.sphi, state.remaining, max_steps
    )
    last = PopulationState(state.step + done, w, int(remaining))
    if status != _kernels.OK:
        raise _dominated(profile, last)
    if hit < 0:
        return None, None, last
    step = state.step + int(hit)
    if hit == 0:
        return step, float(step), last
    return step, step - 1 + (r_prev - 1.0) / (r_prev - r_last), last


@dataclass(frozen=True)
class Diagnostic:
    """Outcome of one numerical check."""

    name: str
    passed: bool
    max_violation: float
    location: int | None = None
    tolerance: float = ANALYTIC_TOL
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "max_violation": float(self.max_violation),
            "location": self.location,
            "tolerance": self.tolerance,
            **({"detail": self.detail} if self.detail else {}),
        }


def check_convexity(traj, tol: float = ANALYTIC_TOL, start: int | None = None) -> Diagnostic:
    """Check that successive decrements of R never grow.

    ``traj`` may be an :class:`RTrajectory` or a plain sequence of values.
    The reported violation is ``max_n (R(n+1) - R(n+2)) - (R(n) - R(n+1))``
    and its location is the ``n`` where it occurs.
    """
    values = np.asarray(getattr(traj, "values", traj), dtype=np.float64)
    if start is None:
        start = getattr(traj, "start", 0)
    if values.size < 3:
        raise ValueError("convexity check needs at least three values")
    excess = 2.0 * values[1:-1] - values[2:] - values[:-2]
    i = int(np.argmax(excess))
    worst = float(excess[i])
    return Diagnostic("convexity", worst <= tol, worst, start + i, tol)


def _same_grid(a: PopulationState, b: PopulationState):
    if a.weights.shape != b.weights.shape:
        raise ValueError("states are defined on different atom grids")


def check_mlrp(
    state_a: PopulationState, state_b: PopulationState, tol: float = ANALYTIC_TOL
) -> Diagnostic:
    """Check that ``w_a / w_b`` is non-decreasing along the atoms, and that ``a``
    first-order stochastically dominates ``b`` (CDF of ``a`` never above ``b``).

    Atoms where either mass is below 1e-15 are skipped for the ratio test.
    Ratio steps are compared relative to the ratio's size so that long-range
    pairs with ratios spanning many orders of magnitude are handled.
    """
    _same_grid(state_a, state_b)
    wa, wb = state_a.weights, state_b.weights
    keep = np.flatnonzero((wa > MLRP_FLOOR) & (wb > MLRP_FLOOR))
    ratio_violation = 0.0
    ratio_loc = None
    if keep.size > 1:
        ratio = wa[keep] / wb[keep]
        drop = (ratio[:-1] - ratio[1:]) / np.maximum(ratio[:-1], ratio[1:])
        i = int(np.argmax(drop))
        ratio_violation = max(0.0, float(drop[i]))
        ratio_loc = int(keep[i])
    cdf_gap = np.cumsum(wa) - np.cumsum(wb)
    j = int(np.argmax(cdf_gap))
    fsd_violation = max(0.0, float(cdf_gap[j]))
    worst = max(ratio_violation, fsd_violation)
    loc = ratio_loc if ratio_violation >= fsd_violation else j
    return Diagnostic(
        "mlrp",
        ratio_violation <= tol and fsd_violation <= tol,
        worst,
        loc,
        tol,
        {
            "steps": [state_a.step, state_b.step],
            "ratio_violation": ratio_violation,
            "dominance_violation": fsd_violation,
        },
    )


def check_ratio_bound(traj: RTrajectory, n1: int, n2: int, tol: float = ANALYTIC_TOL) -> Diagnostic:
    """Check ``R(n2) / R(n1) <= (N0 - n2) / (N0 - n1)`` for ``0 < n1 < n2 < N0``.

    The susceptible counts are read from the trajectory, so vaccinated
    trajectories compare against their actual pool sizes.
    """
    last = traj.start + traj.values.size - 1
    if not 0 < n1 < n2 < traj.n0:
        raise ValueError(f"need 0 < n1 < n2 < n0, got n1={n1}, n2={n2}")
    if n1 < traj.start or n2 > last:
        raise ValueError(f"steps {n1}, {n2} outside trajectory range [{traj.start}, {last}]")
    i1, i2 = n1 - traj.start, n2 - traj.start
    lhs = traj.values[i2] / traj.values[i1]
    rhs = traj.remaining[i2] / traj.remaining[i1]
    excess = float(lhs - rhs)
    return Diagnostic(
        "ratio_bound",
        excess <= tol,
        excess,
        n2,
        tol,
        {"n1": n1, "n2": n2, "ratio": float(lhs), "bound": float(rhs)},
    )
