"""Vaccination, multi-region vaccine allocation and vaccination-timing sweeps.

Vaccinees are drawn uniformly from the susceptible pool, so vaccination
leaves the susceptibility density untouched and only shrinks the pool. The
cost of a region is the number of infections before R first drops below 1.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .density import PopulationState, initial_state, run_to_threshold, threshold_crossing
from .profile import SpreadingProfile, build_profile, ProfileSpec

# planning runs on the interpolated crossing, which is smooth in v up to
# interpolation jitter of ~1e-4 infections; gains closer than this count as
# ties and second differences above -this count as convex
COST_TOL = 1e-3


class AllocationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Region:
    name: str
    profile: SpreadingProfile

    @property
    def n0(self) -> int:
        return self.profile.n0

    @property
    def r0(self) -> float:
        return self.profile.r0

    def surrogate(self) -> "Region":
        """Homogeneous region with the same population size and R0."""
        spec = ProfileSpec("homogeneous", n0=self.n0, sigma=1.0, iota=1.0, target_r0=self.r0)
        return Region(self.name, build_profile(spec))


def vaccinate(state: PopulationState, count: int) -> PopulationState:
    """Remove ``count`` uniformly chosen susceptibles; the density is unchanged."""
    if count < 0:
        raise ValueError("vaccine count must be non-negative")
    if count > state.remaining - 1:
        raise ValueError(
            f"cannot vaccinate {count} of {state.remaining} susceptibles (at most remaining - 1)"
        )
    if count == 0:
        return state
    return PopulationState(state.step, state.weights, state.remaining - count)


def cost_of_region(region: Region, vaccines: int, timing: int = 0) -> int:
    """Infections before R first drops below 1, vaccinating at step ``timing``.

    Vaccinated individuals are never counted. When vaccination comes after the
    threshold has already been crossed it has no effect on the count. If R
    never drops below 1 the count is everyone who got infected.
    """
    return _costs(region, vaccines, timing)[0]


def _costs(region: Region, vaccines: int, timing: int) -> tuple[int, float]:
    """Integer cost and the interpolated point where R crosses 1."""
    profile = region.profile
    if not 0 <= vaccines < region.n0:
        raise ValueError(f"vaccines must be in [0, n0), got {vaccines}")
    if timing < 0:
        raise ValueError("timing must be non-negative")
    state = initial_state(profile)
    if timing > 0:
        hit, cross, state = threshold_crossing(profile, state, max_steps=timing)
        if hit is not None:
            return hit, cross
    hit, cross, state = threshold_crossing(profile, vaccinate(state, vaccines))
    if hit is not None:
        return hit, cross
    count = region.n0 - vaccines - state.remaining
    return count, float(count)


@dataclass
class AllocationPlan:
    regions: list[str]
    vaccines: list[int]
    total_supply: int
    infections: list[int]
    granularity: int
    method: str = "greedy"
    flagged: list[str] = field(default_factory=list)

    @property
    def total_infections(self) -> int:
        return int(sum(self.infections))

    @property
    def allocated(self) -> int:
        return int(sum(self.vaccines))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(("region", "vaccines", "predicted_infections"))
            for row in zip(self.regions, self.vaccines, self.infections):
                out.writerow(row)
            out.writerow(("total", self.allocated, self.total_infections))


class _CostCache:
    """Memoised cost curve of one region on the allocation lattice.

    Calling returns the interpolated crossing, which is what the optimiser
    compares; ``exact`` gives the integer infection count.
    """

    def __init__(self, region: Region, timing: int):
        self.region = region
        self.timing = timing
        self.entries: dict[int, tuple[int, float]] = {}

    def _entry(self, v: int) -> tuple[int, float]:
        if v not in self.entries:
            # past this point every further dose has nobody to go to
            cap = self.region.n0 - 1 - self.timing
            if v > cap:
                self.entries[v] = self._entry(cap)
            else:
                self.entries[v] = _costs(self.region, v, self.timing)
        return self.entries[v]

    def __call__(self, v: int) -> float:
        return self._entry(v)[1]

    def exact(self, v: int) -> int:
        return self._entry(v)[0]

    @property
    def values(self) -> dict[int, float]:
        return {v: e[1] for v, e in self.entries.items()}


def _is_convex(points: dict[int, float], tol: float) -> bool:
    xs = sorted(points)
    ys = [points[x] for x in xs]
    for i in range(1, len(xs) - 1):
        # lattice is uniform except possibly the last (partial) step
        left = (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1])
        right = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
        if right - left < -tol / min(xs[i] - xs[i - 1], xs[i + 1] - xs[i]):
            return False
    return True


def _greedy(costs, supply, g, threads):
    k = len(costs)
    tie = COST_TOL
    alloc = [0] * k
    left = supply
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while left > 0:
            chunk = min(g, left)
            if pool:
                nxt = list(pool.map(lambda i: costs[i](alloc[i] + chunk), range(k)))
            else:
                nxt = [costs[i](alloc[i] + chunk) for i in range(k)]
            gains = [costs[i](alloc[i]) - nxt[i] for i in range(k)]
            best = max(gains)
            if best <= tie:
                break
            # ties (gains equal up to rounding): fewest vaccines so far, then lowest index
            pick = min((i for i in range(k) if gains[i] >= best - tie), key=lambda i: (alloc[i], i))
            alloc[pick] += chunk
            left -= chunk
    finally:
        if pool:
            pool.shutdown()
    return alloc


def _exhaustive(costs, supply, g):
    """Exact optimum over multiples of ``g`` by dynamic programming over regions."""
    units = supply // g
    # best[j]: least total cost of the regions so far using j lattice units
    best = [costs[0](j * g) for j in range(units + 1)]
    picks = []
    for c in costs[1:]:
        curve = [c(t * g) for t in range(units + 1)]
        row, pick = [], []
        for j in range(units + 1):
            val, t = min((best[j - t] + curve[t], t) for t in range(j + 1))
            row.append(val)
            pick.append(t)
        best = row
        picks.append(pick)
    j = int(np.argmin(best))
    alloc = []
    for pick in reversed(picks):
        alloc.append(pick[j] * g)
        j -= pick[j]
    alloc.append(j * g)
    return alloc[::-1]


def _default_granularity(supply: int) -> int:
    return max(1, supply // 1000)


def _allocate(planning, truth, supply, g, timing, threads, method):
    if supply < 0:
        raise AllocationError("total_supply must be non-negative")
    if not planning:
        raise AllocationError("need at least one region")
    g = _default_granularity(supply) if g is None else g
    if g < 1:
        raise AllocationError("granularity must be >= 1")
    costs = [_CostCache(r, timing) for r in planning]
    alloc = _greedy(costs, supply, g, threads)
    flagged = [r.name for r, c in zip(planning, costs) if not _is_convex(c.values, COST_TOL)]
    name = "greedy"
    if flagged:
        alloc = _exhaustive(costs, supply, g)
        name = "exhaustive"
    if truth is planning:
        infections = [costs[i].exact(alloc[i]) for i in range(len(truth))]
    else:
        infections = [cost_of_region(r, v, timing) for r, v in zip(truth, alloc)]
    return AllocationPlan(
        regions=[r.name for r in truth],
        vaccines=alloc,
        total_supply=supply,
        infections=infections,
        granularity=g,
        method=f"{method}/{name}",
        flagged=flagged,
    )


def allocate_accounting(
    regions: list[Region],
    total_supply: int,
    granularity: int | None = None,
    *,
    timing: int = 0,
    threads: int = 1,
) -> AllocationPlan:
    """Greedy marginal allocation against each region's true profile.

    Vaccines are handed out ``granularity`` at a time to the region whose
    cost drops the most, until the supply runs out or no region gains. The
    cost curves visited are checked for convexity; if a check fails the plan
    is recomputed by exhaustive lattice search and the region is flagged.
    """
    return _allocate(regions, regions, total_supply, granularity, timing, threads, "accounting")


def allocate_oblivious(
    regions: list[Region],
    total_supply: int,
    granularity: int | None = None,
    *,
    timing: int = 0,
    threads: int = 1,
) -> AllocationPlan:
    """Plan against homogeneous surrogates (same n0 and R0), score on the truth."""
    surrogates = [r.surrogate() for r in regions]
    return _allocate(surrogates, regions, total_supply, granularity, timing, threads, "oblivious")


@dataclass
class TimingSweep:
    timings: list[int]
    costs: list[int]
    hit_step: int | None
    """Unvaccinated HIT step, for reference."""

    @property
    def monotone(self) -> bool:
        return all(a <= b for a, b in zip(self.costs, self.costs[1:]))

    @property
    def spread(self) -> int:
        return max(self.costs) - min(self.costs)

    @property
    def past_threshold(self) -> list[int]:
        return [t for t in self.timings if self.hit_step is not None and t >= self.hit_step]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(("param", "cost"))
            for row in zip(self.timings, self.costs):
                out.writerow(row)


def timing_sweep(region: Region, vaccines: int, timings, threads: int = 1) -> TimingSweep:
    """Cost of giving ``vaccines`` doses at each step in ``timings``.

    Timings at or past the unvaccinated threshold are evaluated rather than
    rejected; they cost exactly the unvaccinated count and are listed in
    ``past_threshold``.
    """
    timings = [int(t) for t in timings]
    if not timings:
        raise ValueError("timings must not be empty")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            costs = list(pool.map(lambda t: cost_of_region(region, vaccines, t), timings))
    else:
        costs = [cost_of_region(region, vaccines, t) for t in timings]
    natural, _ = run_to_threshold(region.profile)
    return TimingSweep(timings, costs, natural)
