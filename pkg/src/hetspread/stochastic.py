"""Exact stochastic simulation of the infection-order process, and a
brute-force enumeration oracle for tiny populations.

At every step the next infected individual is drawn from the susceptibles
with probability proportional to susceptibility. Sequential
proportional-to-size draws without replacement are generated in one shot by
racing exponential clocks: each node gets ``E / S`` with ``E ~ Exp(1)`` and
nodes are infected in increasing key order.

Per step the simulator records ``I(v_n) * sum_{u susceptible, u != v_n} S(u)``,
the conditional expectation of the number of infections caused by ``v_n``.
"""

from __future__ import annotations

import csv
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .profile import SpreadingProfile

MAX_ENUMERATION_NODES = 9


def generator(seed) -> np.random.Generator:
    """Counter-based generator: Philox keyed by ``seed``, counter at zero.

    Generators pass through unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(key=int(seed)))


_local = threading.local()


def _rekeyed(key: int) -> np.random.Generator:
    """Same stream as ``generator(key)`` without building a new bit generator.

    Replica loops call this once per replica, so construction cost matters.
    """
    gen = getattr(_local, "gen", None)
    if gen is None:
        gen = _local.gen = np.random.Generator(np.random.Philox(key=0))
    state = gen.bit_generator.state
    state["state"]["counter"] = np.zeros(4, dtype=np.uint64)
    state["state"]["key"] = np.array([key & 0xFFFFFFFFFFFFFFFF, key >> 64], dtype=np.uint64)
    state["buffer"] = np.zeros(4, dtype=np.uint64)
    state["buffer_pos"] = 4
    state["has_uint32"] = 0
    state["uinteger"] = 0
    gen.bit_generator.state = state
    return gen


@dataclass(frozen=True, eq=False)
class Population:
    s: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        phi = np.asarray(self.phi, dtype=np.float64)
        if s.shape != phi.shape or s.ndim != 1:
            raise ValueError("s and phi must be vectors of equal length")
        if np.any((s < 0) | (s > 1) | (phi < 0) | (phi > 1)):
            raise ValueError("node parameters must lie in [0, 1]")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "phi", phi)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_inv_s", 1.0 / s)
        object.__setattr__(self, "_n_pos", int(np.count_nonzero(s > 0)))

    def __len__(self):
        return self.s.size

    @property
    def alive(self) -> float:
        """Total susceptibility of the (fully susceptible) population."""
        return float(self.s.sum())

    @classmethod
    def from_nodes(cls, nodes) -> "Population":
        arr = np.asarray(nodes, dtype=np.float64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    seed: int | None
    infection_order: np.ndarray
    r_hat: np.ndarray


def draw_population(profile: SpreadingProfile, seed, n0: int | None = None) -> Population:
    """Draw ``n0`` (default ``profile.n0``) nodes i.i.d. from the profile's atoms."""
    n0 = profile.n0 if n0 is None else n0
    if n0 < 2:
        raise ValueError("population needs at least two nodes")
    rng = generator(seed)
    idx = rng.choice(len(profile), size=n0, p=profile.w)
    return Population(profile.s[idx], profile.phi[idx])


def _run(pop: Population, max_steps: int, rng: np.random.Generator):
    # zero-susceptibility nodes get infinite keys and are never reached
    keys = rng.standard_exponential(pop.s.size) * pop._inv_s
    order = np.argsort(keys, kind="stable")
    steps = min(max_steps, pop._n_pos)
    s_ord = pop.s[order]
    # after[m]: susceptibility left once order[m] is infected, summed from the small end
    after = np.zeros(s_ord.size)
    after[:-1] = np.cumsum(s_ord[:0:-1])[::-1]
    order = order[:steps]
    return order, pop.phi[order] * after[:steps]


def simulate(pop: Population, max_steps: int, seed) -> SimulationTrace:
    """Simulate up to ``max_steps`` infections.

    The trace is shorter than ``max_steps`` only when every remaining
    susceptible has zero susceptibility.
    """
    if max_steps > len(pop):
        raise ValueError(f"max_steps={max_steps} exceeds population size {len(pop)}")
    order, r_hat = _run(pop, max_steps, generator(seed))
    return SimulationTrace(seed if not isinstance(seed, np.random.Generator) else None, order, r_hat)


@dataclass(frozen=True, eq=False)
class RCurveEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    replicas: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(("n", "mean_r", "stderr"))
            for n, (m, e) in enumerate(zip(self.mean.tolist(), self.stderr.tolist())):
                out.writerow((n, repr(m), repr(e)))


class _Accumulator:
    """Ordered Welford accumulation, one curve per replica index."""

    def __init__(self, steps):
        self.mean = np.zeros(steps)
        self.m2 = np.zeros(steps)
        self.count = 0
        self.shortest = steps

    def add(self, curve):
        # a curve is short only when its population ran out of susceptibility
        self.count += 1
        m = min(curve.size, self.shortest)
        self.shortest = m
        delta = curve[:m] - self.mean[:m]
        self.mean[:m] += delta / self.count
        self.m2[:m] += delta * (curve[:m] - self.mean[:m])

    def result(self) -> RCurveEstimate:
        m = self.shortest
        stderr = np.sqrt(self.m2[:m] / (self.count - 1) / self.count)
        return RCurveEstimate(self.mean[:m].copy(), stderr, self.count)


_CHUNK = 256


def _collect(fn, replicas, steps, threads) -> RCurveEstimate:
    acc = _Accumulator(steps)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for lo in range(0, replicas, _CHUNK):
            idx = range(lo, min(lo + _CHUNK, replicas))
            curves = pool.map(fn, idx) if pool else map(fn, idx)
            for c in curves:
                acc.add(c)
    finally:
        if pool:
            pool.shutdown()
    return acc.result()


def estimate_r_curve(
    profile: SpreadingProfile,
    n0: int,
    steps: int,
    replicas: int,
    base_seed: int,
    threads: int = 1,
) -> RCurveEstimate:
    """Pointwise mean and standard error of ``r_hat`` over independent replicas.

    Replica ``i`` draws a fresh population of ``n0`` nodes and simulates it,
    both from the stream seeded with ``base_seed + i``.
    """
    if replicas < 2:
        raise ValueError("need at least two replicas")

    def one(i):
        rng = _rekeyed(base_seed + i)
        pop = draw_population(profile, rng, n0)
        return _run(pop, steps, rng)[1]

    return _collect(one, replicas, steps, threads)


def replicate(pop: Population, steps: int, replicas: int, base_seed: int, threads: int = 1) -> RCurveEstimate:
    """Like :func:`estimate_r_curve` but on one fixed population."""
    if replicas < 2:
        raise ValueError("need at least two replicas")
    if steps > len(pop):
        raise ValueError(f"steps={steps} exceeds population size {len(pop)}")
    return _collect(lambda i: _run(pop, steps, _rekeyed(base_seed + i))[1], replicas, steps, threads)


def write_traces_csv(path, traces) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(("replica", "n", "r_hat"))
        for rep, trace in enumerate(traces):
            for n, r in enumerate(trace.r_hat.tolist()):
                out.writerow((rep, n, repr(r)))


def brute_force_curve(nodes, last: int | None = None) -> list:
    """Exact R(0), ..., R(last) for a tiny explicit population.

    Enumerates every ordered infection prefix, weighting each by its
    sequential probability ``prod S(v_k) / (susceptibility left)``. Works with
    any numeric type supporting ``+ - * /``, so ``Fraction`` inputs give
    exact rationals.
    """
    nodes = [(s, phi) for s, phi in nodes]
    count = len(nodes)
    if count > MAX_ENUMERATION_NODES:
        raise ValueError(
            f"enumeration is factorial; at most {MAX_ENUMERATION_NODES} nodes, got {count}"
        )
    if count == 0:
        raise ValueError("need at least one node")
    last = count - 1 if last is None else last
    if not 0 <= last < count:
        raise ValueError(f"step must be in [0, {count - 1}], got {last}")
    zero = nodes[0][0] * 0
    acc = [zero] * (last + 1)

    def walk(left, prob, depth):
        total = sum((nodes[u][0] for u in left), zero)
        if total == 0:
            return
        for v in left:
            s_v, phi_v = nodes[v]
            if s_v == 0:
                continue
            p = prob * s_v / total
            rest = [u for u in left if u != v]
            acc[depth] += p * phi_v * sum((nodes[u][0] for u in rest), zero)
            if depth < last:
                walk(rest, p, depth + 1)

    walk(list(range(count)), zero + 1, 0)
    return acc


def brute_force_r(nodes, n: int):
    """Exact expected number of infections caused by the ``n``-th infected node."""
    return brute_force_curve(nodes, n)[n]
