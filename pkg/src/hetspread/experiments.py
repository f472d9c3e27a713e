"""Experiment pipelines behind ``hetspread run``.

Each runner computes everything first and writes its files afterwards, so a
failure leaves no partial output and parallel fan-out cannot change bytes.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from . import _kernels
from .density import Diagnostic, DensityError, r_trajectory
from .diagnostics import DIAGNOSTICS_NAME, trajectory_checks, write_json
from .interventions import Region, allocate_accounting, allocate_oblivious, timing_sweep
from .profile import ProfileSpec, build_profile, explicit_nodes
from .stochastic import (
    Population,
    brute_force_curve,
    draw_population,
    estimate_r_curve,
    generator,
    replicate,
    simulate,
    write_traces_csv,
)

# Monte-Carlo band: absolute slack as a fraction of R0 plus this many SEs
MC_SLACK = 0.02
MC_SIGMAS = 3.0
ORACLE_SIGMAS = 4.0


class ExperimentError(RuntimeError):
    """A pipeline failed; the message names the experiment and item."""


def k_label(k: float) -> str:
    return f"{k:g}"


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _section(name, checks, **extra):
    return {"name": name, "passed": all(c.passed for c in checks), "checks": [c.to_dict() for c in checks], **extra}


def _overshoot(cfg: ExperimentConfig) -> int:
    return max(1, math.ceil(cfg.overshoot * cfg.n0))


def _trajectory_item(cfg: ExperimentConfig, profile):
    traj = r_trajectory(profile, overshoot=_overshoot(cfg))
    checks = trajectory_checks(
        profile, traj, seed=cfg.seed, consecutive=cfg.mlrp_pairs, long_range=cfg.long_range_pairs
    )
    return traj, checks


def run_trajectory(cfg: ExperimentConfig, out: Path) -> dict:
    profile = build_profile(cfg.profile_spec())
    traj, checks = _trajectory_item(cfg, profile)
    traj.write_csv(out / "trajectory.csv", cfg.output_decimation)
    return {
        "sections": [
            _section("trajectory", checks, r0=profile.r0, hit_step=traj.hit_step, hit_fraction=traj.hit_fraction)
        ]
    }


def run_k_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    def one(k):
        profile = build_profile(cfg.profile_spec(family="gamma", shape=k))
        try:
            return _trajectory_item(cfg, profile)
        except DensityError as exc:
            raise ExperimentError(f"k={k_label(k)}: {exc}") from exc

    results = _map(one, cfg.k_grid, cfg.threads)
    sections, hits = [], []
    for k, (traj, checks) in zip(cfg.k_grid, results):
        traj.write_csv(out / f"trajectory_k{k_label(k)}.csv", cfg.output_decimation)
        sections.append(_section(f"k={k_label(k)}", checks, hit_step=traj.hit_step, hit_fraction=traj.hit_fraction))
        hits.append((k_label(k), traj.hit_step if traj.hit_step is not None else "", traj.hit_fraction or ""))
    _rows(out / "hits.csv", ("k", "hit_step", "hit_fraction"), hits)
    return {"sections": sections}


def run_mc_validate(cfg: ExperimentConfig, out: Path) -> dict:
    profile = build_profile(cfg.profile_spec())
    traj = r_trajectory(profile, overshoot=_overshoot(cfg))
    steps = min(cfg.steps or traj.values.size, traj.values.size, cfg.n0)
    est = estimate_r_curve(profile, cfg.n0, steps, cfg.replicas, cfg.seed, threads=cfg.threads)
    m = est.mean.size
    gap = np.abs(est.mean - traj.values[:m])
    excess = gap - (MC_SLACK * profile.r0 + MC_SIGMAS * est.stderr)
    i = int(np.argmax(excess))
    band = Diagnostic(
        "mc_band",
        float(excess[i]) <= 0.0,
        float(excess[i]),
        i,
        0.0,
        {"slack_fraction_of_r0": MC_SLACK, "sigmas": MC_SIGMAS, "max_abs_gap": float(gap.max()), "steps": m},
    )
    traces = []
    for r in range(cfg.traces):
        rng = generator(cfg.seed + r)
        traces.append(simulate(draw_population(profile, rng, cfg.n0), steps, rng))

    traj.write_csv(out / "trajectory.csv", cfg.output_decimation)
    est.write_csv(out / "mc_aggregate.csv")
    _rows(
        out / "comparison.csv",
        ("n", "engine", "mc_mean", "stderr", "abs_gap"),
        zip(range(m), traj.values[:m].tolist(), est.mean.tolist(), est.stderr.tolist(), gap.tolist()),
    )
    if traces:
        write_traces_csv(out / "traces.csv", traces)
    return {"sections": [_section("mc_validate", [band], replicas=est.replicas, r0=profile.r0)]}


def random_nodes(rng, max_nodes: int) -> list[tuple[float, float]]:
    """Small population with distinct susceptibilities and infectiousness
    non-decreasing in susceptibility."""
    count = int(rng.integers(2, max_nodes + 1))
    s = np.sort(rng.uniform(0.05, 1.0, count))
    phi = np.sort(rng.uniform(0.05, 1.0, count))
    return list(zip(s.tolist(), phi.tolist()))


def oracle_item(nodes, replicas: int, base_seed: int, threads: int = 1) -> dict:
    """Exact, engine and Monte-Carlo R curves for one tiny population."""
    count = len(nodes)
    exact = np.array(brute_force_curve(nodes), dtype=np.float64)
    bound = max(s for s, _ in nodes) / sum(s for s, _ in nodes)
    profile = explicit_nodes(nodes)
    engine = np.full(count, np.nan)
    engine_error = None
    try:
        values = r_trajectory(profile, overshoot=-1).values
    except DensityError as exc:
        # keep the prefix computed before the recursion broke down
        engine_error = str(exc)
        values = _kernels.trajectory(profile.w.copy(), profile.s, profile.sphi, count, count, -1)[0]
    engine[: values.size] = values
    est = replicate(Population.from_nodes(nodes), count, replicas, base_seed, threads=threads)
    return {"exact": exact, "engine": engine, "bound": bound, "mc": est, "engine_error": engine_error}


def _relative_error(approx, exact):
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(approx - exact) / np.abs(exact)
    rel[(approx == exact)] = 0.0
    return np.where(np.isnan(rel), np.inf, rel)


def run_oracle_validate(cfg: ExperimentConfig, out: Path) -> dict:
    rng = generator(cfg.seed)
    populations = [random_nodes(rng, cfg.max_nodes) for _ in range(cfg.populations)]
    # disjoint replica key ranges per population
    seeds = [cfg.seed + 1 + p * cfg.replicas for p in range(cfg.populations)]
    items = [oracle_item(nodes, cfg.replicas, sd, cfg.threads) for nodes, sd in zip(populations, seeds)]

    rows, engine_checks, mc_checks = [], [], []
    for p, (nodes, it) in enumerate(zip(populations, items)):
        exact, engine, est = it["exact"], it["engine"], it["mc"]
        rel = _relative_error(engine, exact)
        excess = rel - it["bound"]
        i = int(np.argmax(excess))
        engine_checks.append(
            Diagnostic(
                f"engine_oracle[{p}]",
                bool(np.all(excess <= 0.0)),
                float(excess[i]),
                i,
                it["bound"],
                {"nodes": len(nodes), "max_relative_error": float(rel.max()), **({"error": it["engine_error"]} if it["engine_error"] else {})},
            )
        )
        m = est.mean.size
        gap = np.abs(est.mean - exact[:m])
        z = np.where(est.stderr > 0, gap / np.where(est.stderr > 0, est.stderr, 1.0), np.where(gap > 1e-12, np.inf, 0.0))
        j = int(np.argmax(z))
        mc_checks.append(
            Diagnostic(f"mc_oracle[{p}]", bool(z[j] <= ORACLE_SIGMAS), float(z[j]), j, ORACLE_SIGMAS, {"nodes": len(nodes)})
        )
        for n in range(len(nodes)):
            mc_m = float(est.mean[n]) if n < m else float("nan")
            mc_e = float(est.stderr[n]) if n < m else float("nan")
            rows.append((p, n, float(exact[n]), float(engine[n]), mc_m, mc_e, float(rel[n]), it["bound"]))

    _rows(
        out / "oracle.csv",
        ("population", "n", "exact", "engine", "mc_mean", "mc_stderr", "engine_rel_err", "bound"),
        rows,
    )
    return {"sections": [_section("engine_oracle", engine_checks), _section("mc_oracle", mc_checks)]}


def bi_regional(cfg: ExperimentConfig, k: float) -> list[Region]:
    """One homogeneous and one gamma region of equal size and R0."""
    homo = ProfileSpec("homogeneous", n0=cfg.n0, sigma=1.0, iota=1.0, target_r0=cfg.r0)
    return [
        Region("homogeneous", build_profile(homo)),
        Region("gamma", build_profile(cfg.profile_spec(family="gamma", shape=k))),
    ]


def run_allocation(cfg: ExperimentConfig, out: Path) -> dict:
    regions = {k: bi_regional(cfg, k) for k in cfg.k_grid}
    items = [(k, v) for k in cfg.k_grid for v in cfg.supplies]

    def one(item):
        k, supply = item
        kw = {"timing": cfg.timing}
        return (
            allocate_accounting(regions[k], supply, cfg.granularity, **kw),
            allocate_oblivious(regions[k], supply, cfg.granularity, **kw),
        )

    plans = _map(one, items, cfg.threads)
    plan_dir = out / "plans"
    plan_dir.mkdir(exist_ok=True)
    summary, relative, checks = [], [], []
    for (k, supply), (acc, obl) in zip(items, plans):
        lbl = k_label(k)
        acc.write_csv(plan_dir / f"plan_k{lbl}_accounting_{supply}.csv")
        obl.write_csv(plan_dir / f"plan_k{lbl}_oblivious_{supply}.csv")
        for plan, policy in ((acc, "accounting"), (obl, "oblivious")):
            summary.append((lbl, 1.0 / k, supply, policy, plan.total_infections, plan.method, ";".join(plan.flagged)))
        gain = obl.total_infections - acc.total_infections
        rel = gain / obl.total_infections if obl.total_infections else 0.0
        relative.append((lbl, 1.0 / k, supply, rel))
        checks.append(
            Diagnostic(f"accounting_not_worse[k={lbl},supply={supply}]", gain >= 0, float(-gain), None, 0.0)
        )
    _rows(
        out / "allocation_summary.csv",
        ("k", "inv_k", "supply", "policy", "total_infections", "method", "flagged"),
        summary,
    )
    _rows(out / "relative_difference.csv", ("k", "inv_k", "supply", "relative_difference"), relative)
    return {"sections": [_section("allocation", checks)]}


def run_timing_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    vaccines = round(cfg.vaccine_fraction * cfg.n0)
    timings = [round(f * cfg.n0) for f in cfg.timing_fractions]

    def one(k):
        region = Region(f"gamma_k{k_label(k)}", build_profile(cfg.profile_spec(family="gamma", shape=k)))
        return timing_sweep(region, vaccines, timings)

    sweeps = _map(one, cfg.k_grid, cfg.threads)
    summary, checks = [], []
    for k, sw in zip(cfg.k_grid, sweeps):
        lbl = k_label(k)
        sw.write_csv(out / f"timing_k{lbl}.csv")
        summary.append((lbl, sw.hit_step if sw.hit_step is not None else "", sw.spread, int(sw.monotone), len(sw.past_threshold)))
        drops = [a - b for a, b in zip(sw.costs, sw.costs[1:])]
        worst = max(drops) if drops else 0
        checks.append(Diagnostic(f"monotone_cost[k={lbl}]", sw.monotone, float(worst), None, 0.0))
    _rows(out / "timing_summary.csv", ("k", "hit_step", "spread", "monotone", "past_threshold"), summary)
    return {"sections": [_section("timing_sweep", checks, vaccines=vaccines, timings=timings)]}


RUNNERS = {
    "trajectory": run_trajectory,
    "k_sweep": run_k_sweep,
    "mc_validate": run_mc_validate,
    "oracle_validate": run_oracle_validate,
    "allocation": run_allocation,
    "timing_sweep": run_timing_sweep,
}


def run(cfg: ExperimentConfig) -> dict:
    """Run one experiment into ``cfg.out_dir`` and return its diagnostics.

    Writes the resolved config as ``config.yaml`` and the checks as
    ``diagnostics.json`` next to the experiment's CSV files.

    Raises:
        ExperimentError: any module failure, prefixed with the experiment kind.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = RUNNERS[cfg.experiment](cfg, out)
    except ExperimentError as exc:
        raise ExperimentError(f"{cfg.experiment}: {exc}") from exc
    except (ValueError, RuntimeError) as exc:
        raise ExperimentError(f"{cfg.experiment}: {type(exc).__name__}: {exc}") from exc
    report = {
        "experiment": cfg.experiment,
        "passed": all(s["passed"] for s in result["sections"]),
        "checks": [dict(c, section=s["name"]) for s in result["sections"] for c in s["checks"]],
        "sections": result["sections"],
    }
    (out / "config.yaml").write_text(cfg.dump())
    write_json(out / DIAGNOSTICS_NAME, report)
    return report

