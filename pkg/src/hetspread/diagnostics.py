"""Bundled numerical checks on trajectories and on written artifacts."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .density import (
    ANALYTIC_TOL,
    Diagnostic,
    PopulationState,
    RTrajectory,
    advance,
    check_convexity,
    check_mlrp,
    check_ratio_bound,
    initial_state,
    read_trajectory_csv,
)
from .profile import SpreadingProfile
from .stochastic import generator

REPORT_NAME = "report.json"
DIAGNOSTICS_NAME = "diagnostics.json"


def check_monotone(values, tol: float = ANALYTIC_TOL, start: int = 0, name: str = "monotone_R") -> Diagnostic:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return Diagnostic(name, True, 0.0, None, tol)
    rise = values[1:] - values[:-1]
    i = int(np.argmax(rise))
    return Diagnostic(name, float(rise[i]) <= tol, float(rise[i]), start + i + 1, tol)


def states_at(profile: SpreadingProfile, steps, start: PopulationState | None = None) -> dict[int, PopulationState]:
    """Density states at each requested step, computed in one forward pass."""
    state = initial_state(profile) if start is None else start
    out = {}
    for n in sorted(set(int(x) for x in steps)):
        state = advance(state, profile, n - state.step)
        out[n] = state
    return out


def sample_pairs(last: int, consecutive: int, long_range: int, seed: int):
    """Deterministic sample of step pairs inside ``[0, last]``.

    Consecutive pairs are ``(n, n + 1)``; long-range pairs satisfy
    ``0 < n1 < n2 <= last``.
    """
    rng = generator(seed)
    pairs = []
    if last >= 1 and consecutive:
        k = min(consecutive, last)
        for n in np.sort(rng.choice(last, size=k, replace=False)).tolist():
            pairs.append((n, n + 1))
    far = []
    if last >= 2:
        for _ in range(long_range):
            a, b = np.sort(rng.choice(np.arange(1, last + 1), size=2, replace=False)).tolist()
            far.append((a, b))
    return pairs, far


def trajectory_checks(
    profile: SpreadingProfile,
    traj: RTrajectory,
    *,
    seed: int = 0,
    consecutive: int = 100,
    long_range: int = 10,
) -> list[Diagnostic]:
    """Convexity, monotonicity, MLRP/dominance and ratio-bound checks.

    MLRP is checked on sampled consecutive pairs and on long-range pairs;
    the ratio bound on the long-range pairs.
    """
    last = traj.start + traj.values.size - 1
    checks = [
        check_convexity(traj),
        check_monotone(traj.values, start=traj.start),
        check_monotone(traj.mean_s, start=traj.start, name="monotone_mean_s"),
    ]
    pairs, far = sample_pairs(last, consecutive, long_range, seed)
    if pairs or far:
        needed = [n for p in pairs + far for n in p]
        states = states_at(profile, needed)
        mlrp = [check_mlrp(states[a], states[b]) for a, b in pairs + far]
        worst = max(mlrp, key=lambda d: d.max_violation)
        checks.append(
            Diagnostic(
                "mlrp",
                all(d.passed for d in mlrp),
                worst.max_violation,
                worst.location,
                ANALYTIC_TOL,
                {"pairs": len(pairs), "long_range_pairs": len(far), "worst_steps": worst.detail["steps"]},
            )
        )
    if far:
        bounds = [check_ratio_bound(traj, a, b) for a, b in far]
        worst = max(bounds, key=lambda d: d.max_violation)
        checks.append(
            Diagnostic(
                "ratio_bound",
                all(d.passed for d in bounds),
                worst.max_violation,
                worst.location,
                ANALYTIC_TOL,
                {"pairs": len(far), "worst": worst.detail},
            )
        )
    return checks


def _convexity_sampled(n, values, tol=ANALYTIC_TOL) -> Diagnostic:
    """Convexity on possibly decimated rows: per-step slopes must not fall."""
    if values.size < 3:
        return Diagnostic("convexity", True, 0.0, None, tol)
    slope = np.diff(values) / np.diff(n)
    drop = slope[:-1] - slope[1:]
    i = int(np.argmax(drop))
    return Diagnostic("convexity", float(drop[i]) <= tol, float(drop[i]), int(n[i]), tol)


def _ratio_sampled(n, values, remaining, tol=ANALYTIC_TOL) -> Diagnostic:
    keep = n > 0
    n, values, remaining = n[keep], values[keep], remaining[keep]
    if n.size < 2:
        return Diagnostic("ratio_bound", True, 0.0, None, tol)
    excess = values[1:] / values[:-1] - remaining[1:] / remaining[:-1]
    i = int(np.argmax(excess))
    return Diagnostic("ratio_bound", float(excess[i]) <= tol, float(excess[i]), int(n[i + 1]), tol)


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def report_diagnostics(artifact_dir) -> dict:
    """Re-check every trajectory CSV under ``artifact_dir`` and merge the
    checks recorded at run time into one report.

    Raises:
        FileNotFoundError: if the directory holds no trajectory or
            diagnostics artifacts.
    """
    root = Path(artifact_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: not a directory")
    files = sorted(root.rglob("trajectory*.csv"))
    recorded = sorted(root.rglob(DIAGNOSTICS_NAME))
    if not files and not recorded:
        raise FileNotFoundError(f"{root}: no trajectory or diagnostics artifacts found")
    sections = []
    for path in files:
        n, values, remaining, mean_s = read_trajectory_csv(path)
        checks = [
            _convexity_sampled(n, values),
            check_monotone(values, start=int(n[0])),
            _ratio_sampled(n, values, remaining),
        ]
        # monotone check indexes rows; translate to step numbers
        mono = checks[1]
        if mono.location is not None:
            checks[1] = Diagnostic(mono.name, mono.passed, mono.max_violation, int(n[mono.location - int(n[0])]), mono.tolerance)
        sections.append(
            {
                "artifact": str(path.relative_to(root)),
                "passed": all(c.passed for c in checks),
                "checks": [c.to_dict() for c in checks],
            }
        )
    for path in recorded:
        data = json.loads(path.read_text())
        sections.append(
            {
                "artifact": str(path.relative_to(root)),
                "passed": bool(data.get("passed", False)),
                "checks": data.get("checks", []),
            }
        )
    return {"passed": all(s["passed"] for s in sections), "sections": sections}
