"""End-to-end acceptance criteria.

The experiment configs under ``configs/acceptance`` are run once through the
CLI (single thread) and the artifacts are shared by the criteria that read
them; the reproducibility criterion runs them again on several threads.
Each test prints one pass/fail line in the terminal summary.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from hetspread.cli import main
from hetspread.density import check_convexity, r_trajectory
from hetspread.diagnostics import trajectory_checks
from hetspread.profile import ProfileSpec, build_profile

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "acceptance"
N0 = 1_000_000
R0 = 3.0
CONVEXITY_GRID = (0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 100.0)


def gamma(k, n0=N0):
    return build_profile(ProfileSpec("gamma", n0=n0, shape=k, target_r0=R0))


def _run_all(root: Path, threads: int) -> dict:
    seconds, codes = {}, {}
    for cfg in sorted(CONFIGS.glob("*.yaml")):
        start = time.perf_counter()
        codes[cfg.stem] = main(["run", str(cfg), "--out-dir", str(root / cfg.stem), "--threads", str(threads)])
        seconds[cfg.stem] = time.perf_counter() - start
    return {"root": root, "seconds": seconds, "codes": codes}


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    return _run_all(tmp_path_factory.mktemp("acceptance_1"), threads=1)


def _diagnostics(artifacts, name):
    return json.loads((artifacts["root"] / name / "diagnostics.json").read_text())


def _csv(path):
    return np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")


def test_1_homogeneous_exactness(criterion):
    p = build_profile(ProfileSpec("homogeneous", n0=N0, sigma=1.0, iota=1.0, target_r0=R0))
    start = time.perf_counter()
    traj = r_trajectory(p, overshoot=-1)
    elapsed = time.perf_counter() - start
    exact = R0 * (N0 - traj.steps) / N0
    rel = float(np.max(np.abs(traj.values - exact) / exact))
    hit_err = abs(traj.hit_fraction - 2 / 3)
    ok = rel <= 1e-10 and hit_err <= 2 / N0 and elapsed < 5 and traj.values.size == N0
    criterion(1, ok, f"max rel err {rel:.2e} over {traj.values.size} steps, HIT {traj.hit_fraction:.7f}, {elapsed:.2f}s")
    assert ok


def test_2_convexity(criterion):
    start = time.perf_counter()
    worst = {}
    for k in CONVEXITY_GRID:
        worst[k] = check_convexity(r_trajectory(gamma(k))).max_violation
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-9 and elapsed < 60
    detail = ", ".join(f"k={k:g}: {v:.1e}" for k, v in worst.items())
    criterion(2, ok, f"max violation {detail}; {elapsed:.1f}s")
    assert ok


def test_3_mlrp_and_ratio_bound(criterion):
    results = {}
    for k in (0.1, 1.0):
        p = gamma(k)
        checks = trajectory_checks(p, r_trajectory(p), seed=3, consecutive=100, long_range=10)
        results[k] = {c.name: c for c in checks}
    ok = all(r["mlrp"].passed and r["ratio_bound"].passed for r in results.values())
    detail = "; ".join(
        f"k={k:g}: mlrp {r['mlrp'].max_violation:.1e} ({r['mlrp'].detail['pairs']}+{r['mlrp'].detail['long_range_pairs']} pairs), "
        f"ratio bound {r['ratio_bound'].max_violation:.1e}"
        for k, r in results.items()
    )
    criterion(3, ok, detail)
    assert ok


def test_4_oracle_equivalence(criterion, artifacts):
    diag = _diagnostics(artifacts, "oracle_validate")
    engine = [c for c in diag["checks"] if c["section"] == "engine_oracle"]
    mc = [c for c in diag["checks"] if c["section"] == "mc_oracle"]
    elapsed = artifacts["seconds"]["oracle_validate"]
    engine_ok = sum(c["passed"] for c in engine)
    mc_ok = sum(c["passed"] for c in mc)
    worst_z = max(c["max_violation"] for c in mc)
    ok = engine_ok == len(engine) and mc_ok == len(mc) and elapsed < 120
    criterion(
        4,
        ok,
        f"engine within max S/sum S on {engine_ok}/{len(engine)} populations, "
        f"MC within 4 SE on {mc_ok}/{len(mc)} (worst {worst_z:.2f} SE); {elapsed:.0f}s",
    )
    assert ok


def test_5_monte_carlo_at_scale(criterion, artifacts):
    diag = _diagnostics(artifacts, "mc_validate")
    band = diag["checks"][0]
    elapsed = artifacts["seconds"]["mc_validate"]
    cmp = _csv(artifacts["root"] / "mc_validate" / "comparison.csv")
    excess = np.max(cmp["abs_gap"] - (0.02 * R0 + 3 * cmp["stderr"]))
    ok = band["passed"] and excess <= 0 and elapsed < 120
    criterion(5, ok, f"max |gap| {band['detail']['max_abs_gap']:.4f}, worst excess over band {excess:.4f}; {elapsed:.1f}s")
    assert ok


def test_6_heterogeneity_lowers_hit(criterion):
    hits = {k: r_trajectory(gamma(k)).hit_fraction for k in CONVEXITY_GRID}
    ordered = [hits[k] for k in sorted(hits)]
    decreasing = all(a < b for a, b in zip(ordered, ordered[1:]))
    traj = r_trajectory(gamma(100.0))
    line = R0 * (N0 - traj.steps) / N0
    gap = np.abs(traj.values - line)
    # within 1% of the scale of the line (R0)
    abs_frac = float(gap.max() / R0)
    rel_frac = float(np.max(gap / line))
    ok = decreasing and abs_frac <= 0.01
    hit_txt = ", ".join(f"{k:g}:{hits[k]:.3f}" for k in sorted(hits))
    criterion(
        6,
        ok,
        f"HIT by k {hit_txt}; k=100 max gap {abs_frac:.2%} of R0 (pointwise relative {rel_frac:.2%})",
    )
    assert ok


def test_7_allocation(criterion, artifacts):
    root = artifacts["root"] / "allocation"
    elapsed = artifacts["seconds"]["allocation"]
    summary = _csv(root / "allocation_summary.csv")
    total = {(str(r["k"]), int(r["supply"]), str(r["policy"])): int(r["total_infections"]) for r in summary}
    keys = {(k, s) for k, s, _ in total}
    not_worse = all(total[(k, s, "accounting")] <= total[(k, s, "oblivious")] for k, s in keys)
    rel = _csv(root / "relative_difference.csv")
    lines = {}
    for r in rel:
        lines.setdefault(int(r["supply"]), []).append((float(r["k"]), float(r["relative_difference"])))
    increasing = True
    for pts in lines.values():
        vals = [v for _, v in sorted(pts, reverse=True)]
        increasing &= all(a < b for a, b in zip(vals, vals[1:]))
    at_01 = max(v for pts in lines.values() for k, v in pts if k == 0.1)
    ok = not_worse and increasing and at_01 >= 0.6 and elapsed < 1800
    per_supply = ", ".join(f"{s}: {dict(p)[0.1]:.1%}" for s, p in sorted(lines.items()))
    criterion(
        7,
        ok,
        f"accounting <= oblivious everywhere: {not_worse}; increasing as k falls: {increasing}; "
        f"relative difference at k=0.1 ({per_supply}); {elapsed:.0f}s",
    )
    assert ok


def test_8_timing_monotonicity(criterion, artifacts):
    summary = _csv(artifacts["root"] / "timing_sweep" / "timing_summary.csv")
    rows = {float(r["k"]): r for r in summary}
    monotone = all(int(r["monotone"]) == 1 for r in rows.values())
    spread = {k: int(r["spread"]) for k, r in rows.items()}
    ok = monotone and spread[0.1] > spread[10.0]
    criterion(8, ok, f"non-decreasing: {monotone}; spread k=0.1 {spread[0.1]} vs k=10 {spread[10.0]}")
    assert ok


def test_9_reproducibility(criterion, artifacts, tmp_path_factory):
    second = _run_all(tmp_path_factory.mktemp("acceptance_2"), threads=2)
    a, b = artifacts["root"], second["root"]
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    files_b = sorted(p.relative_to(b) for p in b.rglob("*.csv"))
    differ = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    ok = files == files_b and not differ and files
    criterion(9, ok, f"{len(files)} CSV files compared across 1 and 2 threads, {len(differ)} differ")
    assert ok
