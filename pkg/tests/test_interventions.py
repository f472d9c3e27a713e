import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetspread.density import initial_state, reproduction_number
from hetspread.interventions import (
    AllocationError,
    Region,
    allocate_accounting,
    allocate_oblivious,
    cost_of_region,
    timing_sweep,
    vaccinate,
)
from hetspread.profile import ProfileSpec, build_profile


def homogeneous(n0, r0=3.0, name="h"):
    return Region(name, build_profile(ProfileSpec("homogeneous", n0=n0, sigma=1.0, iota=1.0, target_r0=r0)))


def gamma(k, n0=100_000, r0=3.0, name="g"):
    return Region(name, build_profile(ProfileSpec("gamma", n0=n0, shape=k, target_r0=r0)))


def test_vaccinate_zero_is_identity():
    st0 = initial_state(gamma(1).profile)
    assert vaccinate(st0, 0) is st0


def test_vaccination_scales_r_with_the_pool():
    h = homogeneous(1000)
    st0 = vaccinate(initial_state(h.profile), 500)
    assert reproduction_number(st0, h.profile) == pytest.approx(1.5, rel=1e-12)
    g = gamma(0.1)
    before = initial_state(g.profile)
    after = vaccinate(before, g.n0 // 2)
    np.testing.assert_array_equal(after.weights, before.weights)
    assert reproduction_number(after, g.profile) == pytest.approx(reproduction_number(before, g.profile) / 2, rel=1e-12)


def test_vaccinate_rejects_emptying_the_pool():
    with pytest.raises(ValueError):
        vaccinate(initial_state(homogeneous(10).profile), 10)


def test_homogeneous_costs():
    n0 = 10**6
    h = homogeneous(n0)
    assert abs(cost_of_region(h, 0) - 2 * n0 / 3) <= 1
    assert cost_of_region(h, 666_667) == 0


def test_cost_sweep_over_timing_is_monotone():
    sw = timing_sweep(gamma(0.1), 10_000, [0, 500, 1000, 2000, 4000])
    assert sw.monotone
    assert timing_sweep(homogeneous(10**5), 10_000, [0, 10_000, 30_000]).monotone


def test_single_timing():
    sw = timing_sweep(gamma(1), 100, [0])
    assert sw.monotone and sw.spread == 0


def test_timing_sensitivity_grows_with_heterogeneity():
    v = 10_000
    ts = [0, 5000, 10_000, 20_000]
    assert timing_sweep(gamma(0.1), v, ts).spread > timing_sweep(gamma(10), v, ts).spread


def test_late_timings_cost_the_unvaccinated_count():
    g = gamma(0.1)
    sw = timing_sweep(g, 10_000, [0, 20_000])
    assert sw.past_threshold == [20_000]
    assert sw.costs[-1] == cost_of_region(g, 0)


def test_identical_regions_split_evenly():
    regions = [gamma(0.5, name="a"), gamma(0.5, name="b")]
    for supply in (1000, 30_000):
        plan = allocate_accounting(regions, supply, granularity=100)
        assert abs(plan.vaccines[0] - plan.vaccines[1]) <= 100


def test_bi_regional_small_supply_favours_one_region():
    regions = [homogeneous(10**5), gamma(0.1)]
    plan = allocate_accounting(regions, 10_000)
    assert plan.vaccines[0] != plan.vaccines[1]
    assert plan.allocated <= 10_000


def test_zero_supply():
    regions = [homogeneous(10**5), gamma(0.1)]
    plan = allocate_accounting(regions, 0)
    assert plan.vaccines == [0, 0]
    assert plan.infections == [cost_of_region(r, 0) for r in regions]


def test_oblivious_splits_equal_sizes_evenly():
    regions = [homogeneous(10**5), gamma(0.1)]
    plan = allocate_oblivious(regions, 40_000, granularity=100)
    assert abs(plan.vaccines[0] - plan.vaccines[1]) <= 100


def test_single_region_policies_agree():
    region = [gamma(0.3)]
    a = allocate_accounting(region, 20_000)
    b = allocate_oblivious(region, 20_000)
    assert a.vaccines == b.vaccines == [20_000]
    assert a.infections == b.infections


def test_plan_infections_match_costs():
    regions = [homogeneous(10**5), gamma(0.2)]
    plan = allocate_oblivious(regions, 50_000)
    assert plan.infections == [cost_of_region(r, v) for r, v in zip(regions, plan.vaccines)]


def test_bad_inputs():
    with pytest.raises(AllocationError):
        allocate_accounting([], 10)
    with pytest.raises(AllocationError):
        allocate_accounting([gamma(1)], -1)


def test_plan_csv(tmp_path):
    plan = allocate_accounting([homogeneous(10**4), gamma(0.5, n0=10**4)], 2000)
    path = tmp_path / "plan.csv"
    plan.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "region,vaccines,predicted_infections"
    assert lines[-1] == f"total,{plan.allocated},{plan.total_infections}"


@settings(max_examples=15, deadline=None)
@given(k=st.floats(0.05, 20), r0=st.floats(1.5, 5))
def test_cost_non_increasing_in_vaccines(k, r0):
    g = gamma(k, n0=20_000, r0=r0)
    costs = [cost_of_region(g, v) for v in range(0, 19_000, 1000)]
    assert all(a >= b for a, b in zip(costs, costs[1:]))


@settings(max_examples=10, deadline=None)
@given(k=st.floats(0.05, 20), supply=st.integers(0, 30_000))
def test_accounting_never_worse_than_oblivious(k, supply):
    regions = [homogeneous(20_000), gamma(k, n0=20_000)]
    a = allocate_accounting(regions, supply)
    b = allocate_oblivious(regions, supply)
    assert a.total_infections <= b.total_infections
    assert a.allocated <= supply


@settings(max_examples=10, deadline=None)
@given(k=st.floats(0.05, 20), supply=st.integers(0, 30_000))
def test_symmetric_plans(k, supply):
    g = max(1, supply // 1000)
    plan = allocate_accounting([gamma(k, n0=20_000, name="a"), gamma(k, n0=20_000, name="b")], supply)
    assert abs(plan.vaccines[0] - plan.vaccines[1]) <= g
