import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetspread.profile import (
    ProfileError,
    ProfileSpec,
    SpreadingProfile,
    build_profile,
    calibrate_r0,
    explicit_nodes,
    gamma_quantiles,
    mean_susceptibility,
    second_moment_sphi,
)


def gamma(k, n0=1_000_000, r0=3.0, corr="equal", atoms=1000):
    return build_profile(ProfileSpec("gamma", n0=n0, shape=k, correlation=corr, target_r0=r0, atom_count=atoms))


def test_homogeneous_calibration():
    p = build_profile(ProfileSpec("homogeneous", n0=1000, sigma=1.0, iota=1.0, target_r0=3.0))
    assert len(p) == 1
    assert p.s[0] * p.phi[0] == pytest.approx(0.003, rel=1e-12)
    assert p.r0 == pytest.approx(3.0, rel=1e-12)


def test_gamma_equal_mode_calibration():
    p = gamma(1.0)
    assert float(np.dot(p.w, p.s**2)) == pytest.approx(3e-6, rel=1e-12)
    np.testing.assert_array_equal(p.s, p.phi)


def test_nonpositive_target_rejected():
    with pytest.raises(ProfileError, match="target_r0"):
        ProfileSpec("homogeneous", n0=10, sigma=1, iota=1, target_r0=0)
    p = explicit_nodes([(0.2, 0.2), (0.4, 0.4)])
    with pytest.raises(ProfileError):
        calibrate_r0(p, 0.0)


def test_moments_small_cases():
    one = SpreadingProfile([0.5], [0.5], [1.0], 10)
    assert mean_susceptibility(one) == 0.5
    assert second_moment_sphi(one) == 0.25
    two = explicit_nodes([(0.2, 0.2), (0.4, 0.4)])
    assert mean_susceptibility(two) == pytest.approx(0.3, abs=1e-15)


def test_gamma_moments_match_independent_sum():
    p = gamma(0.5)
    # pairwise summation in a different order
    assert mean_susceptibility(p) == pytest.approx(math.fsum(p.s * p.w), rel=1e-13)
    assert second_moment_sphi(p) == pytest.approx(math.fsum(p.s[::-1] * p.phi[::-1] * p.w[::-1]), rel=1e-13)


def test_independent_mode_uses_constant_phi():
    p = gamma(1.0, corr="independent")
    assert np.all(p.phi == p.phi[0])
    assert p.r0 == pytest.approx(3.0, rel=1e-12)


def test_unreachable_target_reports_maximum():
    with pytest.raises(ProfileError, match="largest achievable R0"):
        build_profile(ProfileSpec("homogeneous", n0=10, sigma=0.5, iota=0.5, target_r0=30))


def test_heavy_clamping_rejected():
    with pytest.raises(ProfileError, match="clamped"):
        build_profile(ProfileSpec("gamma", n0=100, shape=1.0, scale=1.0))


def test_light_clamping_accepted():
    p = build_profile(ProfileSpec("gamma", n0=100, shape=2.0, scale=0.05))
    assert p.s[-1] <= 1.0


def test_from_atoms_merges_and_sorts():
    p = SpreadingProfile.from_atoms([(0.4, 0.6, 1.0), (0.2, 0.1, 2.0), (0.4, 0.3, 1.0)], 50)
    np.testing.assert_allclose(p.s, [0.2, 0.4])
    np.testing.assert_allclose(p.w, [0.5, 0.5])
    np.testing.assert_allclose(p.phi, [0.1, 0.45])


@pytest.mark.parametrize(
    "s,phi,w",
    [
        ([0.2, 0.1], [0.1, 0.2], [0.5, 0.5]),  # unsorted
        ([0.1, 0.2], [0.3, 0.2], [0.5, 0.5]),  # phi decreasing
        ([0.1, 1.2], [0.1, 0.2], [0.5, 0.5]),  # out of range
        ([0.1, 0.2], [0.1, 0.2], [0.5, 0.6]),  # mass
        ([0.1, 0.2], [0.1, 0.2], [1.0, 0.0]),  # zero mass atom
    ],
)
def test_profile_invariants_enforced(s, phi, w):
    with pytest.raises(ProfileError):
        SpreadingProfile(s, phi, w, 10)


def test_quantiles_are_midpoints():
    q = gamma_quantiles(2.0, 1.0, 4)
    from scipy import stats

    np.testing.assert_allclose(stats.gamma.cdf(q, 2.0), [0.125, 0.375, 0.625, 0.875])


@settings(max_examples=30, deadline=None)
@given(
    k=st.floats(0.05, 50),
    r0=st.floats(0.5, 10),
    corr=st.sampled_from(["equal", "independent"]),
    atoms=st.integers(1, 400),
)
def test_built_profiles_satisfy_invariants(k, r0, corr, atoms):
    p = gamma(k, r0=r0, corr=corr, atoms=atoms)
    assert abs(p.w.sum() - 1) <= 1e-12
    assert np.all(np.diff(p.s) > 0)
    assert np.all(np.diff(p.phi) >= 0)
    assert p.r0 == pytest.approx(r0, rel=1e-9)
    if corr == "equal":
        np.testing.assert_array_equal(p.s, p.phi)


@settings(max_examples=30, deadline=None)
@given(k=st.floats(0.05, 50), r0=st.floats(0.5, 10), corr=st.sampled_from(["equal", "independent"]))
def test_calibration_is_idempotent(k, r0, corr):
    p = gamma(k, r0=r0, corr=corr, atoms=200)
    q = calibrate_r0(p, r0)
    assert np.max(np.abs(q.s - p.s)) <= 1e-12
    assert np.max(np.abs(q.phi - p.phi)) <= 1e-12


@pytest.mark.parametrize("k", [0.1, 1.0, 10.0])
def test_quantization_converges(k):
    # transmission moment of the unit-scale quantised gamma, before calibration
    # fixes its level; refining the grid should barely move it
    coarse = gamma_quantiles(k, 1.0, 1000)
    fine = gamma_quantiles(k, 1.0, 2000)
    a, b = np.mean(coarse**2), np.mean(fine**2)
    assert abs(a - b) / b < 1e-4
