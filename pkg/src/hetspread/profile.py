"""Populations as discrete distributions of spreading parameters.

A population is described by a finite set of atoms ``(s, phi, w)``: a
susceptibility value ``s``, the mean infectiousness ``phi`` of individuals
with that susceptibility, and the share ``w`` of the population carrying it.
A pair (infective ``i``, susceptible ``j``) transmits with probability
``I(i) * S(j)``, so the only infectiousness information the density engine
needs is ``phi`` as a function of ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy import stats

DEFAULT_ATOM_COUNT = 1000
MAX_CLAMPED_MASS = 0.01
MASS_TOL = 1e-12

FAMILIES = ("homogeneous", "gamma", "explicit")
CORRELATIONS = ("equal", "independent")


class ProfileError(ValueError):
    """Invalid profile parameters or an infeasible calibration."""


class SpreadingAtom(NamedTuple):
    s: float
    phi: float
    w: float


@dataclass(frozen=True)
class ProfileSpec:
    """Declarative description of a population, as read from a config file.

    ``family`` selects which of the remaining fields are used:

    * ``homogeneous``: ``sigma``, ``iota``
    * ``gamma``: ``shape``, optional ``scale`` (unit scale when omitted, in
      which case ``target_r0`` fixes the level), ``correlation``
    * ``explicit``: ``atoms`` as ``(s, phi, w)`` triples
    """

    family: str
    n0: int
    sigma: float | None = None
    iota: float | None = None
    shape: float | None = None
    scale: float | None = None
    correlation: str = "equal"
    atoms: tuple[tuple[float, float, float], ...] | None = None
    target_r0: float | None = None
    atom_count: int = DEFAULT_ATOM_COUNT

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ProfileError(f"family: unknown family {self.family!r}")
        if not isinstance(self.n0, (int, np.integer)) or self.n0 < 1:
            raise ProfileError(f"n0: must be a positive integer, got {self.n0!r}")
        if self.target_r0 is not None and not self.target_r0 > 0:
            raise ProfileError(f"target_r0: must be > 0, got {self.target_r0!r}")
        if self.family == "homogeneous":
            for name in ("sigma", "iota"):
                v = getattr(self, name)
                if v is None or not 0 <= v <= 1:
                    raise ProfileError(f"{name}: must be in [0, 1], got {v!r}")
        elif self.family == "gamma":
            if self.shape is None or not self.shape > 0:
                raise ProfileError(f"shape: must be > 0, got {self.shape!r}")
            if self.scale is not None and not self.scale > 0:
                raise ProfileError(f"scale: must be > 0, got {self.scale!r}")
            if self.scale is None and self.target_r0 is None:
                raise ProfileError("scale: required when target_r0 is not given")
            if self.correlation not in CORRELATIONS:
                raise ProfileError(
                    f"correlation: must be one of {CORRELATIONS}, got {self.correlation!r}"
                )
            if self.atom_count < 1:
                raise ProfileError(f"atom_count: must be >= 1, got {self.atom_count!r}")
        else:
            if not self.atoms:
                raise ProfileError("atoms: explicit family needs at least one atom")


@dataclass(frozen=True, eq=False)
class SpreadingProfile:
    """Immutable discrete joint distribution of (susceptibility, infectiousness).

    Atoms are stored column-wise and sorted strictly ascending by ``s``.
    ``coupling`` records how ``phi`` relates to ``s`` (``"equal"``,
    ``"independent"`` or ``"explicit"``), which decides how calibration
    rescales the atoms.
    """

    s: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    n0: int
    coupling: str = "explicit"
    _sphi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = np.array(self.s, dtype=np.float64)
        phi = np.array(self.phi, dtype=np.float64)
        w = np.array(self.w, dtype=np.float64)
        if not (s.ndim == phi.ndim == w.ndim == 1 and s.size == phi.size == w.size > 0):
            raise ProfileError("atoms: s, phi, w must be equal-length non-empty vectors")
        if np.any(s < 0) or np.any(s > 1) or np.any(phi < 0) or np.any(phi > 1):
            raise ProfileError("atoms: s and phi must lie in [0, 1]")
        if np.any(w <= 0):
            raise ProfileError("atoms: masses must be > 0")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ProfileError(f"atoms: masses sum to {w.sum()!r}, not 1")
        if np.any(np.diff(s) <= 0):
            raise ProfileError("atoms: s must be strictly increasing")
        if np.any(np.diff(phi) < 0):
            raise ProfileError("atoms: phi must be non-decreasing in s (correlated monotonicity)")
        if self.n0 < 1:
            raise ProfileError(f"n0: must be positive, got {self.n0!r}")
        for a in (s, phi, w):
            a.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "n0", int(self.n0))
        sphi = s * phi
        sphi.setflags(write=False)
        object.__setattr__(self, "_sphi", sphi)

    @classmethod
    def from_atoms(cls, atoms, n0, coupling="explicit"):
        """Sort, merge equal-``s`` atoms and normalise masses.

        Merged atoms take the mass-weighted mean of ``phi``, which is the
        conditional expectation of infectiousness given ``s``.
        """
        arr = np.asarray(atoms, dtype=np.float64).reshape(-1, 3)
        if np.any(arr[:, 2] <= 0):
            raise ProfileError("atoms: masses must be > 0")
        order = np.argsort(arr[:, 0], kind="stable")
        arr = arr[order]
        s_unique, idx = np.unique(arr[:, 0], return_inverse=True)
        w = np.bincount(idx, weights=arr[:, 2])
        phi = np.bincount(idx, weights=arr[:, 1] * arr[:, 2]) / w
        # unmerged atoms keep phi bit-exact
        single = np.bincount(idx) == 1
        phi[single] = arr[np.isin(idx, np.flatnonzero(single)), 1]
        return cls(s_unique, phi, w / w.sum(), n0, coupling)

    def __len__(self):
        return self.s.size

    @property
    def atoms(self) -> list[SpreadingAtom]:
        return [SpreadingAtom(*t) for t in zip(self.s.tolist(), self.phi.tolist(), self.w.tolist())]

    def __iter__(self) -> Iterator[SpreadingAtom]:
        return iter(self.atoms)

    @property
    def sphi(self) -> np.ndarray:
        return self._sphi

    @property
    def r0(self) -> float:
        return self.n0 * second_moment_sphi(self)

    def with_n0(self, n0: int) -> "SpreadingProfile":
        return SpreadingProfile(self.s, self.phi, self.w, n0, self.coupling)


def mean_susceptibility(profile: SpreadingProfile) -> float:
    return float(np.dot(profile.w, profile.s))


def second_moment_sphi(profile: SpreadingProfile) -> float:
    """Mass-weighted mean of ``s * phi``."""
    return float(np.dot(profile.w, profile.sphi))


def gamma_quantiles(shape: float, scale: float, atom_count: int) -> np.ndarray:
    """Equiprobable-quantile atoms of Gamma(shape, scale), one per bin midpoint."""
    probs = (np.arange(atom_count) + 0.5) / atom_count
    return stats.gamma.ppf(probs, shape, scale=scale)


def build_profile(spec: ProfileSpec) -> SpreadingProfile:
    """Quantise ``spec`` into a discrete profile, calibrating if ``target_r0`` is set."""
    if spec.family == "homogeneous":
        profile = SpreadingProfile([spec.sigma], [spec.iota], [1.0], spec.n0, "independent")
    elif spec.family == "explicit":
        profile = SpreadingProfile.from_atoms(spec.atoms, spec.n0)
    else:
        profile = _gamma_profile(spec)
    if spec.target_r0 is not None:
        profile = calibrate_r0(profile, spec.target_r0)
    return profile


def _gamma_profile(spec: ProfileSpec) -> SpreadingProfile:
    values = gamma_quantiles(spec.shape, spec.scale or 1.0, spec.atom_count)
    if spec.scale is not None:
        clamped = np.count_nonzero(values > 1.0) / values.size
        if clamped > MAX_CLAMPED_MASS:
            raise ProfileError(
                f"scale: {clamped:.2%} of the mass exceeds 1 and would be clamped "
                f"(limit {MAX_CLAMPED_MASS:.0%}); reduce the scale"
            )
        values = np.minimum(values, 1.0)
    else:
        # level is set by calibration afterwards; only the shape matters here
        values = values / values[-1]
    mass = np.full(values.size, 1.0 / values.size)
    if spec.correlation == "equal":
        atoms = np.column_stack([values, values, mass])
    else:
        atoms = np.column_stack([values, np.full(values.size, values.mean()), mass])
    return SpreadingProfile.from_atoms(atoms, spec.n0, spec.correlation)


def calibrate_r0(profile: SpreadingProfile, target_r0: float) -> SpreadingProfile:
    """Rescale atoms by a common factor so that ``n0 * E[s * phi] == target_r0``.

    In ``equal`` coupling both ``s`` and ``phi`` are scaled (the moment moves
    by ``c**2``); otherwise only ``s`` is scaled. The shape of the
    distribution is unchanged.

    Raises:
        ProfileError: if ``target_r0 <= 0``, the profile carries no
            transmission, or the factor would push a value above 1.
    """
    if not target_r0 > 0:
        raise ProfileError(f"target_r0: must be > 0, got {target_r0!r}")
    current = profile.n0 * second_moment_sphi(profile)
    if current <= 0:
        raise ProfileError("profile: no atom has s * phi > 0, cannot calibrate")
    ratio = target_r0 / current
    equal = profile.coupling == "equal"
    c = math.sqrt(ratio) if equal else ratio
    s = profile.s * c
    phi = profile.phi * c if equal else profile.phi
    if s[-1] > 1.0 or phi[-1] > 1.0:
        c_max = 1.0 / max(profile.s[-1], profile.phi[-1] if equal else 0.0)
        best = current * (c_max**2 if equal else c_max)
        raise ProfileError(
            f"target_r0: {target_r0} needs values above 1; the largest achievable R0 "
            f"for this profile is {best:.6g}"
        )
    return SpreadingProfile(s, phi, profile.w, profile.n0, profile.coupling)


def explicit_nodes(nodes: Sequence[tuple[float, float]]) -> SpreadingProfile:
    """Profile with one equal-mass atom per node; ``n0`` is the node count."""
    n = len(nodes)
    return SpreadingProfile.from_atoms([(s, phi, 1.0 / n) for s, phi in nodes], n)
