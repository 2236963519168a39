"""Pair potentials, relative energies, and regime condition checks.

A pair potential here is radially symmetric, compactly supported, and may
take the value ``+inf`` inside a hard core.  The two regime conditions are
stability (the pair-sum of energies of any finite configuration is bounded
below by ``-B * n``) and the low activity-high temperature smallness
condition on ``z * integral |exp(-phi) - 1|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .space import Configuration, Displacement, Torus

__all__ = [
    "PairPotential",
    "ModelParams",
    "StabilityCheck",
    "LahtCheck",
    "phi",
    "relative_energy",
    "check_stability",
    "check_laht",
    "sphere_surface",
]

FAMILIES = ("soft-disk", "hard-core-soft-disk", "truncated-well")


def sphere_surface(d: int) -> float:
    """Surface area of the unit sphere in d dimensions (2, 2*pi, 4*pi, ...)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass(frozen=True)
class PairPotential:
    """Radial pair potential with compact support.

    Families:

    * ``soft-disk``: ``theta * (1 - r/r0)**2`` for r < r0, else 0.
    * ``hard-core-soft-disk``: +inf for r < hard_core, then the soft disk.
    * ``truncated-well``: -well_depth for r < well_range, else 0; an optional
      hard core below ``hard_core``.

    ``stability_b`` is the declared stability constant; it is certified
    analytically only when the potential is nonnegative (then B = 0 works).
    """

    family: str
    theta: float = 1.0
    r0: float = 1.0
    hard_core: float = 0.0
    well_depth: float = 0.0
    well_range: float = 0.0
    stability_b: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.theta < 0 or self.hard_core < 0 or self.well_depth < 0:
            raise ValueError("potential parameters must be nonnegative")
        if self.family == "soft-disk" and not self.r0 > 0:
            raise ValueError("soft-disk range r0 must be positive")
        if self.family == "hard-core-soft-disk":
            if not 0 < self.hard_core < self.r0:
                raise ValueError("hard core must satisfy 0 < hard_core < r0")
        if self.family == "truncated-well":
            if not self.well_range > 0:
                raise ValueError("well range must be positive")
            if self.hard_core >= self.well_range:
                raise ValueError("hard core must be smaller than the well range")
        if self.stability_b < 0:
            raise ValueError("stability constant must be nonnegative")

    @property
    def cutoff(self) -> float:
        """Radius beyond which the potential vanishes identically."""
        if self.family == "truncated-well":
            return self.well_range
        return self.r0

    @property
    def nonnegative(self) -> bool:
        return self.family in ("soft-disk", "hard-core-soft-disk")

    @property
    def has_hard_core(self) -> bool:
        return self.family == "hard-core-soft-disk" or (
            self.family == "truncated-well" and self.hard_core > 0
        )

    def phi_norm(self, r):
        """Vectorized evaluation phi(|x|); returns +inf inside the hard core."""
        r = np.asarray(r, dtype=float)
        if self.family == "truncated-well":
            out = np.where(r < self.well_range, -self.well_depth, 0.0)
        else:
            t = np.clip(1.0 - r / self.r0, 0.0, None)
            out = self.theta * t * t
        if self.has_hard_core:
            out = np.where(r < self.hard_core, np.inf, out)
        return out if out.ndim else float(out)


def phi(pot: PairPotential, disp: Displacement) -> float:
    """Potential evaluated on a displacement (depends only on its norm)."""
    return float(pot.phi_norm(disp.norm))


@dataclass(frozen=True)
class ModelParams:
    """Activity, interpolation parameter s, pair potential, and box."""

    z: float
    s: float
    potential: PairPotential
    torus: Torus

    def __post_init__(self):
        if not self.z > 0:
            raise ValueError("activity z must be positive")
        if not 0.0 <= self.s <= 0.5:
            raise ValueError("s must lie in [0, 1/2]")
        if self.potential.cutoff > 0.5 * self.torus.side:
            raise ValueError("potential cutoff exceeds L/2 (minimum-image ambiguity)")

    @property
    def volume(self) -> float:
        return self.torus.volume

    def new_configuration(self) -> Configuration:
        cell = max(self.potential.cutoff, self.torus.side / 64.0)
        return Configuration(self.torus, cell_size=cell)

    # -- energies ----------------------------------------------------------

    def relative_energy(self, x, gamma: Configuration, exclude_id: int | None = None) -> float:
        """E(x, gamma) = sum over y in gamma of phi(x - y), minus an excluded id."""
        _, _, norms = gamma.neighbors_within(x, self.potential.cutoff, exclude_id=exclude_id)
        if norms.size == 0:
            return 0.0
        return float(np.sum(self.potential.phi_norm(norms)))

    def energy_against(self, x, points: np.ndarray) -> float:
        """E(x, gamma) for a raw (N, d) position array."""
        if points.shape[0] == 0:
            return 0.0
        norms = self.torus.min_image_norm(points - np.asarray(x, dtype=float))
        return float(np.sum(self.potential.phi_norm(norms)))

    def energies_against(self, xs: np.ndarray, points: np.ndarray) -> np.ndarray:
        """E(x, gamma) for a batch of probe points xs (Q, d). Returns (Q,)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if points.shape[0] == 0:
            return np.zeros(xs.shape[0])
        delta = self.torus.min_image_vec(xs[:, None, :] - points[None, :, :])
        norms = np.sqrt(np.sum(delta * delta, axis=-1))
        return np.sum(self.potential.phi_norm(norms), axis=1)

    def total_pair_energy(self, gamma: Configuration) -> float:
        pts = gamma.positions()
        n = pts.shape[0]
        if n < 2:
            return 0.0
        total = 0.0
        for i in range(n):
            norms = self.torus.min_image_norm(pts[i + 1:] - pts[i])
            total += float(np.sum(self.potential.phi_norm(norms)))
        return total


def relative_energy(m: ModelParams, x, gamma: Configuration, exclude_id: int | None = None) -> float:
    return m.relative_energy(x, gamma, exclude_id=exclude_id)


@dataclass(frozen=True)
class StabilityCheck:
    b: float
    certified: bool
    falsified: bool = False
    counterexample: np.ndarray | None = field(default=None, compare=False)


def check_stability(pot: PairPotential, rng: np.random.Generator | None = None,
                    trials: int = 2000, max_points: int = 8) -> StabilityCheck:
    """Certify or attack the stability constant of a potential.

    Nonnegative families are certified with B = 0 (every pair term is >= 0).
    For the truncated well the declared constant is attacked by a randomized
    search over small configurations clustered at the scale of the well; a
    configuration with pair-sum below ``-B * n`` falsifies the declaration.
    """
    if pot.nonnegative:
        return StabilityCheck(b=0.0, certified=True)
    if rng is None:
        rng = np.random.default_rng(0)
    b = pot.stability_b
    for _ in range(trials):
        n = int(rng.integers(2, max_points + 1))
        # Collinear clusters: a counterexample on a line embeds in every R^d.
        span = pot.cutoff * float(rng.uniform(0.5, 2.5))
        pts = rng.uniform(0.0, span, size=(n, 1))
        total = 0.0
        ok = True
        for i in range(n):
            r = np.sqrt(np.sum((pts[i + 1:] - pts[i]) ** 2, axis=1))
            vals = pot.phi_norm(r)
            if np.any(np.isinf(vals)):
                ok = False
                break
            total += float(np.sum(vals))
        if ok and total < -b * n:
            return StabilityCheck(b=b, certified=False, falsified=True, counterexample=pts)
    return StabilityCheck(b=b, certified=False)


@dataclass(frozen=True)
class LahtCheck:
    lhs: float
    rhs: float
    satisfied: bool
    quad_error: float


def _mayer_integral(pot: PairPotential, d: int, resolution: int) -> float:
    """Radial midpoint quadrature of integral |exp(-phi(x)) - 1| dx over R^d."""
    rmax = pot.cutoff
    r = (np.arange(resolution) + 0.5) * (rmax / resolution)
    vals = pot.phi_norm(r)
    integrand = np.where(np.isinf(vals), 1.0, np.abs(np.expm1(-vals)))
    radial = np.sum(integrand * r ** (d - 1)) * (rmax / resolution)
    return sphere_surface(d) * radial


def check_laht(m: ModelParams, quad_resolution: int = 4096) -> LahtCheck:
    """Check the smallness condition z * integral |e^{-phi} - 1| < 1/(2 e^{1+2B}).

    The quadrature error is estimated by Richardson comparison against half
    the resolution (midpoint rule is second order).
    """
    if quad_resolution < 2:
        raise ValueError("quad_resolution must be >= 2")
    d = m.torus.dimension
    full = m.z * _mayer_integral(m.potential, d, quad_resolution)
    half = m.z * _mayer_integral(m.potential, d, max(1, quad_resolution // 2))
    rhs = 1.0 / (2.0 * math.exp(1.0 + 2.0 * m.potential.stability_b))
    return LahtCheck(lhs=full, rhs=rhs, satisfied=full < rhs,
                     quad_error=abs(full - half) / 3.0)
