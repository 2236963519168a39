"""Test functions, exponential cylinder functions, and hop kernels.

The observables driven through the generators are exponentials
``F(gamma) = exp(sum_x f(x))`` of a compactly supported continuous test
function f.  Hop kernels are symmetric, nonnegative, compactly supported,
and can be rescaled as ``a_eps(x) = eps^d * a(eps * x)``, which spreads the
jump range by ``1/eps`` while keeping the total mass fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .space import Configuration, Torus
from .potential import sphere_surface

__all__ = [
    "TestFunction",
    "ExpCylinderFunction",
    "Kernel",
    "ScaledKernel",
]

TEST_SHAPES = ("tent", "smooth-bump")
KERNEL_SHAPES = ("triangular", "truncated-gaussian")


@dataclass(frozen=True)
class TestFunction:
    """Continuous compactly supported function on the torus.

    ``tent``: amplitude * max(0, 1 - |x-c|/R).
    ``smooth-bump``: amplitude * exp(1 - 1/(1 - (|x-c|/R)^2)) inside the
    support ball, 0 outside.

    The support radius must satisfy R <= L/4 so shifted copies of the
    support stay unambiguous under the minimum image.
    """

    torus: Torus
    shape: str
    amplitude: float
    radius: float
    center: np.ndarray

    def __post_init__(self):
        if self.shape not in TEST_SHAPES:
            raise ValueError(f"unknown test-function shape {self.shape!r}")
        if not 0 < self.radius <= 0.25 * self.torus.side:
            raise ValueError("support radius must lie in (0, L/4]")
        object.__setattr__(self, "center",
                           self.torus.wrap(np.asarray(self.center, dtype=float)))

    def __call__(self, x) -> float:
        return float(self.eval_many(np.asarray(x, dtype=float)[None, :])[0])

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate on an (N, d) array of points."""
        points = np.asarray(points, dtype=float)
        if points.size == 0:
            return np.zeros(points.shape[:-1])
        r = self.torus.min_image_norm(points - self.center)
        t = r / self.radius
        if self.shape == "tent":
            return self.amplitude * np.clip(1.0 - t, 0.0, None)
        inside = t < 1.0
        out = np.zeros_like(t)
        ts = np.where(inside, t, 0.0)
        out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - ts[inside] ** 2))
        return out

    def translated(self, center) -> "TestFunction":
        return replace(self, center=np.asarray(center, dtype=float))

    def scaled(self, amplitude_factor: float = 1.0, radius_factor: float = 1.0) -> "TestFunction":
        return replace(self, amplitude=self.amplitude * amplitude_factor,
                       radius=self.radius * radius_factor)

    def support_grid(self, per_axis: int):
        """Midpoint tensor grid over the support box; returns (nodes, weight).

        Nodes form a (per_axis**d, d) array covering the cube circumscribing
        the support ball; ``weight`` is the constant cell volume.
        """
        d = self.torus.dimension
        h = 2.0 * self.radius / per_axis
        ax = -self.radius + (np.arange(per_axis) + 0.5) * h
        mesh = np.meshgrid(*([ax] * d), indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1) + self.center
        return self.torus.wrap(nodes), h ** d


@dataclass(frozen=True)
class ExpCylinderFunction:
    """F(gamma) = exp(sum_{x in gamma} f(x)); strictly positive, F(empty)=1."""

    f: TestFunction

    def log_value_points(self, points: np.ndarray) -> float:
        return float(np.sum(self.f.eval_many(points)))

    def value_points(self, points: np.ndarray) -> float:
        return math.exp(self.log_value_points(points))

    def value(self, gamma: Configuration) -> float:
        """Evaluate via the cell index restricted to the support ball."""
        _, vecs, _ = gamma.neighbors_within(self.f.center, self.f.radius)
        if vecs.shape[0] == 0:
            return 1.0
        return math.exp(float(np.sum(self.f.eval_many(self.f.center + vecs))))

    # -- difference operators (closed forms for exponentials) -------------

    def d_minus(self, gamma: Configuration, pid: int) -> float:
        """F(gamma \\ x) - F(gamma) = F(gamma) * (exp(-f(x)) - 1)."""
        fx = self.f(gamma.position(pid))
        return self.value(gamma) * math.expm1(-fx)

    def d_plus(self, gamma: Configuration, y) -> float:
        """F(gamma u y) - F(gamma) = F(gamma) * (exp(f(y)) - 1)."""
        fy = self.f(np.asarray(y, dtype=float))
        return self.value(gamma) * math.expm1(fy)

    def d_swap(self, gamma: Configuration, pid: int, y) -> float:
        """F(gamma \\ x u y) - F(gamma) = F(gamma) * (exp(f(y) - f(x)) - 1)."""
        fx = self.f(gamma.position(pid))
        fy = self.f(np.asarray(y, dtype=float))
        return self.value(gamma) * math.expm1(fy - fx)


@dataclass(frozen=True)
class Kernel:
    """Bounded symmetric hop kernel a >= 0 with compact support.

    ``triangular``: amplitude * max(0, 1 - |x|/R).
    ``truncated-gaussian``: amplitude * exp(-|x|^2 / (2 sigma^2)) for |x| < R.

    The total mass has a closed form per shape and dimension, so kernel
    normalization never relies on quadrature.
    """

    dimension: int
    shape: str
    amplitude: float
    radius: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.shape not in KERNEL_SHAPES:
            raise ValueError(f"unknown kernel shape {self.shape!r}")
        if not (self.amplitude > 0 and self.radius > 0):
            raise ValueError("kernel amplitude and radius must be positive")
        if self.shape == "truncated-gaussian" and self.sigma == 0.0:
            object.__setattr__(self, "sigma", 0.5 * self.radius)

    def eval_norm(self, r):
        r = np.asarray(r, dtype=float)
        if self.shape == "triangular":
            out = self.amplitude * np.clip(1.0 - r / self.radius, 0.0, None)
        else:
            out = np.where(r < self.radius,
                           self.amplitude * np.exp(-0.5 * (r / self.sigma) ** 2), 0.0)
        return out if out.ndim else float(out)

    @property
    def mass(self) -> float:
        d = self.dimension
        if self.shape == "triangular":
            return self.amplitude * sphere_surface(d) * self.radius ** d / (d * (d + 1))
        a = d / 2.0
        x = self.radius ** 2 / (2.0 * self.sigma ** 2)
        radial = 2.0 ** (a - 1.0) * self.sigma ** d * math.gamma(a) * special.gammainc(a, x)
        return self.amplitude * sphere_surface(d) * radial

    def with_mass(self, target: float) -> "Kernel":
        if not target > 0:
            raise ValueError("target mass must be positive")
        return replace(self, amplitude=self.amplitude * target / self.mass)

    def sample_radius(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF of the radial part of the normalized density."""
        d = self.dimension
        u = np.asarray(u, dtype=float)
        if self.shape == "triangular":
            if d == 1:
                t = 1.0 - np.sqrt(1.0 - u)
            else:
                # CDF(t) = (d+1) t^d - d t^(d+1); monotone on [0,1] -> bisect.
                t = _bisect_increasing(lambda t: (d + 1) * t ** d - d * t ** (d + 1), u)
            return self.radius * t
        a = d / 2.0
        p_r = special.gammainc(a, self.radius ** 2 / (2.0 * self.sigma ** 2))
        return self.sigma * np.sqrt(2.0 * special.gammaincinv(a, u * p_r))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n displacements from the normalized density a / mass."""
        d = self.dimension
        radii = self.sample_radius(rng.uniform(size=n))
        if d == 1:
            signs = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
            return (radii * signs)[:, None]
        dirs = rng.normal(size=(n, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return radii[:, None] * dirs


def _bisect_increasing(fn, targets: np.ndarray, iters: int = 60) -> np.ndarray:
    lo = np.zeros_like(targets)
    hi = np.ones_like(targets)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = fn(mid) < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ScaledKernel:
    """a_eps(x) = eps^d * a(eps x); support radius R/eps must fit in L/2.

    On the torus the kernel is evaluated on the minimum image only; the
    admissibility bound guarantees at most one periodic image contributes.
    The mass is exactly the base kernel's mass, independent of eps.
    """

    base: Kernel
    eps: float
    torus: Torus

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.base.dimension != self.torus.dimension:
            raise ValueError("kernel dimension does not match the torus")
        if self.support_radius > 0.5 * self.torus.side:
            raise ValueError(
                f"inadmissible eps: kernel support {self.support_radius} exceeds L/2")
        if not self.base.mass > 0:
            raise ValueError("degenerate kernel with zero mass")

    @property
    def support_radius(self) -> float:
        return self.base.radius / self.eps

    @property
    def mass(self) -> float:
        return self.base.mass

    def eval_norm(self, r):
        d = self.torus.dimension
        return self.eps ** d * self.base.eval_norm(self.eps * np.asarray(r, dtype=float))

    def eval_disp(self, delta) -> np.ndarray:
        """Evaluate on difference vectors (..., d) via the minimum image."""
        return self.eval_norm(self.torus.min_image_norm(delta))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n displacements from the normalized density a_eps / mass."""
        return self.base.sample(rng, n) / self.eps
