"""Correlation-function estimation, Ursell algebra, and the Laplace series.

Correlation tables are translation invariant by construction: order one is
a constant, order two is a radial profile, and higher orders exist only as
symbolic callables for algebra tests.  The conversion between correlation
and Ursell (connected) functions runs over set partitions enumerated by
restricted-growth strings, capped at order 6.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .functions import TestFunction
from .potential import ModelParams, sphere_surface
from .space import Torus
from .statsutil import Estimate, batch_means, batch_values, effective_sample_size

__all__ = [
    "InsufficientData",
    "ConstantCorrelation",
    "RadialCorrelation",
    "CallableCorrelation",
    "PoissonCorrelation",
    "estimate_k1",
    "estimate_k1_gnz",
    "estimate_k2_radial",
    "set_partitions",
    "count_partitions",
    "k_to_u",
    "u_to_k",
    "RuelleCheck",
    "check_ruelle",
    "LaplaceSeries",
    "laplace_series",
    "empirical_laplace",
    "write_radial_csv",
    "read_radial_csv",
]

MAX_ORDER = 6


class InsufficientData(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# correlation tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantCorrelation:
    order: int
    value: float

    def evaluate(self, points: np.ndarray) -> float:
        return self.value


@dataclass(frozen=True)
class CallableCorrelation:
    order: int
    fn: object

    def evaluate(self, points: np.ndarray) -> float:
        return float(self.fn(points))


@dataclass(frozen=True)
class PoissonCorrelation:
    """k^(n) = z^n for every order (the ideal-gas specialization)."""

    z: float
    order: int | None = None

    def evaluate(self, points: np.ndarray) -> float:
        return self.z ** len(points)


@dataclass
class RadialCorrelation:
    """Second-order radial table on [0, r_max) with statistical columns.

    Bins that never saw a pair are flagged missing rather than treated as
    informative zeros; lookups fall back to 0.0 there.
    """

    torus: Torus
    r_edges: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray
    counts: np.ndarray
    order: int = 2

    @property
    def missing(self) -> np.ndarray:
        return self.counts == 0

    def value_at(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        idx = np.clip(np.searchsorted(self.r_edges, r, side="right") - 1,
                      0, self.values.size - 1)
        out = self.values[idx]
        return np.where(r >= self.r_edges[-1], self.values[-1], out)

    def evaluate(self, points: np.ndarray) -> float:
        if len(points) != 2:
            raise ValueError("radial table is an order-2 correlation")
        r = self.torus.min_image_norm(points[0] - points[1])
        return float(self.value_at(r))


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def estimate_k1(samples) -> Estimate:
    """First correlation function: mean particle count per unit volume."""
    counts = samples.counts.astype(float)
    if counts.size == 0:
        raise InsufficientData("no samples")
    if np.any(counts != counts[0]):
        ess = effective_sample_size(counts)
        if ess < 10:
            raise InsufficientData(f"effective sample size {ess:.1f} < 10")
    dens = batch_means(counts / samples.model.volume)
    return dens


def estimate_k1_gnz(samples, probes_per_axis: int = 8) -> Estimate:
    """Independent density estimator z * E[exp(-E(x, gamma))], probe-averaged."""
    m = samples.model
    probes = m.torus.grid_points(probes_per_axis)
    vals = np.empty(len(samples))
    for t, pos in enumerate(samples.samples):
        vals[t] = float(np.mean(np.exp(-m.energies_against(probes, pos))))
    est = batch_means(vals)
    return Estimate(m.z * est.value, m.z * est.stderr)


def estimate_k2_radial(samples, bin_width: float, r_max: float) -> RadialCorrelation:
    """Radial pair-correlation estimate from ordered-pair distance histograms.

    Normalized by shell volume and box volume so the ideal gas gives
    k2(r) = z^2.
    """
    m = samples.model
    if r_max > 0.5 * m.torus.side:
        raise ValueError("r_max must be <= L/2")
    edges = np.arange(0.0, r_max + bin_width, bin_width)
    edges = edges[edges <= r_max + 1e-12]
    nb = edges.size - 1
    d = m.torus.dimension
    shell = sphere_surface(d) / d * (edges[1:] ** d - edges[:-1] ** d)
    hist = np.zeros((len(samples), nb))
    for t, pos in enumerate(samples.samples):
        n = pos.shape[0]
        if n < 2:
            continue
        delta = m.torus.min_image_vec(pos[:, None, :] - pos[None, :, :])
        norms = np.sqrt(np.sum(delta * delta, axis=-1))
        iu = np.triu_indices(n, k=1)
        h, _ = np.histogram(norms[iu], bins=edges)
        hist[t] = 2.0 * h  # ordered pairs
    denom = m.volume * shell
    values = hist.mean(axis=0) / denom
    stderrs = np.empty(nb)
    for b in range(nb):
        stderrs[b] = batch_means(hist[:, b]).stderr / denom[b]
    counts = hist.sum(axis=0).astype(int)
    return RadialCorrelation(torus=m.torus, r_edges=edges, values=values,
                             stderrs=stderrs, counts=counts)


# ---------------------------------------------------------------------------
# Ursell algebra
# ---------------------------------------------------------------------------


def set_partitions(items):
    """All partitions of a finite set, via restricted-growth strings."""
    items = list(items)
    n = len(items)
    if n == 0:
        yield []
        return
    a = [0] * n
    while True:
        nblocks = max(a) + 1
        blocks = [[] for _ in range(nblocks)]
        for i, bi in enumerate(a):
            blocks[bi].append(items[i])
        yield blocks
        # next restricted-growth string: a[i] <= 1 + max(a[:i])
        i = n - 1
        while i > 0:
            if a[i] <= max(a[:i]):
                a[i] += 1
                for j in range(i + 1, n):
                    a[j] = 0
                break
            i -= 1
        else:
            return


def count_partitions(n: int) -> int:
    return sum(1 for _ in set_partitions(range(n)))


def _check_order(n: int):
    if n > MAX_ORDER:
        raise ValueError(f"order {n} exceeds the cap {MAX_ORDER} (Bell-number blowup)")
    if n < 1:
        raise ValueError("order must be >= 1")


def k_to_u(k_tables, points: np.ndarray) -> float:
    """Ursell function of the given points from correlation tables.

    Inverts the partition sum recursively:
    u(S) = k(S) - sum over partitions of S with >= 2 blocks of prod u(block).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    _check_order(n)
    memo: dict[tuple, float] = {}

    def u(idx: tuple) -> float:
        if idx in memo:
            return memo[idx]
        val = k_tables[len(idx) - 1].evaluate(points[list(idx)])
        for part in set_partitions(idx):
            if len(part) == 1:
                continue
            prod = 1.0
            for block in part:
                prod *= u(tuple(block))
            val -= prod
        memo[idx] = val
        return val

    return u(tuple(range(n)))


def u_to_k(u_tables, points: np.ndarray) -> float:
    """Correlation function from Ursell tables: the full partition sum."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    _check_order(n)
    total = 0.0
    for part in set_partitions(range(n)):
        prod = 1.0
        for block in part:
            prod *= u_tables[len(block) - 1].evaluate(points[list(block)])
        total += prod
    return total


# ---------------------------------------------------------------------------
# Ruelle bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RuelleCheck:
    xi: float
    max_violation: float
    satisfied: bool
    worst: str = ""


def check_ruelle(k1: Estimate, k2: RadialCorrelation | None, xi: float,
                 tolerance: float = 3.0) -> RuelleCheck:
    """Test k1 <= xi and max_r k2(r) <= xi^2 within the statistical tolerance.

    The violation of each estimate is its z-score above the bound; the check
    is satisfied when the worst violation stays below ``tolerance`` sigma.
    """
    if xi <= 0:
        raise ValueError("xi must be positive")

    def viol(value, stderr, bound):
        if stderr == 0.0:
            return -math.inf if value <= bound else math.inf
        return (value - bound) / stderr

    worst = "k1"
    max_v = viol(k1.value, k1.stderr, xi)
    if k2 is not None:
        live = ~k2.missing
        for b in np.flatnonzero(live):
            v = viol(k2.values[b], k2.stderrs[b], xi * xi)
            if v > max_v:
                max_v = v
                worst = f"k2[{k2.r_edges[b]:.3g},{k2.r_edges[b + 1]:.3g})"
    return RuelleCheck(xi=xi, max_violation=float(max_v),
                       satisfied=max_v <= tolerance, worst=worst)


# ---------------------------------------------------------------------------
# Laplace-functional series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaplaceSeries:
    value: float
    last_term: float
    terms: tuple


def laplace_series(k_tables, f: TestFunction, order: int,
                   grid_per_axis: int = 16) -> LaplaceSeries:
    """Partial sum of the exponential-moment expansion of a point process.

    value = 1 + sum_n (1/n!) integral prod_i (e^{f(x_i)} - 1) k^(n) dx,
    truncated at ``order``; each term is a tensor midpoint quadrature over
    the support of f.  The all-orders-factorized Poisson table short-cuts
    the tensor product; general tables are capped at order 6.
    """
    poisson = all(isinstance(t, PoissonCorrelation) for t in k_tables[:order])
    if not poisson and order > MAX_ORDER:
        raise ValueError(f"order {order} exceeds the cap {MAX_ORDER} for general tables")
    nodes, w = f.support_grid(grid_per_axis)
    g = np.expm1(f.eval_many(nodes))
    terms = []
    if poisson:
        z = k_tables[0].z
        base = z * float(np.sum(g)) * w
        for n in range(1, order + 1):
            terms.append(base ** n / math.factorial(n))
    else:
        k = nodes.shape[0]
        for n in range(1, order + 1):
            idx = np.stack([m.ravel() for m in
                            np.meshgrid(*([np.arange(k)] * n), indexing="ij")], axis=-1)
            weight = np.prod(g[idx], axis=1)
            table = k_tables[n - 1]
            if isinstance(table, (PoissonCorrelation, ConstantCorrelation)):
                kv = np.full(idx.shape[0], table.evaluate(nodes[idx[0]]))
            elif isinstance(table, RadialCorrelation) and n == 2:
                r = table.torus.min_image_norm(nodes[idx[:, 0]] - nodes[idx[:, 1]])
                kv = table.value_at(r)
            else:
                kv = np.array([table.evaluate(nodes[row]) for row in idx])
            terms.append(w ** n / math.factorial(n) * float(np.sum(weight * kv)))
    total = 1.0 + float(np.sum(terms))
    last = abs(terms[-1]) if terms else 0.0
    return LaplaceSeries(value=total, last_term=last, terms=tuple(terms))


def empirical_laplace(samples, f: TestFunction) -> Estimate:
    """Sample average of exp(<f, gamma>) with batch-means stderr."""
    vals = np.array([math.exp(float(np.sum(f.eval_many(pos))))
                     for pos in samples.samples])
    return batch_means(vals)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def write_radial_csv(path, table: RadialCorrelation) -> None:
    """Radial table as CSV with columns r_lo, r_hi, value, stderr, count."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r_lo", "r_hi", "value", "stderr", "count"])
        for b in range(table.values.size):
            writer.writerow([repr(float(table.r_edges[b])),
                             repr(float(table.r_edges[b + 1])),
                             repr(float(table.values[b])),
                             repr(float(table.stderrs[b])),
                             int(table.counts[b])])


def read_radial_csv(path, torus: Torus) -> RadialCorrelation:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    r_lo = np.array([float(r["r_lo"]) for r in rows])
    r_hi = np.array([float(r["r_hi"]) for r in rows])
    edges = np.append(r_lo, r_hi[-1])
    return RadialCorrelation(
        torus=torus, r_edges=edges,
        values=np.array([float(r["value"]) for r in rows]),
        stderrs=np.array([float(r["stderr"]) for r in rows]),
        counts=np.array([int(r["count"]) for r in rows]))
