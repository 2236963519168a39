"""Pointwise application of the birth-death and hopping generators.

Both generators act on exponential cylinder functions F = exp(<f, .>).
The death/minus integrals reduce to exact finite sums over the particles
(the difference operator vanishes off the support of f).  The birth/plus
integrals are deterministic midpoint quadratures over the support of f.
The hopping generator additionally carries one kernel integral per
particle, estimated by importance sampling from the kernel density; its
Monte Carlo error is propagated into ``mc_stderr``.

Sign and exponent conventions:

* minus part of H0:   - sum_x exp(s E(x, g\\x)) (F(g\\x) - F(g))
* plus part of H0:    - z int dx exp((s-1) E(x, g)) (F(g u x) - F(g))
* H_eps minus/plus:   the same structure with the kernel integral
  int dy a_eps(x-y) exp((s-1) E(y, g\\x)) attached, the plus part acting
  through F(g\\x u y) - F(g\\x) summed over every particle x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .functions import ExpCylinderFunction, ScaledKernel, TestFunction
from .potential import ModelParams
from .space import Configuration
from .statsutil import Estimate, batch_means

__all__ = [
    "QuadratureSpec",
    "GeneratorValue",
    "GeneratorEvaluator",
    "UnboundedIntegrand",
    "apply_h0",
    "apply_heps",
    "expectation_kernel",
    "dirichlet_form",
]


class UnboundedIntegrand(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    """Budgets for the deterministic grids and the kernel sampling."""

    grid_per_axis: int = 48
    kernel_samples: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.grid_per_axis < 8:
            raise ValueError("grid_per_axis must be >= 8")
        if self.kernel_samples < 16:
            raise ValueError("kernel_samples must be >= 16")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed))


@dataclass(frozen=True)
class GeneratorValue:
    value: float
    mc_stderr: float
    minus: float
    plus: float
    quad_error: float = 0.0


def _require_no_hard_core(model: ModelParams):
    if model.potential.has_hard_core:
        raise UnboundedIntegrand(
            "hard-core potentials are excluded from generator evaluation "
            "(the death rate exp(s E) is unbounded)")


class GeneratorEvaluator:
    """Shared per-sample machinery for applying H0 and H_eps.

    ``prepare`` digests one position array into the pieces both generators
    need: per-particle relative energies, the particle-to-node interaction
    matrix over the quadrature grid, and the cylinder values.
    """

    def __init__(self, model: ModelParams, F: ExpCylinderFunction, quad: QuadratureSpec):
        _require_no_hard_core(model)
        self.model = model
        self.F = F
        self.quad = quad
        self.nodes, self.w = F.f.support_grid(quad.grid_per_axis)
        self.g_plus = np.expm1(F.f.eval_many(self.nodes))

    def prepare(self, pos: np.ndarray) -> dict:
        m = self.model
        n = pos.shape[0]
        fv = self.F.f.eval_many(pos) if n else np.zeros(0)
        logF = float(np.sum(fv))
        if n:
            delta = m.torus.min_image_vec(pos[:, None, :] - pos[None, :, :])
            pp = m.potential.phi_norm(np.sqrt(np.sum(delta * delta, axis=-1)))
            np.fill_diagonal(pp, 0.0)
            e_part = pp.sum(axis=1)
            dn = m.torus.min_image_vec(pos[:, None, :] - self.nodes[None, :, :])
            node_norms = np.sqrt(np.sum(dn * dn, axis=-1))
            phi_node = m.potential.phi_norm(node_norms)  # (N, G)
            e_node = phi_node.sum(axis=0)                # E(y_j, gamma)
        else:
            e_part = np.zeros(0)
            node_norms = np.zeros((0, self.nodes.shape[0]))
            phi_node = np.zeros((0, self.nodes.shape[0]))
            e_node = np.zeros(self.nodes.shape[0])
        return {
            "pos": pos, "fv": fv, "logF": logF, "F": math.exp(logF),
            "e_part": e_part, "phi_node": phi_node, "e_node": e_node,
            "node_norms": node_norms,
        }

    # -- birth-and-death generator ----------------------------------------

    def h0(self, ctx: dict):
        m = self.model
        s = m.s
        Fg = ctx["F"]
        minus = -float(np.sum(np.exp(s * ctx["e_part"]) * np.expm1(-ctx["fv"]))) * Fg
        plus = -m.z * self.w * float(
            np.sum(np.exp((s - 1.0) * ctx["e_node"]) * self.g_plus)) * Fg
        return minus, plus

    # -- hopping generator --------------------------------------------------

    def draw_base(self, base_kernel, rng: np.random.Generator, n_active: int) -> np.ndarray:
        """Unscaled kernel displacements, one block per support particle."""
        k = self.quad.kernel_samples
        if n_active == 0:
            return np.zeros((0, k, self.model.torus.dimension))
        flat = base_kernel.sample(rng, n_active * k)
        return flat.reshape(n_active, k, self.model.torus.dimension)

    def heps(self, ctx: dict, kernel: ScaledKernel, base_draws: np.ndarray):
        """Returns (minus, plus, variance of the minus-part MC estimate)."""
        m = self.model
        s = m.s
        pos, fv, Fg = ctx["pos"], ctx["fv"], ctx["F"]
        active = np.flatnonzero(fv != 0.0)
        var = 0.0
        k = self.quad.kernel_samples
        # kernel integral per support particle; the unit placeholder for the
        # others keeps the minus part bitwise equal to the birth-death one
        # whenever every kernel factor is exactly 1 (free case, unit mass)
        kernel_fac = np.ones(pos.shape[0])
        for block, i in enumerate(active):
            ys = m.torus.wrap(pos[i] + base_draws[block] / kernel.eps)
            e_y = m.energies_against(ys, pos)
            e_y -= m.potential.phi_norm(m.torus.min_image_norm(ys - pos[i]))
            vals = np.exp((s - 1.0) * e_y)
            kernel_fac[i] = kernel.mass * float(np.mean(vals))
            if k > 1:
                coef = Fg * math.expm1(-fv[i]) * math.exp(s * ctx["e_part"][i]) * kernel.mass
                var += coef * coef * float(np.var(vals, ddof=1)) / k
        minus = -float(np.sum(np.exp(s * ctx["e_part"]) * np.expm1(-fv) * kernel_fac)) * Fg
        if pos.shape[0]:
            a_mat = kernel.eval_norm(ctx["node_norms"])          # (N, G)
            e_rest = ctx["e_node"][None, :] - ctx["phi_node"]     # E(y_j, gamma\\x_i)
            weights = np.exp(s * ctx["e_part"])[:, None] * a_mat * np.exp((s - 1.0) * e_rest)
            f_rest = Fg * np.exp(-fv)                             # F(gamma \\ x_i)
            plus = -self.w * float(np.sum(weights * (f_rest[:, None] * self.g_plus[None, :])))
        else:
            plus = 0.0
        return minus, plus, var


def apply_h0(model: ModelParams, F: ExpCylinderFunction, gamma: Configuration,
             quad: QuadratureSpec) -> GeneratorValue:
    """Birth-and-death generator applied at one configuration.

    The death part is an exact finite sum; the birth part is a midpoint
    quadrature over supp f with a Richardson error estimate at half the
    grid resolution.
    """
    ev = GeneratorEvaluator(model, F, quad)
    ctx = ev.prepare(gamma.positions())
    minus, plus = ev.h0(ctx)
    half = QuadratureSpec(max(8, quad.grid_per_axis // 2), quad.kernel_samples, quad.seed)
    ev2 = GeneratorEvaluator(model, F, half)
    _, plus_half = ev2.h0(ev2.prepare(gamma.positions()))
    return GeneratorValue(value=minus + plus, mc_stderr=0.0, minus=minus, plus=plus,
                          quad_error=abs(plus - plus_half) / 3.0)


def apply_heps(model: ModelParams, F: ExpCylinderFunction, gamma: Configuration,
               kernel: ScaledKernel, quad: QuadratureSpec,
               rng: np.random.Generator | None = None) -> GeneratorValue:
    """Scaled hopping generator applied at one configuration.

    The per-particle kernel integral in the minus part is importance
    sampled (``quad.kernel_samples`` draws per support particle, rng seeded
    from the spec when not supplied); the plus part is a deterministic
    grid quadrature over supp f.
    """
    if rng is None:
        rng = quad.rng()
    ev = GeneratorEvaluator(model, F, quad)
    ctx = ev.prepare(gamma.positions())
    n_active = int(np.count_nonzero(ctx["fv"]))
    draws = ev.draw_base(kernel.base, rng, n_active)
    minus, plus, var = ev.heps(ctx, kernel, draws)
    return GeneratorValue(value=minus + plus, mc_stderr=math.sqrt(var),
                          minus=minus, plus=plus)


# ---------------------------------------------------------------------------
# Gibbs expectations of exponential probes
# ---------------------------------------------------------------------------


def _check_coefficients(model: ModelParams, coeffs: np.ndarray):
    pot = model.potential
    if pot.family == "truncated-well" and not pot.has_hard_core:
        lo, hi = -pot.well_depth, 0.0
    elif pot.nonnegative:
        lo, hi = 0.0, math.inf if pot.has_hard_core else pot.theta
    else:
        lo, hi = -pot.well_depth, math.inf
    for c in np.atleast_1d(coeffs):
        ok = (c == 0.0) or (c < 0.0 and lo >= 0.0) or (c > 0.0 and hi <= 0.0)
        if not ok:
            raise UnboundedIntegrand(
                f"coefficient {c} makes exp(c E) unbounded for potential "
                f"range [{lo}, {hi}]")


def _scaled_energy(coeffs: np.ndarray, energies: np.ndarray) -> np.ndarray:
    """c * E with the convention 0 * inf = 0 (zero coefficients drop out)."""
    out = coeffs * energies
    if np.any(coeffs == 0.0):
        out = np.where(coeffs == 0.0, 0.0, out)
    return out


def expectation_kernel(samples, probes, coeffs, f2: TestFunction | None = None) -> Estimate:
    """Monte Carlo mean of exp(sum_i c_i E(p_i, gamma) + <f2, gamma>).

    Probe coefficients are screened against the potential's sign range: a
    combination that makes the integrand unbounded above is rejected.
    """
    m = samples.model
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != probes.shape[0]:
        raise ValueError("one coefficient per probe point required")
    _check_coefficients(m, coeffs)
    vals = np.empty(len(samples))
    for t, pos in enumerate(samples.samples):
        e = m.energies_against(probes, pos)
        expo = float(np.sum(_scaled_energy(coeffs, e)))
        if f2 is not None:
            expo += float(np.sum(f2.eval_many(pos)))
        vals[t] = math.exp(expo)
    return batch_means(vals)


# ---------------------------------------------------------------------------
# Dirichlet forms
# ---------------------------------------------------------------------------


def dirichlet_form(samples, kind: str, F: ExpCylinderFunction, G: ExpCylinderFunction,
                   quad: QuadratureSpec, kernel: ScaledKernel | None = None,
                   rng: np.random.Generator | None = None) -> Estimate:
    """Equilibrium bilinear form of the birth-death ("G") or hopping ("K") dynamics.

    Both are sample averages of inner sums over particles; the hopping form
    carries a kernel integral per particle (importance sampled) and the
    conventional 1/2 in front.
    """
    m = samples.model
    _require_no_hard_core(m)
    if kind not in ("G", "K"):
        raise ValueError("kind must be 'G' or 'K'")
    if kind == "K" and kernel is None:
        raise ValueError("the hopping form needs a kernel")
    if rng is None:
        rng = quad.rng()
    s = m.s
    vals = np.empty(len(samples))
    for t, pos in enumerate(samples.samples):
        n = pos.shape[0]
        if n == 0:
            vals[t] = 0.0
            continue
        fv = F.f.eval_many(pos)
        gv = G.f.eval_many(pos)
        Fg = math.exp(float(np.sum(fv)))
        Gg = math.exp(float(np.sum(gv)))
        if n > 1:
            delta = m.torus.min_image_vec(pos[:, None, :] - pos[None, :, :])
            pp = m.potential.phi_norm(np.sqrt(np.sum(delta * delta, axis=-1)))
            np.fill_diagonal(pp, 0.0)
            e_part = pp.sum(axis=1)
        else:
            e_part = np.zeros(1)
        if kind == "G":
            terms = (np.exp(s * e_part) * (Fg * np.expm1(-fv)) * (Gg * np.expm1(-gv)))
            vals[t] = float(np.sum(terms))
        else:
            k = quad.kernel_samples
            acc = 0.0
            for i in range(n):
                ys = m.torus.wrap(pos[i] + kernel.sample(rng, k))
                e_y = m.energies_against(ys, pos)
                e_y -= m.potential.phi_norm(m.torus.min_image_norm(ys - pos[i]))
                df = Fg * np.expm1(F.f.eval_many(ys) - fv[i])
                dg = Gg * np.expm1(G.f.eval_many(ys) - gv[i])
                inner = np.mean(np.exp((s - 1.0) * e_y) * df * dg)
                acc += kernel.mass * math.exp(s * e_part[i]) * float(inner)
            vals[t] = 0.5 * acc
    return batch_means(vals)
