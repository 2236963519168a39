"""The scaling experiment: hopping-generator convergence in L2 of the
equilibrium measure.

Pieces:

* kernel normalization: the hop kernel's mass is set to the reciprocal of
  ``E[exp((s-1) E(0, gamma))]`` (probe-averaged over the torus, valid by
  translation invariance);
* ``l2_norm_sweep``: direct estimates of ``int (H_eps F - H_0 F)^2 dmu``
  across a descending ladder of eps, sharing the sample stream and the
  kernel draws (common random numbers) so adjacent rows compare cleanly;
* ``reduced_second_moment``: the same second moments computed through the
  closed-form reductions obtained from the (double) GNZ identity, an
  independent estimator path used to cross-check the direct one;
* ``factorization_check``: the asymptotic factorization of exponential
  probe expectations as the probes separate;
* ``run_study``: orchestration with precondition checks and verdicts.

All estimators reuse one Gibbs sample stream across outer quadrature
nodes; errors are batch means over samples of fully assembled per-sample
integrands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .functions import ExpCylinderFunction, Kernel, ScaledKernel
from .generators import (
    GeneratorEvaluator,
    QuadratureSpec,
    _check_coefficients,
    _scaled_energy,
)
from .gibbs import SampleSet, SamplerConfig, run_chains
from .potential import ModelParams, check_laht, check_stability
from .statsutil import Estimate, batch_means, batch_values

__all__ = [
    "StudyPreconditionError",
    "InsufficientSamples",
    "NormalizationRecord",
    "NormEstimate",
    "ScalingStudy",
    "StudyReport",
    "normalize_kernel",
    "l2_norm_direct",
    "l2_norm_sweep",
    "reduced_second_moment",
    "REDUCED_TERMS",
    "factorization_check",
    "run_study",
]


class StudyPreconditionError(RuntimeError):
    pass


class InsufficientSamples(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# kernel normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationRecord:
    c: float
    c_stderr: float
    mass: float
    amplitude: float


def normalize_kernel(samples: SampleSet, kernel: Kernel, probes_per_axis: int = 16,
                     max_rel_stderr: float = 0.02) -> tuple[Kernel, NormalizationRecord]:
    """Rescale the kernel so its mass is 1 / E[exp((s-1) E(0, gamma))].

    The expectation is estimated at a lattice of probe points (translation
    invariance makes them exchangeable) and demands a relative standard
    error of at most ``max_rel_stderr``.
    """
    m = samples.model
    _check_coefficients(m, np.array([m.s - 1.0]))
    probes = m.torus.grid_points(probes_per_axis)
    series = np.empty(len(samples))
    for t, pos in enumerate(samples.samples):
        e = m.energies_against(probes, pos)
        series[t] = float(np.mean(np.exp((m.s - 1.0) * e)))
    c = batch_means(series)
    if c.stderr / c.value > max_rel_stderr:
        raise InsufficientSamples(
            f"normalization constant at {c.stderr / c.value:.1%} relative stderr; "
            f"more samples needed to reach {max_rel_stderr:.0%}")
    scaled = kernel.with_mass(1.0 / c.value)
    return scaled, NormalizationRecord(c=c.value, c_stderr=c.stderr,
                                       mass=scaled.mass, amplitude=scaled.amplitude)


# ---------------------------------------------------------------------------
# direct L2 norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormEstimate:
    eps: float
    m2: float
    m2_stderr: float
    heps_sq: float
    heps_sq_stderr: float
    cross: float
    cross_stderr: float
    h0_sq: float
    h0_sq_stderr: float
    mc_noise: float
    flagged: bool


@dataclass
class _SweepSeries:
    """Raw per-sample generator values collected by the sweep."""

    h0: np.ndarray
    h0_minus: np.ndarray
    h0_plus: np.ndarray
    heps: dict
    heps_minus: dict
    heps_plus: dict
    mc_var: dict


def _sweep(samples: SampleSet, F: ExpCylinderFunction, kernels: list[ScaledKernel],
           quad: QuadratureSpec) -> _SweepSeries:
    ev = GeneratorEvaluator(samples.model, F, quad)
    rng = quad.rng()
    n = len(samples)
    out = _SweepSeries(
        h0=np.empty(n), h0_minus=np.empty(n), h0_plus=np.empty(n),
        heps={k.eps: np.empty(n) for k in kernels},
        heps_minus={k.eps: np.empty(n) for k in kernels},
        heps_plus={k.eps: np.empty(n) for k in kernels},
        mc_var={k.eps: np.empty(n) for k in kernels})
    for t, pos in enumerate(samples.samples):
        ctx = ev.prepare(pos)
        minus0, plus0 = ev.h0(ctx)
        out.h0[t] = minus0 + plus0
        out.h0_minus[t] = minus0
        out.h0_plus[t] = plus0
        n_active = int(np.count_nonzero(ctx["fv"]))
        draws = ev.draw_base(kernels[0].base, rng, n_active)
        for k in kernels:
            minus, plus, var = ev.heps(ctx, k, draws)
            out.heps[k.eps][t] = minus + plus
            out.heps_minus[k.eps][t] = minus
            out.heps_plus[k.eps][t] = plus
            out.mc_var[k.eps][t] = var
    return out


def _assemble_norm(eps: float, h0: np.ndarray, heps: np.ndarray,
                   mc_var: np.ndarray) -> NormEstimate:
    heps_sq = batch_means(heps * heps)
    cross = batch_means(heps * h0)
    h0_sq = batch_means(h0 * h0)
    m2 = heps_sq.value - 2.0 * cross.value + h0_sq.value
    m2_se = batch_means((heps - h0) ** 2).stderr
    noise = float(np.mean(mc_var))
    return NormEstimate(eps=eps, m2=m2, m2_stderr=m2_se,
                        heps_sq=heps_sq.value, heps_sq_stderr=heps_sq.stderr,
                        cross=cross.value, cross_stderr=cross.stderr,
                        h0_sq=h0_sq.value, h0_sq_stderr=h0_sq.stderr,
                        mc_noise=noise, flagged=noise > 0.1 * max(m2, 1e-300))


def l2_norm_sweep(samples: SampleSet, F: ExpCylinderFunction,
                  kernels: list[ScaledKernel], quad: QuadratureSpec
                  ) -> tuple[list[NormEstimate], _SweepSeries]:
    """Direct second-moment estimates of H_eps F - H_0 F for a ladder of eps.

    All rows share the sample stream and the unscaled kernel draws, so the
    eps-to-eps differences are common-random-number comparisons.
    """
    series = _sweep(samples, F, kernels, quad)
    rows = [_assemble_norm(k.eps, series.h0, series.heps[k.eps], series.mc_var[k.eps])
            for k in kernels]
    return rows, series


def l2_norm_direct(samples: SampleSet, F: ExpCylinderFunction, kernel: ScaledKernel,
                   quad: QuadratureSpec) -> NormEstimate:
    rows, _ = l2_norm_sweep(samples, F, [kernel], quad)
    return rows[0]


# ---------------------------------------------------------------------------
# reduced second moments (closed-form GNZ reductions)
# ---------------------------------------------------------------------------

REDUCED_TERMS = ("h0_minus_sq", "h0_plus_sq", "h0_cross",
                 "heps_minus_sq", "heps_plus_sq", "cross_minus", "cross_plus")

_TERM_IDS = {name: i for i, name in enumerate(REDUCED_TERMS)}


def _node_deltas(model: ModelParams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return model.torus.min_image_vec(a[:, None, :] - b[None, :, :])


def _phi_of(model: ModelParams, delta: np.ndarray) -> np.ndarray:
    return model.potential.phi_norm(np.sqrt(np.sum(delta * delta, axis=-1)))


def reduced_second_moment(samples: SampleSet, F: ExpCylinderFunction, term: str,
                          kernel: ScaledKernel | None = None,
                          quad: QuadratureSpec | None = None,
                          paper_cross_plus_form: bool = False) -> Estimate:
    """Second moments of the generator parts via their closed-form reductions.

    Each term is an outer quadrature over the support of f (where the
    ``e^f - 1`` factors live), kernel-sampled hop displacements where the
    hopping generator is involved, and an inner equilibrium expectation of
    ``exp(sum_i c_i E(p_i, gamma) + <2f, gamma>)`` evaluated on the shared
    sample stream.  One displacement set is drawn per sample and reused
    across outer nodes.

    ``cross_plus`` carries a factor ``e^{f}`` at the hopped probe point
    that a naive reading of the mixed-moment algebra drops; the estimator
    keeps it (set ``paper_cross_plus_form`` to reproduce the dropped-factor
    variant, which only agrees with the direct estimator as eps -> 0).
    """
    if term not in _TERM_IDS:
        raise ValueError(f"unknown reduced term {term!r}")
    if quad is None:
        quad = QuadratureSpec()
    m = samples.model
    s, z = m.s, m.z
    needs_kernel = term.startswith("heps") or term.startswith("cross")
    if needs_kernel and kernel is None:
        raise ValueError(f"term {term!r} needs a scaled kernel")
    _check_coefficients(m, np.array([s - 1.0, 2.0 * s - 1.0]))

    f = F.f
    nodes, w = f.support_grid(quad.grid_per_axis)
    fn = f.eval_many(nodes)
    gp = np.expm1(fn)              # e^f - 1
    gm = -gp                       # 1 - e^f
    ef = np.exp(fn)
    twof = f.scaled(amplitude_factor=2.0)
    node_delta = _node_deltas(m, nodes, nodes)
    phi_nodes = _phi_of(m, node_delta)
    rng = np.random.default_rng(
        np.random.SeedSequence(quad.seed, spawn_key=(100 + _TERM_IDS[term],)))
    mass = kernel.mass if kernel is not None else 0.0

    def exps(pos, points, coeff):
        e = m.energies_against(points, pos)
        return np.exp(_scaled_energy(np.full(points.shape[0], coeff), e))

    vals = np.empty(len(samples))
    for t, pos in enumerate(samples.samples):
        t2 = math.exp(2.0 * float(np.sum(f.eval_many(pos))))
        e_nodes = m.energies_against(nodes, pos)
        es1 = np.exp(_scaled_energy(np.full(nodes.shape[0], s - 1.0), e_nodes))
        if term == "h0_minus_sq":
            term1 = z * w * float(np.sum(gm * gm * np.exp((2 * s - 1.0) * e_nodes)))
            u = ef * gm * es1
            term2 = (z * w) ** 2 * float(u @ np.exp((2 * s - 1.0) * phi_nodes) @ u)
            vals[t] = (term1 + term2) * t2
        elif term == "h0_plus_sq":
            dot = float(np.sum(gp * es1))
            vals[t] = (z * w) ** 2 * dot * dot * t2
        elif term == "h0_cross":
            v = ef * gp * es1
            q = gp * es1
            vals[t] = -(z * w) ** 2 * float(v @ np.exp((s - 1.0) * phi_nodes) @ q) * t2
        elif term == "heps_minus_sq":
            w1, w2 = kernel.sample(rng, 2)
            e_y1 = exps(pos, m.torus.wrap(nodes + w1), s - 1.0)
            e_y2 = exps(pos, m.torus.wrap(nodes + w2), s - 1.0)
            term1 = z * w * mass ** 2 * float(np.sum(
                gp * gp * np.exp((2 * s - 1.0) * e_nodes) * e_y1 * e_y2))
            a_vec = ef * gp * es1 * e_y1
            b_vec = ef * gp * es1 * e_y2
            mat = np.exp((2 * s - 1.0) * phi_nodes
                         + (s - 1.0) * _phi_of(m, node_delta + w1)
                         + (s - 1.0) * _phi_of(m, node_delta - w2))
            term2 = (z * w) ** 2 * mass ** 2 * float(a_vec @ mat @ b_vec)
            vals[t] = (term1 + term2) * t2
        elif term == "heps_plus_sq":
            v1, v2 = kernel.base.sample(rng, 2)
            shift1 = v1 / kernel.eps
            delta12 = (v2 - v1) / kernel.eps
            p_shift = m.torus.wrap(nodes - shift1)
            p_delta = m.torus.wrap(nodes + delta12)
            gp_delta = np.expm1(f.eval_many(p_delta))
            e_shift = m.energies_against(p_shift, pos)
            e_delta = exps(pos, p_delta, s - 1.0)
            term1 = z * w * mass ** 2 * float(np.sum(
                gp * gp_delta * np.exp(_scaled_energy(
                    np.full(nodes.shape[0], 2 * s - 1.0), e_shift))
                * es1 * e_delta))
            u1, u2 = kernel.base.sample(rng, 2)
            s1 = m.torus.wrap(nodes + u1 / kernel.eps)
            s2 = m.torus.wrap(nodes + u2 / kernel.eps)
            a_vec = np.exp(f.eval_many(s1)) * gp * es1 * exps(pos, s1, s - 1.0)
            b_vec = np.exp(f.eval_many(s2)) * gp * es1 * exps(pos, s2, s - 1.0)
            mat = np.exp((2 * s - 1.0) * _phi_of(m, node_delta + (u1 - u2) / kernel.eps)
                         + (s - 1.0) * _phi_of(m, node_delta + u1 / kernel.eps)
                         + (s - 1.0) * _phi_of(m, node_delta - u2 / kernel.eps))
            term2 = (z * w) ** 2 * mass ** 2 * float(a_vec @ mat @ b_vec)
            vals[t] = (term1 + term2) * t2
        elif term == "cross_minus":
            (v,) = kernel.sample(rng, 1)
            e_hop = exps(pos, m.torus.wrap(nodes + v), s - 1.0)
            term1 = z * w * mass * float(np.sum(
                gp * gp * np.exp((2 * s - 1.0) * e_nodes) * e_hop))
            a_vec = ef * gp * es1 * e_hop
            b_vec = ef * gp * es1
            mat = np.exp((2 * s - 1.0) * phi_nodes
                         + (s - 1.0) * _phi_of(m, node_delta + v))
            term2 = (z * w) ** 2 * mass * float(a_vec @ mat @ b_vec)
            vals[t] = (term1 + term2) * t2
        else:  # cross_plus
            (u,) = kernel.sample(rng, 1)
            su = m.torus.wrap(nodes + u)
            e_su = exps(pos, su, s - 1.0)
            hop_f = np.ones(nodes.shape[0]) if paper_cross_plus_form \
                else np.exp(f.eval_many(su))
            a_vec = gp * hop_f * es1 * e_su
            b_vec = gp * es1
            mat = np.exp((s - 1.0) * _phi_of(m, node_delta + u))
            vals[t] = (z * w) ** 2 * mass * float(a_vec @ mat @ b_vec) * t2
    return batch_means(vals)


# ---------------------------------------------------------------------------
# factorization of separated probe expectations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FactorizationRow:
    eps: float
    separation: float
    vacuous: bool
    lhs: float
    lhs_stderr: float
    rhs: float
    gap: float
    gap_stderr: float
    z_score: float


def factorization_check(samples: SampleSet, a_coef: float, b_coef: float,
                        x1, x2, y1, y2, psi, epsilons,
                        psi_sign: float = 1.0,
                        probes_per_axis: int = 16) -> list[FactorizationRow]:
    """Check that exponential probe expectations factorize as probes separate.

    For each eps the left side is ``E[exp(-A E(p_A) - B E(p_B) + <psi>)]``
    with probe points ``p_A = x1/eps + x2`` and ``p_B = y1/eps + y2``
    reduced modulo the torus; the target is the product of the marginal
    factors.  Rows whose probes come closer than ``2 R_phi + R_psi`` (to
    each other or to the support of psi) are marked vacuous.  The gap's
    standard error comes from batch means with a delta-method combination,
    so the A = B = 0 row is exactly zero.
    """
    m = samples.model
    if a_coef < 0 or b_coef < 0:
        raise ValueError("probe coefficients must be nonnegative")
    _check_coefficients(m, np.array([-a_coef, -b_coef]))
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if np.allclose(x1, y1):
        raise ValueError("x1 and y1 must differ (the probes must separate)")
    probes = m.torus.grid_points(probes_per_axis)
    n = len(samples)
    fa = np.empty(n)
    fb = np.empty(n)
    lap = np.empty(n)
    for t, pos in enumerate(samples.samples):
        e = m.energies_against(probes, pos)
        fa[t] = float(np.mean(np.exp(_scaled_energy(
            np.full(e.shape, -a_coef), e))))
        fb[t] = float(np.mean(np.exp(_scaled_energy(
            np.full(e.shape, -b_coef), e))))
        lap[t] = math.exp(psi_sign * float(np.sum(psi.eval_many(pos))))
    sep_threshold = 2.0 * m.potential.cutoff + psi.radius
    rows = []
    for eps in epsilons:
        p_a = m.torus.wrap(x1 / eps + x2)
        p_b = m.torus.wrap(y1 / eps + y2)
        seps = [float(m.torus.min_image_norm(p_a - p_b)),
                float(m.torus.min_image_norm(p_a - psi.center)),
                float(m.torus.min_image_norm(p_b - psi.center))]
        separation = min(seps)
        vacuous = separation < sep_threshold
        lhs = np.empty(n)
        pts = np.stack([p_a, p_b])
        coeffs = np.array([-a_coef, -b_coef])
        for t, pos in enumerate(samples.samples):
            e = m.energies_against(pts, pos)
            lhs[t] = math.exp(float(np.sum(_scaled_energy(coeffs, e)))) * lap[t]
        rows.append(_factor_row(eps, separation, vacuous, lhs, fa, fb, lap))
    return rows


def _factor_row(eps, separation, vacuous, lhs, fa, fb, lap) -> FactorizationRow:
    mb_l = batch_values(lhs)
    mb_a = batch_values(fa)
    mb_b = batch_values(fb)
    mb_c = batch_values(lap)
    m_l, m_a, m_b, m_c = (float(np.mean(v)) for v in (lhs, fa, fb, lap))
    rhs = m_a * m_b * m_c
    gap = m_l - rhs
    nb = mb_l.size
    if nb >= 2:
        cov = np.cov(np.stack([mb_l, mb_a, mb_b, mb_c]), ddof=1) / nb
        grad = np.array([1.0, -m_b * m_c, -m_a * m_c, -m_a * m_b])
        var = float(grad @ cov @ grad)
        gap_se = math.sqrt(max(var, 0.0))
    else:
        gap_se = 0.0
    lhs_est = batch_means(lhs)
    z = gap / gap_se if gap_se > 0 else (0.0 if gap == 0.0 else math.inf)
    return FactorizationRow(eps=eps, separation=separation, vacuous=vacuous,
                            lhs=lhs_est.value, lhs_stderr=lhs_est.stderr,
                            rhs=rhs, gap=gap, gap_stderr=gap_se, z_score=z)


# ---------------------------------------------------------------------------
# study orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingStudy:
    model: ModelParams
    F: ExpCylinderFunction
    kernel: Kernel
    epsilons: tuple
    sampler: SamplerConfig
    n_samples: int
    quad: QuadratureSpec
    crosscheck_grid: int = 32
    threads: int = 1

    def __post_init__(self):
        eps = tuple(self.epsilons)
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        for e in eps:
            ScaledKernel(self.kernel, e, self.model.torus)  # admissibility


@dataclass
class StudyReport:
    s: float
    normalization: NormalizationRecord
    norms: list
    crosscheck: list
    factorization: list
    verdicts: dict
    diagnostics: dict = field(default_factory=dict)

    def to_raw(self) -> dict:
        return {
            "s": self.s,
            "normalization": asdict(self.normalization),
            "norms": [asdict(r) for r in self.norms],
            "crosscheck": list(self.crosscheck),
            "factorization": [asdict(r) for r in self.factorization],
            "verdicts": self.verdicts,
            "diagnostics": self.diagnostics,
        }


def _crosscheck_row(name, eps, direct_series, reduced: Estimate):
    direct = batch_means(direct_series)
    se = math.hypot(direct.stderr, reduced.stderr)
    z = (direct.value - reduced.value) / se if se > 0 else 0.0
    return {"term": name, "eps": eps,
            "direct": direct.value, "direct_stderr": direct.stderr,
            "reduced": reduced.value, "reduced_stderr": reduced.stderr,
            "z_score": z}


def run_study(study: ScalingStudy, samples: SampleSet | None = None,
              factorization_points=None) -> StudyReport:
    """Full scaling experiment for one model (one value of s).

    Aborts with the violated condition named if the activity is outside
    the smallness regime or stability is not certified.  Emits per-eps
    norm rows, the kernel normalization record, the direct-vs-reduced
    cross-check table, the factorization table, and verdicts.
    """
    m = study.model
    laht = check_laht(m)
    if not laht.satisfied:
        raise StudyPreconditionError(
            f"LA-HT violated: lhs={laht.lhs:.5g} >= {laht.rhs:.5g}")
    stab = check_stability(m.potential)
    if stab.falsified:
        raise StudyPreconditionError(
            "stability (S) falsified: the declared constant admits a counterexample")
    if not stab.certified:
        raise StudyPreconditionError("stability (S) not certified for this potential")
    if samples is None:
        samples = run_chains(m, study.sampler, study.n_samples, threads=study.threads)

    kernel, record = normalize_kernel(samples, study.kernel)
    kernels = [ScaledKernel(kernel, e, m.torus) for e in study.epsilons]
    norms, series = l2_norm_sweep(samples, study.F, kernels, study.quad)

    cc_quad = QuadratureSpec(grid_per_axis=study.crosscheck_grid,
                             kernel_samples=study.quad.kernel_samples,
                             seed=study.quad.seed)
    k_top = kernels[0]
    crosscheck = []
    for name, direct in (
        ("h0_minus_sq", series.h0_minus ** 2),
        ("h0_plus_sq", series.h0_plus ** 2),
        ("h0_cross", series.h0_minus * series.h0_plus),
        ("heps_minus_sq", series.heps_minus[k_top.eps] ** 2),
        ("heps_plus_sq", series.heps_plus[k_top.eps] ** 2),
        ("cross_minus", series.heps_minus[k_top.eps] * series.h0_minus),
        ("cross_plus", series.heps_plus[k_top.eps] * series.h0_plus),
    ):
        reduced = reduced_second_moment(
            samples, study.F, name,
            kernel=k_top if name in REDUCED_TERMS[3:] else None, quad=cc_quad)
        crosscheck.append(_crosscheck_row(name, k_top.eps, direct, reduced))

    if factorization_points is None:
        d = m.torus.dimension
        e1 = np.zeros(d)
        e1[0] = 1.0
        factorization_points = (e1, np.zeros(d), -e1, np.zeros(d))
    fx1, fx2, fy1, fy2 = factorization_points
    factor_rows = factorization_check(
        samples, 1.0, 1.0, fx1, fx2, fy1, fy2, study.F.f, study.epsilons)

    pair_z = []
    monotone = True
    for a, b in zip(norms, norms[1:]):
        se = math.hypot(a.m2_stderr, b.m2_stderr)
        zpair = (a.m2 - b.m2) / se if se > 0 else math.inf
        pair_z.append(zpair)
        if not zpair > 1.0:
            monotone = False
    ratio = norms[-1].m2 / norms[0].m2 if norms[0].m2 > 0 else math.inf
    verdicts = {
        "monotone_beyond_1sigma": monotone,
        "adjacent_pair_z": pair_z,
        "ratio_last_to_first": ratio,
        "ratio_ok": ratio <= 0.25,
        "crosscheck_max_abs_z": max(abs(r["z_score"]) for r in crosscheck),
        "factorization_final_z": next(
            (r.z_score for r in reversed(factor_rows) if not r.vacuous), None),
    }
    return StudyReport(s=m.s, normalization=record, norms=norms,
                       crosscheck=crosscheck, factorization=factor_rows,
                       verdicts=verdicts,
                       diagnostics={"laht_lhs": laht.lhs, "laht_rhs": laht.rhs,
                                    "n_samples": len(samples),
                                    "sampler": samples.diagnostics})
