import math

import numpy as np
import pytest

from gibbsdyn.functions import ExpCylinderFunction, Kernel, ScaledKernel, TestFunction
from gibbsdyn.generators import QuadratureSpec
from gibbsdyn.gibbs import SampleSet, SamplerConfig
from gibbsdyn.potential import ModelParams, PairPotential
from gibbsdyn.scaling import (
    InsufficientSamples,
    ScalingStudy,
    StudyPreconditionError,
    factorization_check,
    l2_norm_direct,
    l2_norm_sweep,
    normalize_kernel,
    reduced_second_moment,
    run_study,
)
from gibbsdyn.space import Torus
from gibbsdyn.statsutil import batch_means

TENT_INT = 4.0 / math.log(2.0) - 4.0
TENT_INT2 = 6.0 / math.log(2.0) - 4.0  # int (e^{2f} - 1) for the default tent

QUAD = QuadratureSpec(grid_per_axis=48, kernel_samples=32, seed=5)


def with_s(samples, model_s):
    return SampleSet(model=model_s, samples=samples.samples, chain_ids=samples.chain_ids)


def scaled(base, eps, torus):
    return ScaledKernel(base, eps, torus)


# ---------------------------------------------------------------- normalize


def test_normalize_free_case_exact(poisson_samples, base_kernel):
    kernel, rec = normalize_kernel(poisson_samples, base_kernel)
    assert rec.c == 1.0
    assert rec.c_stderr == 0.0
    assert kernel.mass == pytest.approx(1.0, rel=1e-15)


def test_normalize_monotone_in_s(default_samples, default_model_s, base_kernel):
    recs = {}
    for s, m in default_model_s.items():
        _, recs[s] = normalize_kernel(with_s(default_samples, m), base_kernel)
    assert recs[0.5].c >= recs[0.25].c >= recs[0.0].c
    assert recs[0.0].c < 1.0
    assert all(r.mass == pytest.approx(1.0 / r.c, rel=1e-12) for r in recs.values())


def test_normalize_split_sample_consistency(default_samples, base_kernel):
    half = len(default_samples) // 2
    first = SampleSet(model=default_samples.model,
                      samples=default_samples.samples[:half],
                      chain_ids=default_samples.chain_ids[:half])
    second = SampleSet(model=default_samples.model,
                       samples=default_samples.samples[half:],
                       chain_ids=default_samples.chain_ids[half:])
    _, r1 = normalize_kernel(first, Kernel(1, "triangular", amplitude=1.0, radius=1.0))
    _, r2 = normalize_kernel(second, Kernel(1, "triangular", amplitude=1.0, radius=1.0))
    se = math.hypot(r1.c_stderr, r2.c_stderr)
    assert abs(r1.c - r2.c) <= 3 * se


def test_normalize_demands_precision(default_samples, base_kernel):
    with pytest.raises(InsufficientSamples):
        normalize_kernel(default_samples, base_kernel, max_rel_stderr=1e-9)


# ---------------------------------------------------------------- direct norms


def test_l2_zero_test_function(default_samples, default_model, base_kernel):
    f0 = TestFunction(default_model.torus, "tent", 0.0, 2.0, np.array([50.0]))
    row = l2_norm_direct(default_samples, ExpCylinderFunction(f0),
                         scaled(base_kernel, 1.0, default_model.torus), QUAD)
    assert row.m2 == 0.0 and row.heps_sq == 0.0 and row.cross == 0.0 and row.h0_sq == 0.0


def test_l2_free_case_minus_parts_cancel(poisson_samples, cyl_F, base_kernel):
    kernel, rec = normalize_kernel(poisson_samples, base_kernel)
    rows, series = l2_norm_sweep(
        poisson_samples, cyl_F,
        [scaled(kernel, e, poisson_samples.model.torus) for e in (1.0, 0.5)], QUAD)
    for eps in (1.0, 0.5):
        assert np.array_equal(series.heps_minus[eps], series.h0_minus)
        assert np.all(series.mc_var[eps] == 0.0)
    # m2 is exactly the plus-part mismatch
    plus_m2 = batch_means((series.heps_plus[1.0] - series.h0_plus) ** 2)
    assert rows[0].m2 == pytest.approx(plus_m2.value, rel=1e-12)


def test_l2_assembly_identity_and_nonnegative(default_samples, cyl_F, base_kernel):
    kernel, _ = normalize_kernel(default_samples, base_kernel)
    row = l2_norm_direct(default_samples, cyl_F,
                         scaled(kernel, 0.5, default_samples.model.torus), QUAD)
    assert row.m2 == row.heps_sq - 2.0 * row.cross + row.h0_sq
    assert row.m2 >= -2.0 * row.m2_stderr
    assert not row.flagged


def test_l2_sweep_decreasing_in_eps(default_samples, default_model_s, cyl_F, base_kernel):
    m = default_model_s[0.25]
    samples = with_s(default_samples, m)
    kernel, _ = normalize_kernel(samples, base_kernel)
    rows, _ = l2_norm_sweep(
        samples, cyl_F,
        [scaled(kernel, e, m.torus) for e in (1.0, 0.5, 0.25, 0.125)], QUAD)
    m2s = [r.m2 for r in rows]
    assert all(a > b for a, b in zip(m2s, m2s[1:]))
    assert m2s[-1] <= 0.25 * m2s[0]


# ---------------------------------------------------------------- reduced


def test_reduced_zero_function(default_samples, default_model, base_kernel):
    f0 = TestFunction(default_model.torus, "tent", 0.0, 2.0, np.array([50.0]))
    F0 = ExpCylinderFunction(f0)
    k = scaled(base_kernel, 1.0, default_model.torus)
    for term in ("h0_minus_sq", "h0_plus_sq", "h0_cross",
                 "heps_minus_sq", "heps_plus_sq", "cross_minus", "cross_plus"):
        est = reduced_second_moment(default_samples, F0, term, kernel=k, quad=QUAD)
        assert est.value == 0.0


def test_reduced_unknown_term(default_samples, cyl_F):
    with pytest.raises(ValueError):
        reduced_second_moment(default_samples, cyl_F, "bogus")
    with pytest.raises(ValueError):
        reduced_second_moment(default_samples, cyl_F, "heps_minus_sq", kernel=None)


def test_reduced_h0_plus_sq_poisson_closed_form(poisson_samples, cyl_F):
    z = poisson_samples.model.z
    est = reduced_second_moment(poisson_samples, cyl_F, "h0_plus_sq",
                                quad=QuadratureSpec(grid_per_axis=64, seed=2))
    target = z**2 * TENT_INT**2 * math.exp(z * TENT_INT2)
    assert abs(est.value - target) <= 3 * est.stderr + 2e-4 * target


@pytest.mark.parametrize("s", [0.0, 0.25, 0.5])
@pytest.mark.parametrize("term,direct_of", [
    ("h0_minus_sq", lambda sr: sr.h0_minus**2),
    ("h0_plus_sq", lambda sr: sr.h0_plus**2),
    ("h0_cross", lambda sr: sr.h0_minus * sr.h0_plus),
])
def test_reduced_vs_direct_h0(default_samples, default_model_s, cyl_F, base_kernel,
                              s, term, direct_of):
    m = default_model_s[s]
    samples = with_s(default_samples, m)
    kernel, _ = normalize_kernel(samples, base_kernel)
    _, series = l2_norm_sweep(samples, cyl_F, [scaled(kernel, 1.0, m.torus)], QUAD)
    direct = batch_means(direct_of(series))
    reduced = reduced_second_moment(samples, cyl_F, term, quad=QUAD)
    se = math.hypot(direct.stderr, reduced.stderr)
    assert abs(direct.value - reduced.value) <= 3 * se


@pytest.mark.parametrize("term,direct_of", [
    ("heps_minus_sq", lambda sr: sr.heps_minus[1.0] ** 2),
    ("heps_plus_sq", lambda sr: sr.heps_plus[1.0] ** 2),
    ("cross_minus", lambda sr: sr.heps_minus[1.0] * sr.h0_minus),
    ("cross_plus", lambda sr: sr.heps_plus[1.0] * sr.h0_plus),
])
def test_reduced_vs_direct_heps(default_samples, default_model_s, cyl_F, base_kernel,
                                term, direct_of):
    m = default_model_s[0.25]
    samples = with_s(default_samples, m)
    kernel, _ = normalize_kernel(samples, base_kernel)
    k1 = scaled(kernel, 1.0, m.torus)
    _, series = l2_norm_sweep(samples, cyl_F, [k1], QUAD)
    direct = batch_means(direct_of(series))
    reduced = reduced_second_moment(samples, cyl_F, term, kernel=k1, quad=QUAD)
    se = math.hypot(direct.stderr, reduced.stderr)
    assert abs(direct.value - reduced.value) <= 3 * se


def test_cross_plus_dropped_factor_disagrees_at_finite_eps(
        default_samples, default_model_s, cyl_F, base_kernel):
    # without the e^{f} factor at the hopped probe the mixed plus-moment
    # only matches in the eps -> 0 limit; at eps = 1 it must visibly miss
    m = default_model_s[0.25]
    samples = with_s(default_samples, m)
    kernel, _ = normalize_kernel(samples, base_kernel)
    k1 = scaled(kernel, 1.0, m.torus)
    _, series = l2_norm_sweep(samples, cyl_F, [k1], QUAD)
    direct = batch_means(series.heps_plus[1.0] * series.h0_plus)
    dropped = reduced_second_moment(samples, cyl_F, "cross_plus", kernel=k1,
                                    quad=QUAD, paper_cross_plus_form=True)
    se = math.hypot(direct.stderr, dropped.stderr)
    assert abs(direct.value - dropped.value) > 3 * se


# ---------------------------------------------------------------- factorization


def test_factorization_zero_coefficients_exact(default_samples, tent_f):
    rows = factorization_check(default_samples, 0.0, 0.0,
                               [1.0], [0.0], [-1.0], [0.0], tent_f,
                               epsilons=(0.5, 0.25))
    for row in rows:
        assert row.gap == 0.0
        assert row.z_score == 0.0


def test_factorization_poisson_independent(poisson_samples, tent_f):
    rows = factorization_check(poisson_samples, 1.0, 1.0,
                               [1.0], [0.0], [-1.0], [0.0], tent_f,
                               epsilons=(0.25, 0.125))
    for row in rows:
        # phi == 0: lhs = E[e^{<psi>}] and both probe factors are exactly 1
        assert not row.vacuous
        assert abs(row.z_score) <= 3.0
        assert row.gap == pytest.approx(0.0, abs=5 * max(row.gap_stderr, 1e-12))


def test_factorization_default_model(default_samples, tent_f):
    rows = factorization_check(default_samples, 1.0, 1.0,
                               [1.0], [0.0], [-1.0], [0.0], tent_f,
                               epsilons=(1.0, 0.5, 0.25, 0.125))
    assert rows[0].vacuous  # probes 2 apart < 2 R_phi + R_f = 4
    live = [r for r in rows if not r.vacuous]
    assert len(live) == 3
    assert abs(live[-1].z_score) <= 3.0


def test_factorization_guards(default_samples, tent_f):
    with pytest.raises(ValueError):
        factorization_check(default_samples, -1.0, 0.0, [1.0], [0.0], [-1.0], [0.0],
                            tent_f, epsilons=(0.5,))
    with pytest.raises(ValueError):
        factorization_check(default_samples, 1.0, 1.0, [1.0], [0.0], [1.0], [0.0],
                            tent_f, epsilons=(0.5,))


# ---------------------------------------------------------------- study


def small_study(model, F, base_kernel):
    return ScalingStudy(
        model=model, F=F, kernel=base_kernel,
        epsilons=(1.0, 0.5, 0.25, 0.125),
        sampler=SamplerConfig(burnin=2_000, thinning=30, seed=77, chains=2),
        n_samples=1_200,
        quad=QuadratureSpec(grid_per_axis=32, kernel_samples=32, seed=9),
        crosscheck_grid=32)


def test_study_validation(default_model, cyl_F, base_kernel):
    with pytest.raises(ValueError):
        ScalingStudy(model=default_model, F=cyl_F, kernel=base_kernel,
                     epsilons=(0.5, 1.0), sampler=SamplerConfig(), n_samples=10,
                     quad=QuadratureSpec())
    with pytest.raises(ValueError):
        ScalingStudy(model=default_model, F=cyl_F, kernel=base_kernel,
                     epsilons=(1.0, 0.005), sampler=SamplerConfig(), n_samples=10,
                     quad=QuadratureSpec())


def test_study_preconditions(cyl_F, base_kernel):
    hot = ModelParams(z=5.0, s=0.0,
                      potential=PairPotential("soft-disk", theta=1.0, r0=1.0),
                      torus=Torus(1, 100.0))
    with pytest.raises(StudyPreconditionError, match="LA-HT"):
        run_study(small_study(hot, cyl_F, base_kernel))
    well = ModelParams(z=0.01, s=0.0,
                       potential=PairPotential("truncated-well", well_depth=1.0,
                                               well_range=1.0, stability_b=0.0),
                       torus=Torus(1, 100.0))
    with pytest.raises(StudyPreconditionError, match="stability"):
        run_study(small_study(well, cyl_F, base_kernel))


def test_run_study_end_to_end(default_samples, default_model_s, cyl_F, base_kernel):
    m = default_model_s[0.25]
    study = small_study(m, cyl_F, base_kernel)
    report = run_study(study, samples=with_s(default_samples, m))
    assert [r.eps for r in report.norms] == [1.0, 0.5, 0.25, 0.125]
    assert report.verdicts["monotone_beyond_1sigma"]
    assert report.verdicts["ratio_ok"]
    assert report.verdicts["crosscheck_max_abs_z"] <= 3.0
    assert abs(report.verdicts["factorization_final_z"]) <= 3.0
    raw = report.to_raw()
    assert raw["s"] == 0.25
    # determinism: same samples and spec reproduce the report exactly
    report2 = run_study(study, samples=with_s(default_samples, m))
    assert report2.to_raw() == raw
