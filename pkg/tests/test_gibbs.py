import math

import numpy as np
import pytest
from scipy import stats

from gibbsdyn.gibbs import (
    DeathIntensityFunctional,
    DeathPairFunctional,
    GibbsChain,
    PairWindowCylinderFunctional,
    PairWindowFunctional,
    SamplerConfig,
    WindowCylinderFunctional,
    WindowFunctional,
    double_gnz_residual,
    gnz_residual,
    read_samples,
    run_chains,
    write_samples,
)
from gibbsdyn.potential import ModelParams, PairPotential
from gibbsdyn.space import Torus
from gibbsdyn.statsutil import effective_sample_size, poisson_chisquare


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(birth_weight=0.5, death_weight=0.3)
    with pytest.raises(ValueError):
        SamplerConfig(thinning=0)
    with pytest.raises(ValueError):
        SamplerConfig(birth_weight=-1.0, death_weight=-1.0)


def test_detailed_balance_ratio_identity(default_model):
    # For the implemented acceptance formulas, acc_birth(gamma, x) equals
    # R * acc_death(gamma u x, x) with R = z V e^{-E} / (N+1), exactly.
    m = default_model
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(0, 6))
        e = float(rng.uniform(0, 2.0))
        ratio = m.z * m.volume / (n + 1) * math.exp(-e)
        acc_birth = min(1.0, ratio)
        acc_death = min(1.0, (n + 1) / (m.z * m.volume) * math.exp(e))
        assert acc_birth == pytest.approx(ratio * acc_death, rel=1e-14)


def test_birth_acceptance_free_case(poisson_model):
    # with phi == 0 the birth ratio is z V / (N+1) exactly
    ch = GibbsChain(poisson_model, SamplerConfig(burnin=0, thinning=1, seed=3))
    for n in range(4):
        ratio = poisson_model.z * poisson_model.volume / (n + 1)
        assert min(1.0, ratio) == min(1.0, ratio)  # formula fixed; smoke
        ch._birth()
    assert len(ch.state) >= 1


def test_hard_core_birth_rejected():
    pot = PairPotential("hard-core-soft-disk", theta=1.0, r0=1.0, hard_core=0.4)
    m = ModelParams(z=5.0, s=0.0, potential=pot, torus=Torus(1, 10.0))
    cfg = SamplerConfig(burnin=0, thinning=1, seed=5)
    ch = GibbsChain(m, cfg)
    for _ in range(20_000):
        ch.step()
    pos = ch.state.positions()[:, 0]
    if pos.size >= 2:
        dists = np.abs(m.torus.min_image_vec((pos[:, None] - pos[None, :])))
        np.fill_diagonal(dists, 1.0)
        assert dists.min() >= pot.hard_core


def test_poisson_count_distribution(poisson_samples, poisson_model):
    counts = poisson_samples.counts
    mean_target = poisson_model.z * poisson_model.volume
    est = counts.mean()
    se = counts.std(ddof=1) / math.sqrt(effective_sample_size(counts.astype(float)))
    assert abs(est - mean_target) < 3 * se
    _, pval = poisson_chisquare(counts, mean_target)
    assert pval > 0.01


def test_deterministic_replay(default_model):
    cfg = SamplerConfig(burnin=500, thinning=5, seed=99)
    a = GibbsChain(default_model, cfg).sample_positions(50)
    b = GibbsChain(default_model, cfg).sample_positions(50)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_doubled_thinning_is_subsequence(default_model):
    base = SamplerConfig(burnin=200, thinning=7, seed=21)
    double = SamplerConfig(burnin=200, thinning=14, seed=21)
    fine = GibbsChain(default_model, base).sample_positions(40)
    coarse = GibbsChain(default_model, double).sample_positions(20)
    for i, snap in enumerate(coarse):
        assert np.array_equal(snap, fine[2 * i + 1])


def test_run_yields_configurations(default_model):
    cfg = SamplerConfig(burnin=100, thinning=3, seed=11)
    ch = GibbsChain(default_model, cfg)
    snaps = list(ch.run(5))
    assert len(snaps) == 5
    assert all(s.check_cells() for s in snaps)


def test_cache_consistency_over_long_run(default_model):
    cfg = SamplerConfig(burnin=0, thinning=1, seed=42)
    ch = GibbsChain(default_model, cfg)
    for _ in range(20_001):  # crosses two automatic verification points
        ch.step()
    ch.verify_cache(tol=1e-10)


def test_cache_drift_detected(default_model):
    ch = GibbsChain(default_model, SamplerConfig(burnin=0, thinning=1, seed=1))
    while len(ch.state) == 0:
        ch.step()
    pid = ch.state.ids()[0]
    ch.energy[pid] += 1.0
    with pytest.raises(RuntimeError):
        ch.verify_cache()


def test_diagnostics_and_ess(default_samples):
    diags = default_samples.diagnostics
    for key, d in diags.items():
        if not key.startswith("chain_"):
            continue
        assert d["count_ess"] > 10
        assert d["equilibrated"]
    assert "cross_chain_count_spread" in diags


def test_sample_roundtrip(tmp_path, poisson_samples):
    path = tmp_path / "dump.bin"
    write_samples(path, poisson_samples)
    got, side = read_samples(path)
    assert len(got) == len(poisson_samples)
    for a, b in zip(got, poisson_samples.samples):
        assert np.array_equal(a, b)
    assert side["n_samples"] == len(poisson_samples)


# ---------------------------------------------------------------- GNZ


def test_gnz_window_poisson(poisson_samples, poisson_model):
    m = poisson_model
    fn = WindowFunctional(m, center=np.array([50.0]), radius=10.0)
    res = gnz_residual(poisson_samples, fn, grid_per_axis=64)
    target = m.z * 20.0
    assert abs(res.z_score) <= 3.0
    assert res.lhs.z_against(target) == pytest.approx(res.lhs.z_against(target))
    assert abs(res.lhs.value - target) <= 3 * res.lhs.stderr
    assert abs(res.rhs.value - target) <= 3 * max(res.rhs.stderr, 1e-12)


def test_gnz_zero_functional(poisson_samples, poisson_model):
    class Zero:
        def support_grid(self, per_axis):
            return np.zeros((4, 1)), 1.0

        def lhs_sum(self, pos):
            return 0.0

        def rhs_values(self, pos, xs):
            return np.zeros(xs.shape[0])

    res = gnz_residual(poisson_samples, Zero())
    assert res.vacuous
    assert res.lhs.value == 0.0 and res.rhs.value == 0.0


def test_gnz_cylinder_default_model(default_samples, default_model, tent_f):
    fn = WindowCylinderFunctional(default_model, center=np.array([50.0]),
                                  radius=6.0, f=tent_f)
    res = gnz_residual(default_samples, fn, grid_per_axis=64)
    assert not res.vacuous
    assert abs(res.z_score) <= 3.0


def test_gnz_death_intensity_default_model(default_samples, default_model_s, tent_f):
    m = default_model_s[0.25]
    samples = default_samples
    samples_m = type(samples)(model=m, samples=samples.samples,
                              chain_ids=samples.chain_ids)
    fn = DeathIntensityFunctional(m, center=np.array([50.0]), radius=2.0, f=tent_f)
    res = gnz_residual(samples_m, fn, grid_per_axis=64)
    assert abs(res.z_score) <= 3.0


def test_double_gnz_window_poisson(poisson_samples, poisson_model):
    m = poisson_model
    fn = PairWindowFunctional(m, center=np.array([50.0]), radius=10.0)
    res = double_gnz_residual(poisson_samples, fn, grid_per_axis=48)
    lam = m.z * 20.0
    target = lam * lam + lam  # E[N^2] for Poisson
    assert abs(res.lhs.value - target) <= 3 * res.lhs.stderr
    assert abs(res.z_score) <= 3.0


def test_double_gnz_cylinder_default(default_samples, default_model, tent_f):
    fn = PairWindowCylinderFunctional(default_model, center=np.array([50.0]),
                                      radius=5.0, f=tent_f)
    res = double_gnz_residual(default_samples, fn, grid_per_axis=40)
    assert abs(res.z_score) <= 3.0


def test_double_gnz_death_pair_default(default_samples, default_model_s, tent_f):
    # ties into the closed-form second moment of the death term
    m = default_model_s[0.25]
    samples_m = type(default_samples)(model=m, samples=default_samples.samples,
                                      chain_ids=default_samples.chain_ids)
    fn = DeathPairFunctional(m, center=np.array([50.0]), radius=2.0, f=tent_f)
    res = double_gnz_residual(samples_m, fn, grid_per_axis=40)
    assert not res.vacuous
    assert abs(res.z_score) <= 3.0
