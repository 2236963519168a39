import math

import numpy as np
import pytest

from gibbsdyn.correlation import (
    CallableCorrelation,
    ConstantCorrelation,
    InsufficientData,
    PoissonCorrelation,
    RadialCorrelation,
    check_ruelle,
    count_partitions,
    empirical_laplace,
    estimate_k1,
    estimate_k1_gnz,
    estimate_k2_radial,
    k_to_u,
    laplace_series,
    read_radial_csv,
    set_partitions,
    u_to_k,
    write_radial_csv,
)
from gibbsdyn.gibbs import SampleSet, SamplerConfig, run_chains
from gibbsdyn.potential import ModelParams, PairPotential
from gibbsdyn.space import Torus
from gibbsdyn.statsutil import Estimate

TENT_INT = 4.0 / math.log(2.0) - 4.0


# ------------------------------------------------------------ partitions


def test_partition_counts_are_bell_numbers():
    assert [count_partitions(n) for n in range(1, 7)] == [1, 2, 5, 15, 52, 203]


def test_partition_blocks_partition_the_set():
    for part in set_partitions(range(4)):
        flat = sorted(x for block in part for x in block)
        assert flat == [0, 1, 2, 3]
        assert all(block for block in part)


def test_order_cap():
    pts = np.zeros((7, 1))
    with pytest.raises(ValueError):
        k_to_u([PoissonCorrelation(1.0)] * 7, pts)
    with pytest.raises(ValueError):
        u_to_k([PoissonCorrelation(1.0)] * 7, pts)


# ------------------------------------------------------------ ursell algebra


def test_u2_is_k2_minus_k1_squared():
    k = [ConstantCorrelation(1, 0.3), ConstantCorrelation(2, 0.2)]
    pts = np.array([[0.0], [1.0]])
    assert k_to_u(k, pts) == pytest.approx(0.2 - 0.09, abs=1e-15)


def test_poisson_ursell_vanish():
    z = 0.7
    tables = [PoissonCorrelation(z)] * 6
    assert k_to_u(tables, np.array([[3.0]])) == pytest.approx(z, abs=1e-15)
    for n in (2, 3, 4):
        pts = np.arange(n, dtype=float)[:, None]
        assert k_to_u(tables, pts) == pytest.approx(0.0, abs=1e-12)


def test_k3_reconstruction_identity():
    u1, u2, u3 = 0.4, -0.05, 0.02
    u = [ConstantCorrelation(1, u1), ConstantCorrelation(2, u2), ConstantCorrelation(3, u3)]
    pts = np.array([[0.0], [1.0], [2.5]])
    k3 = u_to_k(u, pts)
    assert k3 == pytest.approx(u1**3 + 3 * u1 * u2 + u3, abs=1e-15)
    # exact inverse pair
    k = [CallableCorrelation(n, lambda p, n=n: u_to_k(u, p)) for n in range(1, 4)]
    assert k_to_u(k, pts) == pytest.approx(u3, abs=1e-14)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_round_trip_on_random_symbolic_tables(n):
    rng = np.random.default_rng(n)
    coefs = rng.uniform(-0.5, 0.5, size=8)

    def u_fn(pts, m):
        # any smooth symmetric function of the point set works here
        sa = float(np.sum(np.sin(pts)))
        return coefs[m] + 0.3 * math.cos(sa + m)

    u_tables = [CallableCorrelation(m, lambda p, m=m: u_fn(p, m)) for m in range(1, n + 1)]
    k_tables = [CallableCorrelation(m, lambda p: u_to_k(u_tables, p)) for m in range(1, n + 1)]
    pts = rng.uniform(0, 5, size=(n, 1))
    direct = u_tables[n - 1].evaluate(pts)
    assert k_to_u(k_tables, pts) == pytest.approx(direct, rel=1e-12, abs=1e-12)


# ------------------------------------------------------------ estimators


def test_estimate_k1_poisson(poisson_samples, poisson_model):
    est = estimate_k1(poisson_samples)
    assert abs(est.value - poisson_model.z) <= 3 * est.stderr
    gnz = estimate_k1_gnz(poisson_samples)
    assert abs(gnz.value - poisson_model.z) <= 3 * max(gnz.stderr, 1e-9)


def test_estimate_k1_empty_chain(poisson_model):
    empty = SampleSet(model=poisson_model, samples=[np.zeros((0, 1))] * 50,
                      chain_ids=np.zeros(50, dtype=int))
    est = estimate_k1(empty)
    assert est.value == 0.0


def test_estimate_k1_insufficient_data(poisson_model):
    rng = np.random.default_rng(0)
    # strongly autocorrelated fake counts: ESS below 10
    n = np.cumsum(rng.normal(size=200)) * 0 + 5
    n[:100] = 3
    samples = [np.zeros((int(k), 1)) for k in n]
    ss = SampleSet(model=poisson_model, samples=samples, chain_ids=np.zeros(200, dtype=int))
    with pytest.raises(InsufficientData):
        estimate_k1(ss)


def test_estimate_k1_repulsive_below_activity(default_samples, default_model):
    est = estimate_k1(default_samples)
    # repulsion suppresses the density: k1 <= z e^{2B} = z within 3 sigma
    assert est.value <= default_model.z + 3 * est.stderr
    gnz = estimate_k1_gnz(default_samples)
    se = math.hypot(est.stderr, gnz.stderr)
    assert abs(est.value - gnz.value) <= 3 * se


def test_estimate_k2_poisson_flat(poisson_samples, poisson_model):
    table = estimate_k2_radial(poisson_samples, bin_width=1.0, r_max=10.0)
    target = poisson_model.z ** 2
    live = ~table.missing
    assert live.sum() >= 8
    z_scores = (table.values[live] - target) / table.stderrs[live]
    assert np.all(np.abs(z_scores) <= 3.0)


def test_estimate_k2_rmax_guard(poisson_samples):
    with pytest.raises(ValueError):
        estimate_k2_radial(poisson_samples, bin_width=1.0, r_max=51.0)


def test_estimate_k2_hard_core_bins_zero():
    pot = PairPotential("hard-core-soft-disk", theta=1.0, r0=1.0, hard_core=0.25)
    m = ModelParams(z=0.2, s=0.0, potential=pot, torus=Torus(1, 40.0))
    samples = run_chains(m, SamplerConfig(burnin=2000, thinning=10, seed=31, chains=2), 1500)
    table = estimate_k2_radial(samples, bin_width=0.05, r_max=2.0)
    below = table.r_edges[1:] <= pot.hard_core + 1e-9
    assert np.all(table.counts[below] == 0)
    assert np.all(table.values[below] == 0.0)
    assert np.all(table.missing[below])


def test_estimate_k2_softdisk_decay(default_samples, default_model):
    table = estimate_k2_radial(default_samples, bin_width=1.0, r_max=10.0)
    k1 = estimate_k1(default_samples)
    beyond = table.r_edges[:-1] >= 1.0
    for b in np.flatnonzero(beyond & ~table.missing):
        se = math.hypot(table.stderrs[b], 2 * k1.value * k1.stderr)
        assert abs(table.values[b] - k1.value**2) <= 3 * se + 1e-9


# ------------------------------------------------------------ ruelle


def test_check_ruelle_poisson(poisson_samples, poisson_model):
    k1 = estimate_k1(poisson_samples)
    k2 = estimate_k2_radial(poisson_samples, bin_width=1.0, r_max=10.0)
    res = check_ruelle(k1, k2, xi=poisson_model.z)
    assert res.satisfied
    res_bad = check_ruelle(k1, k2, xi=poisson_model.z / 2)
    assert not res_bad.satisfied
    assert res_bad.max_violation > 3


def test_check_ruelle_default_model(default_samples, default_model):
    k1 = estimate_k1(default_samples)
    k2 = estimate_k2_radial(default_samples, bin_width=1.0, r_max=10.0)
    res = check_ruelle(k1, k2, xi=default_model.z)  # xi = z e^{2B}, B = 0
    assert res.satisfied


# ------------------------------------------------------------ laplace series


def test_laplace_series_zero_function(tent_f):
    f0 = tent_f.scaled(amplitude_factor=0.0)
    res = laplace_series([PoissonCorrelation(0.05)] * 6, f0, order=6)
    assert res.value == 1.0
    assert res.last_term == 0.0


def test_laplace_series_poisson_converges_to_closed_form(tent_f):
    z = 0.05
    tables = [PoissonCorrelation(z)] * 8
    res = laplace_series(tables, tent_f, order=6, grid_per_axis=64)
    base = z * TENT_INT
    # remaining tail of exp(base) after 6 terms
    tail_bound = base**7 / math.factorial(7) * math.exp(base)
    # quadrature base vs closed form differ slightly; compare on quadrature base
    nodes, w = tent_f.support_grid(64)
    base_q = z * float(np.sum(np.expm1(tent_f.eval_many(nodes)))) * w
    assert abs(res.value - math.exp(base_q)) <= tail_bound + 1e-12
    assert abs(res.value - math.exp(base)) <= tail_bound + 5e-4
    assert res.last_term == pytest.approx(base_q**6 / math.factorial(6), rel=1e-12)


def test_laplace_series_general_tables_match_poisson_path(tent_f):
    z = 0.05
    fast = laplace_series([PoissonCorrelation(z)] * 3, tent_f, order=3, grid_per_axis=12)
    slow = laplace_series(
        [CallableCorrelation(n, lambda p, n=n: z ** len(p)) for n in (1, 2, 3)],
        tent_f, order=3, grid_per_axis=12)
    assert fast.value == pytest.approx(slow.value, rel=1e-12)
    with pytest.raises(ValueError):
        laplace_series([CallableCorrelation(n, lambda p: 0.0) for n in range(1, 8)],
                       tent_f, order=7)


def test_laplace_series_empirical_match(default_samples, default_model, tent_f):
    emp = empirical_laplace(default_samples, tent_f)
    k1 = estimate_k1(default_samples)
    k2 = estimate_k2_radial(default_samples, bin_width=0.25, r_max=6.0)
    tables = [ConstantCorrelation(1, k1.value), k2]
    res = laplace_series(tables, tent_f, order=2, grid_per_axis=48)
    # combined error: empirical stderr, k-table noise, and the n >= 3 tail
    k_noise = TENT_INT * k1.stderr + 0.5 * TENT_INT**2 * float(np.nanmax(k2.stderrs))
    tail = (default_model.z * TENT_INT) ** 3
    assert abs(emp.value - res.value) <= 3 * emp.stderr + 3 * k_noise + tail


def test_radial_csv_roundtrip(tmp_path, poisson_samples):
    table = estimate_k2_radial(poisson_samples, bin_width=1.0, r_max=8.0)
    path = tmp_path / "k2.csv"
    write_radial_csv(path, table)
    back = read_radial_csv(path, table.torus)
    assert np.array_equal(back.r_edges, table.r_edges)
    assert np.array_equal(back.values, table.values)
    assert np.array_equal(back.stderrs, table.stderrs)
    assert np.array_equal(back.counts, table.counts)


def test_ruelle_check_fields():
    k1 = Estimate(0.05, 0.001)
    res = check_ruelle(k1, None, xi=0.05)
    assert res.satisfied and res.worst == "k1"
    with pytest.raises(ValueError):
        check_ruelle(k1, None, xi=0.0)
