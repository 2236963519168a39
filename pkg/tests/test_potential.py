import math

import numpy as np
import pytest

from gibbsdyn.potential import (
    LahtCheck,
    ModelParams,
    PairPotential,
    check_laht,
    check_stability,
    phi,
    relative_energy,
)
from gibbsdyn.space import Configuration, Torus, min_image

SOFT = PairPotential("soft-disk", theta=1.0, r0=1.0)


def make_model(pot=SOFT, z=0.05, s=0.0, d=1, side=100.0):
    return ModelParams(z=z, s=s, potential=pot, torus=Torus(d, side))


def test_phi_soft_disk_values():
    assert SOFT.phi_norm(2.0) == 0.0
    assert SOFT.phi_norm(0.5) == pytest.approx(0.25)
    assert SOFT.phi_norm(0.0) == pytest.approx(1.0)


def test_phi_hard_core():
    pot = PairPotential("hard-core-soft-disk", theta=1.0, r0=1.0, hard_core=0.2)
    assert pot.phi_norm(0.1) == np.inf
    assert pot.phi_norm(0.5) == pytest.approx(0.25)
    t = Torus(1, 10.0)
    assert phi(pot, min_image([0.0], [0.1], t)) == np.inf


def test_phi_symmetric_in_displacement_sign():
    from gibbsdyn.space import Displacement

    t = Torus(2, 10.0)
    p = np.array([1.0, 2.0])
    q = np.array([1.4, 2.3])
    d = min_image(p, q, t)
    assert phi(SOFT, Displacement(-d.vector, d.norm)) == phi(SOFT, d)
    assert phi(SOFT, min_image(q, p, t)) == pytest.approx(phi(SOFT, d), rel=1e-12)


def test_relative_energy_empty_and_single():
    m = make_model()
    g = Configuration(m.torus, cell_size=1.0)
    assert relative_energy(m, [5.0], g) == 0.0
    g.insert([5.5])
    assert relative_energy(m, [5.0], g) == pytest.approx(0.25)


def test_relative_energy_matches_brute_force():
    m = make_model(d=2, side=12.0)
    rng = np.random.default_rng(5)
    g = Configuration(m.torus, cell_size=1.0)
    pts = rng.uniform(0, 12.0, size=(50, 2))
    for p in pts:
        g.insert(p)
    for _ in range(25):
        x = rng.uniform(0, 12.0, 2)
        brute = sum(
            float(SOFT.phi_norm(min_image(p, x, m.torus).norm)) for p in g.positions()
        )
        fast = relative_energy(m, x, g)
        assert fast == pytest.approx(brute, rel=1e-12, abs=1e-12)


def test_relative_energy_exclude_and_infinite():
    pot = PairPotential("hard-core-soft-disk", theta=1.0, r0=1.0, hard_core=0.3)
    m = make_model(pot=pot)
    g = Configuration(m.torus, cell_size=1.0)
    pid = g.insert([5.0])
    g.insert([5.1])
    assert relative_energy(m, [5.05], g) == np.inf
    assert relative_energy(m, g.position(pid), g, exclude_id=pid) == np.inf
    g2 = Configuration(m.torus, cell_size=1.0)
    pid2 = g2.insert([5.0])
    assert relative_energy(m, g2.position(pid2), g2, exclude_id=pid2) == 0.0


def test_incremental_vs_scratch_total_energy():
    # after inserts/removes/moves, recomputed total matches a tracked value
    m = make_model(z=0.5, d=1, side=20.0)
    g = Configuration(m.torus, cell_size=1.0)
    rng = np.random.default_rng(2)
    tracked = 0.0
    ids = []
    for _ in range(30):
        x = rng.uniform(0, 20.0)
        tracked += m.relative_energy([x], g)
        ids.append(g.insert([x]))
    for pid in ids[:10]:
        tracked -= m.relative_energy(g.position(pid), g, exclude_id=pid)
        g.remove(pid)
    assert m.total_pair_energy(g) == pytest.approx(tracked, abs=1e-10)


def test_check_stability_soft_disk_certified():
    res = check_stability(SOFT)
    assert res.b == 0.0 and res.certified and not res.falsified


def test_check_stability_hard_core_certified():
    pot = PairPotential("hard-core-soft-disk", theta=2.0, r0=1.0, hard_core=0.3)
    res = check_stability(pot)
    assert res.b == 0.0 and res.certified


def test_check_stability_well_falsified():
    pot = PairPotential("truncated-well", well_depth=1.0, well_range=1.0, stability_b=0.0)
    res = check_stability(pot, rng=np.random.default_rng(1))
    assert res.falsified and not res.certified
    pts = res.counterexample
    n = pts.shape[0]
    total = 0.0
    for i in range(n):
        r = np.sqrt(np.sum((pts[i + 1:] - pts[i]) ** 2, axis=1))
        total += float(np.sum(pot.phi_norm(r)))
    assert total < -pot.stability_b * n


def test_check_laht_zero_potential():
    m = make_model(pot=PairPotential("soft-disk", theta=0.0, r0=1.0))
    res = check_laht(m)
    assert res.lhs == 0.0
    assert res.rhs == pytest.approx(1.0 / (2.0 * math.e))
    assert res.satisfied


def test_check_laht_default_model_value():
    # Oracle: evaluate the 1-D integral at doubled resolution.
    m = make_model(z=0.05, s=0.0)
    res = check_laht(m, quad_resolution=2048)
    oracle = check_laht(m, quad_resolution=4096)
    assert res.lhs == pytest.approx(oracle.lhs, abs=5 * max(oracle.quad_error, 1e-12))
    assert res.satisfied
    # closed-ish form: z * 2*int_0^1 (1-exp(-(1-u)^2))du
    u = (np.arange(200000) + 0.5) / 200000
    ref = 0.05 * 2.0 * np.mean(1.0 - np.exp(-((1.0 - u) ** 2)))
    assert res.lhs == pytest.approx(ref, rel=1e-6)
    assert res.rhs == pytest.approx(0.18394, abs=1e-5)


def test_check_laht_monotone_and_violated_for_large_z():
    lhs_prev = 0.0
    for z in (0.05, 0.2, 0.8):
        res = check_laht(make_model(z=z))
        assert res.lhs >= lhs_prev
        lhs_prev = res.lhs
    for theta in (0.25, 1.0, 4.0):
        res = check_laht(make_model(pot=PairPotential("soft-disk", theta=theta, r0=1.0)))
        assert res.lhs >= 0
    assert not check_laht(make_model(z=50.0)).satisfied


def test_check_laht_hard_core_handled():
    pot = PairPotential("hard-core-soft-disk", theta=1.0, r0=1.0, hard_core=0.5)
    res = check_laht(make_model(pot=pot, z=0.05))
    # the hard-core region contributes |e^{-inf}-1| = 1 on [0, 0.5]
    assert res.lhs > 0.05 * 2 * 0.5 * 0.999
    assert isinstance(res, LahtCheck)


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(z=0.05, s=0.7, potential=SOFT, torus=Torus(1, 100.0))
    with pytest.raises(ValueError):
        ModelParams(z=-1.0, s=0.0, potential=SOFT, torus=Torus(1, 100.0))
    with pytest.raises(ValueError):
        ModelParams(z=0.05, s=0.0, potential=SOFT, torus=Torus(1, 1.5))
