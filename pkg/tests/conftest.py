import math

import numpy as np
import pytest

from gibbsdyn.functions import ExpCylinderFunction, Kernel, TestFunction
from gibbsdyn.gibbs import SamplerConfig, run_chains
from gibbsdyn.potential import ModelParams, PairPotential
from gibbsdyn.space import Torus

TORUS = Torus(1, 100.0)
Z = 0.05


def _model(theta, s=0.0):
    return ModelParams(z=Z, s=s, potential=PairPotential("soft-disk", theta=theta, r0=1.0),
                       torus=TORUS)


@pytest.fixture(scope="session")
def poisson_model():
    return _model(theta=0.0)


@pytest.fixture(scope="session")
def default_model():
    return _model(theta=1.0)


@pytest.fixture(scope="session")
def default_model_s():
    return {s: _model(theta=1.0, s=s) for s in (0.0, 0.25, 0.5)}


@pytest.fixture(scope="session")
def tent_f():
    return TestFunction(TORUS, "tent", math.log(2.0), 2.0, np.array([50.0]))


@pytest.fixture(scope="session")
def cyl_F(tent_f):
    return ExpCylinderFunction(tent_f)


@pytest.fixture(scope="session")
def base_kernel():
    return Kernel(1, "triangular", amplitude=1.0, radius=1.0)


@pytest.fixture(scope="session")
def poisson_samples(poisson_model):
    cfg = SamplerConfig(burnin=2_000, thinning=12, seed=902, chains=4)
    return run_chains(poisson_model, cfg, 4_000)


@pytest.fixture(scope="session")
def default_samples(default_model):
    cfg = SamplerConfig(burnin=5_000, thinning=40, seed=417, chains=4)
    return run_chains(default_model, cfg, 4_800)
