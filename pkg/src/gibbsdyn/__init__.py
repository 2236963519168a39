"""Equilibrium Glauber and Kawasaki particle dynamics on a periodic torus.

Simulation and statistical verification tools for interacting particle
systems in continuum: a grand-canonical Gibbs sampler, correlation and
connected-function estimators, birth-death and hopping jump processes,
their generators on exponential cylinder observables, and the scaling
experiment showing the hopping generator approach the birth-death one in
the equilibrium L2 norm as the hop range spreads.
"""

__version__ = "0.1.0"

from .space import Configuration, Displacement, Torus, min_image
from .potential import ModelParams, PairPotential, check_laht, check_stability
from .functions import ExpCylinderFunction, Kernel, ScaledKernel, TestFunction
from .gibbs import GibbsChain, SamplerConfig, SampleSet, run_chains
from .generators import GeneratorValue, QuadratureSpec, apply_h0, apply_heps
from .scaling import ScalingStudy, run_study

__all__ = [
    "__version__",
    "Configuration", "Displacement", "Torus", "min_image",
    "ModelParams", "PairPotential", "check_laht", "check_stability",
    "ExpCylinderFunction", "Kernel", "ScaledKernel", "TestFunction",
    "GibbsChain", "SamplerConfig", "SampleSet", "run_chains",
    "GeneratorValue", "QuadratureSpec", "apply_h0", "apply_heps",
    "ScalingStudy", "run_study",
]
