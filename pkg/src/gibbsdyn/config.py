"""Run configuration: a strict JSON schema with every precondition checked
at load time.

Top-level keys: ``seed``, ``output``, ``model``, ``kernel``,
``test_function``, ``sampler``, ``study``, ``dynamics``, ``validate``.
Unknown keys anywhere are errors.  ``model.s`` may be a number or a list of
numbers (one study per value).  See the README for the full field list and
defaults.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .functions import Kernel, ScaledKernel, TestFunction
from .gibbs import SamplerConfig
from .generators import QuadratureSpec
from .potential import ModelParams, PairPotential, check_laht, check_stability
from .space import Torus

__all__ = ["ConfigError", "RunConfig", "load_config", "default_config", "config_hash"]


class ConfigError(ValueError):
    pass


_POTENTIAL_KEYS = {"family", "theta", "r0", "hard_core", "well_depth",
                   "well_range", "stability_b"}
_MODEL_KEYS = {"dimension", "side", "activity", "s", "potential"}
_KERNEL_KEYS = {"shape", "radius", "sigma", "amplitude"}
_TESTFN_KEYS = {"shape", "amplitude", "radius", "center"}
_SAMPLER_KEYS = {"birth_weight", "death_weight", "translate_weight",
                 "translate_step", "burnin", "thinning", "chains", "samples"}
_QUAD_KEYS = {"grid_per_axis", "kernel_samples"}
_STUDY_KEYS = {"epsilons", "samples", "quadrature", "crosscheck_grid"}
_DYNAMICS_KEYS = {"glauber_horizon", "grid_points", "kawasaki_replicas",
                  "kawasaki_horizon", "burn_time", "eps"}
_VALIDATE_KEYS = {"samples", "k2_bin_width", "k2_r_max", "gnz_grid", "pair_grid"}
_TOP_KEYS = {"seed", "output", "model", "kernel", "test_function", "sampler",
             "study", "dynamics", "validate"}


def _check_keys(block: dict, allowed: set, path: str):
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in '{path}'")


def default_config() -> dict:
    """The default desk-scale experiment configuration."""
    return {
        "seed": 20260809,
        "output": "runs/default",
        "model": {
            "dimension": 1,
            "side": 100.0,
            "activity": 0.05,
            "s": [0.0, 0.25, 0.5],
            "potential": {"family": "soft-disk", "theta": 1.0, "r0": 1.0},
        },
        "kernel": {"shape": "triangular", "radius": 1.0},
        "test_function": {"shape": "tent", "amplitude": math.log(2.0),
                          "radius": 2.0, "center": [50.0]},
        "sampler": {"birth_weight": 0.35, "death_weight": 0.35,
                    "translate_weight": 0.30, "translate_step": 0.5,
                    "burnin": 100_000, "thinning": 50, "chains": 4,
                    "samples": 4_000},
        "study": {"epsilons": [1.0, 0.5, 0.25, 0.125], "samples": 20_000,
                  "quadrature": {"grid_per_axis": 48, "kernel_samples": 32},
                  "crosscheck_grid": 32},
        "dynamics": {"glauber_horizon": 4000.0, "grid_points": 2001,
                     "kawasaki_replicas": 48, "kawasaki_horizon": 30.0,
                     "burn_time": 200.0, "eps": 0.5},
        "validate": {"samples": 4_000, "k2_bin_width": 1.0, "k2_r_max": 10.0,
                     "gnz_grid": 64, "pair_grid": 32},
    }


@dataclass
class RunConfig:
    raw: dict
    seed: int
    output: str
    torus: Torus
    potential: PairPotential
    activity: float
    s_values: list[float]
    kernel: Kernel
    sampler: SamplerConfig
    n_samples: int
    test_function_spec: dict = field(default_factory=dict)
    study_spec: dict = field(default_factory=dict)
    dynamics_spec: dict = field(default_factory=dict)
    validate_spec: dict = field(default_factory=dict)

    def model(self, s: float) -> ModelParams:
        return ModelParams(z=self.activity, s=s, potential=self.potential,
                           torus=self.torus)

    def test_function(self) -> TestFunction:
        spec = self.test_function_spec
        return TestFunction(self.torus, spec["shape"], spec["amplitude"],
                            spec["radius"], np.asarray(spec["center"], dtype=float))

    def quadrature(self) -> QuadratureSpec:
        q = self.study_spec["quadrature"]
        return QuadratureSpec(grid_per_axis=q["grid_per_axis"],
                              kernel_samples=q["kernel_samples"],
                              seed=self.seed + 1_000_003)


def _merged(user: dict) -> dict:
    base = default_config()
    out = {}
    for key in _TOP_KEYS:
        if key in ("model",):
            blk = dict(base[key])
            blk.update(user.get(key, {}))
            out[key] = blk
        elif key in ("kernel", "test_function", "sampler", "study",
                     "dynamics", "validate"):
            blk = dict(base[key])
            user_blk = user.get(key, {})
            if not isinstance(user_blk, dict):
                raise ConfigError(f"'{key}' must be an object")
            blk.update(user_blk)
            if key == "study" and "quadrature" in user_blk:
                q = dict(base["study"]["quadrature"])
                q.update(user_blk["quadrature"])
                blk["quadrature"] = q
            out[key] = blk
        else:
            out[key] = user.get(key, base[key])
    return out


def load_config(source, seed_override: int | None = None,
                budget_scale: float = 1.0) -> RunConfig:
    """Parse and validate a configuration dict or JSON file path.

    Every precondition checkable at load time is checked here: parameter
    ranges, support-fit constraints, stability certification, the activity
    smallness condition, and torus admissibility of the smallest eps.
    ``budget_scale`` uniformly scales sample and quadrature budgets for
    quick smoke runs.
    """
    if isinstance(source, (str,)) or hasattr(source, "__fspath__"):
        with open(source) as fh:
            user = json.load(fh)
    else:
        user = source
    if not isinstance(user, dict):
        raise ConfigError("configuration root must be an object")
    _check_keys(user, _TOP_KEYS, "<root>")
    for key, allowed in (("model", _MODEL_KEYS), ("kernel", _KERNEL_KEYS),
                         ("test_function", _TESTFN_KEYS), ("sampler", _SAMPLER_KEYS),
                         ("study", _STUDY_KEYS), ("dynamics", _DYNAMICS_KEYS),
                         ("validate", _VALIDATE_KEYS)):
        if key in user:
            _check_keys(user[key], allowed, key)
    if "model" in user and "potential" in user["model"]:
        _check_keys(user["model"]["potential"], _POTENTIAL_KEYS, "model.potential")
    if "study" in user and "quadrature" in user.get("study", {}):
        _check_keys(user["study"]["quadrature"], _QUAD_KEYS, "study.quadrature")

    cfg = _merged(user)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    if budget_scale <= 0:
        raise ConfigError("budget scale must be positive")

    def scaled(n, floor):
        return max(floor, int(round(n * budget_scale)))

    mdl = cfg["model"]
    try:
        torus = Torus(int(mdl["dimension"]), float(mdl["side"]))
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    pot_spec = dict(mdl["potential"])
    family = pot_spec.pop("family", None)
    if family is None:
        raise ConfigError("model.potential.family is required")
    try:
        potential = PairPotential(family, **pot_spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model.potential: {exc}") from exc

    s_raw = mdl["s"]
    s_values = [float(v) for v in (s_raw if isinstance(s_raw, (list, tuple)) else [s_raw])]
    z = float(mdl["activity"])
    for s in s_values:
        try:
            ModelParams(z=z, s=s, potential=potential, torus=torus)
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc

    tf = cfg["test_function"]
    try:
        TestFunction(torus, tf["shape"], float(tf["amplitude"]),
                     float(tf["radius"]), np.asarray(tf["center"], dtype=float))
    except ValueError as exc:
        raise ConfigError(f"test_function: {exc}") from exc

    kn = cfg["kernel"]
    try:
        kernel = Kernel(torus.dimension, kn["shape"],
                        amplitude=float(kn.get("amplitude", 1.0)),
                        radius=float(kn["radius"]),
                        sigma=float(kn.get("sigma", 0.0)))
    except ValueError as exc:
        raise ConfigError(f"kernel: {exc}") from exc

    st = cfg["study"]
    eps = [float(e) for e in st["epsilons"]]
    if any(b >= a for a, b in zip(eps, eps[1:])) or not eps:
        raise ConfigError("study.epsilons must be strictly decreasing")
    for e in eps:
        try:
            ScaledKernel(kernel, e, torus)
        except ValueError as exc:
            raise ConfigError(f"study.epsilons: {exc}") from exc

    sp = cfg["sampler"]
    try:
        sampler = SamplerConfig(
            birth_weight=float(sp["birth_weight"]),
            death_weight=float(sp["death_weight"]),
            translate_weight=float(sp["translate_weight"]),
            translate_step=float(sp["translate_step"]),
            burnin=scaled(int(sp["burnin"]), 0),
            thinning=int(sp["thinning"]),
            seed=int(cfg["seed"]),
            chains=int(sp["chains"]))
    except ValueError as exc:
        raise ConfigError(f"sampler: {exc}") from exc

    quad = st["quadrature"]
    study_spec = {
        "epsilons": eps,
        "samples": scaled(int(st["samples"]), 50),
        "crosscheck_grid": max(8, int(st["crosscheck_grid"])),
        "quadrature": {
            "grid_per_axis": max(8, int(round(quad["grid_per_axis"] * min(1.0, budget_scale ** 0.5)))),
            "kernel_samples": max(16, int(round(quad["kernel_samples"] * min(1.0, budget_scale ** 0.5)))),
        },
    }

    dyn = dict(cfg["dynamics"])
    dyn["glauber_horizon"] = float(dyn["glauber_horizon"]) * budget_scale
    dyn["kawasaki_replicas"] = scaled(int(dyn["kawasaki_replicas"]), 8)
    val = dict(cfg["validate"])
    val["samples"] = scaled(int(val["samples"]), 50)

    # regime conditions (named when violated)
    probe = ModelParams(z=z, s=s_values[0], potential=potential, torus=torus)
    laht = check_laht(probe)
    if not laht.satisfied:
        raise ConfigError(
            f"LA-HT violated: lhs={laht.lhs:.5g} >= {laht.rhs:.5g}")
    stab = check_stability(potential)
    if stab.falsified:
        raise ConfigError(
            "stability (S) falsified: the declared constant admits a counterexample")

    return RunConfig(raw=cfg, seed=int(cfg["seed"]), output=str(cfg["output"]),
                     torus=torus, potential=potential, activity=z,
                     s_values=s_values, kernel=kernel, sampler=sampler,
                     n_samples=scaled(int(sp["samples"]), 50),
                     test_function_spec=tf, study_spec=study_spec,
                     dynamics_spec=dyn, validate_spec=val)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.raw, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
