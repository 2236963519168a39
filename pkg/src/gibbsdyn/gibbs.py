"""Grand-canonical Metropolis sampler and GNZ-identity validation.

The chain targets the finite-volume Gibbs density with activity z and the
torus (minimum-image) pair energy.  Three move types:

* birth: propose x uniform on the torus, accept with
  ``min(1, z V / (N+1) * exp(-E(x, gamma)))``;
* death: pick a uniform particle, accept with
  ``min(1, N / (z V) * exp(+E(x, gamma \\ x)))``;
* translate: pick a particle, propose an isotropic Gaussian displacement,
  accept with ``min(1, exp(-dE))``.

Birth and death weights must be equal so these acceptance ratios satisfy
detailed balance exactly as written (no Hastings correction is applied).

Per-particle relative energies are maintained incrementally and verified
against a full recomputation every 10^4 steps.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .potential import ModelParams
from .space import Configuration
from .statsutil import Estimate, batch_means, batch_values, effective_sample_size

__all__ = [
    "SamplerConfig",
    "GibbsChain",
    "SampleSet",
    "run_chains",
    "GnzResult",
    "gnz_residual",
    "double_gnz_residual",
    "WindowFunctional",
    "WindowCylinderFunctional",
    "DeathIntensityFunctional",
    "PairWindowFunctional",
    "PairWindowCylinderFunctional",
    "DeathPairFunctional",
    "write_samples",
    "read_samples",
]

CACHE_CHECK_INTERVAL = 10_000
CACHE_TOLERANCE = 1e-8

_MAGIC = b"GIBBSDYN"


@dataclass(frozen=True)
class SamplerConfig:
    birth_weight: float = 0.35
    death_weight: float = 0.35
    translate_weight: float = 0.30
    translate_step: float = 0.5
    burnin: int = 100_000
    thinning: int = 50
    seed: int = 0
    chains: int = 1

    def __post_init__(self):
        w = (self.birth_weight, self.death_weight, self.translate_weight)
        if min(w) < 0 or sum(w) <= 0:
            raise ValueError("move weights must be nonnegative with positive sum")
        if self.birth_weight != self.death_weight:
            raise ValueError(
                "birth and death weights must be equal (the acceptance "
                "ratios assume a symmetric birth/death proposal mix)")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.burnin < 0 or self.chains < 1:
            raise ValueError("burnin must be >= 0 and chains >= 1")


class GibbsChain:
    """One single-owner MCMC chain targeting the finite-volume Gibbs measure."""

    def __init__(self, model: ModelParams, config: SamplerConfig, chain_id: int = 0,
                 start: Configuration | None = None):
        self.model = model
        self.config = config
        self.chain_id = chain_id
        self.rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(chain_id,)))
        self.state = start.copy() if start is not None else model.new_configuration()
        self.energy: dict[int, float] = {}
        for pid in self.state.ids():
            self.energy[pid] = model.relative_energy(
                self.state.position(pid), self.state, exclude_id=pid)
        self.steps = 0
        self._burned_in = False
        self.proposals = {"birth": 0, "death": 0, "translate": 0}
        self.accepts = {"birth": 0, "death": 0, "translate": 0}
        self.count_series: list[int] = []
        cum = [config.birth_weight, config.death_weight, config.translate_weight]
        total = sum(cum)
        self._move_cdf = np.cumsum(cum) / total

    # -- core moves --------------------------------------------------------

    def step(self) -> None:
        u = self.rng.uniform()
        if u < self._move_cdf[0]:
            self._birth()
        elif u < self._move_cdf[1]:
            self._death()
        else:
            self._translate()
        self.steps += 1
        if self.steps % CACHE_CHECK_INTERVAL == 0:
            self.verify_cache()

    def _phi_sum(self, norms: np.ndarray) -> float:
        if norms.size == 0:
            return 0.0
        return float(np.sum(self.model.potential.phi_norm(norms)))

    def _birth(self) -> None:
        self.proposals["birth"] += 1
        m = self.model
        x = m.torus.side * self.rng.uniform(size=m.torus.dimension)
        ids, _, norms = self.state.neighbors_within(x, m.potential.cutoff)
        e_new = self._phi_sum(norms)
        n = len(self.state)
        ratio = m.z * m.volume / (n + 1) * math.exp(-e_new) if np.isfinite(e_new) else 0.0
        if ratio < 1.0 and self.rng.uniform() >= ratio:
            return
        try:
            pid = self.state.insert(x)
        except ValueError:
            return  # exact duplicate proposal: degenerate, reject
        phis = m.potential.phi_norm(norms)
        for nid, p in zip(ids, np.atleast_1d(phis)):
            self.energy[nid] += float(p)
        self.energy[pid] = e_new
        self.accepts["birth"] += 1

    def _death(self) -> None:
        self.proposals["death"] += 1
        n = len(self.state)
        if n == 0:
            return
        pid = self.state._row_id[int(self.rng.integers(n))]
        e_i = self.energy[pid]
        ratio = n / (self.model.z * self.model.volume) * math.exp(e_i)
        if ratio < 1.0 and self.rng.uniform() >= ratio:
            return
        x = self.state.position(pid)
        ids, _, norms = self.state.neighbors_within(
            x, self.model.potential.cutoff, exclude_id=pid)
        phis = self.model.potential.phi_norm(norms)
        for nid, p in zip(ids, np.atleast_1d(phis)):
            self.energy[nid] -= float(p)
        self.state.remove(pid)
        del self.energy[pid]
        self.accepts["death"] += 1

    def _translate(self) -> None:
        self.proposals["translate"] += 1
        n = len(self.state)
        if n == 0:
            return
        m = self.model
        pid = self.state._row_id[int(self.rng.integers(n))]
        x_old = self.state.position(pid)
        x_new = m.torus.wrap(x_old + self.rng.normal(
            0.0, self.config.translate_step, size=m.torus.dimension))
        ids_o, _, norms_o = self.state.neighbors_within(
            x_old, m.potential.cutoff, exclude_id=pid)
        ids_n, _, norms_n = self.state.neighbors_within(
            x_new, m.potential.cutoff, exclude_id=pid)
        e_old = self._phi_sum(norms_o)
        e_new = self._phi_sum(norms_n)
        if np.isfinite(e_new):
            ratio = math.exp(-(e_new - e_old))
        else:
            ratio = 0.0
        if ratio < 1.0 and self.rng.uniform() >= ratio:
            return
        phis_o = m.potential.phi_norm(norms_o)
        phis_n = m.potential.phi_norm(norms_n)
        for nid, p in zip(ids_o, np.atleast_1d(phis_o)):
            self.energy[nid] -= float(p)
        for nid, p in zip(ids_n, np.atleast_1d(phis_n)):
            self.energy[nid] += float(p)
        try:
            self.state.move(pid, x_new)
        except ValueError:
            # landing exactly on another particle: undo and reject
            for nid, p in zip(ids_o, np.atleast_1d(phis_o)):
                self.energy[nid] += float(p)
            for nid, p in zip(ids_n, np.atleast_1d(phis_n)):
                self.energy[nid] -= float(p)
            return
        self.energy[pid] = e_new
        self.accepts["translate"] += 1

    # -- bookkeeping ---------------------------------------------------------

    def verify_cache(self, tol: float = CACHE_TOLERANCE) -> None:
        """Compare the incrementally maintained per-particle energies with a
        full recomputation; raises if they drifted beyond ``tol``."""
        for pid in self.state.ids():
            exact = self.model.relative_energy(
                self.state.position(pid), self.state, exclude_id=pid)
            if abs(exact - self.energy[pid]) > tol:
                raise RuntimeError(
                    f"energy cache drift {abs(exact - self.energy[pid]):.3e} "
                    f"at particle {pid} after {self.steps} steps")

    def _ensure_burnin(self) -> None:
        if not self._burned_in:
            for _ in range(self.config.burnin):
                self.step()
            self._burned_in = True

    def sample_positions(self, n_samples: int) -> list[np.ndarray]:
        """Retain every thinning-th state after burn-in, as position arrays."""
        self._ensure_burnin()
        out = []
        for _ in range(n_samples):
            for _ in range(self.config.thinning):
                self.step()
            out.append(self.state.positions())
            self.count_series.append(len(self.state))
        return out

    def run(self, n_samples: int):
        """Yield Configuration snapshots (burn-in applied, thinned)."""
        self._ensure_burnin()
        for _ in range(n_samples):
            for _ in range(self.config.thinning):
                self.step()
            self.count_series.append(len(self.state))
            yield self.state.copy()

    def diagnostics(self) -> dict:
        counts = np.asarray(self.count_series, dtype=float)
        out = {
            "steps": self.steps,
            "acceptance": {
                k: (self.accepts[k] / self.proposals[k] if self.proposals[k] else 0.0)
                for k in self.proposals
            },
        }
        if counts.size >= 4:
            ess = effective_sample_size(counts)
            out["count_mean"] = float(counts.mean())
            out["count_ess"] = ess
            half = counts.size // 2
            a = batch_means(counts[:half])
            b = batch_means(counts[half:])
            se = math.hypot(a.stderr, b.stderr)
            out["halves_z"] = (a.value - b.value) / se if se > 0 else 0.0
            out["equilibrated"] = abs(out["halves_z"]) <= 2.0
        return out


def _run_one_chain(args):
    model, config, chain_id, n_samples = args
    chain = GibbsChain(model, config, chain_id=chain_id)
    samples = chain.sample_positions(n_samples)
    return samples, chain.diagnostics()


@dataclass
class SampleSet:
    """Thinned equilibrium samples merged from one or more chains."""

    model: ModelParams
    samples: list[np.ndarray]
    chain_ids: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def counts(self) -> np.ndarray:
        return np.array([s.shape[0] for s in self.samples])

    def __len__(self) -> int:
        return len(self.samples)


def run_chains(model: ModelParams, config: SamplerConfig, n_samples: int,
               threads: int = 1) -> SampleSet:
    """Run ``config.chains`` independent chains and merge their samples.

    The merge order is fixed by chain index, so results do not depend on
    the worker pool size.
    """
    per = int(math.ceil(n_samples / config.chains))
    jobs = [(model, config, cid, per) for cid in range(config.chains)]
    if threads > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, config.chains)) as pool:
            results = list(pool.map(_run_one_chain, jobs))
    else:
        results = [_run_one_chain(j) for j in jobs]
    samples: list[np.ndarray] = []
    chain_ids: list[int] = []
    diags = {}
    for cid, (s, d) in enumerate(results):
        samples.extend(s)
        chain_ids.extend([cid] * len(s))
        diags[f"chain_{cid}"] = d
    means = [diags[k].get("count_mean") for k in diags if "count_mean" in diags[k]]
    if len(means) > 1:
        diags["cross_chain_count_spread"] = float(np.std(means))
    return SampleSet(model=model, samples=samples,
                     chain_ids=np.array(chain_ids), diagnostics=diags)


# ---------------------------------------------------------------------------
# GNZ residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GnzResult:
    lhs: Estimate
    rhs: Estimate
    z_score: float
    vacuous: bool


def _paired_z(lhs_series, rhs_series):
    lhs_series = np.asarray(lhs_series)
    rhs_series = np.asarray(rhs_series)
    lhs = batch_means(lhs_series)
    rhs = batch_means(rhs_series)
    diff = batch_means(lhs_series - rhs_series)
    if diff.stderr == 0.0:
        z = 0.0 if diff.value == 0.0 else math.inf
    else:
        z = diff.value / diff.stderr
    vacuous = not (np.any(lhs_series != 0.0) or np.any(rhs_series != 0.0))
    return GnzResult(lhs=lhs, rhs=rhs, z_score=z, vacuous=vacuous)


def gnz_residual(samples: SampleSet, functional, grid_per_axis: int = 48) -> GnzResult:
    """Two-sided estimate of the Gibbs characterization identity.

    lhs averages the sum of F(gamma, x) over particles; rhs averages the
    quadrature of ``z exp(-E(x, gamma)) F(gamma u x, x)`` over the
    functional's support window.  The z-score uses the paired (same-sample)
    standard error of the difference.
    """
    m = samples.model
    nodes, w = functional.support_grid(grid_per_axis)
    lhs_series = np.empty(len(samples))
    rhs_series = np.empty(len(samples))
    for t, pos in enumerate(samples.samples):
        lhs_series[t] = functional.lhs_sum(pos)
        energies = m.energies_against(nodes, pos)
        vals = functional.rhs_values(pos, nodes)
        rhs_series[t] = m.z * w * float(np.sum(np.exp(-energies) * vals))
    return _paired_z(lhs_series, rhs_series)


def double_gnz_residual(samples: SampleSet, functional, grid_per_axis: int = 24) -> GnzResult:
    """Two-sided estimate of the second-order GNZ identity.

    The rhs contains the off-diagonal double integral with the factor
    ``exp(-E(x1) - E(x2) - phi(x1 - x2))`` plus the diagonal single-integral
    term with ``F(gamma u x, x, x)``.
    """
    m = samples.model
    nodes, w = functional.support_grid(grid_per_axis)
    k = nodes.shape[0]
    ii, jj = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    x1 = nodes[ii.ravel()]
    x2 = nodes[jj.ravel()]
    phi_pairs = m.potential.phi_norm(m.torus.min_image_norm(x1 - x2))
    lhs_series = np.empty(len(samples))
    rhs_series = np.empty(len(samples))
    for t, pos in enumerate(samples.samples):
        lhs_series[t] = functional.lhs_pair_sum(pos)
        energies = m.energies_against(nodes, pos)
        e1 = energies[ii.ravel()]
        e2 = energies[jj.ravel()]
        off = np.exp(-e1 - e2 - phi_pairs) * functional.rhs_pair_values(pos, x1, x2)
        diag = np.exp(-energies) * functional.rhs_diag_values(pos, nodes)
        rhs_series[t] = (m.z * w) ** 2 * float(np.sum(off)) + m.z * w * float(np.sum(diag))
    return _paired_z(lhs_series, rhs_series)


# -- concrete test functionals ------------------------------------------------


@dataclass(frozen=True)
class _Windowed:
    model: ModelParams
    center: np.ndarray
    radius: float

    def support_grid(self, per_axis: int):
        d = self.model.torus.dimension
        h = 2.0 * self.radius / per_axis
        ax = -self.radius + (np.arange(per_axis) + 0.5) * h
        mesh = np.meshgrid(*([ax] * d), indexing="ij")
        nodes = np.stack([mm.ravel() for mm in mesh], axis=-1) + np.asarray(self.center)
        return self.model.torus.wrap(nodes), h ** d

    def window(self, xs: np.ndarray) -> np.ndarray:
        r = self.model.torus.min_image_norm(xs - np.asarray(self.center))
        return (r <= self.radius).astype(float)


@dataclass(frozen=True)
class WindowFunctional(_Windowed):
    """F(gamma, x) = 1_Window(x)."""

    def lhs_sum(self, pos: np.ndarray) -> float:
        return float(np.sum(self.window(pos)))

    def rhs_values(self, pos: np.ndarray, xs: np.ndarray) -> np.ndarray:
        return self.window(xs)


@dataclass(frozen=True)
class WindowCylinderFunctional(_Windowed):
    """F(gamma, x) = 1_Window(x) * exp(<f, gamma \\ x>)."""

    f: object = None  # TestFunction

    def lhs_sum(self, pos: np.ndarray) -> float:
        ind = self.window(pos)
        if not np.any(ind):
            return 0.0
        fv = self.f.eval_many(pos)
        total = float(np.sum(fv))
        return float(np.sum(ind * np.exp(total - fv)))

    def rhs_values(self, pos: np.ndarray, xs: np.ndarray) -> np.ndarray:
        total = float(np.sum(self.f.eval_many(pos)))
        return self.window(xs) * math.exp(total)


@dataclass(frozen=True)
class DeathIntensityFunctional(_Windowed):
    """F(gamma, x) = 1_W(x) exp(s E(x, gamma \\ x)) (e^{-f(x)} - 1) e^{<f, gamma>}.

    The particle sum of this functional is minus the death part of the
    birth-and-death generator applied to exp(<f, .>), restricted to the
    window.
    """

    f: object = None

    def lhs_sum(self, pos: np.ndarray) -> float:
        ind = self.window(pos)
        if not np.any(ind):
            return 0.0
        m = self.model
        fv = self.f.eval_many(pos)
        F = math.exp(float(np.sum(fv)))
        total = 0.0
        for i in np.flatnonzero(ind):
            others = np.delete(pos, i, axis=0)
            e = m.energy_against(pos[i], others)
            total += math.exp(m.s * e) * math.expm1(-fv[i]) * F
        return total

    def rhs_values(self, pos: np.ndarray, xs: np.ndarray) -> np.ndarray:
        m = self.model
        fv_x = self.f.eval_many(xs)
        F_rest = math.exp(float(np.sum(self.f.eval_many(pos))))
        energies = m.energies_against(xs, pos)
        return (self.window(xs) * np.exp(m.s * energies)
                * np.expm1(-fv_x) * F_rest * np.exp(fv_x))


@dataclass(frozen=True)
class PairWindowFunctional(_Windowed):
    """F(gamma, x1, x2) = 1_W(x1) 1_W(x2)."""

    def lhs_pair_sum(self, pos: np.ndarray) -> float:
        return float(np.sum(self.window(pos)) ** 2)

    def rhs_pair_values(self, pos, x1, x2) -> np.ndarray:
        return self.window(x1) * self.window(x2)

    def rhs_diag_values(self, pos, xs) -> np.ndarray:
        return self.window(xs)


@dataclass(frozen=True)
class PairWindowCylinderFunctional(_Windowed):
    """F(gamma, x1, x2) = 1_W(x1) 1_W(x2) exp(<f, gamma \\ {x1, x2}>)."""

    f: object = None

    def lhs_pair_sum(self, pos: np.ndarray) -> float:
        ind = self.window(pos)
        if not np.any(ind):
            return 0.0
        fv = self.f.eval_many(pos)
        total = float(np.sum(fv))
        acc = 0.0
        idx = np.flatnonzero(ind)
        for i in idx:
            for j in idx:
                rest = total - fv[i] - (fv[j] if j != i else 0.0)
                acc += math.exp(rest)
        return acc

    def rhs_pair_values(self, pos, x1, x2) -> np.ndarray:
        c = math.exp(float(np.sum(self.f.eval_many(pos))))
        return self.window(x1) * self.window(x2) * c

    def rhs_diag_values(self, pos, xs) -> np.ndarray:
        c = math.exp(float(np.sum(self.f.eval_many(pos))))
        return self.window(xs) * c


@dataclass(frozen=True)
class DeathPairFunctional(_Windowed):
    """The integrand whose double particle sum is (death part of H0 F)^2.

    F(gamma, x1, x2) = prod_i exp(s E(x_i, gamma \\ x_i)) (e^{-f(x_i)} - 1)
    times exp(<2f, gamma>).  Feeding it through the second-order identity
    reproduces the closed-form second moment of the death term.
    """

    f: object = None

    def lhs_pair_sum(self, pos: np.ndarray) -> float:
        m = self.model
        fv = self.f.eval_many(pos)
        F2 = math.exp(2.0 * float(np.sum(fv)))
        acc = 0.0
        for i in range(pos.shape[0]):
            others = np.delete(pos, i, axis=0)
            e = m.energy_against(pos[i], others)
            acc += math.exp(m.s * e) * math.expm1(-fv[i])
        return acc * acc * F2

    def _one_side(self, pos, xs, extra=None):
        m = self.model
        e = m.energies_against(xs, pos)
        if extra is not None:
            e = e + m.potential.phi_norm(m.torus.min_image_norm(xs - extra))
        return np.exp(m.s * e) * np.expm1(-self.f.eval_many(xs))

    def rhs_pair_values(self, pos, x1, x2) -> np.ndarray:
        fv = self.f.eval_many(pos)
        F2 = np.exp(2.0 * (float(np.sum(fv))
                           + self.f.eval_many(x1) + self.f.eval_many(x2)))
        # E(x1, gamma u x2) = E(x1, gamma) + phi(x1 - x2), and symmetrically
        return self._one_side(pos, x1, extra=x2) * self._one_side(pos, x2, extra=x1) * F2

    def rhs_diag_values(self, pos, xs) -> np.ndarray:
        m = self.model
        fv_x = self.f.eval_many(xs)
        F2 = np.exp(2.0 * (float(np.sum(self.f.eval_many(pos))) + fv_x))
        e = m.energies_against(xs, pos)
        return np.exp(2.0 * m.s * e) * np.expm1(-fv_x) ** 2 * F2


# ---------------------------------------------------------------------------
# sample persistence
# ---------------------------------------------------------------------------


def write_samples(path, samples: SampleSet) -> None:
    """Binary record sequence plus a JSON diagnostics sidecar.

    Layout (little-endian): an 16-byte header (magic ``GIBBSDYN``, uint32
    version, uint32 dimension), then per record: int64 step index, int64 N,
    N*d float64 coordinates.
    """
    d = samples.model.torus.dimension
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", 1, d))
        for idx, pos in enumerate(samples.samples):
            n = pos.shape[0]
            fh.write(struct.pack("<qq", idx, n))
            fh.write(np.ascontiguousarray(pos, dtype="<f8").tobytes())
    side = {"diagnostics": samples.diagnostics,
            "n_samples": len(samples),
            "chain_ids": samples.chain_ids.tolist()}
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def read_samples(path) -> tuple[list[np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError("not a sample dump")
        version, d = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise ValueError(f"unsupported sample dump version {version}")
        out = []
        while True:
            head = fh.read(16)
            if not head:
                break
            _, n = struct.unpack("<qq", head)
            buf = fh.read(8 * n * d)
            out.append(np.frombuffer(buf, dtype="<f8").reshape(n, d).copy())
    try:
        with open(str(path) + ".json") as fh:
            side = json.load(fh)
    except FileNotFoundError:
        side = {}
    return out, side
