"""Kinetic Monte Carlo for the birth-death and hopping jump processes.

Rates are read off the generators: a particle dies at rate
``exp(s E(x, gamma \\ x))``, new particles are born with intensity density
``z exp((s-1) E(x, gamma))``, and a particle hops from x to y with rate
density ``a(x-y) exp(s E(x, gamma\\x) + (s-1) E(y, gamma\\x))``.

Death rates are computed exactly; births and hops are simulated by
thinning against the dominating bounds ``z V`` and ``mass(a) e^{s E}``,
which are valid for nonnegative potentials and s <= 1/2.  A rejected
tentative event advances simulated time (and is logged) but leaves the
state unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functions import ScaledKernel, TestFunction
from .potential import ModelParams
from .space import Configuration
from .statsutil import batch_means

__all__ = [
    "EventRates",
    "Trajectory",
    "event_rates",
    "GlauberSimulator",
    "KawasakiSimulator",
    "simulate_glauber",
    "simulate_kawasaki",
    "stationarity_test",
    "write_trajectory_csv",
]


def _require_thinnable(model: ModelParams):
    if not model.potential.nonnegative or model.potential.has_hard_core:
        raise ValueError(
            "jump-process simulation needs a finite nonnegative potential "
            "(the dominating rate bounds fail otherwise)")


@dataclass(frozen=True)
class EventRates:
    """Exact death rates and the dominating bounds used for thinning."""

    death_rates: np.ndarray
    total_birth_bound: float
    hop_bounds: np.ndarray | None = None

    @property
    def total_death(self) -> float:
        return float(np.sum(self.death_rates))


def event_rates(model: ModelParams, energies: np.ndarray,
                kernel: ScaledKernel | None = None) -> EventRates:
    """Rates for a configuration with the given per-particle relative energies."""
    death = np.exp(model.s * np.asarray(energies, dtype=float))
    hop = kernel.mass * death if kernel is not None else None
    return EventRates(death_rates=death,
                      total_birth_bound=model.z * model.volume,
                      hop_bounds=hop)


@dataclass
class Trajectory:
    times: np.ndarray
    counts: np.ndarray
    sum_f: np.ndarray
    pair_counts: np.ndarray
    events: list = field(default_factory=list)
    rejected: int = 0

    def check_event_bookkeeping(self, n_start: int) -> bool:
        """Replays the event log; the count series must match the cumulative
        births minus deaths at every grid time."""
        n = n_start
        k = 0
        times = [t for t, kind, _ in self.events]
        deltas = [{"birth": 1, "death": -1}.get(kind, 0) for _, kind, _ in self.events]
        for i, t in enumerate(self.times):
            while k < len(times) and times[k] <= t:
                n += deltas[k]
                k += 1
            if n != self.counts[i]:
                return False
        return True


class _JumpState:
    """Configuration plus incrementally maintained relative energies."""

    def __init__(self, model: ModelParams, start: Configuration | None):
        self.model = model
        self.state = start.copy() if start is not None else model.new_configuration()
        self.energy: dict[int, float] = {}
        for pid in self.state.ids():
            self.energy[pid] = model.relative_energy(
                self.state.position(pid), self.state, exclude_id=pid)

    def insert(self, x, e_new: float, ids, phis) -> int:
        pid = self.state.insert(x)
        for nid, p in zip(ids, np.atleast_1d(phis)):
            self.energy[nid] += float(p)
        self.energy[pid] = e_new
        return pid

    def remove(self, pid: int) -> None:
        x = self.state.position(pid)
        ids, _, norms = self.state.neighbors_within(
            x, self.model.potential.cutoff, exclude_id=pid)
        phis = self.model.potential.phi_norm(norms)
        for nid, p in zip(ids, np.atleast_1d(phis)):
            self.energy[nid] -= float(p)
        self.state.remove(pid)
        del self.energy[pid]

    def move(self, pid: int, y, e_new: float, ids_n, phis_n) -> None:
        x = self.state.position(pid)
        ids_o, _, norms_o = self.state.neighbors_within(
            x, self.model.potential.cutoff, exclude_id=pid)
        phis_o = self.model.potential.phi_norm(norms_o)
        for nid, p in zip(ids_o, np.atleast_1d(phis_o)):
            self.energy[nid] -= float(p)
        for nid, p in zip(ids_n, np.atleast_1d(phis_n)):
            self.energy[nid] += float(p)
        self.state.move(pid, y)
        self.energy[pid] = e_new

    def rates_vector(self):
        ids = list(self.state._row_id)
        e = np.array([self.energy[pid] for pid in ids]) if ids else np.zeros(0)
        return ids, e


class GlauberSimulator:
    """Birth-and-death process with exact death clocks and thinned births."""

    def __init__(self, model: ModelParams, start: Configuration | None = None,
                 seed: int = 0):
        _require_thinnable(model)
        self.model = model
        self.js = _JumpState(model, start)
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.t = 0.0
        self.events: list = []
        self.rejected = 0

    @property
    def state(self) -> Configuration:
        return self.js.state

    def step(self) -> str:
        """Advance one (possibly rejected) dominated event; returns its kind."""
        m = self.model
        ids, energies = self.js.rates_vector()
        rates = event_rates(m, energies)
        total = rates.total_death + rates.total_birth_bound
        self.t += self.rng.exponential(1.0 / total)
        if self.rng.uniform() * total < rates.total_death:
            k = int(np.searchsorted(np.cumsum(rates.death_rates),
                                    self.rng.uniform() * rates.total_death))
            k = min(k, len(ids) - 1)
            pid = ids[k]
            x = self.js.state.position(pid)
            self.js.remove(pid)
            self.events.append((self.t, "death", x))
            return "death"
        x = m.torus.side * self.rng.uniform(size=m.torus.dimension)
        nb_ids, _, norms = self.js.state.neighbors_within(x, m.potential.cutoff)
        phis = m.potential.phi_norm(norms)
        e_new = float(np.sum(phis)) if norms.size else 0.0
        if self.rng.uniform() < math.exp((m.s - 1.0) * e_new):
            self.js.insert(x, e_new, nb_ids, phis)
            self.events.append((self.t, "birth", x))
            return "birth"
        self.rejected += 1
        return "rejected-birth"

    def first_event_time(self) -> float:
        """Time of the first accepted event (thinning-correctness probe)."""
        while True:
            kind = self.step()
            if kind != "rejected-birth":
                return self.t


class KawasakiSimulator:
    """Hopping process: dominated per-particle hop clocks, thinned targets."""

    def __init__(self, model: ModelParams, kernel: ScaledKernel,
                 start: Configuration | None = None, seed: int = 0):
        _require_thinnable(model)
        self.model = model
        self.kernel = kernel
        self.js = _JumpState(model, start)
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.t = 0.0
        self.events: list = []
        self.rejected = 0

    @property
    def state(self) -> Configuration:
        return self.js.state

    def step(self) -> str:
        m = self.model
        ids, energies = self.js.rates_vector()
        if not ids:
            return "empty"
        rates = event_rates(m, energies, kernel=self.kernel)
        total = float(np.sum(rates.hop_bounds))
        self.t += self.rng.exponential(1.0 / total)
        k = int(np.searchsorted(np.cumsum(rates.hop_bounds), self.rng.uniform() * total))
        k = min(k, len(ids) - 1)
        pid = ids[k]
        x = self.js.state.position(pid)
        y = m.torus.wrap(x + self.kernel.sample(self.rng, 1)[0])
        nb_ids, _, norms = self.js.state.neighbors_within(
            y, m.potential.cutoff, exclude_id=pid)
        phis = m.potential.phi_norm(norms)
        e_new = float(np.sum(phis)) if norms.size else 0.0
        if self.rng.uniform() < math.exp((m.s - 1.0) * e_new):
            self.js.move(pid, y, e_new, nb_ids, phis)
            self.events.append((self.t, "hop", (x, y)))
            return "hop"
        self.rejected += 1
        return "rejected-hop"

    def first_event_time(self) -> float:
        while True:
            kind = self.step()
            if kind == "empty":
                raise RuntimeError("no particles to hop")
            if kind != "rejected-hop":
                return self.t


def _observe(model: ModelParams, pos: np.ndarray, f: TestFunction | None):
    n = pos.shape[0]
    sum_f = float(np.sum(f.eval_many(pos))) if (f is not None and n) else 0.0
    pairs = 0
    if n > 1:
        delta = model.torus.min_image_vec(pos[:, None, :] - pos[None, :, :])
        norms = np.sqrt(np.sum(delta * delta, axis=-1))
        iu = np.triu_indices(n, k=1)
        pairs = int(np.sum(norms[iu] <= model.potential.cutoff))
    return n, sum_f, pairs


def _run(sim, model, horizon: float, grid_points: int, f: TestFunction | None) -> Trajectory:
    times = np.linspace(0.0, horizon, grid_points)
    counts = np.empty(grid_points, dtype=int)
    sum_f = np.empty(grid_points)
    pair_counts = np.empty(grid_points, dtype=int)
    idx = 0
    while idx < grid_points:
        # the current state holds on [sim.t, next event); the process is
        # right-continuous, so a grid time equal to an event time shows the
        # post-event state
        n, sf, pc = _observe(model, sim.state.positions(), f)
        kind = sim.step()
        if kind == "empty":
            while idx < grid_points:
                counts[idx], sum_f[idx], pair_counts[idx] = n, sf, pc
                idx += 1
            break
        while idx < grid_points and times[idx] < sim.t:
            counts[idx], sum_f[idx], pair_counts[idx] = n, sf, pc
            idx += 1
    return Trajectory(times=times, counts=counts, sum_f=sum_f,
                      pair_counts=pair_counts, events=list(sim.events),
                      rejected=sim.rejected)


def simulate_glauber(model: ModelParams, horizon: float, grid_points: int = 1001,
                     f: TestFunction | None = None, start: Configuration | None = None,
                     seed: int = 0) -> Trajectory:
    sim = GlauberSimulator(model, start=start, seed=seed)
    return _run(sim, model, horizon, grid_points, f)


def simulate_kawasaki(model: ModelParams, kernel: ScaledKernel, horizon: float,
                      grid_points: int = 1001, f: TestFunction | None = None,
                      start: Configuration | None = None, seed: int = 0) -> Trajectory:
    sim = KawasakiSimulator(model, kernel, start=start, seed=seed)
    return _run(sim, model, horizon, grid_points, f)


# ---------------------------------------------------------------------------
# stationarity validation
# ---------------------------------------------------------------------------

_OBSERVABLES = ("count", "sum_f", "pairs")


def _trajectory_series(traj: Trajectory, name: str) -> np.ndarray:
    return {"count": traj.counts.astype(float),
            "sum_f": traj.sum_f,
            "pairs": traj.pair_counts.astype(float)}[name]


def _ensemble_series(samples, f: TestFunction | None, name: str) -> np.ndarray:
    m = samples.model
    out = np.empty(len(samples))
    for t, pos in enumerate(samples.samples):
        n, sf, pc = _observe(m, pos, f)
        out[t] = {"count": n, "sum_f": sf, "pairs": pc}[name]
    return out


def stationarity_test(trajectories, samples, f: TestFunction | None = None,
                      burn_time: float = 0.0, observables=_OBSERVABLES) -> list[dict]:
    """Compare time averages of trajectory observables with ensemble averages.

    With several trajectories (independent equilibrium starts) the spread
    across replicas gives the time-side error; a single long trajectory is
    split into time batches instead.  Too few effective samples on either
    side is flagged in the row.
    """
    if not isinstance(trajectories, (list, tuple)):
        trajectories = [trajectories]
    rows = []
    for name in observables:
        if len(trajectories) >= 2:
            means = []
            for traj in trajectories:
                keep = traj.times >= burn_time
                means.append(float(np.mean(_trajectory_series(traj, name)[keep])))
            means = np.asarray(means)
            t_avg = float(np.mean(means))
            t_se = float(np.std(means, ddof=1) / math.sqrt(len(means)))
            flagged = len(means) < 8
        else:
            traj = trajectories[0]
            keep = traj.times >= burn_time
            est = batch_means(_trajectory_series(traj, name)[keep])
            t_avg, t_se = est.value, est.stderr
            flagged = int(np.sum(keep)) < 32
        ens = batch_means(_ensemble_series(samples, f, name))
        se = math.hypot(t_se, ens.stderr)
        z = (t_avg - ens.value) / se if se > 0 else 0.0
        rows.append({"observable": name, "time_avg": t_avg, "time_se": t_se,
                     "ensemble_avg": ens.value, "ensemble_se": ens.stderr,
                     "z_score": z, "flagged": flagged})
    return rows


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Observable time series as CSV (time, N, sum_f)."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "N", "sum_f"])
        for t, n, sf in zip(traj.times, traj.counts, traj.sum_f):
            w.writerow([repr(float(t)), int(n), repr(float(sf))])
