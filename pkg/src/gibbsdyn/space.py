"""Periodic-box geometry, point configurations, and neighbor search.

Positions are numpy arrays of shape ``(d,)`` with every coordinate wrapped
into ``[0, L)``.  All pair displacements use the minimum-image convention,
so interaction and kernel ranges must never exceed ``L/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Torus",
    "Displacement",
    "Configuration",
    "min_image",
]


@dataclass(frozen=True)
class Torus:
    """A d-dimensional cube of side L with periodic boundary conditions."""

    dimension: int
    side: float

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if not self.side > 0:
            raise ValueError("side must be positive")

    @property
    def volume(self) -> float:
        return self.side ** self.dimension

    def wrap(self, x) -> np.ndarray:
        """Wrap coordinates into [0, L) per axis."""
        x = np.asarray(x, dtype=float)
        return np.mod(x, self.side)

    def min_image_vec(self, delta) -> np.ndarray:
        """Minimum-image representative of a difference vector.

        Components land in (-L/2, L/2]; ties at half the box go to +L/2.
        Works on arrays of shape (..., d).
        """
        r = np.mod(np.asarray(delta, dtype=float), self.side)
        return np.where(r > 0.5 * self.side, r - self.side, r)

    def min_image_norm(self, delta) -> np.ndarray:
        v = self.min_image_vec(delta)
        return np.sqrt(np.sum(v * v, axis=-1))

    def uniform_point(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, self.side, size=self.dimension)

    def grid_points(self, per_axis: int, offset: float = 0.5) -> np.ndarray:
        """Evenly spaced lattice of per_axis**d points, offset in cell units."""
        ax = (np.arange(per_axis) + offset) * (self.side / per_axis)
        mesh = np.meshgrid(*([ax] * self.dimension), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class Displacement:
    """A minimum-image difference vector together with its Euclidean norm."""

    vector: np.ndarray
    norm: float


def min_image(p, q, torus: Torus) -> Displacement:
    """Minimum-image representative of p - q on the torus."""
    v = torus.min_image_vec(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    return Displacement(vector=v, norm=float(np.sqrt(np.dot(v, v))))


class Configuration:
    """A finite simple point configuration with stable ids and a cell list.

    Points carry integer ids so "the particle at x" stays well defined while
    the configuration is mutated by a sampler.  The cell list partitions the
    torus into ``ncells**d`` cubes of edge >= ``cell_size`` and is kept exactly
    consistent with the stored points.  Mutation is single-owner; use
    :meth:`copy` before sharing across workers.
    """

    def __init__(self, torus: Torus, cell_size: float | None = None):
        self.torus = torus
        if cell_size is None:
            cell_size = torus.side / 8.0
        if not 0 < cell_size <= torus.side:
            raise ValueError("cell_size must lie in (0, side]")
        self.ncells = max(1, int(math.floor(torus.side / cell_size)))
        self.cell_edge = torus.side / self.ncells
        d = torus.dimension
        self._pos = np.empty((16, d), dtype=float)
        self._row_id: list[int] = []
        self._id_row: dict[int, int] = {}
        self._cells: dict[tuple, list[int]] = {}
        self._next_id = 0
        self._offset_cache: dict[int, np.ndarray] = {}

    # -- basic queries ---------------------------------------------------

    def __len__(self) -> int:
        return len(self._row_id)

    def ids(self) -> list[int]:
        return sorted(self._id_row)

    def __contains__(self, pid: int) -> bool:
        return pid in self._id_row

    def position(self, pid: int) -> np.ndarray:
        return self._pos[self._id_row[pid]].copy()

    def positions(self) -> np.ndarray:
        """Copy of all positions, ordered by ascending id. Shape (N, d)."""
        ids = self.ids()
        out = np.empty((len(ids), self.torus.dimension))
        for k, pid in enumerate(ids):
            out[k] = self._pos[self._id_row[pid]]
        return out

    def cell_of(self, x) -> tuple:
        x = self.torus.wrap(x)
        idx = np.floor(x / self.cell_edge).astype(int) % self.ncells
        return tuple(int(i) for i in idx)

    # -- mutation --------------------------------------------------------

    def insert(self, x) -> int:
        """Add a point; returns its new id.

        Raises ValueError on an exact duplicate (the configuration must stay
        a simple point set).
        """
        x = self.torus.wrap(np.asarray(x, dtype=float))
        key = self.cell_of(x)
        for pid in self._cells.get(key, ()):
            if np.array_equal(self._pos[self._id_row[pid]], x):
                raise ValueError("duplicate point insertion (degenerate configuration)")
        row = len(self._row_id)
        if row == self._pos.shape[0]:
            self._pos = np.concatenate([self._pos, np.empty_like(self._pos)], axis=0)
        self._pos[row] = x
        pid = self._next_id
        self._next_id += 1
        self._row_id.append(pid)
        self._id_row[pid] = row
        self._cells.setdefault(key, []).append(pid)
        return pid

    def remove(self, pid: int) -> None:
        if pid not in self._id_row:
            raise KeyError(f"no particle with id {pid}")
        row = self._id_row.pop(pid)
        key = self.cell_of(self._pos[row])
        self._cells[key].remove(pid)
        if not self._cells[key]:
            del self._cells[key]
        last = len(self._row_id) - 1
        if row != last:
            moved = self._row_id[last]
            self._pos[row] = self._pos[last]
            self._row_id[row] = moved
            self._id_row[moved] = row
        self._row_id.pop()

    def move(self, pid: int, x) -> None:
        """Relocate an existing particle, keeping its id."""
        if pid not in self._id_row:
            raise KeyError(f"no particle with id {pid}")
        x = self.torus.wrap(np.asarray(x, dtype=float))
        row = self._id_row[pid]
        old_key = self.cell_of(self._pos[row])
        new_key = self.cell_of(x)
        if new_key != old_key:
            self._cells[old_key].remove(pid)
            if not self._cells[old_key]:
                del self._cells[old_key]
            self._cells.setdefault(new_key, []).append(pid)
        self._pos[row] = x

    def copy(self) -> "Configuration":
        other = Configuration(self.torus, cell_size=self.cell_edge)
        other.ncells = self.ncells
        other.cell_edge = self.cell_edge
        other._pos = self._pos.copy()
        other._row_id = list(self._row_id)
        other._id_row = dict(self._id_row)
        other._cells = {k: list(v) for k, v in self._cells.items()}
        other._next_id = self._next_id
        return other

    # -- neighbor search ---------------------------------------------------

    def neighbors_within(self, x, r: float, exclude_id: int | None = None,
                         method: str = "auto"):
        """Points at minimum-image distance <= r from x.

        Returns ``(ids, vectors, norms)`` sorted by id, where ``vectors`` are
        the minimum-image representatives of (point - x).  Requires
        ``r <= L/2`` (beyond that the minimum image is ambiguous).  The cell
        index is consulted only above a small population ("auto"); "cells"
        and "brute" force either path, with identical results.
        """
        if r > 0.5 * self.torus.side:
            raise ValueError("neighbor radius must be <= L/2")
        x = self.torus.wrap(np.asarray(x, dtype=float))
        n = len(self._row_id)
        if method == "brute" or (method == "auto" and n <= 64):
            cand = list(self._row_id)
        else:
            cand = self._candidate_ids(x, r)
        if not cand:
            d = self.torus.dimension
            return (np.empty(0, dtype=int), np.empty((0, d)), np.empty(0))
        cand.sort()
        rows = [self._id_row[pid] for pid in cand]
        vec = self.torus.min_image_vec(self._pos[rows] - x)
        norms = np.sqrt(np.sum(vec * vec, axis=1))
        keep = norms <= r
        if exclude_id is not None and exclude_id in self._id_row:
            keep &= np.array(cand, dtype=int) != exclude_id
        ids = np.array(cand, dtype=int)[keep]
        return ids, vec[keep], norms[keep]

    def _offsets(self, shells: int) -> np.ndarray:
        cached = self._offset_cache.get(shells)
        if cached is None:
            offsets = np.arange(-shells, shells + 1)
            mesh = np.meshgrid(*([offsets] * self.torus.dimension), indexing="ij")
            cached = np.stack([m.ravel() for m in mesh], axis=-1)
            self._offset_cache[shells] = cached
        return cached

    def _candidate_ids(self, x, r: float) -> list[int]:
        shells = int(math.ceil(r / self.cell_edge))
        if 2 * shells + 1 >= self.ncells:
            return list(self._id_row)
        base = np.floor(x / self.cell_edge).astype(int)
        out: list[int] = []
        for off in (base + self._offsets(shells)) % self.ncells:
            got = self._cells.get(tuple(off))
            if got:
                out.extend(got)
        return out

    # -- invariants --------------------------------------------------------

    def check_cells(self) -> bool:
        """Verify the cell index exactly partitions the stored points."""
        seen = []
        for key, pids in self._cells.items():
            for pid in pids:
                if self.cell_of(self._pos[self._id_row[pid]]) != key:
                    return False
                seen.append(pid)
        return sorted(seen) == self.ids()
