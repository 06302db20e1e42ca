"""Ising model representation, energy evaluation and QUBO conversion.

Energy convention used throughout the package::

    H(s) = - sum_{i<j} J_ij s_i s_j - sum_i h_i s_i,   s_i in {-1, +1}

Couplings are stored once per unordered pair as parallel arrays
``edges`` (shape ``(m, 2)``, ``edges[k, 0] < edges[k, 1]``) and
``weights`` (shape ``(m,)``), sorted lexicographically by pair. The
diagonal never appears in the coupling list; it lives in ``fields``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional

import numpy as np


class ModelError(ValueError):
    """Raised for malformed models, spin vectors or QUBO matrices."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IsingModel:
    """Sparse Ising model. Immutable once constructed.

    Parameters
    ----------
    n : int
        Number of spins.
    edges : array_like, shape (m, 2)
        Coupled pairs. Either orientation is accepted; pairs are stored
        with the smaller index first.
    weights : array_like, shape (m,)
        Coupling value ``J_ij`` of each pair.
    fields : array_like, shape (n,), optional
        Local fields ``h_i``. Defaults to zeros.
    name, size_L, ground_energy
        Optional metadata. ``ground_energy`` is the certified ``E0``
        when known.
    """

    n: int
    edges: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    fields: Optional[np.ndarray] = None
    name: Optional[str] = None
    size_L: Optional[int] = None
    ground_energy: Optional[float] = None

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ModelError(f"model needs at least one spin, got n={n}")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if edges.shape[0] != weights.shape[0]:
            raise ModelError(
                f"{edges.shape[0]} edges but {weights.shape[0]} weights"
            )
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ModelError(f"coupling index out of range [0, {n})")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ModelError("self-coupling in coupling list; use fields for the diagonal")
        if not np.all(np.isfinite(weights)):
            raise ModelError("non-finite coupling value")

        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        order = np.lexsort((hi, lo))
        lo, hi, weights = lo[order], hi[order], weights[order]
        if lo.size > 1:
            dup = (lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise ModelError(f"duplicate coupling for pair ({lo[k]}, {hi[k]})")
        edges = np.ascontiguousarray(np.stack([lo, hi], axis=1))

        if self.fields is None:
            h = np.zeros(n)
        else:
            h = np.array(self.fields, dtype=np.float64).reshape(-1)
            if h.shape[0] != n:
                raise ModelError(f"fields has length {h.shape[0]}, expected {n}")
            if not np.all(np.isfinite(h)):
                raise ModelError("non-finite field value")

        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", _readonly(edges))
        object.__setattr__(self, "weights", _readonly(np.ascontiguousarray(weights)))
        object.__setattr__(self, "fields", _readonly(h))
        if self.size_L is not None:
            object.__setattr__(self, "size_L", int(self.size_L))
        if self.ground_energy is not None:
            object.__setattr__(self, "ground_energy", float(self.ground_energy))

    @classmethod
    def from_couplings(
        cls,
        n: int,
        couplings: Mapping[tuple[int, int], float],
        fields=None,
        **metadata,
    ) -> "IsingModel":
        """Build a model from a ``{(i, j): J_ij}`` mapping."""
        if couplings:
            edges = np.array(list(couplings.keys()), dtype=np.int64)
            weights = np.array(list(couplings.values()), dtype=np.float64)
        else:
            edges, weights = np.empty((0, 2), dtype=np.int64), np.empty(0)
        return cls(n, edges, weights, fields, **metadata)

    @property
    def n_couplings(self) -> int:
        return int(self.weights.shape[0])

    @property
    def couplings(self) -> dict[tuple[int, int], float]:
        return {
            (int(i), int(j)): float(w)
            for (i, j), w in zip(self.edges, self.weights)
        }

    def replace(self, **changes) -> "IsingModel":
        """Copy with some metadata (or arrays) replaced."""
        kw = dict(
            n=self.n, edges=self.edges, weights=self.weights, fields=self.fields,
            name=self.name, size_L=self.size_L, ground_energy=self.ground_energy,
        )
        kw.update(changes)
        return IsingModel(**kw)

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Symmetric adjacency in CSR form ``(indptr, indices, data)``.

        Both orientations of every pair are present; column indices are
        sorted within each row.
        """
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        data = np.concatenate([self.weights, self.weights])
        order = np.lexsort((cols, rows))
        rows, cols, data = rows[order], cols[order], data[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=self.n), out=indptr[1:])
        return (
            _readonly(indptr),
            _readonly(np.ascontiguousarray(cols, dtype=np.int64)),
            _readonly(np.ascontiguousarray(data)),
        )

    def dense_couplings(self) -> np.ndarray:
        """Dense symmetric ``(n, n)`` coupling matrix with zero diagonal."""
        J = np.zeros((self.n, self.n))
        J[self.edges[:, 0], self.edges[:, 1]] = self.weights
        J[self.edges[:, 1], self.edges[:, 0]] = self.weights
        return J

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr[0])


def as_spins(s, n: Optional[int] = None) -> np.ndarray:
    """Validate a spin configuration and return it as an int8 array."""
    arr = np.asarray(s)
    if arr.ndim != 1:
        raise ModelError(f"spin configuration must be 1-D, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ModelError(f"spin configuration has length {arr.shape[0]}, model has n={n}")
    if not np.all((arr == 1) | (arr == -1)):
        raise ModelError("spin values must be exactly +1 or -1")
    return arr.astype(np.int8)


def energy(model: IsingModel, s) -> float:
    """Ising energy ``-sum_{i<j} J_ij s_i s_j - sum_i h_i s_i``."""
    spins = as_spins(s, model.n).astype(np.float64)
    u, v = model.edges[:, 0], model.edges[:, 1]
    pair = float(np.dot(model.weights, spins[u] * spins[v]))
    return -pair - float(np.dot(model.fields, spins))


@dataclass(frozen=True, eq=False)
class QuboProblem:
    """QUBO objective ``sum_{i<=j} Q_ij x_i x_j`` over ``x in {0, 1}^n``.

    ``matrix`` maps ``(i, j)`` with ``i <= j`` to ``Q_ij``; the diagonal
    holds the linear terms.
    """

    n: int
    matrix: Mapping[tuple[int, int], float]

    def __post_init__(self):
        if int(self.n) < 1:
            raise ModelError(f"QUBO needs at least one variable, got n={self.n}")
        clean = {}
        for (i, j), q in self.matrix.items():
            i, j = int(i), int(j)
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ModelError(f"QUBO index ({i}, {j}) out of range [0, {self.n})")
            if i > j:
                raise ModelError(f"QUBO entry ({i}, {j}) is below the diagonal")
            clean[(i, j)] = float(q)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "matrix", clean)

    @classmethod
    def from_dense(cls, Q) -> "QuboProblem":
        """Fold a square matrix into upper-triangular form (``Q_ij + Q_ji``)."""
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ModelError("QUBO matrix must be square")
        U = np.triu(Q) + np.tril(Q, -1).T
        i, j = np.nonzero(U)
        return cls(Q.shape[0], {(int(a), int(b)): float(U[a, b]) for a, b in zip(i, j)})

    def objective(self, x) -> float:
        x = np.asarray(x)
        if x.shape != (self.n,) or not np.all((x == 0) | (x == 1)):
            raise ModelError("assignment must be a length-n 0/1 vector")
        return float(sum(q * x[i] * x[j] for (i, j), q in self.matrix.items()))


def qubo_to_ising(q: QuboProblem) -> tuple[IsingModel, float]:
    """Convert a QUBO into an Ising model plus constant offset.

    With ``s_i = 2 x_i - 1`` the QUBO objective equals
    ``energy(model, s) + offset`` for every assignment.
    """
    h = np.zeros(q.n)
    couplings: dict[tuple[int, int], float] = {}
    offset = 0.0
    for (i, j), v in q.matrix.items():
        if i == j:
            h[i] -= v / 2.0
            offset += v / 2.0
        else:
            couplings[(i, j)] = couplings.get((i, j), 0.0) - v / 4.0
            h[i] -= v / 4.0
            h[j] -= v / 4.0
            offset += v / 4.0
    couplings = {k: w for k, w in couplings.items() if w != 0.0}
    return IsingModel.from_couplings(q.n, couplings, h), offset
