"""Finite measure spaces and Markov shock kernels."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError

ROW_SUM_TOL = 1e-12
PATH_CAP = 10**7


@dataclass(frozen=True, eq=False)
class MeasureSpace:
    """Purely atomic measure: atom parameters plus positive weights.

    Atom parameters are scalars, vectors, or integer label paths; weights
    need not sum to one (any finite positive measure is allowed).
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points)
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("weights must be a nonempty 1-D array")
        if pts.shape[0] != len(w):
            raise ValueError("atom and weight counts differ")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        if pts.dtype.kind == "f" and not np.all(np.isfinite(pts)):
            raise ValueError("atom parameters must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def to_json(self) -> dict:
        return {"atoms": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "MeasureSpace":
        return cls(points=np.asarray(data["atoms"], dtype=float),
                   weights=np.asarray(data["weights"], dtype=float))


def uniform_discretization(N: int, a: float = 0.0, b: float = 1.0) -> MeasureSpace:
    """N midpoint atoms on [a, b], each carrying mass (b-a)/N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not b > a:
        raise ValueError("need b > a")
    pts = a + (b - a) * (np.arange(N) + 0.5) / N
    return MeasureSpace(points=pts, weights=np.full(N, (b - a) / N))


def integrate_scalar(f, m: MeasureSpace) -> float:
    return float(sum(w * f(t) for t, w in zip(m.points, m.weights)))


@dataclass(frozen=True, eq=False)
class StochasticKernel:
    """Markov transition matrix over finitely many shock labels."""

    rows: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.rows, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("kernel must be a square matrix")
        if np.any(P < 0):
            raise ValueError("kernel entries must be nonnegative")
        gap = np.max(np.abs(P.sum(axis=1) - 1.0))
        if gap > ROW_SUM_TOL:
            raise ValueError(f"kernel rows must sum to 1 (off by {gap:.3e})")
        object.__setattr__(self, "rows", P)

    @property
    def n_states(self) -> int:
        return self.rows.shape[0]

    def to_json(self) -> dict:
        return {"rows": self.rows.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "StochasticKernel":
        return cls(rows=np.asarray(data["rows"], dtype=float))


def iterate_kernel(P: StochasticKernel, t: int, omega0: int) -> MeasureSpace:
    """Product measure over length-t shock paths started from omega0.

    Atom parameters are integer label paths of shape (t,); the weight of a
    path is the product of its one-step transition probabilities. Paths with
    zero probability are dropped.
    """
    K = P.n_states
    if t < 1:
        raise ValueError("t must be >= 1")
    if not 0 <= omega0 < K:
        raise ValueError("omega0 out of range")
    if K**t > PATH_CAP:
        raise CapacityError(f"path budget exceeded ({K}^{t} > {PATH_CAP})")
    paths, weights = [], []
    for path in itertools.product(range(K), repeat=t):
        w, prev = 1.0, omega0
        for s in path:
            w *= P.rows[prev, s]
            prev = s
        if w > 0.0:
            paths.append(path)
            weights.append(w)
    return MeasureSpace(points=np.asarray(paths, dtype=np.int64),
                        weights=np.asarray(weights))
