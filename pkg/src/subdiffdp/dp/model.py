"""Model containers for the discounted stochastic control engine.

A model couples a finite state grid, a finite shock chain, a per-shock stage
cost over (state, control) pairs, and a constraint map restricting the next
state. Controls and states share the grid: choosing y means moving there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..measure import StochasticKernel
from ..nonsmooth import Affine, Quadratic, compose_affine, evaluate, from_json, to_json

FEAS_TOL = 1e-10
GRID_MATCH_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FiniteMap:
    """Per (state, shock) explicit candidate lists drawn from the grid."""

    lists: tuple  # [state][shock] -> (k, n) array

    def __post_init__(self):
        rows = []
        for per_state in self.lists:
            cells = []
            for cell in per_state:
                pts = np.atleast_2d(np.asarray(cell, dtype=float))
                if pts.size == 0:
                    raise ValueError("candidate list may not be empty")
                cells.append(pts)
            rows.append(tuple(cells))
        object.__setattr__(self, "lists", tuple(rows))

    kind = "finite"

    @classmethod
    def uniform(cls, points, n_states: int, n_shocks: int) -> "FiniteMap":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        row = tuple(pts for _ in range(n_shocks))
        return cls(lists=tuple(row for _ in range(n_states)))

    def is_state_independent(self) -> bool:
        first = self.lists[0]
        return all(
            len(row) == len(first)
            and all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(row, first))
            for row in self.lists[1:]
        )

    def to_json(self) -> dict:
        return {"kind": "finite",
                "lists": [[cell.tolist() for cell in row] for row in self.lists]}


@dataclass(frozen=True, eq=False)
class BoxMap:
    """Per-shock interval bounds on the control, independent of the state."""

    lower: np.ndarray  # (n_shocks, n)
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_2d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("bound shapes differ")
        if np.any(lo >= hi):
            raise ValueError("box needs lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    kind = "box"

    @classmethod
    def of(cls, lower, upper, n_shocks: int = 1) -> "BoxMap":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.ndim == 1:
            lo = np.tile(lo, (n_shocks, 1))
            hi = np.tile(hi, (n_shocks, 1))
        return cls(lower=lo, upper=hi)

    def is_state_independent(self) -> bool:
        return True

    def to_json(self) -> dict:
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


def _smooth_only(exprs):
    exprs = tuple(exprs)
    for f in exprs:
        if not isinstance(f, (Affine, Quadratic)):
            raise ValueError("constraint functions must be affine or quadratic")
    return exprs


@dataclass(frozen=True, eq=False)
class NlpMap:
    """Smooth inequality/equality constraints over the (state, control) pair."""

    inequalities: tuple  # [shock] -> tuple of exprs in (x, y), each <= 0
    equalities: tuple    # [shock] -> tuple of exprs in (x, y), each == 0

    def __post_init__(self):
        object.__setattr__(self, "inequalities",
                           tuple(_smooth_only(row) for row in self.inequalities))
        object.__setattr__(self, "equalities",
                           tuple(_smooth_only(row) for row in self.equalities))
        if len(self.inequalities) != len(self.equalities):
            raise ValueError("per-shock constraint rows out of step")

    kind = "nlp"

    @classmethod
    def shared(cls, inequalities=(), equalities=(), n_shocks: int = 1) -> "NlpMap":
        ineq = tuple(inequalities)
        eq = tuple(equalities)
        return cls(inequalities=tuple(ineq for _ in range(n_shocks)),
                   equalities=tuple(eq for _ in range(n_shocks)))

    def is_state_independent(self, n: int | None = None) -> bool:
        # state-independent iff no constraint couples to the x block
        for row in (*self.inequalities, *self.equalities):
            for f in row:
                k = f.dim // 2 if n is None else n
                if np.any(f.a[:k] != 0):
                    return False
                if isinstance(f, Quadratic) and np.any(f.Q[:k, :] != 0):
                    return False
        return True

    def to_json(self) -> dict:
        return {"kind": "nlp",
                "inequalities": [[to_json(f) for f in row] for row in self.inequalities],
                "equalities": [[to_json(f) for f in row] for row in self.equalities]}


def constraint_from_json(data: dict):
    kind = data["kind"]
    if kind == "finite":
        return FiniteMap(lists=tuple(tuple(np.asarray(c, dtype=float) for c in row)
                                     for row in data["lists"]))
    if kind == "box":
        return BoxMap(lower=np.asarray(data["lower"], dtype=float),
                      upper=np.asarray(data["upper"], dtype=float))
    if kind == "nlp":
        return NlpMap(inequalities=tuple(tuple(from_json(f) for f in row)
                                         for row in data["inequalities"]),
                      equalities=tuple(tuple(from_json(f) for f in row)
                                       for row in data["equalities"]))
    raise ValueError(f"unknown constraint kind: {kind!r}")


@dataclass(frozen=True, eq=False)
class DPModel:
    grid: np.ndarray          # (M, n) states; controls select the next state
    shocks: tuple             # labels
    kernel: StochasticKernel
    beta: float
    costs: tuple              # per shock, expression over concat(x, y)
    constraint: object

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim == 1:
            grid = grid.reshape(-1, 1)
        if grid.ndim != 2 or grid.size == 0 or not np.all(np.isfinite(grid)):
            raise ValueError("grid must be a nonempty finite (M, n) array")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "shocks", tuple(str(s) for s in self.shocks))
        beta = float(self.beta)
        if not 0.0 <= beta < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        object.__setattr__(self, "beta", beta)
        S = len(self.shocks)
        if self.kernel.n_states != S:
            raise ValueError("kernel size does not match the shock labels")
        costs = tuple(self.costs)
        if len(costs) != S:
            raise ValueError("one cost expression per shock required")
        for f in costs:
            if f.dim != 2 * self.n:
                raise ValueError("cost expressions must take the (state, control) pair")
        object.__setattr__(self, "costs", costs)
        self._check_constraint_shape()
        object.__setattr__(self, "_U", self._cost_tensor())
        object.__setattr__(self, "_feasible", self._feasible_table())

    # -- shape helpers -----------------------------------------------------
    @property
    def n(self) -> int:
        return self.grid.shape[1]

    @property
    def n_states(self) -> int:
        return self.grid.shape[0]

    @property
    def n_shocks(self) -> int:
        return len(self.shocks)

    @property
    def state_box(self):
        return self.grid.min(axis=0), self.grid.max(axis=0)

    def _check_constraint_shape(self):
        c = self.constraint
        if isinstance(c, FiniteMap):
            if len(c.lists) != self.n_states or any(len(r) != self.n_shocks for r in c.lists):
                raise ValueError("candidate lists must cover every (state, shock) pair")
            for row in c.lists:
                for cell in row:
                    for y in cell:
                        self.state_index(y)  # candidates must come from the grid
        elif isinstance(c, BoxMap):
            if c.lower.shape != (self.n_shocks, self.n):
                raise ValueError("box bounds must be (n_shocks, n)")
        elif isinstance(c, NlpMap):
            if len(c.inequalities) != self.n_shocks:
                raise ValueError("one constraint row per shock required")
            for row in (*c.inequalities, *c.equalities):
                for f in row:
                    if f.dim != 2 * self.n:
                        raise ValueError("constraints must take the (state, control) pair")
        else:
            raise ValueError("constraint must be FiniteMap, BoxMap or NlpMap")

    # -- point lookups -----------------------------------------------------
    def state_index(self, x, tol: float = GRID_MATCH_TOL) -> int:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = np.max(np.abs(self.grid - x), axis=1)
        i = int(np.argmin(d))
        if d[i] > tol:
            raise ValueError(f"point {x} is not a grid state")
        return i

    def pair(self, x, y) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)),
                               np.atleast_1d(np.asarray(y, dtype=float))])

    def stage_cost(self, wi: int, x, y) -> float:
        return evaluate(self.costs[wi], self.pair(x, y))

    def fix_state(self, wi: int, x):
        """Cost as an expression of the control alone."""
        n = self.n
        A = np.vstack([np.zeros((n, n)), np.eye(n)])
        c = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)), np.zeros(n)])
        return compose_affine(self.costs[wi], A, c)

    def fix_control(self, wi: int, y):
        """Cost as an expression of the state alone."""
        n = self.n
        A = np.vstack([np.eye(n), np.zeros((n, n))])
        c = np.concatenate([np.zeros(n), np.atleast_1d(np.asarray(y, dtype=float))])
        return compose_affine(self.costs[wi], A, c)

    # -- feasibility -------------------------------------------------------
    def feasible(self, x, y, wi: int, tol: float = FEAS_TOL) -> bool:
        c = self.constraint
        if isinstance(c, FiniteMap):
            xi = self.state_index(x)
            cell = c.lists[xi][wi]
            y = np.atleast_1d(np.asarray(y, dtype=float))
            return bool(np.any(np.max(np.abs(cell - y), axis=1) <= max(tol, GRID_MATCH_TOL)))
        if isinstance(c, BoxMap):
            y = np.atleast_1d(np.asarray(y, dtype=float))
            return bool(np.all(y >= c.lower[wi] - tol) and np.all(y <= c.upper[wi] + tol))
        z = self.pair(x, y)
        return (all(evaluate(f, z) <= tol for f in c.inequalities[wi])
                and all(abs(evaluate(f, z)) <= tol for f in c.equalities[wi]))

    def candidate_indices(self, x, wi: int) -> np.ndarray:
        """Grid indices feasible as next states from x under shock wi."""
        c = self.constraint
        if isinstance(c, FiniteMap):
            xi = self.state_index(x)
            return np.array(sorted({self.state_index(y) for y in c.lists[xi][wi]}), dtype=int)
        idx = [yi for yi in range(self.n_states) if self.feasible(x, self.grid[yi], wi)]
        return np.asarray(idx, dtype=int)

    def _feasible_table(self):
        table = []
        for xi in range(self.n_states):
            row = []
            for wi in range(self.n_shocks):
                idx = self.candidate_indices(self.grid[xi], wi)
                if idx.size == 0:
                    raise ValueError(
                        f"constraint map gives an empty feasible set at state {xi}, shock {wi}")
                row.append(idx)
            table.append(tuple(row))
        return tuple(table)

    def _cost_tensor(self) -> np.ndarray:
        M, S = self.n_states, self.n_shocks
        U = np.empty((M, M, S))
        for wi in range(S):
            for xi in range(M):
                for yi in range(M):
                    U[xi, yi, wi] = self.stage_cost(wi, self.grid[xi], self.grid[yi])
        if not np.all(np.isfinite(U)):
            raise ValueError("stage cost is not finite on the grid")
        return U

    def masked_costs(self) -> np.ndarray:
        """Cost tensor with infeasible transitions raised to +inf."""
        M, S = self.n_states, self.n_shocks
        out = np.full((M, M, S), np.inf)
        for xi in range(M):
            for wi in range(S):
                idx = self._feasible[xi][wi]
                out[xi, idx, wi] = self._U[xi, idx, wi]
        return out

    def cost_sup_norm(self) -> float:
        best = 0.0
        for xi in range(self.n_states):
            for wi in range(self.n_shocks):
                idx = self._feasible[xi][wi]
                best = max(best, float(np.max(np.abs(self._U[xi, idx, wi]))))
        return best

    def is_constraint_state_independent(self) -> bool:
        c = self.constraint
        if isinstance(c, NlpMap):
            return c.is_state_independent(self.n)
        return c.is_state_independent()

    # -- wire format -------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "states": self.grid.tolist(),
            "shocks": list(self.shocks),
            "kernel": self.kernel.rows.tolist(),
            "beta": self.beta,
            "costs": [to_json(f) for f in self.costs],
            "constraint": self.constraint.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "DPModel":
        return cls(
            grid=np.asarray(data["states"], dtype=float),
            shocks=tuple(data["shocks"]),
            kernel=StochasticKernel(rows=np.asarray(data["kernel"], dtype=float)),
            beta=float(data["beta"]),
            costs=tuple(from_json(f) for f in data["costs"]),
            constraint=constraint_from_json(data["constraint"]),
        )


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Converged value table plus a per-shock closed-form expression.

    The closed form is a Min over solved branches; it reproduces the table
    on the grid (up to closed_form_gap) and extends it between grid points,
    which is what the sensitivity checks differentiate.
    """

    grid: np.ndarray
    shocks: tuple
    values: np.ndarray        # (M, S)
    closed_form: tuple        # per shock, expression in x
    tol: float
    closed_form_gap: float
    warnings: tuple = ()

    def state_index(self, x, tol: float = GRID_MATCH_TOL) -> int:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = np.max(np.abs(self.grid - x), axis=1)
        i = int(np.argmin(d))
        if d[i] > tol:
            raise ValueError(f"point {x} is not a grid state")
        return i

    def evaluate_at(self, x, wi: int) -> float:
        return evaluate(self.closed_form[wi], np.atleast_1d(np.asarray(x, dtype=float)))

    def to_json(self) -> dict:
        return {
            "values": self.values.tolist(),
            "closed_form": [to_json(f) for f in self.closed_form],
            "tol": self.tol,
            "closed_form_gap": self.closed_form_gap,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Minimizer sets G per (state, shock) with a deterministic selector."""

    G: tuple                  # [state][shock] -> (k, n) array of minimizers
    selector: np.ndarray      # (M, S, n), lexicographically smallest member
    tol_argmin: float | None

    def minimizers(self, xi: int, wi: int) -> np.ndarray:
        return self.G[xi][wi]

    def selected(self, xi: int, wi: int) -> np.ndarray:
        return self.selector[xi, wi]

    def to_json(self) -> dict:
        return {
            "G": [[cell.tolist() for cell in row] for row in self.G],
            "selector": self.selector.tolist(),
            "tol_argmin": self.tol_argmin,
        }


@dataclass(frozen=True)
class Multiplier:
    lam: np.ndarray
    active: tuple
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "lam", np.atleast_1d(np.asarray(self.lam, dtype=float)))
        object.__setattr__(self, "active", tuple(int(i) for i in self.active))
        object.__setattr__(self, "residual", float(self.residual))


@dataclass(frozen=True)
class MultiplierSet:
    entries: tuple
    n_inequalities: int
    n_equalities: int

    def __post_init__(self):
        for e in self.entries:
            if e.lam.size != self.n_inequalities + self.n_equalities:
                raise ValueError("multiplier length mismatch")
            if e.residual > 1e-8:
                raise ValueError("stationarity residual above tolerance")
            if np.any(e.lam[:self.n_inequalities] < -1e-10):
                raise ValueError("inequality multipliers must be nonnegative")

    def vectors(self) -> np.ndarray:
        return np.array([e.lam for e in self.entries])

    def to_json(self) -> dict:
        return {
            "multipliers": [{"lam": e.lam.tolist(), "active": list(e.active),
                             "residual": e.residual} for e in self.entries],
            "n_inequalities": self.n_inequalities,
            "n_equalities": self.n_equalities,
        }
