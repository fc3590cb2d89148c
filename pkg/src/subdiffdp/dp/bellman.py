"""Bellman operator, value iteration, horizon oracle and policy extraction."""
from __future__ import annotations

import json

import numpy as np

from ..measure import iterate_kernel
from ..nonsmooth import Affine, Min, Quadratic, Sum, compose_affine, evaluate, to_json
from .model import DPModel, FiniteMap, NlpMap, PolicyTable, ValueTable

POLISH_ITERS = 50
POLISH_GRAD_STEP = 1e-7
ACTIVE_TOL = 1e-8


def _as_table(v, model: DPModel) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (model.n_states, model.n_shocks):
        raise ValueError(f"table must have shape ({model.n_states}, {model.n_shocks})")
    return arr


def bellman_operator(v, model: DPModel) -> np.ndarray:
    """One sweep of (Tv)(x, w) = min over feasible y of u + beta E[v(y, .)|w]."""
    v = _as_table(v, model)
    EV = v @ model.kernel.rows.T          # EV[y, w] = E[v(y, .) | w]
    scores = model.masked_costs() + model.beta * EV[None, :, :]
    out = scores.min(axis=1)
    if not np.all(np.isfinite(out)):
        raise ValueError("Bellman sweep produced non-finite values")
    return out


def value_iteration(model: DPModel, tol: float = 1e-8, max_iter: int = 200000):
    """Iterate to the fixed point; stop on the a-posteriori contraction bound.

    The returned table is within tol of the fixed point of the grid problem
    in the sup norm. beta = 0 needs exactly one sweep.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros((model.n_states, model.n_shocks))
    iters = 0
    while True:
        v1 = bellman_operator(v, model)
        iters += 1
        delta = float(np.max(np.abs(v1 - v)))
        v = v1
        if model.beta == 0.0 or model.beta / (1.0 - model.beta) * delta <= tol:
            break
        if iters >= max_iter:
            raise RuntimeError("value iteration failed to converge")
    closed, gap, warnings = _materialize_closed_form(model, v, tol)
    table = ValueTable(grid=model.grid, shocks=model.shocks, values=v,
                       closed_form=closed, tol=tol, closed_form_gap=gap,
                       warnings=tuple(warnings))
    return table, iters


def _plus_const(f, c: float):
    if c == 0.0:
        return f
    if isinstance(f, Affine):
        return Affine(f.a, f.b + c)
    if isinstance(f, Quadratic):
        return Quadratic(f.Q, f.a, f.b + c)
    return Sum((f, Affine(np.zeros(f.dim), c)))


def _branch_key(f) -> str:
    return json.dumps(to_json(f), sort_keys=True)


def _nlp_branches(model: DPModel, v: np.ndarray, wi: int, warnings: list):
    """One branch per grid state, substituting the solved active set.

    Active affine constraints are solved for the control as an affine
    function of the state and composed into the cost, so differentiating a
    branch reproduces the constrained sensitivity. States whose active set
    cannot be solved this way fall back to a frozen-control branch.
    """
    c = model.constraint
    n = model.n
    EV = v @ model.kernel.rows.T
    branches = {}
    for xi in range(model.n_states):
        x = model.grid[xi]
        idx = model._feasible[xi][wi]
        vals = model._U[xi, idx, wi] + model.beta * EV[idx, wi]
        yi = int(idx[int(np.argmin(vals))])
        y = model.grid[yi]
        cont = float(model.beta * (model.kernel.rows[wi] @ v[yi]))
        z = model.pair(x, y)
        rows_x, rows_y, rhs = [], [], []
        solvable = True
        active = []
        for f in (*c.inequalities[wi], *c.equalities[wi]):
            val = evaluate(f, z)
            is_eq = f in c.equalities[wi]
            if not is_eq and val < -ACTIVE_TOL:
                continue
            active.append(f)
            if not isinstance(f, Affine):
                solvable = False
                continue
            rows_x.append(f.a[:n])
            rows_y.append(f.a[n:])
            rhs.append(f.b)
        if active and solvable and rows_y:
            Ay = np.array(rows_y)
            Ax = np.array(rows_x)
            b = np.array(rhs)
            pinv = np.linalg.pinv(Ay)
            Yx = -pinv @ Ax
            Y0 = -pinv @ b
            consistent = (np.max(np.abs(Ay @ Yx + Ax)) <= 1e-8
                          and np.max(np.abs(Ay @ Y0 + b)) <= 1e-8)
            if consistent:
                A = np.vstack([np.eye(n), Yx])
                cvec = np.concatenate([np.zeros(n), Y0])
                branch = compose_affine(model.costs[wi], A, cvec)
                if model.beta > 0.0:
                    branch = _plus_const(branch, cont)
                    warnings.append(
                        "closed form holds the continuation fixed along solved branches")
                branches[_branch_key(branch)] = branch
                continue
            warnings.append("active constraints are inconsistent; control frozen instead")
        elif active and not solvable:
            warnings.append("active quadratic constraint; control frozen instead")
        branch = _plus_const(model.fix_control(wi, y), cont)
        branches[_branch_key(branch)] = branch
    return list(branches.values())


def _materialize_closed_form(model: DPModel, v: np.ndarray, tol: float):
    warnings: list = []
    EV = v @ model.kernel.rows.T
    exprs = []
    for wi in range(model.n_shocks):
        if isinstance(model.constraint, NlpMap):
            branches = _nlp_branches(model, v, wi, warnings)
        else:
            if isinstance(model.constraint, FiniteMap) and \
                    not model.constraint.is_state_independent():
                warnings.append(
                    "state-dependent candidate lists: closed form uses their union")
            idx = sorted({int(yi) for xi in range(model.n_states)
                          for yi in model._feasible[xi][wi]})
            branches = {}
            for yi in idx:
                branch = _plus_const(model.fix_control(wi, model.grid[yi]),
                                     float(model.beta * EV[yi, wi]))
                branches[_branch_key(branch)] = branch
            branches = list(branches.values())
        exprs.append(branches[0] if len(branches) == 1 else Min(tuple(branches)))
    gap = max(abs(evaluate(exprs[wi], model.grid[xi]) - v[xi, wi])
              for xi in range(model.n_states) for wi in range(model.n_shocks))
    if gap > max(tol, 1e-9):
        warnings.append(f"closed form drifts from the table on the grid (gap={gap:.3e})")
    return tuple(exprs), float(gap), list(dict.fromkeys(warnings))


def finite_horizon_oracle(model: DPModel, T: int, x, omega: int) -> float:
    """Exact optimum of the horizon-T problem by backward induction.

    Plans are adapted to the shock history; the recursion runs over the path
    tree that iterate_kernel enumerates (which also enforces the path cap).
    """
    if T < 1:
        raise ValueError("horizon must be >= 1")
    if not 0 <= omega < model.n_shocks:
        raise ValueError("shock index out of range")
    iterate_kernel(model.kernel, T, omega)
    xi0 = model.state_index(x)
    P = model.kernel.rows
    memo: dict = {}

    def J(t: int, xi: int, wi: int) -> float:
        if t == T:
            return 0.0
        key = (t, xi, wi)
        if key not in memo:
            idx = model._feasible[xi][wi]
            best = np.inf
            for yi in idx:
                cont = sum(P[wi, wj] * J(t + 1, int(yi), wj)
                           for wj in range(model.n_shocks) if P[wi, wj] > 0.0)
                best = min(best, model._U[xi, yi, wi] + model.beta * cont)
            memo[key] = best
        return memo[key]

    return float(J(0, xi0, omega))


def policy_multifunction(table: ValueTable, model: DPModel,
                         tol_argmin: float | None = None) -> PolicyTable:
    """All grid controls attaining the Bellman minimum, plus a selector."""
    v = table.values
    EV = v @ model.kernel.rows.T
    G_rows = []
    selector = np.empty((model.n_states, model.n_shocks, model.n))
    for xi in range(model.n_states):
        row = []
        for wi in range(model.n_shocks):
            idx = model._feasible[xi][wi]
            vals = model._U[xi, idx, wi] + model.beta * EV[idx, wi]
            best = float(np.min(vals))
            tau = tol_argmin if tol_argmin is not None else 1e-8 * (1.0 + abs(best))
            ys = model.grid[idx[vals <= best + tau]]
            order = np.lexsort(ys.T[::-1])
            row.append(ys)
            selector[xi, wi] = ys[order[0]]
        G_rows.append(tuple(row))
    return PolicyTable(G=tuple(G_rows), selector=selector, tol_argmin=tol_argmin)


def control_objective(model: DPModel, table: ValueTable, x, wi: int):
    """Continuous control objective u(x, y) + beta E[v(y, .)|w].

    The continuation comes from the closed form, so the objective is defined
    between grid points as well.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    P = model.kernel.rows[wi]

    def J(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        cont = 0.0
        if model.beta > 0.0:
            cont = sum(P[wj] * table.evaluate_at(y, wj)
                       for wj in range(model.n_shocks) if P[wj] > 0.0)
        return model.stage_cost(wi, x, y) + model.beta * cont
    return J


def _nlp_repair(model: DPModel, wi: int, x, y):
    """Pull a point back onto the constraint set via linearized corrections."""
    c = model.constraint
    n = model.n
    y = np.array(y, dtype=float)
    for _ in range(10):
        z = model.pair(x, y)
        rows, r = [], []
        for f in c.inequalities[wi]:
            val = evaluate(f, z)
            if val > 1e-12:
                g = f.a if isinstance(f, Affine) else f.Q @ z + f.a
                rows.append(g[n:])
                r.append(val)
        for f in c.equalities[wi]:
            val = evaluate(f, z)
            g = f.a if isinstance(f, Affine) else f.Q @ z + f.a
            rows.append(g[n:])
            r.append(val)
        if not rows:
            return y
        A = np.array(rows)
        step, *_ = np.linalg.lstsq(A, -np.array(r), rcond=None)
        y = y + step
        if np.max(np.abs(step)) < 1e-14:
            break
    return y if model.feasible(x, y, wi, tol=1e-9) else None


def polish(model: DPModel, table: ValueTable, x, wi: int, y0):
    """Projected-gradient refinement of a candidate control.

    Gradients are central differences of the continuous objective; steps are
    backtracked until they decrease it, and iterates are projected back into
    the constraint set (box clamp, or linearized repair for smooth maps).
    """
    J = control_objective(model, table, x, wi)
    lo, hi = model.state_box
    c = model.constraint

    def project(y):
        y = np.clip(y, lo, hi)
        if isinstance(c, NlpMap):
            return _nlp_repair(model, wi, x, y)
        if hasattr(c, "lower"):
            return np.clip(y, c.lower[wi], c.upper[wi])
        return y

    y = project(np.array(y0, dtype=float))
    if y is None:
        return np.array(y0, dtype=float), J(np.asarray(y0, dtype=float))
    fy = J(y)
    step = 0.25 * max(1.0, float(np.max(hi - lo)))
    for _ in range(POLISH_ITERS):
        g = np.array([(J(y + POLISH_GRAD_STEP * e) - J(y - POLISH_GRAD_STEP * e))
                      / (2 * POLISH_GRAD_STEP) for e in np.eye(model.n)])
        gnorm = float(g @ g)
        if gnorm <= 1e-20:
            break
        t = step
        moved = False
        for _ in range(30):
            cand = project(y - t * g)
            if cand is not None:
                fc = J(cand)
                if fc <= fy - 1e-4 * t * gnorm:
                    y, fy, moved = cand, fc, True
                    step = 2.0 * t
                    break
            t *= 0.5
        if not moved:
            break
    return y, fy


def policy_at(model: DPModel, table: ValueTable, x, wi: int, refine: bool = True):
    """Solve the control problem at an arbitrary state.

    Returns (control, value, diagnostics). Grid candidates seed the search;
    refinement may move the control off the grid when that lowers the
    continuous objective.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(model.constraint, FiniteMap):
        xi = model.state_index(x)
        idx = model._feasible[xi][wi]
    else:
        idx = model.candidate_indices(x, wi)
        if idx.size == 0:
            raise ValueError("no feasible grid candidate at this state")
    J = control_objective(model, table, x, wi)
    vals = np.array([J(model.grid[yi]) for yi in idx])
    best = int(np.argmin(vals))
    y_grid = model.grid[idx[best]]
    val_grid = float(vals[best])
    if not refine or isinstance(model.constraint, FiniteMap):
        return y_grid, val_grid, {"polish_gap": 0.0}
    y_pol, val_pol = polish(model, table, x, wi, y_grid)
    if val_pol < val_grid - 1e-12:
        return y_pol, float(val_pol), {"polish_gap": val_grid - float(val_pol)}
    return y_grid, val_grid, {"polish_gap": 0.0}
