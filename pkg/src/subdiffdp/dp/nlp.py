"""Constraint qualification, multiplier sets, and the value-formula check."""
from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog

from ..convexgeom import SetRep, convexify, distance_to_set, hausdorff_distance, support
from ..errors import CapacityError
from ..nonsmooth import Affine, evaluate, strict_derivative
from ..reporting import CheckReport
from .bellman import policy_multifunction
from .model import DPModel, Multiplier, MultiplierSet, NlpMap, ValueTable
from .sensitivity import grid_spacing, value_function_subdiff

ACTIVE_TOL = 1e-8
RANK_TOL = 1e-10
MFCQ_SLACK = 1e-10
STATIONARITY_TOL = 1e-8
SUBSET_CAP = 2 ** 16


def _full_gradient(f, z: np.ndarray) -> np.ndarray:
    return f.a if isinstance(f, Affine) else f.Q @ z + f.a


def mfcq_check(nlp: NlpMap, xbar, ybar, wi: int, active_tol: float = ACTIVE_TOL):
    """Constraint qualification at a point: (flag, certificate).

    Equality gradients must be linearly independent, and a direction must
    exist that is orthogonal to them while strictly decreasing every active
    inequality. The direction search is a small LP maximizing the worst
    decrease, with the direction box-bounded and the slack capped at 1.
    """
    z = np.concatenate([np.atleast_1d(np.asarray(xbar, dtype=float)),
                        np.atleast_1d(np.asarray(ybar, dtype=float))])
    dim = z.size
    ineqs = nlp.inequalities[wi]
    eqs = nlp.equalities[wi]
    active = [i for i, f in enumerate(ineqs) if evaluate(f, z) >= -active_tol]
    eq_grads = np.array([_full_gradient(f, z) for f in eqs]).reshape(len(eqs), dim)
    cert = {"active": active, "equality_rank": 0, "xi": None, "slack": 0.0}
    if len(eqs):
        rank = int(np.sum(np.linalg.svd(eq_grads, compute_uv=False) > RANK_TOL))
        cert["equality_rank"] = rank
        if rank < len(eqs):
            cert["reason"] = "equality gradients are linearly dependent"
            return False, cert
    # variables: direction xi (dim entries) then the slack s
    c = np.zeros(dim + 1)
    c[-1] = -1.0
    A_ub = []
    b_ub = []
    for i in active:
        g = _full_gradient(ineqs[i], z)
        A_ub.append(np.concatenate([g, [1.0]]))
        b_ub.append(0.0)
    A_eq = None
    b_eq = None
    if len(eqs):
        A_eq = np.hstack([eq_grads, np.zeros((len(eqs), 1))])
        b_eq = np.zeros(len(eqs))
    bounds = [(-1.0, 1.0)] * dim + [(0.0, 1.0)]
    res = linprog(c, A_ub=np.array(A_ub) if A_ub else None,
                  b_ub=np.array(b_ub) if b_ub else None,
                  A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if not res.success:
        cert["reason"] = f"direction search failed: {res.message}"
        return False, cert
    slack = float(res.x[-1])
    cert["xi"] = res.x[:-1].tolist()
    cert["slack"] = slack
    return slack > MFCQ_SLACK, cert


def _value_gradient_drift(model: DPModel, table: ValueTable, xbar, ybar, wi: int):
    """Gradient in the control of stage cost plus discounted continuation."""
    y = np.atleast_1d(np.asarray(ybar, dtype=float))
    gu = strict_derivative(model.fix_state(wi, xbar), y)
    if gu is None:
        raise RuntimeError("stage cost is not strictly differentiable in the control here")
    drift = np.array(gu, dtype=float)
    if model.beta > 0.0:
        P = model.kernel.rows[wi]
        for wj in range(model.n_shocks):
            if P[wj] <= 0.0:
                continue
            gv = strict_derivative(table.closed_form[wj], y)
            if gv is None:
                raise RuntimeError(
                    "value function is not strictly differentiable at the policy point")
            drift = drift + model.beta * P[wj] * gv
    return drift


def lagrange_multiplier_set(nlp: NlpMap, model: DPModel, table: ValueTable,
                            xbar, ybar, wi: int) -> MultiplierSet:
    """Stationarity multipliers by active-subset enumeration.

    Every subset of the active inequalities is solved by least squares
    together with all equalities; solutions with small residual and
    nonnegative inequality weights are kept, de-duplicated.
    """
    ok, cert = mfcq_check(nlp, xbar, ybar, wi)
    if not ok:
        raise RuntimeError("constraint qualification fails at the point; see mfcq_check")
    z = np.concatenate([np.atleast_1d(np.asarray(xbar, dtype=float)),
                        np.atleast_1d(np.asarray(ybar, dtype=float))])
    n = model.n
    ineqs = nlp.inequalities[wi]
    eqs = nlp.equalities[wi]
    m, r = len(ineqs), len(eqs)
    active = cert["active"]
    if 2 ** len(active) > SUBSET_CAP:
        raise CapacityError(f"active-set enumeration needs 2^{len(active)} subsets")
    g0 = _value_gradient_drift(model, table, xbar, ybar, wi)
    y_grads_in = [_full_gradient(f, z)[n:] for f in ineqs]
    y_grads_eq = [_full_gradient(f, z)[n:] for f in eqs]
    found = {}
    for k in range(len(active) + 1):
        for subset in itertools.combinations(active, k):
            cols = [y_grads_in[i] for i in subset] + y_grads_eq
            if cols:
                B = np.column_stack(cols)
                lam, *_ = np.linalg.lstsq(B, -g0, rcond=None)
                res = float(np.max(np.abs(g0 + B @ lam)))
            else:
                lam = np.zeros(0)
                res = float(np.max(np.abs(g0))) if g0.size else 0.0
            if res > STATIONARITY_TOL:
                continue
            if np.any(lam[:len(subset)] < -1e-10):
                continue
            full = np.zeros(m + r)
            for pos, i in enumerate(subset):
                full[i] = max(lam[pos], 0.0)
            full[m:] = lam[len(subset):]
            key = np.round(full, 10).tobytes()
            if key not in found:
                found[key] = Multiplier(lam=full, active=subset, residual=res)
    if not found:
        raise RuntimeError(
            "no stationary multiplier found although the qualification holds")
    return MultiplierSet(entries=tuple(found.values()),
                         n_inequalities=m, n_equalities=r)


def nlp_value_subdiff_check(nlp: NlpMap, model: DPModel, table: ValueTable,
                            xbar, wi: int = 0, dirs=None,
                            tol: float = 1e-6) -> CheckReport:
    """Limiting subgradients of v against the multiplier image.

    Every vertex of the value subdifferential must land in the finite union
    of cost-plus-weighted-constraint x-gradients over the multiplier set;
    central differences of the closed form cross-check the sign conventions,
    and a locally Lipschitz selector upgrades the inclusion to a two-sided
    match.
    """
    x = np.atleast_1d(np.asarray(xbar, dtype=float))
    xi = model.state_index(x)
    policy = policy_multifunction(table, model)
    ybar = policy.selected(xi, wi)
    ok, cert = mfcq_check(nlp, x, ybar, wi)
    hypotheses = {"mfcq": ok}
    if not ok:
        return CheckReport(check="multiplier-value-formula", passed=False,
                           max_residual=np.inf,
                           warnings=["constraint qualification fails at the point"],
                           hypotheses=hypotheses, details={"certificate": cert})
    lam_set = lagrange_multiplier_set(nlp, model, table, x, ybar, wi)
    z = model.pair(x, ybar)
    n = model.n
    gxu = strict_derivative(model.fix_control(wi, ybar), x)
    if gxu is None:
        return CheckReport(check="multiplier-value-formula", passed=False,
                           max_residual=np.inf,
                           warnings=["stage cost is not smooth in the state here"],
                           hypotheses=hypotheses, details={})
    x_grads = [_full_gradient(f, z)[:n] for f in (*nlp.inequalities[wi], *nlp.equalities[wi])]
    points = []
    for e in lam_set.entries:
        p = np.array(gxu, dtype=float)
        for lam_i, gx in zip(e.lam, x_grads):
            p = p + lam_i * gx
        points.append(p)
    rhs = SetRep.finite(np.array(points))
    dv = value_function_subdiff(table, wi, x, kind="limiting")
    residual = max(float(distance_to_set(vert, rhs)) for vert in dv.set.vertices)

    hull = convexify(dv.set)
    fd_ok = True
    fd = []
    for e in np.eye(n):
        d = (table.evaluate_at(x + 1e-6 * e, wi) - table.evaluate_at(x - 1e-6 * e, wi)) / 2e-6
        fd.append(float(d))
        lo = -support(hull, -e)
        hi = support(hull, e)
        fd_ok = fd_ok and (lo - 1e-4 <= d <= hi + 1e-4)

    radius = 2.5 * grid_spacing(model.grid)
    near = [i for i in range(model.n_states)
            if 0 < np.linalg.norm(model.grid[i] - x) <= radius]
    ratios = [float(np.linalg.norm(policy.selector[i, wi] - ybar)
                    / np.linalg.norm(model.grid[i] - x)) for i in near]
    selector_lip = bool(ratios) and max(ratios) <= 1e3
    hypotheses["selector_upper_lipschitz"] = selector_lip
    hypotheses["value_exact"] = dv.exact

    passed = residual <= tol and fd_ok
    details = {"multipliers": lam_set.to_json(), "ybar": np.asarray(ybar).tolist(),
               "fd_gradient": fd, "formula_points": [p.tolist() for p in points],
               "certificate": cert}
    if selector_lip:
        two_sided = float(hausdorff_distance(dv.set, rhs))
        details["two_sided_gap"] = two_sided
        passed = passed and two_sided <= tol
    per_direction = []
    if dirs is not None:
        for h in np.asarray(dirs, dtype=float):
            per_direction.append({"dir": h.tolist(),
                                  "residual": float(support(dv.set, h) - support(rhs, h))})
    warnings = [] if dv.exact else ["value subdifferential is an outer estimate here"]
    return CheckReport(check="multiplier-value-formula", passed=passed,
                       max_residual=residual, per_direction=per_direction,
                       warnings=warnings, hypotheses=hypotheses, details=details)
