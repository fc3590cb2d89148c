"""Set-valued integration against atomic measures and integral-gradient rules.

The selector integral of a set-valued map is realized by iterated Minkowski
sums of the weighted atom sets; its convexified counterpart sums hulls and is
always a single polytope. The checks compare subdifferentials of integral
functionals against integrals of atom subdifferentials, in convexified,
strict, and unconvexified form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convexgeom import (
    SetRep,
    convexify,
    default_directions,
    distance_to_set,
    hausdorff_distance,
    minkowski_sum,
    scale as geom_scale,
    support,
)
from .measure import MeasureSpace
from .nonsmooth import Scale, Sum, clarke_gradient, limiting_subdiff, strict_derivative
from .reporting import CheckReport

INCLUSION_TOL = 1e-9
STRICT_TOL = 1e-10
GAP_ZERO = 1e-14


@dataclass(frozen=True, eq=False)
class SetValuedMap:
    """One set per measure atom, all in the same ambient dimension."""

    dim: int
    sets: tuple

    def __post_init__(self):
        sets = tuple(self.sets)
        if not sets:
            raise ValueError("map needs at least one atom set")
        for S in sets:
            if S.dim != self.dim:
                raise ValueError("atom set dimension mismatch")
        object.__setattr__(self, "sets", sets)

    def __len__(self):
        return len(self.sets)


@dataclass(frozen=True, eq=False)
class Integrand:
    """One expression per measure atom; x-dimension shared."""

    dim: int
    exprs: tuple

    def __post_init__(self):
        exprs = tuple(self.exprs)
        if not exprs:
            raise ValueError("integrand needs at least one atom")
        for f in exprs:
            if f.dim != self.dim:
                raise ValueError("integrand expression dimension mismatch")
        object.__setattr__(self, "exprs", exprs)

    def __len__(self):
        return len(self.exprs)


def _check_atoms(n_sets: int, m: MeasureSpace):
    if n_sets != len(m):
        raise ValueError(f"{n_sets} atom entries against {len(m)} measure atoms")


def integral_functional(phi: Integrand, m: MeasureSpace):
    """The expression x -> sum_i w_i phi_i(x)."""
    _check_atoms(len(phi), m)
    return Sum(tuple(Scale(w, f) for f, w in zip(phi.exprs, m.weights)))


def aumann_integral(gamma: SetValuedMap, m: MeasureSpace) -> SetRep:
    """Selector integral: all weighted selector sums, as a union of pieces."""
    _check_atoms(len(gamma), m)
    out = None
    for S, w in zip(gamma.sets, m.weights):
        term = geom_scale(S, w)
        out = term if out is None else minkowski_sum(out, term)
    return out


def wstar_integral(gamma: SetValuedMap, m: MeasureSpace) -> SetRep:
    """Convexified integral: weighted Minkowski sum of atom hulls."""
    _check_atoms(len(gamma), m)
    out = None
    for S, w in zip(gamma.sets, m.weights):
        term = convexify(geom_scale(S, w))
        out = term if out is None else convexify(minkowski_sum(out, term))
    return out


def _unit_dirs(dim, dirs):
    if dirs is None:
        dirs = default_directions(dim)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms < 1e-15):
        raise ValueError("zero direction")
    return dirs / norms[:, None]


def check_supremum_representation(gamma: SetValuedMap, m: MeasureSpace, dirs=None,
                                  tol: float = INCLUSION_TOL) -> CheckReport:
    """Support of the selector integral equals the weighted sum of supports."""
    A = aumann_integral(gamma, m)
    dirs = _unit_dirs(gamma.dim, dirs)
    per_dir, worst = [], 0.0
    for h in dirs:
        want = float(sum(w * support(S, h) for S, w in zip(gamma.sets, m.weights)))
        got = support(A, h)
        res = abs(got - want)
        worst = max(worst, res)
        per_dir.append({"dir": h.tolist(), "residual": res})
    return CheckReport(check="selector-support-additivity", passed=worst <= tol,
                       max_residual=worst, per_direction=per_dir)


def check_lyapunov_convexification(family, Ns, dirs=None, ratio: float = 0.75) -> CheckReport:
    """Convexification gap of a refining family shrinks geometrically.

    family(N) must return (MeasureSpace, SetValuedMap) at refinement N. The
    gap is the Hausdorff distance between the selector integral and its
    convexification; it must be nonincreasing along Ns and drop by the ratio
    across each doubling pair present in Ns.
    """
    Ns = list(Ns)
    gaps = {}
    for N in Ns:
        m, gamma = family(N)
        A = aumann_integral(gamma, m)
        W = wstar_integral(gamma, m)
        gaps[N] = hausdorff_distance(A, W, dirs)
    table = [{"N": N, "gap": gaps[N]} for N in Ns]
    warnings = []
    ok = True
    seq = [gaps[N] for N in Ns]
    for a, b in zip(seq, seq[1:]):
        if b > a + 1e-12:
            ok = False
            warnings.append(f"gap increased from {a:.3e} to {b:.3e}")
    worst_ratio = 0.0
    for N in Ns:
        if 2 * N in gaps and gaps[N] > GAP_ZERO:
            r = gaps[2 * N] / gaps[N]
            worst_ratio = max(worst_ratio, r)
            if r > ratio + 1e-12:
                ok = False
                warnings.append(f"gap ratio {r:.3f} at N={N} exceeds {ratio}")
    return CheckReport(check="refinement-convexification-gap", passed=ok,
                       max_residual=worst_ratio, warnings=warnings,
                       details={"table": table})


def _atom_subdiffs(phi: Integrand, m: MeasureSpace, xbar, kind: str):
    fn = clarke_gradient if kind == "clarke" else limiting_subdiff
    return [fn(f, xbar) for f in phi.exprs]


def clarke_leibniz_check(phi: Integrand, m: MeasureSpace, xbar, dirs=None,
                         tol: float = INCLUSION_TOL) -> CheckReport:
    """Generalized gradient of the integral sits inside the integral of
    generalized gradients; equality when every atom is regular."""
    _check_atoms(len(phi), m)
    functional = integral_functional(phi, m)
    L = clarke_gradient(functional, xbar)
    L_lim = limiting_subdiff(functional, xbar)
    atom = _atom_subdiffs(phi, m, xbar, "clarke")
    R = wstar_integral(SetValuedMap(dim=phi.dim, sets=tuple(a.set for a in atom)), m)
    all_regular = all(a.regular for a in atom)
    all_exact = all(a.exact for a in atom)
    dirs = _unit_dirs(phi.dim, dirs)
    warnings = []
    if not all_exact:
        warnings.append("an atom subdifferential is inexact; equality not asserted")
    if not L.exact:
        warnings.append("integral gradient is an outer estimate; inclusion only")
    assert_equality = all_regular and all_exact and L.exact
    per_dir, worst, gap = [], 0.0, 0.0
    for h in dirs:
        sL, sR = support(L.set, h), support(R, h)
        res = max(0.0, sL - sR)
        if assert_equality:
            res = abs(sL - sR)
        worst = max(worst, res)
        gap = max(gap, sR - sL)
        per_dir.append({"dir": h.tolist(), "residual": res})
    # strictness evidence: how much the convexified right side exceeds the
    # unconvexified gradient of the integral
    limiting_gap = hausdorff_distance(L_lim.set, R) if L_lim.exact else 0.0
    return CheckReport(check="integral-gradient-inclusion", passed=worst <= tol,
                       max_residual=worst, per_direction=per_dir, warnings=warnings,
                       hypotheses={"all_atoms_regular": all_regular,
                                   "all_atoms_exact": all_exact,
                                   "integral_exact": L.exact,
                                   "equality_asserted": assert_equality},
                       details={"strictness_gap": gap, "limiting_gap": limiting_gap})


def strict_leibniz(phi: Integrand, m: MeasureSpace, xbar, tol: float = STRICT_TOL) -> np.ndarray:
    """Gradient interchange for strictly differentiable atoms.

    Returns the common value of the two routes (gradient of the integral
    versus weighted atom gradients); a non-strict atom raises, naming it.
    """
    _check_atoms(len(phi), m)
    grads = []
    for i, f in enumerate(phi.exprs):
        g = strict_derivative(f, xbar)
        if g is None:
            raise ValueError(f"atom {i} is not strictly differentiable at the base point")
        grads.append(g)
    rhs = np.sum([w * g for w, g in zip(m.weights, grads)], axis=0)
    lhs = strict_derivative(integral_functional(phi, m), xbar)
    if lhs is None:
        raise ValueError("integral functional is not strictly differentiable at the base point")
    err = float(np.max(np.abs(lhs - rhs)))
    if err > tol:
        raise AssertionError(f"gradient interchange off by {err:.3e}")
    return rhs


def limiting_leibniz_check(family, Ns, xbar, dirs=None, tol: float = INCLUSION_TOL) -> CheckReport:
    """Limiting subdifferential of the integral against atom integrals.

    family(N) -> (MeasureSpace, Integrand). At each refinement the vertices
    of the integral's limiting set must lie in the convexified integral of
    atom limiting sets; the distance to the unconvexified selector integral
    is tracked and must stay dominated by the convexification gap and be
    nonincreasing along Ns. Support equality is asserted when every atom is
    regular.
    """
    Ns = list(Ns)
    warnings, table = [], []
    worst = 0.0
    raw_prev = None
    ok = True
    equality_all = True
    for N in Ns:
        m, phi = family(N)
        xb = np.atleast_1d(np.asarray(xbar, dtype=float))
        L = limiting_subdiff(integral_functional(phi, m), xb)
        atom = _atom_subdiffs(phi, m, xb, "limiting")
        gmap = SetValuedMap(dim=phi.dim, sets=tuple(a.set for a in atom))
        R_raw = aumann_integral(gmap, m)
        R_conv = wstar_integral(gmap, m)
        conv_res = max(distance_to_set(v, R_conv) for v in L.set.vertices)
        raw_res = max(distance_to_set(v, R_raw) for v in L.set.vertices)
        gap = hausdorff_distance(R_raw, R_conv, dirs)
        worst = max(worst, conv_res)
        if conv_res > tol:
            ok = False
        if raw_res > gap + tol:
            ok = False
            warnings.append(f"raw residual {raw_res:.3e} exceeds convexification gap {gap:.3e} at N={N}")
        if raw_prev is not None and raw_res > raw_prev + tol:
            ok = False
            warnings.append(f"raw residual increased at N={N}")
        raw_prev = raw_res
        all_regular = all(a.regular for a in atom)
        equality_all = equality_all and all_regular
        if all_regular and L.exact:
            for h in _unit_dirs(phi.dim, dirs):
                res = abs(support(L.set, h) - support(R_conv, h))
                worst = max(worst, res)
                if res > tol:
                    ok = False
        table.append({"N": N, "convex_residual": conv_res, "raw_residual": raw_res, "gap": gap})
    return CheckReport(check="limiting-integral-inclusion", passed=ok,
                       max_residual=worst, warnings=warnings,
                       hypotheses={"all_atoms_regular": equality_all},
                       details={"table": table})
