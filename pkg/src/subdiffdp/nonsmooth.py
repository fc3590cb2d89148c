"""Piecewise smooth expressions and their subdifferentials.

Expressions are trees over affine and quadratic leaves combined by Sum,
nonnegative Scale, Neg, Max, and Min. Subdifferential rules run on a
normalized tree where Neg has been pushed into the leaves (De Morgan style:
-Max becomes Min of negations and vice versa), so negation never interferes
with the one-sided calculus.

Each computed set carries two certificates. `exact` means the rule produced
the limiting subdifferential itself, not just an outer estimate. `regular`
means the point passed the regularity pattern (directional derivative equals
the generalized one), in which case the convexified set coincides with the
generalized gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convexgeom import SetRep, convexify, minkowski_sum, scale as geom_scale, support, translate
from .errors import InexactCalculusError

ACTIVE_TOL_SCALE = 1e-9
SINGLETON_TOL = 1e-12


# ---------------------------------------------------------------------------
# expression nodes


@dataclass(frozen=True, eq=False)
class Affine:
    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return self.a.size


@dataclass(frozen=True, eq=False)
class Quadratic:
    """x -> 0.5 x'Qx + a'x + b with Q symmetrized on input."""

    Q: np.ndarray
    a: np.ndarray
    b: float

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if Q.shape[0] != Q.shape[1] or Q.shape[0] != a.size:
            raise ValueError("Quadratic shape mismatch")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return self.a.size


def _check_children(args):
    args = tuple(args)
    if not args:
        raise ValueError("combinator needs at least one child")
    dims = {c.dim for c in args}
    if len(dims) != 1:
        raise ValueError("children have mixed input dimensions")
    return args


@dataclass(frozen=True, eq=False)
class Sum:
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", _check_children(self.args))

    @property
    def dim(self) -> int:
        return self.args[0].dim


@dataclass(frozen=True, eq=False)
class Scale:
    c: float
    arg: object

    def __post_init__(self):
        c = float(self.c)
        if c < 0:
            raise ValueError("Scale takes c >= 0; negative scaling is Neg(Scale(...))")
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.arg.dim


@dataclass(frozen=True, eq=False)
class Neg:
    arg: object

    @property
    def dim(self) -> int:
        return self.arg.dim


@dataclass(frozen=True, eq=False)
class Max:
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", _check_children(self.args))

    @property
    def dim(self) -> int:
        return self.args[0].dim


@dataclass(frozen=True, eq=False)
class Min:
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", _check_children(self.args))

    @property
    def dim(self) -> int:
        return self.args[0].dim


# ---------------------------------------------------------------------------
# evaluation, serialization, transforms


def evaluate(f, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (f.dim,):
        raise ValueError(f"point has shape {x.shape}, expression expects ({f.dim},)")
    return _eval(f, x)


def _eval(f, x):
    if isinstance(f, Affine):
        return float(f.a @ x + f.b)
    if isinstance(f, Quadratic):
        return float(0.5 * x @ f.Q @ x + f.a @ x + f.b)
    if isinstance(f, Sum):
        return sum(_eval(c, x) for c in f.args)
    if isinstance(f, Scale):
        return f.c * _eval(f.arg, x)
    if isinstance(f, Neg):
        return -_eval(f.arg, x)
    if isinstance(f, Max):
        return max(_eval(c, x) for c in f.args)
    if isinstance(f, Min):
        return min(_eval(c, x) for c in f.args)
    raise TypeError(f"not an expression node: {type(f).__name__}")


def to_json(f) -> dict:
    if isinstance(f, Affine):
        return {"op": "affine", "a": f.a.tolist(), "b": f.b}
    if isinstance(f, Quadratic):
        return {"op": "quad", "Q": f.Q.tolist(), "a": f.a.tolist(), "b": f.b}
    if isinstance(f, Sum):
        return {"op": "sum", "args": [to_json(c) for c in f.args]}
    if isinstance(f, Scale):
        return {"op": "scale", "c": f.c, "arg": to_json(f.arg)}
    if isinstance(f, Neg):
        return {"op": "neg", "arg": to_json(f.arg)}
    if isinstance(f, Max):
        return {"op": "max", "args": [to_json(c) for c in f.args]}
    if isinstance(f, Min):
        return {"op": "min", "args": [to_json(c) for c in f.args]}
    raise TypeError(f"not an expression node: {type(f).__name__}")


def from_json(data: dict):
    op = data.get("op")
    if op == "affine":
        return Affine(a=np.asarray(data["a"], dtype=float), b=data["b"])
    if op == "quad":
        return Quadratic(Q=np.asarray(data["Q"], dtype=float), a=np.asarray(data["a"], dtype=float), b=data["b"])
    if op == "sum":
        return Sum(tuple(from_json(c) for c in data["args"]))
    if op == "scale":
        return Scale(data["c"], from_json(data["arg"]))
    if op == "neg":
        return Neg(from_json(data["arg"]))
    if op == "max":
        return Max(tuple(from_json(c) for c in data["args"]))
    if op == "min":
        return Min(tuple(from_json(c) for c in data["args"]))
    raise ValueError(f"unknown expression op: {op!r}")


def negate(f):
    """Structural negation with Neg pushed into the leaves."""
    if isinstance(f, Affine):
        return Affine(-f.a, -f.b)
    if isinstance(f, Quadratic):
        return Quadratic(-f.Q, -f.a, -f.b)
    if isinstance(f, Sum):
        return Sum(tuple(negate(c) for c in f.args))
    if isinstance(f, Scale):
        return Scale(f.c, negate(f.arg))
    if isinstance(f, Neg):
        return normalize(f.arg)
    if isinstance(f, Max):
        return Min(tuple(negate(c) for c in f.args))
    if isinstance(f, Min):
        return Max(tuple(negate(c) for c in f.args))
    raise TypeError(f"not an expression node: {type(f).__name__}")


def normalize(f):
    """Equivalent Neg-free tree (negated leaves replace Neg nodes)."""
    if isinstance(f, (Affine, Quadratic)):
        return f
    if isinstance(f, Neg):
        return negate(normalize(f.arg))
    if isinstance(f, Sum):
        return Sum(tuple(normalize(c) for c in f.args))
    if isinstance(f, Scale):
        return Scale(f.c, normalize(f.arg))
    if isinstance(f, Max):
        return Max(tuple(normalize(c) for c in f.args))
    if isinstance(f, Min):
        return Min(tuple(normalize(c) for c in f.args))
    raise TypeError(f"not an expression node: {type(f).__name__}")


def compose_affine(f, A, c):
    """Expression for x -> f(Ax + c); exact for every node type."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if A.shape[0] != f.dim or A.shape[0] != c.size:
        raise ValueError("affine substitution shape mismatch")
    if isinstance(f, Affine):
        return Affine(A.T @ f.a, float(f.a @ c + f.b))
    if isinstance(f, Quadratic):
        Qc = f.Q @ c
        return Quadratic(A.T @ f.Q @ A, A.T @ (Qc + f.a), float(0.5 * c @ Qc + f.a @ c + f.b))
    if isinstance(f, Sum):
        return Sum(tuple(compose_affine(g, A, c) for g in f.args))
    if isinstance(f, Scale):
        return Scale(f.c, compose_affine(f.arg, A, c))
    if isinstance(f, Neg):
        return Neg(compose_affine(f.arg, A, c))
    if isinstance(f, Max):
        return Max(tuple(compose_affine(g, A, c) for g in f.args))
    if isinstance(f, Min):
        return Min(tuple(compose_affine(g, A, c) for g in f.args))
    raise TypeError(f"not an expression node: {type(f).__name__}")


# ---------------------------------------------------------------------------
# subdifferential calculus


@dataclass(frozen=True)
class SubdiffResult:
    set: SetRep
    exact: bool
    regular: bool


@dataclass(frozen=True)
class _Node:
    set: SetRep
    exact: bool
    regular: bool
    smooth: bool  # strictly differentiable at the point


def _singleton_value(node: _Node) -> np.ndarray:
    return node.set.vertices[0]


def _limiting(f, x) -> _Node:
    if isinstance(f, Affine):
        return _Node(SetRep.singleton(f.a), True, True, True)
    if isinstance(f, Quadratic):
        return _Node(SetRep.singleton(f.Q @ x + f.a), True, True, True)
    if isinstance(f, Scale):
        if f.c == 0.0:
            return _Node(SetRep.singleton(np.zeros(f.dim)), True, True, True)
        r = _limiting(f.arg, x)
        return _Node(geom_scale(r.set, f.c), r.exact, r.regular, r.smooth)
    if isinstance(f, Sum):
        rs = [_limiting(c, x) for c in f.args]
        rough = [r for r in rs if not r.smooth]
        shift = np.zeros(f.dim)
        for r in rs:
            if r.smooth:
                shift = shift + _singleton_value(r)
        if len(rough) == 0:
            return _Node(SetRep.singleton(shift), all(r.exact for r in rs), all(r.regular for r in rs), True)
        if len(rough) == 1:
            # exact sum rule: strictly differentiable terms translate the set
            r = rough[0]
            return _Node(translate(r.set, shift), r.exact and all(q.exact for q in rs), all(q.regular for q in rs), False)
        out = translate(rough[0].set, shift)
        for r in rough[1:]:
            out = minkowski_sum(out, r.set)
        all_regular = all(r.regular for r in rs)
        # with every term regular the sum rule is an equality; otherwise the
        # Minkowski sum only bounds the limiting set from outside
        exact = all_regular and all(r.exact for r in rs)
        return _Node(out, exact, all_regular, False)
    if isinstance(f, Max):
        return _max_rule(f, x)
    if isinstance(f, Min):
        return _min_rule(f, x)
    if isinstance(f, Neg):
        raise AssertionError("normalize() removes Neg before calculus")
    raise TypeError(f"not an expression node: {type(f).__name__}")


def _active_children(f, x):
    vals = [_eval(c, x) for c in f.args]
    ref = max(vals) if isinstance(f, Max) else min(vals)
    eps = ACTIVE_TOL_SCALE * (1.0 + abs(ref))
    return [c for c, v in zip(f.args, vals) if abs(v - ref) <= eps]


def _max_rule(f: Max, x) -> _Node:
    active = _active_children(f, x)
    rs = [_limiting(c, x) for c in active]
    if len(rs) == 1:
        return rs[0]
    hull = convexify(SetRep(dim=f.dim, pieces=tuple(p for r in rs for p in r.set.pieces)))
    regular = all(r.regular for r in rs)
    exact = regular and all(r.exact for r in rs)
    return _Node(hull, exact, regular, False)


def _min_rule(f: Min, x) -> _Node:
    active = _active_children(f, x)
    rs = [_limiting(c, x) for c in active]
    if len(rs) == 1:
        return rs[0]
    union = SetRep(dim=f.dim, pieces=tuple(p for r in rs for p in r.set.pieces))
    exact = False
    if len(rs) == 2 and all(r.smooth and r.exact for r in rs):
        g0, g1 = _singleton_value(rs[0]), _singleton_value(rs[1])
        # two smooth branches crossing transversally: the union is the
        # limiting set itself; an equal-gradient tie stays an outer flag
        exact = bool(np.max(np.abs(g0 - g1)) > SINGLETON_TOL)
    return _Node(union, exact, False, False)


def _prepare(f, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (f.dim,):
        raise ValueError(f"point has shape {x.shape}, expression expects ({f.dim},)")
    return normalize(f), x


def limiting_subdiff(f, x) -> SubdiffResult:
    """Limiting subdifferential as a union of polytopes."""
    g, x = _prepare(f, x)
    r = _limiting(g, x)
    return SubdiffResult(set=r.set, exact=r.exact, regular=r.regular)


def clarke_gradient(f, x) -> SubdiffResult:
    """Generalized gradient: closed convex hull of the limiting set."""
    g, x = _prepare(f, x)
    r = _limiting(g, x)
    return SubdiffResult(set=convexify(r.set), exact=r.exact, regular=r.regular)


def is_regular(f, x) -> bool:
    """Pattern certificate that directional and generalized derivatives agree."""
    g, x = _prepare(f, x)
    return _limiting(g, x).regular


def clarke_dd(f, x, h, strict: bool = True) -> float:
    """Generalized directional derivative via the support identity."""
    r = clarke_gradient(f, x)
    if strict and not r.exact:
        raise InexactCalculusError("expression is outside the exact calculus class at this point")
    h = np.atleast_1d(np.asarray(h, dtype=float))
    return support(r.set, h)


def strict_derivative(f, x):
    """Gradient when the point is certified smooth, else None."""
    r = clarke_gradient(f, x)
    verts = r.set.vertices
    if r.exact and len(verts) == 1:
        return verts[0]
    spread = verts.max(axis=0) - verts.min(axis=0)
    if r.exact and np.max(spread) <= SINGLETON_TOL:
        return verts[0]
    return None


def sampled_clarke_dd(f, x, h, radius: float = 1e-4, n_samples: int = 1500, seed: int = 0) -> float:
    """Monte Carlo lower bound on the generalized directional derivative.

    Difference quotients [f(x'+t h) - f(x')] / t with x' uniform in the
    radius ball and t uniform in (0, radius], driven by a counter-based
    generator so runs are reproducible for a given seed.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    rng = np.random.Generator(np.random.Philox(key=seed))
    best = -np.inf
    for _ in range(n_samples):
        v = rng.normal(size=x.size)
        v /= max(np.linalg.norm(v), 1e-300)
        r = radius * rng.uniform() ** (1.0 / x.size)
        xp = x + r * v
        t = radius * rng.uniform()
        if t < 1e-12 * radius:
            continue
        best = max(best, (_eval(f, xp + t * h) - _eval(f, xp)) / t)
    return float(best)


def lipschitz_modulus(f, lo, hi) -> float:
    """Upper bound for the Lipschitz constant over a box, corner-exact for
    each leaf."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or lo.shape != (f.dim,):
        raise ValueError("box dimension mismatch")
    if np.any(lo > hi):
        raise ValueError("box has lo > hi")
    return _lip(normalize(f), lo, hi)


def _box_corners(lo, hi):
    n = lo.size
    for mask in range(2**n):
        yield np.where([(mask >> i) & 1 for i in range(n)], hi, lo)


def _lip(f, lo, hi):
    if isinstance(f, Affine):
        return float(np.linalg.norm(f.a))
    if isinstance(f, Quadratic):
        # ||Qx + a|| is convex, so the box maximum sits at a corner
        return max(float(np.linalg.norm(f.Q @ c + f.a)) for c in _box_corners(lo, hi))
    if isinstance(f, Sum):
        return sum(_lip(c, lo, hi) for c in f.args)
    if isinstance(f, Scale):
        return f.c * _lip(f.arg, lo, hi)
    if isinstance(f, (Max, Min)):
        return max(_lip(c, lo, hi) for c in f.args)
    raise TypeError(f"not an expression node: {type(f).__name__}")
