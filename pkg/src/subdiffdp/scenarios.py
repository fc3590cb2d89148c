"""Declarative scenario catalogue and suite runner.

A scenario names a study (geometry, integral, leibniz, lyapunov, dp, euler,
nlp), its inputs, tolerances, and an optional seed and refinement ladder.
Running one produces check entries {name, rule, pass, residual, hypotheses,
classification} plus optional CSV tables; a suite report is the name-sorted
list of scenario reports. Runs are deterministic: identical scenarios and
seeds give byte-identical reports (wall-clock data goes to a separate
metadata file).
"""
from __future__ import annotations

import csv
import datetime
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .convexgeom import (SetRep, convexify, default_directions, distance_to_set,
                         hausdorff_distance, minkowski_sum, scale as geom_scale,
                         support, translate)
from .dp import (DPModel, bellman_operator, envelope_check,
                 euler_inclusion_residual, finite_horizon_oracle,
                 lagrange_multiplier_set, limiting_euler_check, mfcq_check,
                 nlp_value_subdiff_check, policy_multifunction,
                 strict_value_derivative_check, value_iteration)
from .errors import CapacityError
from .measure import MeasureSpace
from .models import build_model, desk_models
from .nonsmooth import (Affine, Max, Min, Neg, Quadratic, evaluate,
                        limiting_subdiff, clarke_gradient, strict_derivative)
from .reporting import CheckReport, jsonable
from .setintegral import (Integrand, SetValuedMap, aumann_integral,
                          check_lyapunov_convexification,
                          check_supremum_representation, clarke_leibniz_check,
                          integral_functional, strict_leibniz, wstar_integral)

KINDS = ("geometry", "integral", "leibniz", "lyapunov", "dp", "euler", "nlp")

_STUDIES = {
    "geometry": ("kink-atoms", "random-hulls", "minkowski"),
    "integral": ("supremum", "wstar-envelope"),
    "leibniz": ("random-inclusion", "strict-witness", "smooth-strict"),
    "lyapunov": ("zero-one", "circle"),
    "dp": ("solve", "oracle", "envelope"),
    "euler": ("inclusion",),
    "nlp": ("multipliers",),
}

# studies that draw random objects and therefore demand a seed
_SAMPLED = {
    ("geometry", "random-hulls"), ("geometry", "minkowski"),
    ("integral", "supremum"), ("integral", "wstar-envelope"),
    ("leibniz", "random-inclusion"), ("leibniz", "smooth-strict"),
}


def _study_of(kind: str, inputs: dict) -> str:
    return inputs.get("study", _STUDIES[kind][0])


def scenario_samples(kind: str, inputs: dict) -> bool:
    """Whether running this scenario invokes a sampling oracle."""
    if (kind, _study_of(kind, inputs)) in _SAMPLED:
        return True
    return kind == "dp" and int(inputs.get("pairs", 0)) > 0


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    inputs: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    seed: int | None = None
    refinement: tuple = ()
    strict: bool = False
    description: str = ""

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise ValueError("scenario needs a nonempty name")
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; "
                             f"expected one of {', '.join(KINDS)}")
        study = _study_of(self.kind, self.inputs)
        if study not in _STUDIES[self.kind]:
            raise ValueError(f"unknown study {study!r} for kind {self.kind!r}")
        for key, val in self.tolerances.items():
            if not (isinstance(val, (int, float)) and val > 0):
                raise ValueError(f"tolerance {key!r} must be positive")
        object.__setattr__(self, "refinement",
                           tuple(int(n) for n in self.refinement))
        if any(n < 1 for n in self.refinement):
            raise ValueError("refinement entries must be positive integers")
        if scenario_samples(self.kind, self.inputs) and self.seed is None:
            raise ValueError(f"scenario {self.name!r} samples randomly "
                             "and needs a seed")

    def tol(self, key: str, default: float, scale: float = 1.0) -> float:
        return float(self.tolerances.get(key, default)) * scale

    def to_json(self) -> dict:
        return jsonable({
            "name": self.name, "kind": self.kind, "inputs": self.inputs,
            "tolerances": self.tolerances, "seed": self.seed,
            "refinement": list(self.refinement), "strict": self.strict,
            "description": self.description,
        })

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ValueError("scenario document must be an object")
        unknown = set(data) - {"name", "kind", "inputs", "tolerances", "seed",
                               "refinement", "strict", "description"}
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(name=data.get("name", ""), kind=data.get("kind", ""),
                   inputs=dict(data.get("inputs", {})),
                   tolerances=dict(data.get("tolerances", {})),
                   seed=data.get("seed"),
                   refinement=tuple(data.get("refinement", ())),
                   strict=bool(data.get("strict", False)),
                   description=str(data.get("description", "")))


@dataclass
class ScenarioReport:
    scenario: str
    checks: list
    tables: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return jsonable({"scenario": self.scenario, "checks": self.checks})

    def fatal(self, strict: bool) -> bool:
        for c in self.checks:
            if c["pass"]:
                continue
            if strict or c["classification"] == "theorem-violation":
                return True
        return False


def _finite(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _classify(passed: bool, hypotheses: dict) -> str:
    if passed:
        return "pass"
    if any(v is False for v in (hypotheses or {}).values()):
        return "hypothesis-violation"
    return "theorem-violation"


def _entry(name: str, rule: str, passed: bool, residual,
           hypotheses: dict | None = None, warnings: list | None = None) -> dict:
    hyp = jsonable(hypotheses or {})
    return {"name": name, "rule": rule, "pass": bool(passed),
            "residual": _finite(residual), "hypotheses": hyp,
            "classification": _classify(bool(passed), hyp),
            "warnings": jsonable(warnings or [])}


def _from_report(name: str, rule: str, rep: CheckReport) -> dict:
    return _entry(name, rule, rep.passed, rep.max_residual,
                  rep.hypotheses, rep.warnings)


def _rng(s: Scenario, seed_override) -> np.random.Generator:
    seed = s.seed if seed_override is None else seed_override
    return np.random.Generator(np.random.Philox(key=0 if seed is None else seed))


# ---------------------------------------------------------------------------
# random object generators


def _random_setrep(rng, dim: int, max_vertices: int) -> SetRep:
    style = int(rng.integers(0, 3))
    k = int(rng.integers(1, max_vertices + 1))
    pts = rng.uniform(-2.0, 2.0, size=(k, dim))
    if style == 0:
        return SetRep.finite(pts)
    if style == 1:
        return SetRep.hull_of(pts)
    j = int(rng.integers(1, k + 1))
    return SetRep(dim=dim, pieces=(pts[:j], pts[j - 1:]))


def _random_map(rng, max_atoms: int, max_vertices: int, dims) -> tuple:
    dim = int(rng.choice(np.asarray(dims, dtype=int)))
    n = int(rng.integers(1, max_atoms + 1))
    gamma = SetValuedMap(dim=dim, sets=tuple(
        _random_setrep(rng, dim, max_vertices) for _ in range(n)))
    m = MeasureSpace(points=np.arange(n, dtype=float),
                     weights=rng.uniform(0.2, 1.5, size=n))
    return gamma, m


def _vee(c: float, up: bool):
    """|x - c| (up) or -|x - c| (down) as a DSL expression."""
    base = Max((Affine(np.array([1.0]), -c), Affine(np.array([-1.0]), c)))
    return base if up else Neg(base)


def _random_atom(rng, xbar: float):
    kind = int(rng.integers(0, 4))
    if kind == 0:
        return Affine(rng.normal(size=1), float(rng.normal()))
    if kind == 1:
        q = float(rng.uniform(0.5, 2.0))
        return Quadratic(np.array([[q]]), rng.normal(size=1), float(rng.normal()))
    # kinked atom; half the time the kink sits exactly at the base point
    c = xbar if rng.random() < 0.5 else float(rng.uniform(-1.0, 1.0))
    return _vee(c, up=kind == 2)


def _random_smooth_atom(rng):
    if rng.random() < 0.5:
        return Affine(rng.normal(size=1), float(rng.normal()))
    q = float(rng.uniform(-2.0, 2.0))
    return Quadratic(np.array([[2.0 * q]]), rng.normal(size=1), float(rng.normal()))


def _random_integrand(rng, xbar: float, max_atoms: int, smooth: bool = False):
    n = int(rng.integers(1, max_atoms + 1))
    draw = (lambda: _random_smooth_atom(rng)) if smooth \
        else (lambda: _random_atom(rng, xbar))
    phi = Integrand(dim=1, exprs=tuple(draw() for _ in range(n)))
    m = MeasureSpace(points=np.arange(n, dtype=float),
                     weights=rng.uniform(0.2, 1.5, size=n))
    return phi, m


# ---------------------------------------------------------------------------
# per-kind runners


def _run_geometry(s: Scenario, rng, ts: float) -> ScenarioReport:
    study = _study_of(s.kind, s.inputs)
    checks = []
    if study == "kink-atoms":
        tol = s.tol("support", 1e-12, ts)
        f = Neg(Max((Affine(np.array([1.0]), 0.0), Affine(np.array([-1.0]), 0.0))))
        x0 = np.array([0.0])
        lim = limiting_subdiff(f, x0)
        atoms = SetRep.finite(np.array([[-1.0], [1.0]]))
        r1 = hausdorff_distance(lim.set, atoms)
        checks.append(_entry(
            "limiting-atoms", "downward vee: limiting set is the two slopes",
            lim.exact and r1 <= tol, r1,
            {"exact": lim.exact, "regular": lim.regular}))
        cl = clarke_gradient(f, x0)
        r2 = max(abs(support(cl.set, np.array([d])) - 1.0) for d in (1.0, -1.0))
        checks.append(_entry(
            "clarke-interval", "generalized gradient is the full interval",
            cl.exact and r2 <= tol, r2, {"exact": cl.exact}))
        hull = convexify(lim.set)
        r3 = max(abs(support(cl.set, h) - support(hull, h))
                 for h in default_directions(1))
        checks.append(_entry(
            "convexification-identity",
            "hull of the limiting set has the Clarke support function",
            r3 <= tol, r3))
    elif study == "random-hulls":
        tol = s.tol("support", 1e-9, ts)
        draws = int(s.inputs.get("draws", 50))
        worst = 0.0
        idem = 0.0
        for _ in range(draws):
            dim = int(rng.integers(1, 3))
            S = _random_setrep(rng, dim, int(s.inputs.get("max_vertices", 6)))
            H = convexify(S)
            for h in default_directions(dim, 16):
                brute = float(np.max(S.vertices @ h))
                worst = max(worst, abs(support(H, h) - brute),
                            abs(support(S, h) - brute))
            idem = max(idem, hausdorff_distance(H, convexify(H)))
        checks.append(_entry(
            "hull-support", "hull support equals the vertex maximum",
            worst <= tol, worst))
        checks.append(_entry(
            "hull-idempotent", "hulling a convex set changes nothing",
            idem <= tol, idem))
    else:  # minkowski
        tol = s.tol("support", 1e-9, ts)
        draws = int(s.inputs.get("draws", 50))
        worst = 0.0
        for _ in range(draws):
            dim = int(rng.integers(1, 3))
            A = _random_setrep(rng, dim, 4)
            B = _random_setrep(rng, dim, 4)
            AB = minkowski_sum(A, B)
            for h in default_directions(dim, 16):
                worst = max(worst, abs(support(AB, h)
                                       - support(A, h) - support(B, h)))
            v = rng.normal(size=dim)
            c = float(rng.uniform(0.3, 2.0))
            for h in default_directions(dim, 8):
                worst = max(worst, abs(support(translate(A, v), h)
                                       - support(A, h) - float(v @ h)))
                worst = max(worst, abs(support(geom_scale(A, c), h)
                                       - c * support(A, h)))
        checks.append(_entry(
            "sum-support-additivity", "set sums add support functions",
            worst <= tol, worst))
    return ScenarioReport(s.name, checks)


def _run_integral(s: Scenario, rng, ts: float) -> ScenarioReport:
    study = _study_of(s.kind, s.inputs)
    draws = int(s.inputs.get("draws", 100))
    max_atoms = int(s.inputs.get("max_atoms", 3))
    max_vertices = int(s.inputs.get("max_vertices", 4))
    dims = s.inputs.get("dims", [1, 2])
    checks = []
    if study == "supremum":
        tol = s.tol("support", 1e-9, ts)
        worst = 0.0
        ok = True
        for _ in range(draws):
            gamma, m = _random_map(rng, max_atoms, max_vertices, dims)
            rep = check_supremum_representation(
                gamma, m, dirs=default_directions(gamma.dim, 64), tol=tol)
            worst = max(worst, rep.max_residual)
            ok = ok and rep.passed
        checks.append(_entry(
            "selector-support-additivity",
            "selector-integral support is the weighted atom support sum",
            ok, worst, {"draws": draws}))
    else:  # wstar-envelope
        tol_in = s.tol("inclusion", 1e-12, ts)
        tol_sup = s.tol("support", 1e-9, ts)
        worst_in = 0.0
        worst_sup = 0.0
        for _ in range(draws):
            gamma, m = _random_map(rng, max_atoms, max_vertices, dims)
            A = aumann_integral(gamma, m)
            W = wstar_integral(gamma, m)
            worst_in = max(worst_in,
                           max(distance_to_set(v, W) for v in A.vertices))
            H = convexify(A)
            for h in default_directions(gamma.dim, 32):
                worst_sup = max(worst_sup, abs(support(H, h) - support(W, h)))
        checks.append(_entry(
            "selector-inside-hulled",
            "every selector sum lies in the hulled integral",
            worst_in <= tol_in, worst_in, {"draws": draws}))
        checks.append(_entry(
            "hull-closes-gap",
            "hulling the selector integral reproduces the hulled integral",
            worst_sup <= tol_sup, worst_sup))
    return ScenarioReport(s.name, checks)


def _run_leibniz(s: Scenario, rng, ts: float) -> ScenarioReport:
    study = _study_of(s.kind, s.inputs)
    checks = []
    if study == "random-inclusion":
        tol = s.tol("inclusion", 1e-8, ts)
        draws = int(s.inputs.get("draws", 100))
        max_atoms = int(s.inputs.get("max_atoms", 5))
        worst = 0.0
        worst_eq = 0.0
        eq_draws = 0
        ok = True
        for _ in range(draws):
            xbar = float(np.round(rng.uniform(-1.0, 1.0), 3))
            phi, m = _random_integrand(rng, xbar, max_atoms)
            rep = clarke_leibniz_check(phi, m, np.array([xbar]),
                                       dirs=default_directions(1, 64), tol=tol)
            worst = max(worst, rep.max_residual)
            ok = ok and rep.passed
            if rep.hypotheses.get("equality_asserted"):
                eq_draws += 1
                worst_eq = max(worst_eq, rep.max_residual)
        checks.append(_entry(
            "gradient-inclusion",
            "integral gradient sits inside the integral of gradients",
            ok, worst, {"draws": draws}))
        checks.append(_entry(
            "regular-equality",
            "all atoms regular: the inclusion tightens to equality",
            eq_draws > 0 and worst_eq <= tol, worst_eq,
            {"equality_draws": eq_draws}))
    elif study == "strict-witness":
        w = float(s.inputs.get("weight", 0.4))
        xbar = float(s.inputs.get("xbar", 0.25))
        floor = 0.1 * w
        phi = Integrand(dim=1, exprs=(_vee(xbar, up=False),
                                      Quadratic(np.array([[2.0]]),
                                                np.array([-1.5]), 0.5625)))
        m = MeasureSpace(points=np.array([0.0, 1.0]),
                         weights=np.array([w, 1.0 - w]))
        rep = clarke_leibniz_check(phi, m, np.array([xbar]))
        gap = rep.details["limiting_gap"]
        checks.append(_from_report(
            "outer-inclusion", "the hulled bound still contains the gradient", rep))
        checks.append(_entry(
            "strictness-witness",
            "downward kink atom forces a strict inclusion gap",
            gap >= floor, gap, {"floor": floor,
                                "all_atoms_regular": rep.hypotheses["all_atoms_regular"]}))
    else:  # smooth-strict
        tol = s.tol("interchange", 1e-10, ts)
        fd_tol = s.tol("fd", 1e-4, ts)
        draws = int(s.inputs.get("draws", 40))
        worst = 0.0
        worst_fd = 0.0
        for _ in range(draws):
            xbar = float(rng.uniform(-1.0, 1.0))
            phi, m = _random_integrand(rng, xbar, int(s.inputs.get("max_atoms", 5)),
                                       smooth=True)
            x0 = np.array([xbar])
            g = strict_leibniz(phi, m, x0, tol=tol)
            functional = integral_functional(phi, m)
            h = 1e-6
            fd = (evaluate(functional, x0 + h) - evaluate(functional, x0 - h)) / (2 * h)
            direct = strict_derivative(functional, x0)
            worst = max(worst, float(np.max(np.abs(direct - g))))
            worst_fd = max(worst_fd, abs(float(fd) - float(g[0])))
        checks.append(_entry(
            "gradient-interchange",
            "weighted atom gradients equal the integral gradient",
            worst <= tol, worst, {"draws": draws}))
        checks.append(_entry(
            "finite-difference-agreement",
            "central differences confirm the interchanged gradient",
            worst_fd <= fd_tol, worst_fd))
    return ScenarioReport(s.name, checks)


def _zero_one_family(N: int):
    m = MeasureSpace(points=(np.arange(N) + 0.5) / N, weights=np.full(N, 1.0 / N))
    atom = SetRep.finite(np.array([[0.0], [1.0]]))
    return m, SetValuedMap(dim=1, sets=(atom,) * N)


def _circle_family(N: int):
    m = MeasureSpace(points=np.arange(N, dtype=float), weights=np.full(N, 1.0 / N))
    sets = []
    for k in range(N):
        t = math.pi * k / N
        p = np.array([math.cos(t), math.sin(t)])
        sets.append(SetRep.finite(np.vstack([p, -p])))
    return m, SetValuedMap(dim=2, sets=tuple(sets))


def _run_lyapunov(s: Scenario, rng, ts: float) -> ScenarioReport:
    family_name = s.inputs.get("family", _study_of(s.kind, s.inputs))
    Ns = list(s.refinement) or [1, 2, 4, 8]
    family = _zero_one_family if family_name == "zero-one" else _circle_family
    rep = check_lyapunov_convexification(family, Ns)
    checks = [_from_report(
        "refinement-gap-shrinks",
        "selector-integral gap to its hull dies under refinement", rep)]
    table = [dict(row) for row in rep.details["table"]]
    if family_name == "zero-one":
        tol = s.tol("gap", 1e-12, ts)
        worst = 0.0
        for row in table:
            row["predicted"] = 1.0 / (2 * row["N"])
            worst = max(worst, abs(row["gap"] - row["predicted"]))
        checks.append(_entry(
            "exact-gap-law", "zero-one family gap is exactly 1/(2N)",
            worst <= tol, worst, {"Ns": Ns}))
    header = list(table[0].keys())
    rows = [[row[k] for k in header] for row in table]
    return ScenarioReport(s.name, checks, tables={s.name: (header, rows)})


def _resolve_model(source):
    if isinstance(source, str):
        entry = build_model(source)
        return entry.model, entry
    return DPModel.from_json(source), None


def _run_dp(s: Scenario, rng, ts: float) -> ScenarioReport:
    study = _study_of(s.kind, s.inputs)
    checks = []
    tables = {}
    if study == "solve":
        model, _ = _resolve_model(s.inputs.get("model", "linear-control"))
        tol = s.tol("value", 1e-8, ts)
        table, iters = value_iteration(model, tol=tol)
        expect = s.inputs.get("expect_value")
        if expect is not None:
            r = float(np.max(np.abs(table.values - float(expect))))
            checks.append(_entry(
                "fixed-point-value", "iteration lands on the known fixed point",
                r <= tol, r, {"iterations": iters}))
        checks.append(_entry(
            "closed-form-agreement", "materialized expression matches the table",
            table.closed_form_gap <= max(tol, 1e-9), table.closed_form_gap,
            warnings=list(table.warnings)))
        pairs = int(s.inputs.get("pairs", 0))
        if pairs:
            ctol = s.tol("contraction", 1e-12, ts)
            worst_c = 0.0
            worst_m = 0.0
            shape = (model.n_states, model.n_shocks)
            for _ in range(pairs):
                p1 = rng.normal(size=shape)
                p2 = rng.normal(size=shape)
                gap = float(np.max(np.abs(bellman_operator(p1, model)
                                          - bellman_operator(p2, model))))
                worst_c = max(worst_c,
                              gap - model.beta * float(np.max(np.abs(p1 - p2))))
                low = np.minimum(p1, p2)
                worst_m = max(worst_m, float(np.max(
                    bellman_operator(low, model) - bellman_operator(p1, model))))
            checks.append(_entry(
                "contraction", "one sweep shrinks table gaps by the discount",
                worst_c <= ctol, max(worst_c, 0.0), {"pairs": pairs}))
            checks.append(_entry(
                "monotonicity", "pointwise order survives a sweep",
                worst_m <= ctol, max(worst_m, 0.0), {"pairs": pairs}))
    elif study == "oracle":
        tol = s.tol("value", 1e-8, ts)
        horizons = [int(t) for t in s.inputs.get("horizons", range(1, 9))]
        rows = []
        worst = 0.0
        for name in s.inputs.get("models", list(desk_models())):
            entry = build_model(name)
            model = entry.model
            table, _ = value_iteration(model, tol=tol)
            unorm = model.cost_sup_norm()
            xi = model.state_index(entry.base_state)
            for T in horizons:
                for wi in range(model.n_shocks):
                    v = float(table.values[xi, wi])
                    o = finite_horizon_oracle(model, T, entry.base_state, wi)
                    bound = (model.beta ** T) * unorm / (1.0 - model.beta) + tol
                    excess = abs(v - o) - bound
                    worst = max(worst, excess)
                    rows.append([name, T, wi, v, o, bound, abs(v - o)])
        checks.append(_entry(
            "horizon-tail-bound",
            "infinite-horizon value is within the geometric tail of truncations",
            worst <= 0.0, max(worst, 0.0), {"horizons": horizons}))
        tables[s.name] = (["model", "T", "shock", "value", "oracle",
                          "bound", "gap"], rows)
    else:  # envelope
        model, entry = _resolve_model(s.inputs.get("model", "quad-tracking"))
        tol = s.tol("support", 1e-8, ts)
        xbar = np.asarray(s.inputs.get("xbar",
                                       entry.base_state if entry else model.grid[0]),
                          dtype=float)
        table, _ = value_iteration(model, tol=s.tol("value", 1e-8, ts))
        rep = envelope_check(model, table, xbar, tol=tol)
        checks.append(_from_report(
            "envelope-inclusion",
            "value-function gradient set sits inside the state gradient of the cost",
            rep))
        srep = strict_value_derivative_check(model, table, xbar,
                                             tol=s.tol("strict", 1e-8, ts))
        checks.append(_from_report(
            "strict-derivative-agreement",
            "strict value derivative equals the cost state gradient", srep))
    return ScenarioReport(s.name, checks, tables=tables)


def _run_euler(s: Scenario, rng, ts: float) -> ScenarioReport:
    tol = s.tol("residual", 1e-6, ts)
    radius = float(s.inputs.get("cone_radius", 10.0))
    checks = []
    for name in s.inputs.get("models", ["quad-tracking"]):
        model, entry = _resolve_model(name)
        table, _ = value_iteration(model, tol=1e-8)
        policy = policy_multifunction(table, model)
        xbar = np.asarray(s.inputs.get("xbar", entry.base_state), dtype=float)
        for wi in range(model.n_shocks):
            rep = limiting_euler_check(model, table, policy, xbar, wi,
                                       cone_radius=radius, tol=tol)
            label = name if model.n_shocks == 1 else f"{name}[{wi}]"
            hyp = dict(rep.hypotheses)
            hyp["raw_dominates"] = (rep.details["raw_residual"]
                                    >= rep.details["convexified_residual"] - 1e-12)
            checks.append(_entry(
                f"inclusion:{label}",
                "0 lies in the cost gradient plus discounted integral plus cone",
                rep.passed, rep.max_residual, hyp, rep.warnings))
            expect_raw = s.inputs.get("expect_raw")
            if expect_raw is not None:
                r = abs(rep.details["raw_residual"] - float(expect_raw))
                checks.append(_entry(
                    f"raw-gap:{label}",
                    "unconvexified route misses 0 by the kink amplitude",
                    r <= 1e-9, r,
                    {"raw_residual": rep.details["raw_residual"],
                     "convexified_residual": rep.details["convexified_residual"]}))
    pert = s.inputs.get("perturb")
    if pert:
        model, entry = _resolve_model(pert["model"])
        table, _ = value_iteration(model, tol=1e-8)
        policy = policy_multifunction(table, model)
        xbar = np.asarray(pert.get("xbar", entry.base_state), dtype=float)
        r = euler_inclusion_residual(model, table, policy, xbar, 0,
                                     cone_radius=radius,
                                     ybar=np.asarray(pert["ybar"], dtype=float))
        floor = float(pert.get("floor", 0.1))
        checks.append(_entry(
            "perturbation-detected",
            "a non-minimizing control leaves a visible residual",
            r >= floor, r, {"floor": floor}))
    return ScenarioReport(s.name, checks)


def _run_nlp(s: Scenario, rng, ts: float) -> ScenarioReport:
    model, entry = _resolve_model(s.inputs.get("model", "chase-nlp"))
    nlp = model.constraint
    xbar = np.asarray(s.inputs.get("xbar", entry.base_state), dtype=float)
    table, _ = value_iteration(model, tol=1e-8)
    policy = policy_multifunction(table, model)
    ybar = policy.selected(model.state_index(xbar), 0)
    checks = []
    ok, cert = mfcq_check(nlp, xbar, ybar, 0)
    if s.inputs.get("expect_disqualified"):
        checks.append(_entry(
            "qualification-rejected",
            "dependent equality gradients must fail the qualification",
            not ok, 0.0 if not ok else 1.0,
            {"equality_rank": cert["equality_rank"],
             "reason": cert.get("reason", "")}))
        return ScenarioReport(s.name, checks)
    checks.append(_entry(
        "qualification-certificate",
        "a strictly feasible direction certifies the qualification",
        ok and cert["slack"] > 1e-10, 1.0 - cert["slack"],
        {"active": cert["active"]}))
    lam = lagrange_multiplier_set(nlp, model, table, xbar, ybar, 0)
    expect = s.inputs.get("expect_multipliers")
    if expect is not None:
        tol_l = s.tol("multiplier", 1e-8, ts)
        got = np.array(sorted(lam.vectors().tolist()))
        want = np.array(sorted(np.atleast_2d(np.asarray(expect, dtype=float)).tolist()))
        r = (float(np.max(np.abs(got - want)))
             if got.shape == want.shape else float("inf"))
        checks.append(_entry(
            "multiplier-set", "stationarity weights match the hand solution",
            r <= tol_l, r, {"count": len(lam.entries)}))
    rep = nlp_value_subdiff_check(nlp, model, table, xbar,
                                  tol=s.tol("image", 1e-6, ts))
    checks.append(_from_report(
        "value-formula",
        "value subgradients land in the multiplier image of cost gradients",
        rep))
    return ScenarioReport(s.name, checks)


_RUNNERS = {"geometry": _run_geometry, "integral": _run_integral,
            "leibniz": _run_leibniz, "lyapunov": _run_lyapunov,
            "dp": _run_dp, "euler": _run_euler, "nlp": _run_nlp}


def run_scenario(s: Scenario, tol_scale: float = 1.0,
                 seed_override: int | None = None) -> ScenarioReport:
    return _RUNNERS[s.kind](s, _rng(s, seed_override), tol_scale)


# ---------------------------------------------------------------------------
# catalogue


def _builtin_list() -> list[Scenario]:
    oracle_models = ["const-cost", "linear-control", "quad-tracking",
                     "two-shock-tracking", "box-drift"]
    return [
        Scenario("neg-abs", "geometry", {"study": "kink-atoms"},
                 {"support": 1e-12},
                 description="downward vee at 0: kink atoms, interval hull, "
                             "and the convexification identity"),
        Scenario("random-hulls", "geometry",
                 {"study": "random-hulls", "draws": 50}, {"support": 1e-9},
                 seed=2001,
                 description="hull support equals brute-force vertex maxima "
                             "on random clouds"),
        Scenario("minkowski-support", "geometry",
                 {"study": "minkowski", "draws": 50}, {"support": 1e-9},
                 seed=2002,
                 description="support additivity of set sums, shifts, and "
                             "dilations"),
        Scenario("aumann-supremum", "integral",
                 {"study": "supremum", "draws": 200, "max_atoms": 3,
                  "max_vertices": 4, "dims": [1, 2]}, {"support": 1e-9},
                 seed=2101,
                 description="selector-integral support is the weighted atom "
                             "support sum (supremum representation)"),
        Scenario("wstar-vs-aumann", "integral",
                 {"study": "wstar-envelope", "draws": 60}, {"support": 1e-9},
                 seed=2102,
                 description="selector sums sit inside the hulled integral, "
                             "which hulling reproduces"),
        Scenario("lyapunov-01", "lyapunov", {"family": "zero-one"},
                 {"gap": 1e-12}, refinement=(1, 2, 4, 8, 16, 32, 64),
                 description="zero-one family: convexification gap is exactly "
                             "1/(2N) and dies under refinement"),
        Scenario("lyapunov-circle", "lyapunov", {"family": "circle"},
                 refinement=(1, 2, 4, 8),
                 description="antipodal-pair family in the plane: the gap "
                             "shrinks geometrically"),
        Scenario("clarke-leibniz-regular", "leibniz",
                 {"study": "random-inclusion", "draws": 100, "max_atoms": 5},
                 {"inclusion": 1e-8}, seed=2201,
                 description="gradient of the integral inside the integral of "
                             "gradients; equality on all-regular draws"),
        Scenario("clarke-leibniz-strict", "leibniz",
                 {"study": "strict-witness", "weight": 0.4, "xbar": 0.25},
                 description="downward kink atom: the inclusion is strict by "
                             "at least a tenth of the atom weight"),
        Scenario("strict-smooth-leibniz", "leibniz",
                 {"study": "smooth-strict", "draws": 40},
                 {"interchange": 1e-10, "fd": 1e-4}, seed=2202,
                 description="smooth atoms: gradient interchange holds and "
                             "central differences confirm it"),
        Scenario("bellman-fixed-point", "dp",
                 {"study": "solve", "model": "linear-control",
                  "expect_value": 2.0, "pairs": 100},
                 {"value": 1e-8, "contraction": 1e-12}, seed=2301,
                 description="iteration reaches the known fixed point; sweeps "
                             "contract and are monotone"),
        Scenario("oracle-horizon", "dp",
                 {"study": "oracle", "models": oracle_models,
                  "horizons": list(range(1, 9))}, {"value": 1e-8},
                 description="geometric tail bound against exact finite-"
                             "horizon backward induction on five desk models"),
        Scenario("envelope-quadratic", "dp",
                 {"study": "envelope", "model": "quad-tracking",
                  "xbar": [0.5]}, {"support": 1e-8, "strict": 1e-8},
                 description="tracking model: value gradient set equals the "
                             "state gradient of the stage cost"),
        Scenario("envelope-viability-negative", "dp",
                 {"study": "envelope", "model": "chase-nlp", "xbar": [0.2]},
                 description="chasing constraint: the inclusion fails and the "
                             "report blames lower viability"),
        Scenario("euler-quadratic", "euler",
                 {"models": ["quad-tracking", "two-shock-tracking",
                             "box-drift"],
                  "perturb": {"model": "quad-tracking", "xbar": [0.5],
                              "ybar": [0.5], "floor": 0.1}},
                 {"residual": 1e-6},
                 description="first-order inclusion at computed optima on "
                             "three smooth models; perturbed controls are "
                             "rejected"),
        Scenario("euler-kinked", "euler",
                 {"models": ["kinked-drift"], "expect_raw": 0.4},
                 {"residual": 1e-6},
                 description="kinked model: the unconvexified route misses 0 "
                             "by the kink amplitude while the hulled route "
                             "contains it"),
        Scenario("nlp-chase", "nlp",
                 {"model": "chase-nlp", "xbar": [0.2],
                  "expect_multipliers": [[1.0]]},
                 {"multiplier": 1e-8, "image": 1e-6},
                 description="chasing constraint: multiplier set {1} and the "
                             "value subgradient lands in its image"),
        Scenario("nlp-degenerate", "nlp",
                 {"model": "degenerate-nlp", "xbar": [0.2],
                  "expect_disqualified": True},
                 description="duplicated equality: the qualification check "
                             "must reject"),
    ]


def available_builtins() -> dict:
    """Catalogue of bundled scenarios by name."""
    return {s.name: s for s in _builtin_list()}


def load_scenarios(source) -> list:
    """Resolve a run target into scenarios.

    Accepts a parsed document (dict or list), a builtin name, or the token
    'builtins'/'all' for the whole catalogue. Document form: a scenario
    object, or {"scenarios": [...]} where entries are scenario objects or
    builtin names.
    """
    builtins = available_builtins()
    if isinstance(source, str):
        if source in ("builtins", "all"):
            return sorted(builtins.values(), key=lambda s: s.name)
        if source in builtins:
            return [builtins[source]]
        raise ValueError(f"unknown builtin scenario {source!r}")
    if isinstance(source, list):
        source = {"scenarios": source}
    if not isinstance(source, dict):
        raise ValueError("scenario document must be an object or a list")
    if "scenarios" not in source:
        return [Scenario.from_json(source)]
    out = []
    for item in source["scenarios"]:
        if isinstance(item, str):
            if item not in builtins:
                raise ValueError(f"unknown builtin scenario {item!r}")
            out.append(builtins[item])
        else:
            out.append(Scenario.from_json(item))
    names = [s.name for s in out]
    if len(set(names)) != len(names):
        raise ValueError("duplicate scenario names in one document")
    return out


# ---------------------------------------------------------------------------
# suite execution and report assembly


@dataclass
class SuiteResult:
    reports: list
    exit_code: int
    capacity_errors: list = field(default_factory=list)

    def to_json(self) -> list:
        return [r.to_json() for r in self.reports]

    def summary(self) -> dict:
        counts = {"pass": 0, "hypothesis-violation": 0, "theorem-violation": 0}
        for r in self.reports:
            for c in r.checks:
                counts[c["classification"]] += 1
        return {"scenarios": len(self.reports), "checks": sum(counts.values()),
                **counts}


def run_suite(scenarios, jobs: int = 1, strict: bool = False,
              tol_scale: float = 1.0, seed: int | None = None) -> SuiteResult:
    """Run scenarios (possibly concurrently) into a name-sorted result.

    Capacity overruns abort the suite (exit 3); check failures map to exit 1
    only when classified as theorem violations, or on any failure under
    strict mode or a scenario's own strict mark.
    """
    scenarios = list(scenarios)
    capacity = []

    def one(s):
        try:
            return s, run_scenario(s, tol_scale=tol_scale, seed_override=seed)
        except CapacityError as e:
            return s, e

    if jobs > 1 and len(scenarios) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, scenarios))
    else:
        outcomes = [one(s) for s in scenarios]

    reports = []
    fatal = False
    for s, out in outcomes:
        if isinstance(out, CapacityError):
            capacity.append(f"{s.name}: {out}")
            continue
        reports.append((s, out))
    reports.sort(key=lambda pair: pair[1].scenario)
    for s, rep in reports:
        if rep.fatal(strict or s.strict):
            fatal = True
    code = 3 if capacity else (1 if fatal else 0)
    return SuiteResult(reports=[rep for _, rep in reports], exit_code=code,
                       capacity_errors=capacity)


def render_report(result: SuiteResult) -> str:
    return json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n"


def _render_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_outputs(result: SuiteResult, out_dir, run_info: dict | None = None) -> dict:
    """Write report.json, metadata.json, and tables/*.csv under out_dir.

    Only metadata.json carries wall-clock data, so report.json stays
    byte-identical across reruns of the same suite and seed.
    """
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json"}
    paths["report"].write_text(render_report(result))
    meta = {
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "tool": "subdiffdp",
        "version": __version__,
        "summary": result.summary(),
        "capacity_errors": result.capacity_errors,
    }
    meta.update(run_info or {})
    (out / "metadata.json").write_text(json.dumps(meta, indent=2,
                                                  sort_keys=True) + "\n")
    tables_written = []
    for rep in result.reports:
        for name, (header, rows) in rep.tables.items():
            tdir = out / "tables"
            tdir.mkdir(exist_ok=True)
            path = tdir / f"{name}.csv"
            path.write_text(_render_csv(header, rows))
            tables_written.append(str(path))
    paths["tables"] = tables_written
    return paths
