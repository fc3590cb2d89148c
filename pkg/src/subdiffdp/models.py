"""Reference control problems with hand-checkable solutions.

Each entry builds a small model whose optimal controls land exactly on the
grid, so the grid-restricted engine solves the continuous problem and the
sensitivity checks can be compared against closed forms derived by hand.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measure import StochasticKernel
from .nonsmooth import Affine, Min, Quadratic, Scale, Sum
from .dp.model import BoxMap, DPModel, FiniteMap, NlpMap


def _grid(lo: float = -1.0, hi: float = 1.0, steps: int = 21) -> np.ndarray:
    return np.linspace(lo, hi, steps).reshape(-1, 1)


def _single_kernel() -> StochasticKernel:
    return StochasticKernel(rows=np.array([[1.0]]))


def _quad_pair(qxx: float, qyy: float, ax: float, ay: float, b: float) -> Quadratic:
    return Quadratic(Q=np.diag([qxx, qyy]), a=np.array([ax, ay]), b=b)


@dataclass(frozen=True)
class DeskModel:
    name: str
    model: DPModel
    base_state: np.ndarray
    base_shock: int
    tags: tuple
    facts: dict = field(default_factory=dict)
    note: str = ""


def _const_cost() -> DeskModel:
    grid = _grid(steps=5)
    model = DPModel(
        grid=grid, shocks=("s",), kernel=_single_kernel(), beta=0.5,
        costs=(Affine(np.zeros(2), 1.0),),
        constraint=FiniteMap.uniform(grid, grid.shape[0], 1),
    )
    return DeskModel("const-cost", model, np.array([0.0]), 0, ("oracle",),
                     facts={"fixed_point": 2.0},
                     note="unit cost everywhere; value is the geometric series 1/(1-beta)")


def _linear_control() -> DeskModel:
    grid = np.array([[0.0], [1.0]])
    model = DPModel(
        grid=grid, shocks=("s",), kernel=_single_kernel(), beta=0.5,
        costs=(Affine(np.array([0.0, 1.0]), 1.0),),
        constraint=FiniteMap.uniform(grid, 2, 1),
    )
    return DeskModel("linear-control", model, np.array([0.0]), 0, ("oracle",),
                     facts={"fixed_point": 2.0, "policy": 0.0},
                     note="cost 1+y over y in {0,1}; v = 2 and the cheap control wins")


def _quad_tracking() -> DeskModel:
    # v(x) = (x-0.3)^2 + 0.06 with the control resting at 0.1
    model = DPModel(
        grid=_grid(), shocks=("s",), kernel=_single_kernel(), beta=0.5,
        costs=(_quad_pair(2.0, 2.0, -0.6, 0.0, 0.09),),
        constraint=BoxMap.of([-1.0], [1.0], 1),
    )
    return DeskModel("quad-tracking", model, np.array([0.5]), 0,
                     ("oracle", "smooth-euler", "envelope"),
                     facts={"target": 0.3, "policy": 0.1, "value_const": 0.06},
                     note="quadratic state tracking plus control effort")


def _two_shock_tracking() -> DeskModel:
    # per-shock anchors 0.4 / -0.6 with controls resting at 0.2 / 0.1
    kernel = StochasticKernel(rows=np.array([[0.6, 0.4], [0.3, 0.7]]))
    costs = (
        _quad_pair(2.0, 2.0, -0.8, -0.6, 0.16 + 0.09),
        _quad_pair(2.0, 2.0, 1.2, -0.6, 0.36 + 0.09),
    )
    model = DPModel(
        grid=_grid(), shocks=("lo", "hi"), kernel=kernel, beta=0.5,
        costs=costs, constraint=BoxMap.of([-1.0], [1.0], 2),
    )
    return DeskModel("two-shock-tracking", model, np.array([0.5]), 0,
                     ("oracle", "smooth-euler"),
                     facts={"policies": (0.2, 0.1)},
                     note="two-state shock chain; anchors chosen so controls sit on the grid")


def _box_drift() -> DeskModel:
    # drift -y pushes the control to the box edge; the cone absorbs it
    model = DPModel(
        grid=_grid(), shocks=("s",), kernel=_single_kernel(), beta=0.5,
        costs=(Quadratic(Q=np.diag([0.2, 0.0]), a=np.array([-0.06, -1.0]), b=0.009),),
        constraint=BoxMap.of([-1.0], [1.0], 1),
    )
    return DeskModel("box-drift", model, np.array([0.5]), 0,
                     ("oracle", "smooth-euler", "boundary"),
                     facts={"policy": 1.0, "drift": -0.93},
                     note="linear control reward against a quadratic state anchor at 0.3")


def _kinked_drift() -> DeskModel:
    # -0.8|x| + y^2 with the control pinned at the kink.  A downward kink is
    # the one whose unconvexified gradient set stays two atoms ({-0.8, 0.8});
    # an upward kink is regular and both integral routes would coincide.
    kink = Scale(0.8, Min((Affine(np.array([1.0, 0.0]), 0.0),
                           Affine(np.array([-1.0, 0.0]), 0.0))))
    cost = Sum((kink, Quadratic(Q=np.diag([0.0, 2.0]), a=np.zeros(2), b=0.0)))
    model = DPModel(
        grid=_grid(), shocks=("s",), kernel=_single_kernel(), beta=0.5,
        costs=(cost,), constraint=FiniteMap.uniform(np.array([[0.0]]), 21, 1),
    )
    return DeskModel("kinked-drift", model, np.array([0.4]), 0,
                     ("nonsmooth-euler",),
                     facts={"policy": 0.0, "raw_residual": 0.4},
                     note="kinked state cost; the raw route misses 0 while the hulled one holds")


def _chase_nlp() -> DeskModel:
    # minimize y subject to y >= x: value v(x) = x with multiplier 1
    model = DPModel(
        grid=_grid(), shocks=("s",), kernel=_single_kernel(), beta=0.0,
        costs=(Affine(np.array([0.0, 1.0]), 0.0),),
        constraint=NlpMap.shared(inequalities=(Affine(np.array([1.0, -1.0]), 0.0),),
                                 n_shocks=1),
    )
    return DeskModel("chase-nlp", model, np.array([0.2]), 0,
                     ("nlp", "envelope-negative"),
                     facts={"multiplier": 1.0, "value_slope": 1.0},
                     note="constraint chases the state; lower viability fails by design")


def _degenerate_nlp() -> DeskModel:
    # the same equality twice: qualification must be rejected
    eq = Affine(np.array([1.0, -1.0]), 0.0)
    model = DPModel(
        grid=_grid(), shocks=("s",), kernel=_single_kernel(), beta=0.0,
        costs=(Quadratic(Q=np.diag([0.0, 2.0]), a=np.zeros(2), b=0.0),),
        constraint=NlpMap.shared(equalities=(eq, eq), n_shocks=1),
    )
    return DeskModel("degenerate-nlp", model, np.array([0.2]), 0,
                     ("nlp", "mfcq-negative"),
                     facts={"mfcq": False},
                     note="duplicated equality gradients; rank test must fail")


_BUILDERS = (
    _const_cost,
    _linear_control,
    _quad_tracking,
    _two_shock_tracking,
    _box_drift,
    _kinked_drift,
    _chase_nlp,
    _degenerate_nlp,
)


def desk_models() -> dict:
    out = {}
    for build in _BUILDERS:
        entry = build()
        out[entry.name] = entry
    return out


def build_model(name: str) -> DeskModel:
    table = desk_models()
    if name not in table:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(sorted(table))}")
    return table[name]


def models_with_tag(tag: str) -> list:
    return [m for m in desk_models().values() if tag in m.tags]
