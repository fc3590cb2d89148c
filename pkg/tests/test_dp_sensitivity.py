import functools

import numpy as np
import pytest

from subdiffdp.convexgeom import support
from subdiffdp.dp import (DPModel, FiniteMap, check_viability,
                          envelope_check, euler_inclusion_residual,
                          grid_spacing, limiting_euler_check,
                          policy_multifunction, strict_value_derivative_check,
                          value_function_subdiff, value_iteration)
from subdiffdp.measure import StochasticKernel
from subdiffdp.models import build_model
from subdiffdp.nonsmooth import Affine, Max, Quadratic, Scale, Sum


@functools.lru_cache(maxsize=None)
def solved(name):
    entry = build_model(name)
    table, _ = value_iteration(entry.model, tol=1e-8)
    policy = policy_multifunction(table, entry.model)
    return entry, table, policy


def crossing_branches_model():
    # u(x,y) = x*y over y in {-1,1}: v(x) = -|x|, two branches crossing at 0
    grid = np.linspace(-1.0, 1.0, 21).reshape(-1, 1)
    Q = np.array([[0.0, 1.0], [1.0, 0.0]])
    return DPModel(grid=grid, shocks=("s",),
                   kernel=StochasticKernel(rows=np.array([[1.0]])), beta=0.0,
                   costs=(Quadratic(Q=Q, a=np.zeros(2), b=0.0),),
                   constraint=FiniteMap.uniform(np.array([[-1.0], [1.0]]), 21, 1))


def test_grid_spacing():
    assert grid_spacing(np.linspace(0, 1, 11).reshape(-1, 1)) == pytest.approx(0.1)
    assert grid_spacing(np.array([[0.3]])) == 1.0


def test_viability_state_independent_map():
    entry, table, policy = solved("quad-tracking")
    out = check_viability(entry.model, policy, np.array([0.5]), 0.25)
    assert out == {"lower": True, "upper": True, "state_independent": True,
                   "pairs_checked": out["pairs_checked"]}
    assert out["pairs_checked"] > 0


def test_viability_chasing_constraint_fails_both_ways():
    entry, table, policy = solved("chase-nlp")
    out = check_viability(entry.model, policy, np.array([0.2]), 0.25)
    assert not out["lower"]
    assert not out["upper"]
    assert not out["state_independent"]


def test_value_subdiff_smooth_point():
    entry, table, _ = solved("quad-tracking")
    for kind in ("clarke", "limiting"):
        d = value_function_subdiff(table, 0, np.array([0.5]), kind=kind)
        assert d.exact
        assert d.set.vertices.shape == (1, 1)
        assert d.set.vertices[0, 0] == pytest.approx(0.4, abs=1e-12)


def test_value_subdiff_downward_kink():
    entry, table, _ = solved("kinked-drift")
    lim = value_function_subdiff(table, 0, np.array([0.0]), kind="limiting")
    assert lim.exact and not lim.regular
    assert sorted(lim.set.vertices[:, 0].tolist()) == [-0.8, 0.8]
    # strictly between the atoms: only in the hulled set
    cl = value_function_subdiff(table, 0, np.array([0.0]), kind="clarke")
    assert support(cl.set, np.array([1.0])) == pytest.approx(0.8)
    assert support(cl.set, np.array([-1.0])) == pytest.approx(0.8)
    assert len(cl.set.pieces) == 1


def test_value_subdiff_upward_kink_is_regular():
    # beta=0 with u = |x| + y^2: v = |x|, regular at the kink
    grid = np.linspace(-1.0, 1.0, 21).reshape(-1, 1)
    cost = Sum((Max((Affine(np.array([1.0, 0.0]), 0.0),
                     Affine(np.array([-1.0, 0.0]), 0.0))),
                Quadratic(Q=np.diag([0.0, 2.0]), a=np.zeros(2), b=0.0)))
    m = DPModel(grid=grid, shocks=("s",),
                kernel=StochasticKernel(rows=np.array([[1.0]])), beta=0.0,
                costs=(cost,),
                constraint=FiniteMap.uniform(np.array([[0.0]]), 21, 1))
    table, _ = value_iteration(m, tol=1e-8)
    lim = value_function_subdiff(table, 0, np.array([0.0]), kind="limiting")
    assert lim.regular
    assert support(lim.set, np.array([1.0])) == pytest.approx(1.0)
    assert support(lim.set, np.array([-1.0])) == pytest.approx(1.0)


def test_value_subdiff_branch_crossing():
    m = crossing_branches_model()
    table, _ = value_iteration(m, tol=1e-8)
    assert np.allclose(table.values[:, 0], -np.abs(m.grid[:, 0]), atol=1e-12)
    lim = value_function_subdiff(table, 0, np.array([0.0]), kind="limiting")
    assert sorted(lim.set.vertices[:, 0].tolist()) == [-1.0, 1.0]
    assert not lim.regular
    smooth = value_function_subdiff(table, 0, np.array([0.5]), kind="limiting")
    assert smooth.set.vertices[0, 0] == pytest.approx(-1.0)


def test_value_subdiff_rejects_outside_points():
    entry, table, _ = solved("quad-tracking")
    with pytest.raises(ValueError, match="outside"):
        value_function_subdiff(table, 0, np.array([1.5]))
    with pytest.raises(ValueError, match="kind"):
        value_function_subdiff(table, 0, np.array([0.5]), kind="frechet")


def test_envelope_quad_tracking_passes():
    entry, table, policy = solved("quad-tracking")
    rep = envelope_check(entry.model, table, np.array([0.5]), policy=policy)
    assert rep.passed
    assert rep.max_residual <= 1e-8
    assert rep.hypotheses == {"lower_viable": True, "upper_viable": True,
                              "cost_regular": True, "value_exact": True,
                              "value_lipschitz": True}
    assert rep.details["ybar"] == pytest.approx([0.1])
    assert all(d["residual"] <= 1e-8 for d in rep.per_direction)


def test_envelope_state_free_cost():
    entry, table, policy = solved("const-cost")
    rep = envelope_check(entry.model, table, np.array([0.5]), policy=policy)
    assert rep.passed
    assert rep.max_residual == 0.0


def test_envelope_negative_control():
    # v(x) = x but the stage cost carries no x at all: the inclusion must fail
    # and the report must blame viability, not the calculus
    entry, table, policy = solved("chase-nlp")
    rep = envelope_check(entry.model, table, np.array([0.2]), policy=policy)
    assert not rep.passed
    assert rep.max_residual == pytest.approx(1.0, abs=1e-9)
    assert not rep.hypotheses["lower_viable"]


def test_strict_derivative_agreement():
    entry, table, _ = solved("quad-tracking")
    rep = strict_value_derivative_check(entry.model, table, np.array([0.5]))
    assert rep.passed
    assert rep.details["verdict"] == "checked"
    assert rep.details["gradient"] == pytest.approx([0.4], abs=1e-10)
    assert rep.details["fd_gap"] <= 1e-4


def test_strict_derivative_tie_inapplicable():
    m = crossing_branches_model()
    table, _ = value_iteration(m, tol=1e-8)
    rep = strict_value_derivative_check(m, table, np.array([0.0]))
    assert rep.passed
    assert rep.details["verdict"] == "inapplicable"
    assert rep.details["reason"] == "policy tie"
    assert not rep.hypotheses["unique_policy"]


def test_strict_derivative_kink_inapplicable():
    entry, table, _ = solved("kinked-drift")
    rep = strict_value_derivative_check(entry.model, table, np.array([0.0]))
    assert rep.details["verdict"] == "inapplicable"
    assert rep.details["reason"] == "kink at the point"


def test_euler_residual_zero_at_optimum():
    for name in ("quad-tracking", "two-shock-tracking", "box-drift"):
        entry, table, policy = solved(name)
        for wi in range(entry.model.n_shocks):
            r = euler_inclusion_residual(entry.model, table, policy,
                                         entry.base_state, wi)
            assert r <= 1e-6, (name, wi, r)


def test_euler_residual_detects_perturbation():
    entry, table, policy = solved("quad-tracking")
    r = euler_inclusion_residual(entry.model, table, policy, np.array([0.5]), 0,
                                 ybar=np.array([0.5]))
    assert r == pytest.approx(1.2, abs=1e-9)
    assert r >= 0.1


def test_euler_cone_radius_monotone():
    entry, table, policy = solved("box-drift")
    rs = [euler_inclusion_residual(entry.model, table, policy,
                                   entry.base_state, 0, cone_radius=r)
          for r in (0.25, 0.5, 0.93, 2.0, 10.0)]
    assert rs[0] == pytest.approx(0.93 - 0.25, abs=1e-9)
    assert rs[1] == pytest.approx(0.93 - 0.5, abs=1e-9)
    assert rs[2] <= 1e-9
    assert all(a >= b - 1e-12 for a, b in zip(rs, rs[1:]))
    assert rs[-1] <= 1e-9


def test_euler_check_two_shock():
    entry, table, policy = solved("two-shock-tracking")
    for wi, want in ((0, 0.2), (1, 0.1)):
        rep = limiting_euler_check(entry.model, table, policy,
                                   entry.base_state, wi)
        assert rep.passed
        assert rep.max_residual <= 1e-6
        assert rep.details["ybar"] == pytest.approx([want], abs=1e-12)
        assert rep.hypotheses["terms_exact"]
        assert all(d["margin"] >= -1e-12 for d in rep.per_direction)


def test_euler_check_raw_dominates_on_kink():
    entry, table, policy = solved("kinked-drift")
    rep = limiting_euler_check(entry.model, table, policy, entry.base_state, 0)
    assert rep.passed
    assert rep.details["raw_residual"] == pytest.approx(0.4, abs=1e-12)
    assert rep.details["convexified_residual"] <= 1e-12
    assert rep.details["raw_residual"] >= rep.details["convexified_residual"]
    assert rep.details["formulation_gap"] <= 1e-9
    assert np.allclose(rep.details["x_star_candidates"], [[-0.8]], atol=1e-12)


def test_euler_check_nlp_cone():
    entry, table, policy = solved("chase-nlp")
    rep = limiting_euler_check(entry.model, table, policy, np.array([0.2]), 0,
                               cone_radius=10.0)
    assert rep.passed
    small = euler_inclusion_residual(entry.model, table, policy,
                                     np.array([0.2]), 0, cone_radius=0.25)
    assert small == pytest.approx(0.75, abs=1e-9)


def test_euler_check_requires_qualification():
    entry, table, policy = solved("degenerate-nlp")
    with pytest.raises(RuntimeError, match="mfcq_check"):
        limiting_euler_check(entry.model, table, policy, np.array([0.2]), 0)


def test_euler_check_per_direction_margins():
    entry, table, policy = solved("quad-tracking")
    dirs = np.array([[1.0], [-1.0]])
    rep = limiting_euler_check(entry.model, table, policy, np.array([0.5]), 0,
                               dirs=dirs)
    assert [d["dir"] for d in rep.per_direction] == [[1.0], [-1.0]]
    assert all(d["margin"] >= -1e-12 for d in rep.per_direction)
