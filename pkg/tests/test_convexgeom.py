import itertools

import numpy as np
import pytest

from subdiffdp.convexgeom import (
    SetRep,
    contains_point,
    convexify,
    default_directions,
    distance_to_set,
    hausdorff_distance,
    minkowski_sum,
    normal_cone_box,
    scale,
    support,
    translate,
)
from subdiffdp.errors import CapacityError


def rng_for(seed):
    return np.random.Generator(np.random.Philox(key=seed))


def random_setrep(rng, dim, max_pieces=3, max_verts=4, box=2.0):
    n_pieces = int(rng.integers(1, max_pieces + 1))
    pieces = [rng.uniform(-box, box, size=(int(rng.integers(1, max_verts + 1)), dim))
              for _ in range(n_pieces)]
    return SetRep(dim=dim, pieces=tuple(pieces))


def sample_points(rng, S, n):
    # random convex combinations inside random pieces; a dense inner oracle
    out = []
    for _ in range(n):
        piece = S.pieces[int(rng.integers(len(S.pieces)))]
        w = rng.dirichlet(np.ones(len(piece)))
        out.append(w @ piece)
    return np.array(out)


def test_support_singleton():
    S = SetRep.singleton([1.0, 2.0])
    assert support(S, np.array([3.0, 4.0])) == pytest.approx(11.0, abs=1e-14)


def test_support_dimension_mismatch():
    S = SetRep.singleton([1.0, 2.0])
    with pytest.raises(ValueError):
        support(S, np.array([1.0]))


def test_minkowski_two_point_sets():
    A = SetRep.finite([[-1.0], [1.0]])
    B = SetRep.finite([[-1.0], [1.0]])
    C = minkowski_sum(A, B)
    # oracle: enumerate the 4 selector sums directly
    sums = sorted({a + b for a in (-1.0, 1.0) for b in (-1.0, 1.0)})
    assert sums == [-2.0, 0.0, 2.0]
    got = sorted(float(p[0, 0]) for p in C.pieces)
    assert np.allclose(got, sums, atol=1e-14)


def test_minkowski_support_additive():
    for seed in range(100):
        rng = rng_for(seed)
        dim = int(rng.integers(1, 4))
        A = random_setrep(rng, dim)
        B = random_setrep(rng, dim)
        C = minkowski_sum(A, B)
        for h in default_directions(dim, seed=seed + 1):
            err = abs(support(C, h) - (support(A, h) + support(B, h)))
            assert err < 1e-12


def test_minkowski_capacity():
    A = SetRep(dim=1, pieces=tuple([[float(i)]] for i in range(1001)))
    with pytest.raises(CapacityError):
        minkowski_sum(A, A)


def test_convexify_square_with_interior_point():
    S = SetRep.finite([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.25, 0.25]])
    hull = convexify(S)
    assert len(hull.pieces) == 1
    verts = {tuple(v) for v in np.round(hull.pieces[0], 12)}
    assert verts == {(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)}


def test_convexify_preserves_support():
    for seed in range(50):
        rng = rng_for(1000 + seed)
        dim = int(rng.integers(1, 4))
        S = random_setrep(rng, dim)
        H = convexify(S)
        for h in default_directions(dim, seed=seed):
            assert abs(support(S, h) - support(H, h)) < 1e-12


def test_no_duplicate_vertices_after_ops():
    rng = rng_for(7)
    pts = rng.uniform(-1, 1, size=(3, 2))
    S = SetRep(dim=2, pieces=(np.vstack([pts, pts + 1e-15]),))
    for piece in minkowski_sum(S, S).pieces:
        for i, j in itertools.combinations(range(len(piece)), 2):
            assert np.max(np.abs(piece[i] - piece[j])) > 1e-12


def test_hausdorff_identical_sets():
    rng = rng_for(11)
    for dim in (1, 2, 3):
        S = random_setrep(rng, dim)
        assert hausdorff_distance(S, S) < 1e-12


def test_hausdorff_points_vs_hull():
    A = SetRep.finite([[0.0], [1.0]])
    B = SetRep.hull_of([[0.0], [1.0]])
    # oracle: max over a fine grid of [0,1] of the distance to {0,1}
    grid = np.linspace(0.0, 1.0, 100001)
    oracle = max(min(abs(x), abs(x - 1.0)) for x in grid)
    d = hausdorff_distance(A, B)
    assert abs(d - 0.5) < 1e-12
    assert abs(d - oracle) < 1e-4


def test_hausdorff_convex_intervals():
    A = SetRep.hull_of([[0.0], [1.0]])
    B = SetRep.hull_of([[0.0], [2.0]])
    assert abs(hausdorff_distance(A, B) - 1.0) < 1e-12


def polygon_grid_oracle(poly, sites, n=220):
    # independent membership test via hull half-plane equations
    from scipy.spatial import ConvexHull

    hull = ConvexHull(poly)
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    ok = np.all(pts @ hull.equations[:, :2].T + hull.equations[:, 2] <= 1e-9, axis=1)
    pts = pts[ok]
    edge_pts = []
    cycle = poly[hull.vertices]
    for a, b in zip(cycle, np.roll(cycle, -1, axis=0)):
        ts = np.linspace(0.0, 1.0, 400)[:, None]
        edge_pts.append(a + ts * (b - a))
    pts = np.vstack([pts] + edge_pts)
    d2 = np.linalg.norm(pts[:, None, :] - sites[None, :, :], axis=2)
    return float(d2.min(axis=1).max())


def test_hausdorff_polygon_vs_points_matches_dense_oracle():
    rng = rng_for(23)
    for trial in range(20):
        sites = rng.uniform(-1, 1, size=(int(rng.integers(2, 9)), 2))
        poly = rng.uniform(-1, 1, size=(5, 2))
        P = SetRep.hull_of(poly)
        Q = SetRep.finite(sites)
        d = hausdorff_distance(P, Q)
        d_pq = polygon_grid_oracle(poly, sites)
        d_qp = max(distance_to_set(s, P) for s in sites)
        oracle = max(d_pq, d_qp)
        assert d >= oracle - 1e-9
        assert d <= oracle + 0.03


def test_distance_to_triangle():
    T = SetRep.hull_of([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert distance_to_set([0.25, 0.25], T) < 1e-12
    assert abs(distance_to_set([2.0, 0.0], T) - 1.0) < 1e-12
    assert abs(distance_to_set([1.0, 1.0], T) - np.sqrt(2) / 2) < 1e-12


def test_distance_matches_sampled_oracle():
    for seed in range(30):
        rng = rng_for(300 + seed)
        dim = int(rng.integers(1, 4))
        S = random_setrep(rng, dim)
        p = rng.uniform(-3, 3, size=dim)
        d = distance_to_set(p, S)
        sampled = sample_points(rng, S, 3000)
        d_up = float(np.min(np.linalg.norm(sampled - p, axis=1)))
        assert d <= d_up + 1e-12
        assert d >= d_up - 0.2


def test_translate_and_scale():
    S = SetRep.finite([[0.0, 1.0], [2.0, -1.0]])
    T = translate(S, [1.0, 1.0])
    assert sorted(map(tuple, T.vertices.tolist())) == [(1.0, 2.0), (3.0, 0.0)]
    Z = scale(S, 0.0)
    assert len(Z.pieces) == 1
    assert np.allclose(Z.vertices, 0.0)
    H = scale(S, 0.5)
    assert sorted(map(tuple, H.vertices.tolist())) == [(0.0, 0.5), (1.0, -0.5)]


def test_normal_cone_box_1d_upper():
    C = normal_cone_box([0.0], [1.0], [1.0], radius=5.0)
    assert support(C, np.array([1.0])) == pytest.approx(5.0)
    assert support(C, np.array([-1.0])) == pytest.approx(0.0)


def test_normal_cone_box_2d_mixed():
    C = normal_cone_box([0.0, 0.0], [1.0, 1.0], [1.0, 0.0], radius=1.0)
    verts = {tuple(v) for v in np.round(C.vertices, 12)}
    assert verts == {(0.0, 0.0), (1.0, 0.0), (0.0, -1.0), (1.0, -1.0)}


def test_normal_cone_box_interior_and_errors():
    C = normal_cone_box([0.0], [1.0], [0.5], radius=2.0)
    assert np.allclose(C.vertices, 0.0)
    with pytest.raises(ValueError):
        normal_cone_box([0.0], [1.0], [1.5], radius=1.0)
    with pytest.raises(ValueError):
        normal_cone_box([0.0], [1.0], [0.5], radius=0.0)


def test_normal_cone_radius_monotone():
    lo, hi = np.zeros(2), np.ones(2)
    for ybar in ([0.0, 0.0], [1.0, 0.5], [1.0, 1.0]):
        small = normal_cone_box(lo, hi, ybar, radius=1.0)
        big = normal_cone_box(lo, hi, ybar, radius=3.0)
        for h in default_directions(2):
            assert support(small, h) <= support(big, h) + 1e-12


def test_contains_point():
    S = SetRep.hull_of([[0.0], [1.0]])
    assert contains_point(S, [0.3])
    assert not contains_point(S, [1.2])


def test_json_roundtrip():
    S = SetRep(dim=2, pieces=(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[3.0, 3.0]])))
    R = SetRep.from_json(S.to_json())
    assert R.dim == S.dim
    assert len(R.pieces) == len(S.pieces)
    for h in default_directions(2):
        assert abs(support(S, h) - support(R, h)) < 1e-15
