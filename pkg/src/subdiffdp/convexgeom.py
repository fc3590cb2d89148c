"""Polytope-union sets, support functions, and exact set distances.

A set is stored as a finite union of convex polytopes, each polytope given by
a vertex list. All operations treat a piece as the convex hull of its
vertices. Hulls are reduced exactly in dimension 1 and 2; higher-dimensional
pieces may keep redundant vertices, which changes nothing downstream because
supports and distances ignore redundancy.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, Voronoi

from .errors import CapacityError

DEDUP_TOL = 1e-12
PIECE_CAP = 10**6
_BOUNDARY_TOL = 1e-9


def _dedup_rows(pts: np.ndarray) -> np.ndarray:
    """Drop rows that repeat an earlier row within DEDUP_TOL (inf norm)."""
    keep: list[np.ndarray] = []
    for row in pts:
        if not any(np.max(np.abs(row - k)) <= DEDUP_TOL for k in keep):
            keep.append(row)
    return np.array(keep)


def _hull_vertices(pts: np.ndarray) -> np.ndarray:
    """Extreme points of the hull of pts, exact in dimension 1 and 2.

    In dimension >= 3 the deduplicated points are returned unchanged.
    2-D output is ordered counterclockwise; degenerate (collinear) inputs
    are reduced to segment endpoints before Qhull ever sees them.
    """
    pts = _dedup_rows(np.atleast_2d(np.asarray(pts, dtype=float)))
    if len(pts) <= 1:
        return pts
    dim = pts.shape[1]
    if dim == 1:
        return np.array([[pts[:, 0].min()], [pts[:, 0].max()]])
    if dim != 2:
        return pts
    center = pts.mean(axis=0)
    spread = pts - center
    if len(pts) == 2 or np.linalg.svd(spread, compute_uv=False)[-1] < 1e-12:
        # collinear: endpoints along the principal direction
        direction = spread[np.argmax(np.linalg.norm(spread, axis=1))]
        nrm = np.linalg.norm(direction)
        if nrm < 1e-15:
            return pts[:1]
        proj = spread @ (direction / nrm)
        return np.array([pts[np.argmin(proj)], pts[np.argmax(proj)]])
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return pts
    return pts[hull.vertices]


def _canonical_piece(pts: np.ndarray) -> np.ndarray:
    verts = _hull_vertices(pts)
    order = np.lexsort(verts.T[::-1])
    verts = np.ascontiguousarray(verts[order])
    verts.flags.writeable = False
    return verts


@dataclass(frozen=True, eq=False)
class SetRep:
    """Union of convex polytopes in R^dim, each piece a (k, dim) vertex array."""

    dim: int
    pieces: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.pieces:
            raise ValueError("a set needs at least one piece")
        cleaned = []
        seen = set()
        for raw in self.pieces:
            pts = np.atleast_2d(np.asarray(raw, dtype=float))
            if pts.size == 0:
                raise ValueError("empty piece")
            if pts.shape[1] != self.dim:
                raise ValueError(f"piece has dimension {pts.shape[1]}, expected {self.dim}")
            if not np.all(np.isfinite(pts)):
                raise ValueError("piece vertices must be finite")
            piece = _canonical_piece(pts)
            key = (np.round(piece, 12) + 0.0).tobytes() + bytes([piece.shape[0] % 251])
            if key not in seen:
                seen.add(key)
                cleaned.append(piece)
        object.__setattr__(self, "pieces", tuple(cleaned))

    @classmethod
    def singleton(cls, point) -> "SetRep":
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(dim=p.size, pieces=(p.reshape(1, -1),))

    @classmethod
    def hull_of(cls, points) -> "SetRep":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(dim=pts.shape[1], pieces=(pts,))

    @classmethod
    def finite(cls, points) -> "SetRep":
        """Finite point set: one singleton piece per point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(dim=pts.shape[1], pieces=tuple(p.reshape(1, -1) for p in pts))

    @property
    def vertices(self) -> np.ndarray:
        return np.vstack(self.pieces)

    def is_convex_piece(self) -> bool:
        return len(self.pieces) == 1

    def to_json(self) -> dict:
        return {"dim": self.dim, "pieces": [p.tolist() for p in self.pieces]}

    @classmethod
    def from_json(cls, data: dict) -> "SetRep":
        return cls(dim=int(data["dim"]), pieces=tuple(np.asarray(p, dtype=float) for p in data["pieces"]))


def support(S: SetRep, h) -> float:
    """sup over the set of <x, h>."""
    h = np.asarray(h, dtype=float)
    if h.shape != (S.dim,):
        raise ValueError(f"direction has shape {h.shape}, expected ({S.dim},)")
    return max(float(np.max(p @ h)) for p in S.pieces)


def translate(S: SetRep, v) -> SetRep:
    v = np.asarray(v, dtype=float)
    if v.shape != (S.dim,):
        raise ValueError("translation vector dimension mismatch")
    return SetRep(dim=S.dim, pieces=tuple(p + v for p in S.pieces))


def scale(S: SetRep, c: float) -> SetRep:
    return SetRep(dim=S.dim, pieces=tuple(float(c) * p for p in S.pieces))


def minkowski_sum(A: SetRep, B: SetRep) -> SetRep:
    """Pairwise piece sums; identical result pieces are merged."""
    if A.dim != B.dim:
        raise ValueError("operand dimensions differ")
    n_pairs = len(A.pieces) * len(B.pieces)
    if n_pairs > PIECE_CAP:
        raise CapacityError(
            f"minkowski piece budget exceeded ({n_pairs} > {PIECE_CAP}); "
            "consider the convexified integral instead"
        )
    pieces = []
    for pa in A.pieces:
        for pb in B.pieces:
            sums = (pa[:, None, :] + pb[None, :, :]).reshape(-1, A.dim)
            pieces.append(sums)
    return SetRep(dim=A.dim, pieces=tuple(pieces))


def convexify(S: SetRep) -> SetRep:
    """Single-piece hull of the union."""
    return SetRep(dim=S.dim, pieces=(S.vertices,))


def default_directions(dim: int, n: int | None = None, seed: int = 0) -> np.ndarray:
    """Unit test directions: +-1 in 1-D, 64 uniform angles in 2-D, 256 seeded
    Gaussian directions in dimension >= 3."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        n = 64 if n is None else n
        theta = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(theta), np.sin(theta)])
    n = 256 if n is None else n
    rng = np.random.Generator(np.random.Philox(key=seed))
    raw = rng.normal(size=(n, dim))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _project_dist_convex(p: np.ndarray, verts: np.ndarray) -> float:
    """Exact distance from p to the hull of verts."""
    dim = verts.shape[1]
    if len(verts) == 1:
        return float(np.linalg.norm(p - verts[0]))
    if dim == 1:
        lo, hi = verts[:, 0].min(), verts[:, 0].max()
        return float(abs(p[0] - np.clip(p[0], lo, hi)))
    if dim == 2:
        return _project_dist_2d(p, verts)
    # general dimension: the nearest point lies on a face spanned by at most
    # dim+1 affinely independent vertices, so subset enumeration is exact
    verts = _dedup_rows(verts)
    if len(verts) > 24:
        raise CapacityError("point projection supports at most 24 vertices in dimension >= 3")
    best = np.inf
    idx = range(len(verts))
    for size in range(1, min(len(verts), dim + 1) + 1):
        for subset in itertools.combinations(idx, size):
            V = verts[list(subset)]
            base, rest = V[0], V[1:] - V[0]
            if size == 1:
                cand = base
            else:
                coef, *_ = np.linalg.lstsq(rest.T, p - base, rcond=None)
                if np.any(coef < -1e-12) or coef.sum() > 1.0 + 1e-12:
                    continue
                cand = base + coef @ rest
            best = min(best, float(np.linalg.norm(p - cand)))
    return best


def _project_dist_2d(p: np.ndarray, verts: np.ndarray) -> float:
    hull = _hull_vertices(verts)
    if len(hull) == 1:
        return float(np.linalg.norm(p - hull[0]))
    if len(hull) == 2:
        return _point_segment_dist(p, hull[0], hull[1])
    # counterclockwise polygon: inside iff every edge cross product >= 0
    inside = True
    best = np.inf
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        edge = b - a
        if edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) < -1e-12:
            inside = False
        best = min(best, _point_segment_dist(p, a, b))
    return 0.0 if inside else best


def _point_segment_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    d = b - a
    denom = float(d @ d)
    t = 0.0 if denom < 1e-30 else float(np.clip((p - a) @ d / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * d)))


def distance_to_set(p, S: SetRep) -> float:
    """Euclidean distance from a point to the union."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (S.dim,):
        raise ValueError("point dimension mismatch")
    return min(_project_dist_convex(p, piece) for piece in S.pieces)


def contains_point(S: SetRep, p, tol: float = 1e-9) -> bool:
    return distance_to_set(p, S) <= tol


def _sup_dist_interval_to_union(piece: np.ndarray, Q: SetRep) -> float:
    """Exact sup over a 1-D segment of the distance to a union of intervals."""
    a, b = float(piece[:, 0].min()), float(piece[:, 0].max())
    intervals = sorted((float(q[:, 0].min()), float(q[:, 0].max())) for q in Q.pieces)
    cands = [a, b]
    for (_, u), (lo, _) in zip(intervals, intervals[1:]):
        mid = 0.5 * (u + lo)
        if a <= mid <= b:
            cands.append(mid)
    return max(distance_to_set(np.array([x]), Q) for x in cands)


def _sup_dist_poly_to_points(piece: np.ndarray, sites: np.ndarray) -> float:
    """Exact sup over a 2-D polytope piece of the distance to finite sites.

    Candidates: polygon vertices, nearest-site bisector crossings of each
    edge, and Voronoi vertices interior to the polygon. Within each Voronoi
    cell the distance is convex, so its maximum over the clipped cell sits at
    one of these points.
    """
    hull = _hull_vertices(piece)
    cands = [v for v in hull]
    if len(hull) >= 2:
        edges = list(zip(hull, np.roll(hull, -1, axis=0))) if len(hull) > 2 else [(hull[0], hull[1])]
        if len(sites) <= 3:
            pairs = list(itertools.combinations(range(len(sites)), 2))
        else:
            try:
                vor = Voronoi(sites)
                pairs = [tuple(r) for r in vor.ridge_points]
                for v in vor.vertices:
                    if _project_dist_2d(v, hull) <= 1e-12:
                        cands.append(v)
            except QhullError:
                if len(sites) > 64:
                    raise
                pairs = list(itertools.combinations(range(len(sites)), 2))
        for a, b in edges:
            d = b - a
            for i, j in pairs:
                qi, qj = sites[i], sites[j]
                w = qj - qi
                denom = float(w @ d)
                if abs(denom) < 1e-30:
                    continue
                t = (0.5 * (qj @ qj - qi @ qi) - float(w @ a)) / denom
                if -1e-12 <= t <= 1.0 + 1e-12:
                    cands.append(a + np.clip(t, 0.0, 1.0) * d)
    return max(float(np.min(np.linalg.norm(sites - c, axis=1))) for c in cands)


def _directed_hausdorff(P: SetRep, Q: SetRep) -> float:
    """sup over P of the distance to Q.

    Exact when Q is a single polytope (distance to a convex set is convex, so
    vertex enumeration over P suffices), when P's pieces are points, and in
    the 1-D and 2-D point-target cases. Remaining union-vs-union shapes fall
    back to vertex candidates, a lower bound.
    """
    if len(Q.pieces) == 1:
        return max(distance_to_set(v, Q) for v in P.vertices)
    best = 0.0
    q_all_points = all(len(q) == 1 for q in Q.pieces)
    for piece in P.pieces:
        if len(piece) == 1:
            val = distance_to_set(piece[0], Q)
        elif P.dim == 1:
            val = _sup_dist_interval_to_union(piece, Q)
        elif P.dim == 2 and q_all_points:
            val = _sup_dist_poly_to_points(piece, Q.vertices)
        else:
            val = max(distance_to_set(v, Q) for v in piece)
        best = max(best, val)
    return best


def hausdorff_distance(A: SetRep, B: SetRep, dirs=None) -> float:
    """Hausdorff distance between two sets.

    Two convex (single-piece) operands are compared through support values
    over the direction set, exact as directions densify. When a union is
    involved the two-sided point-to-set form is used; see _directed_hausdorff
    for the exactness cases.
    """
    if A.dim != B.dim:
        raise ValueError("operand dimensions differ")
    if A.is_convex_piece() and B.is_convex_piece():
        if dirs is None:
            dirs = default_directions(A.dim)
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(norms < 1e-15):
            raise ValueError("zero direction")
        dirs = dirs / norms[:, None]
        return max(abs(support(A, h) - support(B, h)) for h in dirs)
    return max(_directed_hausdorff(A, B), _directed_hausdorff(B, A))


def normal_cone_box(lo, hi, ybar, radius: float) -> SetRep:
    """Outward normal cone of a box at ybar, truncated to the radius box.

    Coordinates at the lower bound contribute [-radius, 0], at the upper
    bound [0, radius], interior coordinates {0}; a pinned coordinate
    (lo == hi) contributes the full [-radius, radius].
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    y = np.atleast_1d(np.asarray(ybar, dtype=float))
    if not (lo.shape == hi.shape == y.shape):
        raise ValueError("box and point dimensions differ")
    if np.any(lo > hi + _BOUNDARY_TOL):
        raise ValueError("box has lo > hi")
    if np.any(y < lo - _BOUNDARY_TOL) or np.any(y > hi + _BOUNDARY_TOL):
        raise ValueError("point lies outside the box")
    if radius <= 0:
        raise ValueError("radius must be positive")
    spans = []
    for li, ui, yi in zip(lo, hi, y):
        a = -radius if yi <= li + _BOUNDARY_TOL else 0.0
        b = radius if yi >= ui - _BOUNDARY_TOL else 0.0
        spans.append((a, b) if a != b else (a,))
    corners = np.array(list(itertools.product(*spans)), dtype=float)
    return SetRep(dim=y.size, pieces=(corners,))
