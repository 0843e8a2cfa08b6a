"""Multiply-connected 2D boundary geometry from periodic cubic splines.

A boundary is an outer closed curve plus zero or more interior holes. Each
curve is the periodic (C^2) cubic spline through its knots, discretized at
nodes placed uniformly in the spline parameter. Quadrature weights are the
non-uniform trapezoid weights w_i = |x'(t_i)| * dt, which integrate smooth
periodic densities on the spline curve to O(h^4) (limited by the spline's
third-derivative jumps at knots).

Orientation convention: the outer curve is traversed counterclockwise and
holes clockwise, so the normal n = (y', -x')/|x'| points out of the fluid
domain everywhere (away from the interior at the outer curve, into each
hole at hole curves).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree
from shapely.geometry import LinearRing

logger = logging.getLogger(__name__)

OUTER = "outer"
HOLE = "hole"


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CurveSpec:
    """Closed curve defined by spline knots.

    Parameters
    ----------
    knots : (k, 2) array
        Ordered knot points; the curve closes implicitly (do not repeat the
        first point). At least 4 knots.
    n_nodes : int
        Number of quadrature nodes, >= number of knots.
    orientation : {"outer", "hole"}
        Outer curves must be counterclockwise, holes clockwise.
    """

    knots: np.ndarray
    n_nodes: int
    orientation: str = OUTER

    def __post_init__(self):
        knots = np.ascontiguousarray(np.asarray(self.knots, dtype=float))
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 2 or knots.shape[1] != 2 or len(knots) < 4:
            raise GeometryError("need >= 4 knot points of shape (k, 2)")
        if self.n_nodes < len(knots):
            raise GeometryError("n_nodes must be >= number of knots")
        if self.orientation not in (OUTER, HOLE):
            raise GeometryError(f"unknown orientation {self.orientation!r}")
        area = _signed_area(knots)
        if self.orientation == OUTER and area <= 0:
            raise GeometryError("outer curve knots must be counterclockwise")
        if self.orientation == HOLE and area >= 0:
            raise GeometryError("hole curve knots must be clockwise")

    def translated(self, shift) -> "CurveSpec":
        return CurveSpec(self.knots + np.asarray(shift, float), self.n_nodes, self.orientation)


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass
class Curve:
    """Discretized closed curve: nodes, weights, normals, curvatures."""

    spec: CurveSpec
    nodes: np.ndarray       # (n, 2)
    weights: np.ndarray     # (n,) arclength segments
    normals: np.ndarray     # (n, 2) unit, out of the fluid domain
    curvatures: np.ndarray  # (n,) signed, from the parametrization

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def orientation(self) -> str:
        return self.spec.orientation

    def translated(self, shift) -> "Curve":
        shift = np.asarray(shift, float)
        return Curve(self.spec.translated(shift), self.nodes + shift,
                     self.weights, self.normals, self.curvatures)


def _discretize(spec: CurveSpec) -> Curve:
    knots = np.vstack([spec.knots, spec.knots[:1]])
    t_knots = np.arange(len(knots), dtype=float)
    cs = CubicSpline(t_knots, knots, bc_type="periodic", axis=0)
    period = float(len(spec.knots))
    t = period * np.arange(spec.n_nodes) / spec.n_nodes
    x = cs(t)
    d1 = cs(t, 1)
    d2 = cs(t, 2)
    speed = np.linalg.norm(d1, axis=1)
    if np.any(speed <= 0):
        raise GeometryError("degenerate spline parametrization (zero speed)")
    tau = d1 / speed[:, None]
    normals = np.stack([tau[:, 1], -tau[:, 0]], axis=1)
    weights = speed * (period / spec.n_nodes)
    curvatures = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    return Curve(spec, x, weights, normals, curvatures)


@dataclass
class Boundary:
    """Multiply-connected boundary: outer curve first, then holes.

    Node data of all curves is concatenated; node i of curve c has global
    index offsets[c] + i. Scalar degrees of freedom are dof = node * dpn + comp
    with dpn = 1 (Laplace) or 2 (Stokes); see :meth:`dof_map`.
    """

    curves: list[Curve]
    hole_centers: np.ndarray = field(init=False)   # (p, 2), inside each hole
    positions: np.ndarray = field(init=False)      # (N, 2)
    weights: np.ndarray = field(init=False)
    normals: np.ndarray = field(init=False)
    curvatures: np.ndarray = field(init=False)
    offsets: np.ndarray = field(init=False)        # (n_curves + 1,)

    def __post_init__(self):
        if not self.curves or self.curves[0].orientation != OUTER:
            raise GeometryError("first curve must be the outer boundary")
        if any(c.orientation != HOLE for c in self.curves[1:]):
            raise GeometryError("curves after the first must be holes")
        self.positions = np.concatenate([c.nodes for c in self.curves])
        self.weights = np.concatenate([c.weights for c in self.curves])
        self.normals = np.concatenate([c.normals for c in self.curves])
        self.curvatures = np.concatenate([c.curvatures for c in self.curves])
        self.offsets = np.concatenate([[0], np.cumsum([c.n_nodes for c in self.curves])])
        centers = [c.nodes.mean(axis=0) for c in self.curves[1:]]
        self.hole_centers = np.array(centers).reshape(-1, 2)

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_holes(self) -> int:
        return len(self.curves) - 1

    def curve_nodes(self, c: int) -> np.ndarray:
        """Global node indices of curve c."""
        return np.arange(self.offsets[c], self.offsets[c + 1])

    def curve_of_node(self) -> np.ndarray:
        """(N,) curve index per node."""
        out = np.empty(self.n_nodes, dtype=np.int64)
        for c in range(len(self.curves)):
            out[self.offsets[c]:self.offsets[c + 1]] = c
        return out

    def dof_map(self, dof_per_node: int) -> np.ndarray:
        """(N, dpn) array: row i lists the contiguous scalar DOFs of node i."""
        n = self.n_nodes
        return (dof_per_node * np.arange(n)[:, None] + np.arange(dof_per_node)[None, :])

    def arclength(self, c: int) -> float:
        return float(self.curves[c].weights.sum())

    def point_in_domain(self, points) -> np.ndarray:
        """True where a point lies strictly inside the fluid domain.

        Winding-number test against the node polylines: inside the outer
        curve and outside every hole. Points within ~1e-12 of a node are
        reported outside.
        """
        pts = np.atleast_2d(np.asarray(points, float))
        inside = _winding(pts, self.curves[0].nodes) != 0
        for c in self.curves[1:]:
            inside &= _winding(pts, c.nodes) == 0
        d = self.distance_to_boundary(pts)
        inside &= d > 1e-12
        return inside

    def distance_to_boundary(self, points) -> np.ndarray:
        """Distance to the nearest quadrature node (lower bound estimate)."""
        pts = np.atleast_2d(np.asarray(points, float))
        tree = cKDTree(self.positions)
        d, _ = tree.query(pts)
        return d

    def interior_grid(self, resolution: int, margin_factor: float = 5.0):
        """Lattice points inside the domain, away from the boundary.

        Points closer to the boundary than margin_factor times the local node
        spacing are dropped (near-boundary evaluation of layer potentials is
        out of scope).
        """
        lo = self.positions.min(axis=0)
        hi = self.positions.max(axis=0)
        gx = np.linspace(lo[0], hi[0], resolution)
        gy = np.linspace(lo[1], hi[1], resolution)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        keep = self.point_in_domain(pts)
        tree = cKDTree(self.positions)
        d, j = tree.query(pts)
        keep &= d > margin_factor * self.weights[j]
        return pts[keep]


def _winding(points: np.ndarray, poly: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Integer winding numbers of a closed polyline around query points."""
    out = np.empty(len(points), dtype=np.int64)
    nxt = np.roll(poly, -1, axis=0)
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        a = poly[None, :, :] - p[:, None, :]
        b = nxt[None, :, :] - p[:, None, :]
        cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        dot = (a * b).sum(-1)
        ang = np.arctan2(cross, dot).sum(axis=1)
        out[s:s + chunk] = np.rint(ang / (2 * np.pi)).astype(np.int64)
    return out


def _check_simple(nodes: np.ndarray, what: str):
    if not LinearRing(nodes).is_simple:
        raise GeometryError(f"{what} is self-intersecting")


def build_boundary(specs: list[CurveSpec]) -> Boundary:
    """Discretize curve specs into a Boundary.

    The first spec is the outer curve; the rest are holes. Raises
    GeometryError for self-intersecting curves, holes outside the outer
    curve, or overlapping holes.
    """
    curves = [_discretize(s) for s in specs]
    for i, c in enumerate(curves):
        _check_simple(c.nodes, f"curve {i}")
    b = Boundary(curves)
    _check_arrangement(b)
    return b


def _check_arrangement(b: Boundary):
    outer = b.curves[0].nodes
    for i, c in enumerate(b.curves[1:], start=1):
        sub = c.nodes[:: max(1, c.n_nodes // 32)]
        if not np.all(_winding(sub, outer) != 0):
            raise GeometryError(f"hole {i} is not inside the outer curve")
        ctr = b.hole_centers[i - 1]
        if _winding(ctr[None, :], c.nodes)[0] == 0:
            raise GeometryError(f"hole {i} center is not inside the hole")
    # pairwise hole separation
    for i in range(1, len(b.curves)):
        for j in range(i + 1, len(b.curves)):
            ni = b.curves[i].nodes
            nj = b.curves[j].nodes
            subi = ni[:: max(1, len(ni) // 32)]
            subj = nj[:: max(1, len(nj) // 32)]
            if np.any(_winding(subj, ni) != 0) or np.any(_winding(subi, nj) != 0):
                d = cKDTree(ni).query(nj)[0].min()
                raise GeometryError(
                    f"holes {i} and {j} overlap (min node distance {d:.3e})")


# ---------------------------------------------------------------------------
# Perturbations
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MoveHole:
    curve_id: int
    translation: tuple[float, float] | None = None
    new_center: tuple[float, float] | None = None


@dataclass(frozen=True)
class AddHole:
    spec: CurveSpec
    center: tuple[float, float] | None = None


@dataclass(frozen=True)
class DeleteHole:
    curve_id: int


Perturbation = list  # list of MoveHole | AddHole | DeleteHole edits


@dataclass
class PerturbationReport:
    """Which nodes changed, in old and new numbering.

    old_to_new maps old global node index -> new index (-1 if deleted);
    modified_nodes_old covers moved and deleted curves, modified_nodes_new
    moved and added curves.
    """

    modified_nodes_old: np.ndarray
    modified_nodes_new: np.ndarray
    old_to_new: np.ndarray
    old_positions: np.ndarray

    def modified_dofs(self, dof_per_node: int) -> np.ndarray:
        """Modified scalar DOFs in the pre-perturbation numbering."""
        return _expand_dofs(self.modified_nodes_old, dof_per_node)

    def modified_dofs_new(self, dof_per_node: int) -> np.ndarray:
        return _expand_dofs(self.modified_nodes_new, dof_per_node)


def _expand_dofs(nodes: np.ndarray, dpn: int) -> np.ndarray:
    return (dpn * nodes[:, None] + np.arange(dpn)[None, :]).ravel()


def apply_perturbation(b: Boundary, edits: Perturbation) -> tuple[Boundary, PerturbationReport]:
    """Apply hole edits, returning the new boundary and a change report.

    Unmodified curves carry their node data over bitwise; moved holes are
    rigid translations (weights, normals, curvatures unchanged). The result
    is validated: holes must stay inside the outer curve and pairwise
    disjoint, else GeometryError with a distance report.
    """
    if not edits:
        report = PerturbationReport(
            np.empty(0, np.int64), np.empty(0, np.int64),
            np.arange(b.n_nodes), b.positions)
        return b, report

    new_curves: list[Curve | None] = list(b.curves)
    touched_old: list[int] = []
    added: list[Curve] = []
    for e in edits:
        if isinstance(e, MoveHole):
            _require_hole(b, e.curve_id)
            cur = new_curves[e.curve_id]
            if cur is None:
                raise GeometryError(f"curve {e.curve_id} already deleted")
            if e.new_center is not None:
                shift = np.asarray(e.new_center, float) - cur.nodes.mean(axis=0)
            else:
                shift = np.asarray(e.translation, float)
            new_curves[e.curve_id] = cur.translated(shift)
            touched_old.append(e.curve_id)
        elif isinstance(e, DeleteHole):
            _require_hole(b, e.curve_id)
            if new_curves[e.curve_id] is None:
                raise GeometryError(f"curve {e.curve_id} already deleted")
            new_curves[e.curve_id] = None
            touched_old.append(e.curve_id)
        elif isinstance(e, AddHole):
            c = _discretize(e.spec)
            if e.center is not None:
                c = c.translated(np.asarray(e.center, float) - c.nodes.mean(axis=0))
            _check_simple(c.nodes, "added hole")
            added.append(c)
        else:
            raise GeometryError(f"unknown edit {e!r}")

    kept = [c for c in new_curves if c is not None] + added
    b_new = Boundary(kept)
    _check_arrangement(b_new)

    # node bookkeeping
    old_to_new = np.full(b.n_nodes, -1, dtype=np.int64)
    pos = 0
    new_ids: dict[int, int] = {}
    for old_id, c in enumerate(new_curves):
        if c is None:
            continue
        n = c.n_nodes
        old_to_new[b.offsets[old_id]:b.offsets[old_id] + n] = np.arange(pos, pos + n)
        new_ids[old_id] = len(new_ids)
        pos += n

    mod_old = sorted(set(touched_old))
    nodes_old = np.concatenate([b.curve_nodes(c) for c in mod_old]) if mod_old else np.empty(0, np.int64)
    moved_new = [new_ids[c] for c in mod_old if new_curves[c] is not None]
    added_new = list(range(len(kept) - len(added), len(kept)))
    nodes_new = (np.concatenate([b_new.curve_nodes(c) for c in moved_new + added_new])
                 if (moved_new or added_new) else np.empty(0, np.int64))
    report = PerturbationReport(nodes_old, np.sort(nodes_new), old_to_new, b.positions)
    return b_new, report


def _require_hole(b: Boundary, cid: int):
    if not (1 <= cid < len(b.curves)):
        raise GeometryError(f"curve {cid} is not a hole (holes are 1..{len(b.curves) - 1})")


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------
def circle_knots(radius: float = 1.0, center=(0.0, 0.0), n_knots: int = 32,
                 clockwise: bool = False) -> np.ndarray:
    th = 2 * np.pi * np.arange(n_knots) / n_knots
    if clockwise:
        th = -th
    return np.stack([center[0] + radius * np.cos(th),
                     center[1] + radius * np.sin(th)], axis=1)


def starfish_knots(scale: float = 1.0, center=(0.0, 0.0), n_knots: int = 20,
                   arms: int = 5, amplitude: float = 0.3,
                   clockwise: bool = False) -> np.ndarray:
    th = 2 * np.pi * np.arange(n_knots) / n_knots
    r = scale * (1.0 + amplitude * np.cos(arms * th))
    pts = np.stack([center[0] + r * np.cos(th), center[1] + r * np.sin(th)], axis=1)
    return pts[::-1] if clockwise else pts


def annulus_specs(n_nodes: int, r_outer: float = 1.0, r_inner: float = 0.5,
                  n_knots: int = 256) -> list[CurveSpec]:
    """Concentric-circle annulus; nodes split by arclength."""
    n_out = int(round(n_nodes * r_outer / (r_outer + r_inner)))
    n_in = n_nodes - n_out
    return [
        CurveSpec(circle_knots(r_outer, n_knots=n_knots), n_out, OUTER),
        CurveSpec(circle_knots(r_inner, n_knots=min(n_knots, max(8, n_in // 4)),
                               clockwise=True), n_in, HOLE),
    ]


def starfish_specs(n_nodes: int, n_holes: int = 2, hole_scale: float = 0.16,
                   thetas=None, path_scale: float = 0.5,
                   hole_nodes_frac: float = 1.0 / 6.0) -> list[CurveSpec]:
    """Starfish outer boundary with starfish holes on the scaled-outer path."""
    if thetas is None:
        thetas = [2 * np.pi * i / n_holes for i in range(n_holes)]
    n_hole = int(round(n_nodes * hole_nodes_frac))
    n_out = n_nodes - n_holes * n_hole
    specs = [CurveSpec(starfish_knots(), n_out, OUTER)]
    path = HolePath(specs[0], path_scale)
    for th in thetas:
        knots = starfish_knots(scale=hole_scale, clockwise=True) + path(th)
        specs.append(CurveSpec(knots, n_hole, HOLE))
    return specs


class HolePath:
    """Hole-center path: the outer curve scaled about its centroid.

    Callable on the periodic parameter theta in [0, 2pi).
    """

    def __init__(self, outer_spec: CurveSpec, scale: float = 0.5):
        knots = np.vstack([outer_spec.knots, outer_spec.knots[:1]])
        t = np.arange(len(knots), dtype=float)
        self._cs = CubicSpline(t, knots, bc_type="periodic", axis=0)
        self._period = float(len(outer_spec.knots))
        self._centroid = outer_spec.knots.mean(axis=0)
        self.scale = scale

    def __call__(self, theta: float) -> np.ndarray:
        t = (theta % (2 * np.pi)) / (2 * np.pi) * self._period
        p = self._cs(t)
        return self._centroid + self.scale * (p - self._centroid)
