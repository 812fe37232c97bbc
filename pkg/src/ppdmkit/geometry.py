"""Planes, waypoints and the signed point-to-plane distance model.

Planes are kept in Hessian normal form ``<n, x> = q`` with unit normal ``n``
pointing *out* of the room, so waypoints inside the room have strictly
positive distance ``q - <r, n>`` to every wall.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.stats import ortho_group

from .errors import InvalidInputError, NoPolytopeError

UNIT_TOL = 1e-12
EXACT_TOL = 1e-9
RANK_RTOL = 1e-6


class Verdict(enum.Enum):
    UNIQUE = "Unique"
    AMBIGUOUS_COLLINEAR = "AmbiguousCollinear"
    AMBIGUOUS_COPLANAR = "AmbiguousCoplanar"
    AMBIGUOUS_PARALLELOGRAM = "AmbiguousParallelogram"
    AMBIGUOUS_FEW_WALLS = "AmbiguousFewWalls"
    AMBIGUOUS_MEASURE_ZERO = "AmbiguousMeasureZero"


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Plane:
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = _frozen(self.normal, 1, "normal")
        if n.shape[0] not in (2, 3):
            raise InvalidInputError(f"plane dimension must be 2 or 3, got {n.shape[0]}")
        if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
            raise InvalidInputError(f"plane normal must be unit length, |n| = {np.linalg.norm(n)!r}")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.normal.shape[0]


@dataclass(frozen=True)
class RoomTrajectory:
    """K planes and N waypoints in dimension 2 or 3.

    Stored as arrays: ``normals`` (K, d), ``offsets`` (K,), ``waypoints``
    (N, d). Set ``interior=True`` to require every waypoint to lie strictly
    inside every half-space.
    """

    normals: np.ndarray
    offsets: np.ndarray
    waypoints: np.ndarray
    interior: bool = field(default=False)

    def __post_init__(self):
        normals = _frozen(self.normals, 2, "normals")
        offsets = _frozen(self.offsets, 1, "offsets")
        waypoints = _frozen(self.waypoints, 2, "waypoints")
        k, d = normals.shape
        if d not in (2, 3):
            raise InvalidInputError(f"dimension must be 2 or 3, got {d}")
        if k < 1 or waypoints.shape[0] < 1:
            raise InvalidInputError("need at least one plane and one waypoint")
        if offsets.shape[0] != k:
            raise InvalidInputError(f"{k} normals but {offsets.shape[0]} offsets")
        if waypoints.shape[1] != d:
            raise InvalidInputError(f"waypoints have dimension {waypoints.shape[1]}, planes {d}")
        norms = np.linalg.norm(normals, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
        if bad.size:
            raise InvalidInputError(f"normal {int(bad[0])} is not unit length (|n| = {norms[bad[0]]!r})")
        if not (np.all(np.isfinite(offsets)) and np.all(np.isfinite(waypoints))):
            raise InvalidInputError("offsets and waypoints must be finite")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "waypoints", waypoints)
        if self.interior:
            dist = offsets[None, :] - waypoints @ normals.T
            if np.any(dist <= 0):
                i, j = np.argwhere(dist <= 0)[0]
                raise InvalidInputError(f"waypoint {i} is not inside plane {j} (distance {dist[i, j]!r})")

    @classmethod
    def from_planes(cls, planes, waypoints, interior: bool = False) -> "RoomTrajectory":
        planes = list(planes)
        if not planes:
            raise InvalidInputError("need at least one plane")
        dims = {p.dim for p in planes}
        if len(dims) != 1:
            raise InvalidInputError("planes have mixed dimensions")
        return cls(np.array([p.normal for p in planes]), np.array([p.offset for p in planes]),
                   np.atleast_2d(np.asarray(waypoints, dtype=float)), interior=interior)

    @classmethod
    def unchecked(cls, normals, offsets, waypoints) -> "RoomTrajectory":
        """Build from arrays, renormalising normals first (solver outputs)."""
        normals = np.asarray(normals, dtype=float)
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        return cls(normals, offsets, waypoints)

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def n_planes(self) -> int:
        return self.normals.shape[0]

    @property
    def n_waypoints(self) -> int:
        return self.waypoints.shape[0]

    @property
    def planes(self) -> list[Plane]:
        return [Plane(n, q) for n, q in zip(self.normals, self.offsets)]

    def diagnostics(self) -> list[str]:
        notes = []
        if self.n_waypoints < self.n_planes:
            notes.append(f"fewer waypoints ({self.n_waypoints}) than planes ({self.n_planes})")
        return notes

    def replace(self, normals=None, offsets=None, waypoints=None) -> "RoomTrajectory":
        return RoomTrajectory(self.normals if normals is None else normals,
                              self.offsets if offsets is None else offsets,
                              self.waypoints if waypoints is None else waypoints)


@dataclass(frozen=True)
class RigidMotion:
    """Orthogonal map plus translation acting as ``x -> Q (x + b)``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = _frozen(self.rotation, 2, "rotation")
        b = _frozen(self.translation, 1, "translation")
        d = b.shape[0]
        if q.shape != (d, d):
            raise InvalidInputError(f"rotation shape {q.shape} does not match translation length {d}")
        if np.linalg.norm(q.T @ q - np.eye(d)) >= 1e-10:
            raise InvalidInputError("rotation is not orthogonal")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", b)

    @classmethod
    def identity(cls, dim: int) -> "RigidMotion":
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, scale: float = 1.0) -> "RigidMotion":
        q = ortho_group.rvs(dim, random_state=rng) if dim > 1 else np.eye(1)
        return cls(q, scale * rng.standard_normal(dim))


def distance(point, plane: Plane) -> float:
    """Signed distance ``q - <r, n>`` from ``point`` to ``plane``."""
    r = np.asarray(point, dtype=float)
    if r.shape != plane.normal.shape:
        raise InvalidInputError(f"point has shape {r.shape}, plane normal {plane.normal.shape}")
    return plane.offset - float(r @ plane.normal)


def apply_rigid_motion(setup: RoomTrajectory, motion: RigidMotion) -> RoomTrajectory:
    if motion.translation.shape[0] != setup.dim:
        raise InvalidInputError("motion and setup dimensions differ")
    q, b = motion.rotation, motion.translation
    normals = setup.normals @ q.T
    # renormalise so the unit tolerance holds after rounding
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return RoomTrajectory(normals, setup.offsets + setup.normals @ b, (setup.waypoints + b) @ q.T)


def affine_dimension(points, tol: float = RANK_RTOL) -> int:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise InvalidInputError("affine_dimension needs at least one point")
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    # a spread at rounding level of the coordinates is a single point
    if s.size == 0 or s[0] <= 1e-12 * max(1.0, float(np.max(np.abs(pts)))):
        return 0
    return int(np.sum(s > tol * s[0]))


def _is_bounded(normals: np.ndarray) -> bool:
    k, d = normals.shape
    if np.linalg.matrix_rank(normals) < d:
        return False
    # bounded iff some strictly positive combination of the normals vanishes
    res = linprog(np.zeros(k), A_eq=normals.T, b_eq=np.zeros(d), bounds=[(1.0, None)] * k,
                  method="highs")
    return res.status == 0


def enumerate_vertices(normals, offsets, tol: float = EXACT_TOL):
    """Vertices of ``{x : <n_j, x> <= q_j}`` with their supporting plane sets.

    Returns ``(vertices, supports)``: an (M, d) array and a list of frozensets
    of plane indices active at each vertex.
    """
    normals = np.asarray(normals, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    k, d = normals.shape
    if not _is_bounded(normals):
        raise NoPolytopeError("no-polytope: planes do not bound a finite region")
    verts: list[np.ndarray] = []
    supports: list[set[int]] = []
    for combo in itertools.combinations(range(k), d):
        a = normals[list(combo)]
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        v = np.linalg.solve(a, offsets[list(combo)])
        slack = normals @ v - offsets
        if np.any(slack > tol):
            continue
        active = set(np.flatnonzero(np.abs(slack) <= tol).tolist()) | set(combo)
        for idx, w in enumerate(verts):
            if np.max(np.abs(w - v)) <= tol:
                supports[idx] |= active
                break
        else:
            verts.append(v)
            supports.append(active)
    if not verts:
        raise NoPolytopeError("no-polytope: half-space intersection is empty")
    return np.array(verts), [frozenset(s) for s in supports]


def room_vertices(planes) -> np.ndarray:
    """Corners of the convex room bounded by ``planes`` (outward normals)."""
    planes = list(planes)
    verts, _ = enumerate_vertices([p.normal for p in planes], [p.offset for p in planes])
    return verts


def _stacked(setup: RoomTrajectory) -> np.ndarray:
    return np.vstack([setup.normals, setup.waypoints - setup.waypoints.mean(axis=0)])


def procrustes(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Orthogonal Q (reflections allowed) minimising ``||source Q^T - target||_F``."""
    u, _, vt = np.linalg.svd(target.T @ source)
    return u @ vt


def is_congruent(a: RoomTrajectory, b: RoomTrajectory, tol: float = 1e-6) -> bool:
    """True iff some rigid motion maps ``a`` onto ``b`` under index correspondence."""
    if (a.dim, a.n_planes, a.n_waypoints) != (b.dim, b.n_planes, b.n_waypoints):
        raise InvalidInputError("setups differ in dimension, plane count or waypoint count")
    xa, xb = _stacked(a), _stacked(b)
    if np.max(np.abs(xa @ xa.T - xb @ xb.T)) > tol * max(1.0, np.max(np.abs(xa @ xa.T))):
        return False
    q = procrustes(xa, xb)
    if np.max(np.abs(xa @ q.T - xb)) > tol:
        return False
    b_shift = q.T @ b.waypoints.mean(axis=0) - a.waypoints.mean(axis=0)
    return bool(np.max(np.abs(a.offsets + a.normals @ b_shift - b.offsets)) <= tol)


def random_room(dim: int, n_planes: int, rng: np.random.Generator,
                offset_range=(1.5, 3.0), max_tries: int = 1000, max_extent: float = 5.0):
    """Random bounded convex room where every plane contributes a facet.

    Returns ``(normals, offsets)``. The origin lies inside the room and no
    corner is farther than ``max_extent`` times the largest offset from it,
    which rules out slivers.
    """
    if n_planes < dim + 1:
        raise InvalidInputError(f"a bounded room in {dim}D needs at least {dim + 1} planes")
    for _ in range(max_tries):
        normals = rng.standard_normal((n_planes, dim))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        offsets = rng.uniform(*offset_range, size=n_planes)
        try:
            verts, supports = enumerate_vertices(normals, offsets)
        except NoPolytopeError:
            continue
        if np.max(np.linalg.norm(verts, axis=1)) > max_extent * offset_range[1]:
            continue
        counts = np.zeros(n_planes, dtype=int)
        for s in supports:
            if len(s) != dim:
                break
            counts[list(s)] += 1
        else:
            if np.all(counts >= dim):
                return normals, offsets
    raise RuntimeError("could not sample a simple bounded room")


def random_interior_points(normals, offsets, n: int, rng: np.random.Generator,
                           margin: float = 0.2, max_batches: int = 1000) -> np.ndarray:
    normals = np.asarray(normals, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    verts, _ = enumerate_vertices(normals, offsets)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    pts = []
    for _ in range(max_batches):
        cand = rng.uniform(lo, hi, size=(4 * n, normals.shape[1]))
        ok = np.all(offsets[None, :] - cand @ normals.T > margin, axis=1)
        pts.extend(cand[ok])
        if len(pts) >= n:
            return np.array(pts[:n])
    raise InvalidInputError(f"room interior (margin {margin}) too small to sample {n} points")


def random_setup(dim: int, n_planes: int, n_waypoints: int, rng: np.random.Generator,
                 margin: float = 0.2) -> RoomTrajectory:
    normals, offsets = random_room(dim, n_planes, rng)
    waypoints = random_interior_points(normals, offsets, n_waypoints, rng, margin=margin)
    return RoomTrajectory(normals, offsets, waypoints, interior=True)
