"""Room-trajectory pairs that produce identical distance matrices.

Two setups with matching plane offsets give the same PPDM exactly when the
stacked waypoint matrix ``R0 = [r_i; -s_i]`` annihilates the stacked normal
matrix ``N0 = [n_j; m_j]``. The generators here build witnesses for the three
ways this can happen beyond rigid motions:

* reflection: waypoints lie in a lower-dimensional affine subspace, so any
  wall can be mirrored across it;
* transform: a non-orthogonal ``T`` keeps every normal unit length, with
  ``m_j = T n_j`` and ``s_i = T^{-T} r_i``;
* row dependence: the rows ``[n_j^T m_j^T]`` are linear combinations of
  fewer than ``2d`` fixed rows.
"""
from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCombinationError, InvalidInputError, NoPolytopeError
from .geometry import RoomTrajectory, Verdict, affine_dimension, enumerate_vertices, is_congruent
from .ppdm import build_ppdm

log = logging.getLogger(__name__)

TRANSFORM_ACCEPT = 1e-18
ORTHOGONAL_TOL = 1e-4
PARALLELOGRAM_ANGLE_TOL = 1e-8


class ClassTag(enum.Enum):
    REFLECTION = "Reflection"
    TRANSFORM = "Transform"
    ROW_DEPENDENCE = "RowDependence"


@dataclass(frozen=True)
class NormalTransform:
    matrix: np.ndarray

    def __post_init__(self):
        t = np.array(self.matrix, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise InvalidInputError(f"transform must be square, got shape {t.shape}")
        if abs(np.linalg.det(t)) <= 1e-10:
            raise InvalidInputError("transform is singular")
        t.setflags(write=False)
        object.__setattr__(self, "matrix", t)

    def orthogonality_defect(self) -> float:
        """``||T^T T - I||_F``; zero for rotations and reflections."""
        t = self.matrix
        return float(np.linalg.norm(t.T @ t - np.eye(t.shape[0])))

    def unit_defect(self, normals) -> float:
        return float(np.max(np.abs(np.linalg.norm(np.asarray(normals) @ self.matrix.T, axis=1) - 1.0)))

    def is_unit_preserving(self, normals, tol: float = 1e-8) -> bool:
        return self.unit_defect(normals) <= tol


@dataclass(frozen=True)
class EquivalencePair:
    first: RoomTrajectory
    second: RoomTrajectory
    class_tag: ClassTag | None
    residual: float
    congruent: bool
    deviation: float
    valid_room: bool = True
    transform: NormalTransform | None = field(default=None)


def _check_shapes(a: RoomTrajectory, b: RoomTrajectory):
    if (a.dim, a.n_planes, a.n_waypoints) != (b.dim, b.n_planes, b.n_waypoints):
        raise InvalidInputError(
            f"setups differ in shape: d={a.dim}/{b.dim}, K={a.n_planes}/{b.n_planes}, "
            f"N={a.n_waypoints}/{b.n_waypoints}")


def nullspace_residual(a: RoomTrajectory, b: RoomTrajectory) -> float:
    """``max |R0^T N0|``, i.e. ``max_ij |<r_i, n_j> - <s_i, m_j>|``.

    Both setups are first moved by one common translation ``t`` with
    ``<n_j - m_j, t> = q'_j - q_j`` (least squares), which equalises the
    offsets whenever that is possible. Pairs that already share offsets are
    left untouched.
    """
    _check_shapes(a, b)
    gap = b.offsets - a.offsets
    shift = np.zeros(a.dim)
    if np.any(gap != 0.0):
        shift, *_ = np.linalg.lstsq(a.normals - b.normals, gap, rcond=None)
    r0 = np.hstack([a.waypoints + shift, -(b.waypoints + shift)])
    n0 = np.hstack([a.normals, b.normals])
    return float(np.max(np.abs(r0 @ n0.T)))


def _valid_room(setup: RoomTrajectory) -> bool:
    try:
        enumerate_vertices(setup.normals, setup.offsets)
    except NoPolytopeError:
        return False
    dist = setup.offsets[None, :] - setup.waypoints @ setup.normals.T
    return bool(np.all(dist > 0))


def verify_equivalence(a: RoomTrajectory, b: RoomTrajectory, tol: float = 1e-8,
                       class_tag: ClassTag | None = None,
                       transform: NormalTransform | None = None) -> EquivalencePair | None:
    """Pair record if the PPDMs agree within ``tol`` entrywise, else None."""
    _check_shapes(a, b)
    dev = float(np.max(np.abs(build_ppdm(a).entries - build_ppdm(b).entries)))
    if not dev < tol:
        return None
    return EquivalencePair(a, b, class_tag, nullspace_residual(a, b), is_congruent(a, b),
                           dev, _valid_room(a) and _valid_room(b), transform)


# reflection class ------------------------------------------------------------

def reflection_class_generator(setup: RoomTrajectory, planes=None, seed: int = 0,
                               tol: float = 1e-6) -> RoomTrajectory | None:
    """Mirror walls across the affine hull of degenerate waypoints.

    Returns None when the waypoints span the full space. ``planes`` selects
    which walls to mirror; by default a non-empty subset is drawn (seeded)
    so that the result is not merely a rigid copy of the input. Mirroring
    every wall always gives a congruent copy. If no subset works, the whole
    room is mirrored.
    """
    d = setup.dim
    pts = setup.waypoints
    if affine_dimension(pts, tol) >= d:
        return None
    center = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - center)
    u = vt[-1]
    h = np.eye(d) - 2.0 * np.outer(u, u)

    def mirrored(idx) -> RoomTrajectory:
        normals = setup.normals.copy()
        normals[idx] = normals[idx] @ h.T
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        # offsets stay fixed in the frame centred on the hull
        local = setup.offsets - setup.normals @ center
        return RoomTrajectory(normals, local + normals @ center, pts)

    if planes is not None:
        return mirrored(list(planes))
    movable = [j for j in range(setup.n_planes) if np.linalg.norm(h @ setup.normals[j] - setup.normals[j]) > 1e-9]
    rng = np.random.default_rng(seed)
    subsets = [list(s) for r in range(1, len(movable) + 1) for s in itertools.combinations(movable, r)]
    for k in rng.permutation(len(subsets)):
        cand = mirrored(subsets[k])
        if not is_congruent(setup, cand, tol):
            return cand
    return mirrored(list(range(setup.n_planes)))


# transform class -------------------------------------------------------------

def apply_normal_transform(setup: RoomTrajectory, transform, tol: float = 1e-8) -> RoomTrajectory:
    """Equivalent setup with ``m_j = T n_j``, ``s_i = T^{-T} r_i``, same offsets."""
    t = transform.matrix if isinstance(transform, NormalTransform) else np.asarray(transform, dtype=float)
    if t.shape != (setup.dim, setup.dim):
        raise InvalidInputError(f"transform shape {t.shape} does not match dimension {setup.dim}")
    m = setup.normals @ t.T
    norms = np.linalg.norm(m, axis=1)
    if np.max(np.abs(norms - 1.0)) > tol:
        raise InvalidInputError(f"transform does not keep normals unit length (max defect {np.max(np.abs(norms - 1)):.3g})")
    s = np.linalg.solve(t.T, setup.waypoints.T).T
    return RoomTrajectory(m / norms[:, None], setup.offsets, s)


def _unit_residual(t: np.ndarray, normals: np.ndarray) -> np.ndarray:
    return np.sum((normals @ t.T) ** 2, axis=1) - 1.0


def _gauss_newton_transform(normals: np.ndarray, t0: np.ndarray, max_iters: int = 100) -> tuple[np.ndarray, float]:
    """Drive ``||T n_j||^2 - 1`` to zero with minimum-norm Gauss-Newton steps."""
    d = normals.shape[1]
    t = t0.copy()
    f = _unit_residual(t, normals)
    obj = float(f @ f)
    for _ in range(max_iters):
        if obj < 1e-30:
            break
        tn = normals @ t.T  # rows T n_j
        jac = 2.0 * np.einsum("ka,kb->kab", tn, normals).reshape(len(normals), d * d)
        step, *_ = np.linalg.lstsq(jac, -f, rcond=None)
        cand = t + step.reshape(d, d)
        fc = _unit_residual(cand, normals)
        oc = float(fc @ fc)
        if not oc < obj:
            break
        t, f, obj = cand, fc, oc
    return t, obj


def find_unit_transforms(normals, seed: int = 0, attempts: int = 50, eps: float = 0.3,
                         stop_at_non_orthogonal: bool = True) -> list[np.ndarray]:
    """Run seeded searches and return every transform that converged.

    Each search starts at ``I + eps * G`` with Gaussian ``G``. Converged means
    ``sum_j (||T n_j||^2 - 1)^2 < 1e-18``; the list may contain orthogonal
    solutions, which only reproduce rigid motions.
    """
    normals = np.asarray(normals, dtype=float)
    d = normals.shape[1]
    rng = np.random.default_rng(seed)
    found = []
    for _ in range(attempts):
        t0 = np.eye(d) + eps * rng.standard_normal((d, d))
        t, obj = _gauss_newton_transform(normals, t0)
        if obj >= TRANSFORM_ACCEPT or abs(np.linalg.det(t)) <= 1e-6:
            continue
        found.append(t)
        if stop_at_non_orthogonal and np.linalg.norm(t.T @ t - np.eye(d)) > ORTHOGONAL_TOL:
            break
    return found


def transform_class_generator(setup: RoomTrajectory, seed: int = 0, attempts: int = 50):
    """Search for a non-orthogonal unit-preserving ``T``.

    Returns ``(NormalTransform, RoomTrajectory)`` or None once ``attempts``
    searches have produced only orthogonal (or no) solutions.
    """
    if np.linalg.matrix_rank(setup.normals) < setup.dim:
        raise InvalidInputError("normals do not span the space; use the reflection or "
                                "row-dependence generators instead")
    for t in find_unit_transforms(setup.normals, seed, attempts):
        tr = NormalTransform(t)
        if tr.orthogonality_defect() <= ORTHOGONAL_TOL:
            continue
        other = apply_normal_transform(setup, tr, tol=1e-9)
        if is_congruent(setup, other):
            continue
        return tr, other
    return None


# row-dependence class --------------------------------------------------------

def _balance(c: np.ndarray, gram_n: np.ndarray, gram_m: np.ndarray) -> np.ndarray:
    """Nudge combination ``c`` so both halves of the derived row have equal norm."""
    diff = gram_n - gram_m
    g = c @ diff @ c
    scale = max(c @ gram_n @ c, c @ gram_m @ c)
    if abs(g) <= 1e-14 * scale:
        return c
    w, v = np.linalg.eigh(diff)
    e = v[:, 0] if g > 0 else v[:, -1]
    curv = e @ diff @ e
    if curv * g >= 0 or abs(curv) < 1e-14:
        raise DegenerateCombinationError("cannot balance derived row: the base rows admit no "
                                         "combination with equal-length halves")
    lin = 2.0 * (c @ diff @ e)
    disc = lin * lin - 4.0 * curv * g
    roots = [(-lin + sgn * np.sqrt(disc)) / (2.0 * curv) for sgn in (1.0, -1.0)]
    t = min(roots, key=abs)
    return c + t * e


def row_dependence_class_generator(base_pairs, combo_coeffs, offsets, waypoint_coeffs,
                                   tol: float = 1e-8) -> EquivalencePair:
    """Pair whose stacked normal rows depend linearly on ``L < 2d`` base rows.

    ``base_pairs`` lists ``(n_j, m_j)`` for the fixed rows, ``combo_coeffs``
    is a ``(K - L, L)`` matrix giving each extra row as a combination of the
    base rows, and ``waypoint_coeffs`` is ``(N, 2d - L)``: coordinates of the
    stacked waypoints ``[r_i; -s_i]`` in an orthonormal basis of the null
    space of ``N0^T``. Each combination is adjusted along one direction until
    its two halves have equal length, then scaled to unit length.
    """
    pairs = [(np.asarray(n, dtype=float), np.asarray(m, dtype=float)) for n, m in base_pairs]
    if not pairs:
        raise InvalidInputError("need at least one base pair")
    d = pairs[0][0].shape[0]
    big_l = len(pairs)
    if big_l >= 2 * d:
        raise InvalidInputError(f"need fewer than {2 * d} base rows, got {big_l}")
    base = np.array([np.concatenate([n, m]) for n, m in pairs])
    if np.linalg.matrix_rank(base) < big_l:
        raise InvalidInputError("base rows are linearly dependent")
    if np.any(np.abs(np.linalg.norm(base[:, :d], axis=1) - 1) > 1e-12) or \
            np.any(np.abs(np.linalg.norm(base[:, d:], axis=1) - 1) > 1e-12):
        raise InvalidInputError("base normals must be unit vectors")
    coeffs = np.atleast_2d(np.asarray(combo_coeffs, dtype=float))
    if coeffs.size and coeffs.shape[1] != big_l:
        raise InvalidInputError(f"combination rows need {big_l} coefficients, got {coeffs.shape[1]}")
    gram_n = base[:, :d] @ base[:, :d].T
    gram_m = base[:, d:] @ base[:, d:].T

    rows = [r for r in base]
    for k, c in enumerate(coeffs):
        h = c @ base
        if min(np.linalg.norm(h[:d]), np.linalg.norm(h[d:])) < 1e-9:
            raise DegenerateCombinationError(f"derived row {k} has a zero-length normal")
        c = _balance(c, gram_n, gram_m)
        h = c @ base
        length = np.linalg.norm(h[:d])
        if length < 1e-9:
            raise DegenerateCombinationError(f"derived row {k} has a zero-length normal")
        rows.append(h / length)
    n0t = np.array(rows)
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape[0] != len(rows):
        raise InvalidInputError(f"{len(rows)} planes but {offsets.shape[0]} offsets")

    _, s, vt = np.linalg.svd(n0t)
    rank = int(np.sum(s > 1e-10 * s[0]))
    null_basis = vt[rank:].T  # columns span the null space of N0^T
    wc = np.atleast_2d(np.asarray(waypoint_coeffs, dtype=float))
    if wc.shape[1] != null_basis.shape[1]:
        raise InvalidInputError(f"waypoint coefficients need {null_basis.shape[1]} entries, got {wc.shape[1]}")
    stacked = wc @ null_basis.T
    first = RoomTrajectory(n0t[:, :d] / np.linalg.norm(n0t[:, :d], axis=1, keepdims=True), offsets, stacked[:, :d])
    second = RoomTrajectory(n0t[:, d:] / np.linalg.norm(n0t[:, d:], axis=1, keepdims=True), offsets, -stacked[:, d:])
    pair = verify_equivalence(first, second, tol, ClassTag.ROW_DEPENDENCE)
    if pair is None:
        raise RuntimeError("row-dependence construction failed to verify")
    if not pair.valid_room:
        log.info("row-dependence pair does not bound a valid room with interior waypoints")
    return pair


def random_row_dependence_pair(dim: int, n_base: int, n_planes: int, n_waypoints: int,
                               rng: np.random.Generator, max_tries: int = 100) -> EquivalencePair:
    """Row-dependence witness with random base normals and combinations."""
    for _ in range(max_tries):
        def unit(k):
            v = rng.standard_normal((k, dim))
            return v / np.linalg.norm(v, axis=1, keepdims=True)
        pairs = list(zip(unit(n_base), unit(n_base)))
        coeffs = rng.standard_normal((n_planes - n_base, n_base))
        offsets = rng.uniform(1.0, 3.0, size=n_planes)
        wc = rng.uniform(-1.0, 1.0, size=(n_waypoints, 2 * dim - n_base))
        try:
            return row_dependence_class_generator(pairs, coeffs, offsets, wc)
        except DegenerateCombinationError:
            continue
    raise RuntimeError("no balanced row-dependence combination found")


# uniqueness ------------------------------------------------------------------

def _is_parallelogram(normals: np.ndarray, tol: float) -> bool:
    if normals.shape[0] != 4:
        return False
    ang = np.arctan2(normals[:, 1], normals[:, 0])
    for a, b in ((0, 1), (0, 2), (0, 3)):
        rest = [k for k in range(4) if k not in (a, b)]
        if _antipodal(ang[a], ang[b], tol) and _antipodal(ang[rest[0]], ang[rest[1]], tol) \
                and not _antipodal(ang[a], ang[rest[0]], tol) \
                and abs(_wrap(ang[a] - ang[rest[0]])) > tol:
            return True
    return False


def _wrap(x: float) -> float:
    return (x + np.pi) % (2 * np.pi) - np.pi


def _antipodal(a: float, b: float, tol: float) -> bool:
    return abs(_wrap(a - b - np.pi)) <= tol


def uniqueness_verdict(setup: RoomTrajectory, tol: float = 1e-6, search_budget: int = 50,
                       seed: int = 0) -> Verdict:
    """Classify a setup as uniquely determined by its PPDM or not.

    The 3D measure-zero test is search based and one sided: a returned
    ``UNIQUE`` means the search budget found no non-orthogonal transform.
    """
    d = setup.dim
    aff = affine_dimension(setup.waypoints, tol)
    if d == 2:
        if aff <= 1:
            return Verdict.AMBIGUOUS_COLLINEAR
        if _is_parallelogram(setup.normals, PARALLELOGRAM_ANGLE_TOL):
            return Verdict.AMBIGUOUS_PARALLELOGRAM
        return Verdict.UNIQUE
    if setup.n_planes < 9:
        return Verdict.AMBIGUOUS_FEW_WALLS
    if aff <= 2:
        return Verdict.AMBIGUOUS_COPLANAR
    if transform_class_generator(setup, seed=seed, attempts=search_budget) is not None:
        return Verdict.AMBIGUOUS_MEASURE_ZERO
    return Verdict.UNIQUE


def unit_transform_freedom(normals, tol: float = 1e-9) -> int:
    """Dimension of symmetric ``E`` with ``n_j^T E n_j = 0`` for all j.

    Non-orthogonal unit-preserving transforms exist near the identity only if
    this is positive (``T^T T = I + E``).
    """
    normals = np.asarray(normals, dtype=float)
    d = normals.shape[1]
    idx = [(a, b) for a in range(d) for b in range(a, d)]
    rows = np.array([[n[a] * n[b] * (1.0 if a == b else 2.0) for a, b in idx] for n in normals])
    s = np.linalg.svd(rows, compute_uv=False)
    rank = int(np.sum(s > tol * max(s[0], 1e-300))) if s.size else 0
    return len(idx) - rank
