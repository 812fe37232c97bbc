"""Joint estimation of planes and waypoints from a (noisy) PPDM.

Minimises ``sum_ij w_ij (D_ij - q_j + <n_j, r_i>)^2`` subject to unit
normals by block-coordinate descent with exact block solves:

1. each waypoint is an unconstrained linear least-squares problem;
2. each plane normal (with its offset profiled out) is a quadratic over the
   unit sphere, solved exactly through its Lagrange multiplier;
3. each offset is a weighted mean.

Block descent stalls in long flat valleys, so it is followed by a damped
Gauss-Newton polish on the product of spheres that only accepts steps
which lower the cost.

Restart 0 starts from a spectral factorisation of the rank-(d+1)
truncation, further restarts from seeded random points. The compiled kernel
in :mod:`ppdmkit.kernels` runs the iterations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import kernels
from .errors import InvalidInputError
from .geometry import RoomTrajectory, procrustes
from .ppdm import PPDM, complete

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FixedPlane:
    index: int
    normal: np.ndarray
    offset: float | None = None

    def __post_init__(self):
        n = np.array(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "index", int(self.index))
        if self.offset is not None:
            object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True)
class Gauge:
    """How the rigid-motion freedom of the solution is removed.

    ``kind`` is ``"none"``, ``"fixed"`` (known planes held constant during
    refinement) or ``"align"`` (final Procrustes alignment to a reference).
    """

    kind: str = "none"
    fixed: tuple[FixedPlane, ...] = ()
    reference: RoomTrajectory | None = None

    def __post_init__(self):
        if self.kind not in ("none", "fixed", "align"):
            raise InvalidInputError(f"unknown gauge kind {self.kind!r}")
        if self.kind == "fixed":
            idx = [f.index for f in self.fixed]
            if not idx or len(set(idx)) != len(idx):
                raise InvalidInputError("fixed-normal gauge needs distinct plane indices")
            dims = {f.normal.shape[0] for f in self.fixed}
            if len(dims) != 1:
                raise InvalidInputError("fixed normals have mixed dimensions")
            if dims == {3} and len(idx) < 2:
                raise InvalidInputError("in 3D at least two fixed normals are needed to remove rotations")
        if self.kind == "align" and self.reference is None:
            raise InvalidInputError("align gauge needs a reference setup")

    @classmethod
    def none(cls) -> "Gauge":
        return cls()

    @classmethod
    def fixed_normals(cls, planes) -> "Gauge":
        return cls("fixed", tuple(p if isinstance(p, FixedPlane) else FixedPlane(*p) for p in planes))

    @classmethod
    def from_setup(cls, setup: RoomTrajectory, indices, with_offsets: bool = True) -> "Gauge":
        """Fix the listed planes of ``setup`` (normals, and offsets if asked)."""
        return cls.fixed_normals(
            FixedPlane(j, setup.normals[j], setup.offsets[j] if with_offsets else None) for j in indices)

    @classmethod
    def align_to(cls, reference: RoomTrajectory) -> "Gauge":
        return cls("align", reference=reference)

    def describe(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "planes": [
                {"index": f.index, "normal": f.normal.tolist(), "offset": f.offset} for f in self.fixed]}
        return {"kind": self.kind}


@dataclass(frozen=True)
class SolverConfig:
    restarts: int = 10
    max_iters: int = 500
    step_tol: float = 1e-13
    cost_tol: float = 1e-13
    polish_iters: int = 100
    gauge: Gauge = field(default_factory=Gauge)
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise InvalidInputError("restarts must be >= 1")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if self.polish_iters < 0:
            raise InvalidInputError("polish_iters must be >= 0")
        if not (self.step_tol > 0 and self.cost_tol > 0):
            raise InvalidInputError("tolerances must be positive")


@dataclass(frozen=True)
class Estimate:
    setup: RoomTrajectory
    cost: float
    converged: bool
    iterations: int
    restart_index: int
    restart_costs: tuple[float, ...] = ()
    flags: tuple[str, ...] = ()
    gradient_norm: float = float("nan")
    cost_history: np.ndarray | None = field(default=None, repr=False, compare=False)


def _check(setup: RoomTrajectory, m: PPDM):
    if m.shape != (setup.n_waypoints, setup.n_planes):
        raise InvalidInputError(f"PPDM shape {m.shape} does not match setup "
                                f"({setup.n_waypoints} waypoints, {setup.n_planes} planes)")
    if m.dim != setup.dim:
        raise InvalidInputError(f"PPDM dimension {m.dim} differs from setup dimension {setup.dim}")


def residuals(setup: RoomTrajectory, m: PPDM) -> np.ndarray:
    """``D_ij - q_j + <n_j, r_i>``, zeroed where unobserved."""
    _check(setup, m)
    e = m.entries - setup.offsets[None, :] + setup.waypoints @ setup.normals.T
    return e * m.weights()


def cost_function(setup: RoomTrajectory, m: PPDM) -> float:
    e = residuals(setup, m)
    return float(np.sum(e * e))


def cost_gradient(setup: RoomTrajectory, m: PPDM):
    """Euclidean gradient of the cost w.r.t. waypoints, normals and offsets."""
    e = residuals(setup, m)
    return 2.0 * e @ setup.normals, 2.0 * e.T @ setup.waypoints, -2.0 * e.sum(axis=0)


def _arrays_cost(d, w, r, n, q) -> float:
    e = (d - q[None, :] + r @ n.T) * w
    return float(np.sum(e * e))


def tangent_gradient_norm(setup: RoomTrajectory, m: PPDM, fixed_normals=(), fixed_offsets=()) -> float:
    """Gradient norm on the product of spheres, ignoring fixed blocks."""
    gr, gn, gq = cost_gradient(setup, m)
    gn = gn - np.sum(gn * setup.normals, axis=1, keepdims=True) * setup.normals
    gn[list(fixed_normals)] = 0.0
    gq[list(fixed_offsets)] = 0.0
    return float(np.sqrt(np.sum(gr ** 2) + np.sum(gn ** 2) + np.sum(gq ** 2)))


def _waypoints_lsq(d, w, n, q):
    gram = np.einsum("ij,ja,jb->iab", w, n, n)
    rhs = np.einsum("ij,ja->ia", w * (q[None, :] - d), n)
    gram += 1e-12 * np.eye(n.shape[1])
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def random_init(m: PPDM, rng: np.random.Generator, d: int | None = None) -> RoomTrajectory:
    """Waypoints uniform in a box sized from the distance magnitudes, normals
    uniform on the sphere, offsets from column means."""
    d = m.dim if d is None else d
    w = m.weights()
    scale = float(np.max(np.abs(m.entries[w > 0]))) if np.any(w > 0) else 1.0
    scale = scale if scale > 0 else 1.0
    r = rng.uniform(-0.5 * scale, 0.5 * scale, size=(m.shape[0], d))
    n = _unit_rows(rng.standard_normal((m.shape[1], d)))
    q = np.sum(w * (m.entries + r @ n.T), axis=0) / np.maximum(w.sum(axis=0), 1.0)
    return RoomTrajectory(n, q, r)


def _fit_shape(wcols: np.ndarray, g: np.ndarray, gauge: Gauge) -> np.ndarray:
    # refit G so known normals are hit exactly-ish and the rest stay unit length
    idx = [f.index for f in gauge.fixed]
    target = np.array([f.normal for f in gauge.fixed])
    g0 = procrustes(wcols[idx] @ g.T, target) @ g
    free = np.setdiff1d(np.arange(len(wcols)), idx)
    d = g.shape[0]

    def res(x):
        gm = x.reshape(d, d)
        unit = np.sum((wcols[free] @ gm.T) ** 2, axis=1) - 1.0
        return np.concatenate([unit, (wcols[idx] @ gm.T - target).ravel()])

    sol = least_squares(res, g0.ravel(), method="lm", xtol=1e-15, ftol=1e-15)
    return sol.x.reshape(d, d)


def spectral_init(m: PPDM, d: int | None = None, seed: int = 0,
                  gauge: Gauge | None = None) -> tuple[RoomTrajectory, bool]:
    """Factor the low-rank part of the PPDM into a feasible setup.

    With waypoints centred at the origin, column means give the offsets, and
    the centred matrix equals ``-R^T N``. Its rank-d SVD determines the
    normals up to an invertible ``G``; unit length fixes ``G^T G = P`` through
    the linear equations ``w_j^T P w_j = 1``. Returns ``(setup, fell_back)``
    where ``fell_back`` flags a degenerate factorisation replaced by a
    random start. With a fixed-normal gauge, ``G`` is refitted so the known
    normals are reproduced as well.
    """
    d = m.dim if d is None else d
    if not m.fully_observed:
        raise InvalidInputError("spectral_init needs a fully observed PPDM; run complete() first")
    n_pts, k = m.shape
    if n_pts < d + 1 or k < d + 1:
        raise InvalidInputError(f"spectral_init needs at least {d + 1} waypoints and planes")
    D = m.entries
    q = D.mean(axis=0)
    centered = D - q[None, :]
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    top = np.linalg.svd(D, compute_uv=False)[0]
    if top == 0.0 or s[d - 1] <= 1e-10 * top:
        log.info("spectral factorisation is degenerate; using a random start")
        return random_init(m, np.random.default_rng(seed), d), True
    root = np.sqrt(s[:d])
    wcols = (root[:, None] * vt[:d]).T  # (k, d): normals are G w_j
    idx = [(a, b) for a in range(d) for b in range(a, d)]
    rows = np.array([[wj[a] * wj[b] * (1.0 if a == b else 2.0) for a, b in idx] for wj in wcols])
    sol, *_ = np.linalg.lstsq(rows, np.ones(k), rcond=None)
    p = np.zeros((d, d))
    for val, (a, b) in zip(sol, idx):
        p[a, b] = p[b, a] = val
    ev, evec = np.linalg.eigh(p)
    ev = np.maximum(ev, 1e-6 * max(ev.max(), 1e-12))
    g = (evec * np.sqrt(ev)) @ evec.T
    if gauge is not None and gauge.kind == "fixed":
        g = _fit_shape(wcols, g, gauge)
    normals = _unit_rows(wcols @ g.T)
    r = _waypoints_lsq(D, np.ones_like(D), normals, q)
    q = np.mean(D + r @ normals.T, axis=0)
    return RoomTrajectory(normals, q, r), False


def _apply_gauge_to_init(r, n, q, gauge: Gauge):
    """Rotate/translate a start so known planes match, then pin them."""
    if gauge.kind != "fixed":
        return r, n, q
    idx = [f.index for f in gauge.fixed]
    target = np.array([f.normal for f in gauge.fixed])
    rot = procrustes(n[idx], target)
    n = n @ rot.T
    r = r @ rot.T
    with_q = [f for f in gauge.fixed if f.offset is not None]
    if with_q:
        a = np.array([n[f.index] for f in with_q])
        rhs = np.array([f.offset - q[f.index] for f in with_q])
        b, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        r = r + b
        q = q + n @ b
    n = n.copy()
    for f in gauge.fixed:
        n[f.index] = f.normal
        if f.offset is not None:
            q[f.index] = f.offset
    return r, n, q


def _tangent_bases(n: np.ndarray) -> np.ndarray:
    """(K, d, d-1) orthonormal bases of the planes orthogonal to each normal."""
    u, _, _ = np.linalg.svd(n[:, :, None])
    return u[:, :, 1:]


def polish(d, w, r, n, q, fix_n, fix_q, max_iters=100, cost_tol=1e-13, step_tol=1e-13):
    """Levenberg-Marquardt on waypoints, offsets and tangent moves of normals.

    Normals are updated by ``n <- normalise(n + B delta)`` with ``B`` a
    tangent basis, so they stay unit length. Returns ``(r, n, q, costs,
    iterations, converged)``.
    """
    n_pts, k = d.shape
    dim = r.shape[1]
    free_n = np.flatnonzero(fix_n == 0)
    free_q = np.flatnonzero(fix_q == 0)
    n_r = n_pts * dim
    p = n_r + free_n.size * (dim - 1) + free_q.size
    rows_i = np.repeat(np.arange(n_pts), k)
    rows_j = np.tile(np.arange(k), n_pts)
    wflat = w.ravel()
    cost = _arrays_cost(d, w, r, n, q)
    costs = [cost]
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        if cost <= 1e-30:
            converged = True
            break
        e = ((d - q[None, :] + r @ n.T) * w).ravel()
        jac = np.zeros((n_pts * k, p))
        # waypoint columns: d e_ij / d r_i = w_ij n_j
        for a in range(dim):
            jac[np.arange(n_pts * k), rows_i * dim + a] = wflat * n[rows_j, a]
        col = n_r
        if free_n.size:
            basis = _tangent_bases(n[free_n])
            for t, j in enumerate(free_n):
                sel = rows_j == j
                jac[sel, col:col + dim - 1] = (w[:, j][:, None] * (r @ basis[t]))
                col += dim - 1
        for j in free_q:
            jac[rows_j == j, col] = -w[:, j]
            col += 1
        jtj = jac.T @ jac
        g = jac.T @ e
        diag = np.maximum(np.diag(jtj), 1e-12)
        accepted = False
        for _ in range(30):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            r2 = r + step[:n_r].reshape(n_pts, dim)
            n2 = n.copy()
            col = n_r
            if free_n.size:
                moved = n[free_n] + np.einsum("kab,kb->ka", basis,
                                              step[col:col + free_n.size * (dim - 1)].reshape(free_n.size, dim - 1))
                n2[free_n] = _unit_rows(moved)
                col += free_n.size * (dim - 1)
            q2 = q.copy()
            q2[free_q] += step[col:]
            c2 = _arrays_cost(d, w, r2, n2, q2)
            if c2 < cost:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            converged = True
            break
        move = float(np.max(np.abs(step)))
        prev = cost
        r, n, q, cost = r2, n2, q2, c2
        costs.append(cost)
        lam = max(lam / 3.0, 1e-15)
        if prev - cost <= cost_tol * prev or move < step_tol:
            converged = True
            break
    return r, n, q, np.array(costs), it, converged


def _fix_masks(k: int, gauge: Gauge):
    fix_n = np.zeros(k, dtype=np.uint8)
    fix_q = np.zeros(k, dtype=np.uint8)
    if gauge.kind == "fixed":
        for f in gauge.fixed:
            if not 0 <= f.index < k:
                raise InvalidInputError(f"fixed plane index {f.index} out of range for {k} planes")
            fix_n[f.index] = 1
            if f.offset is not None:
                fix_q[f.index] = 1
    return fix_n, fix_q


def refine(m: PPDM, init: RoomTrajectory, config: SolverConfig = SolverConfig(),
           restart_index: int = 0) -> Estimate:
    """Block-coordinate descent from ``init`` until the cost stalls."""
    _check(init, m)
    fix_n, fix_q = _fix_masks(init.n_planes, config.gauge)
    r, n, q = _apply_gauge_to_init(init.waypoints, init.normals, init.offsets, config.gauge)
    w = m.weights()
    r, n, q, costs, iters, converged, ridge = kernels.run_bcd(
        m.entries, w, r, n, q, fix_n, fix_q, config.max_iters, config.cost_tol, config.step_tol)
    flags = ("ridge",) if ridge else ()
    if config.polish_iters:
        r, n, q, pcosts, piters, converged = polish(
            m.entries, w, r, n, q, fix_n, fix_q, config.polish_iters, config.cost_tol, config.step_tol)
        costs = np.concatenate([costs, pcosts[1:]])
        iters += piters
    setup = RoomTrajectory(n, q, r)
    if config.gauge.kind == "align":
        setup = align_to_reference(setup, config.gauge.reference)
    cost = cost_function(setup, m)
    grad = tangent_gradient_norm(setup, m, np.flatnonzero(fix_n), np.flatnonzero(fix_q))
    return Estimate(setup, cost, converged, iters, restart_index, (cost,), flags, grad, costs)


def _restart_seed(seed: int, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(k)])


def solve(m: PPDM, d: int | None = None, config: SolverConfig = SolverConfig()) -> Estimate:
    """Best of ``config.restarts`` refinements; ties go to the lowest index."""
    d = m.dim if d is None else d
    full = m if m.fully_observed else complete(m, d)
    results = []
    for k in range(config.restarts):
        extra = ()
        if k == 0:
            init, fell_back = spectral_init(full, d, seed=config.seed, gauge=config.gauge)
            if fell_back:
                extra = ("spectral-fallback",)
        else:
            init = random_init(m, np.random.default_rng(_restart_seed(config.seed, k)), d)
        est = refine(m, init, config, restart_index=k)
        results.append(Estimate(est.setup, est.cost, est.converged, est.iterations, k, (),
                                est.flags + extra, est.gradient_norm, est.cost_history))
    costs = tuple(e.cost for e in results)
    best = min(range(len(results)), key=lambda k: (costs[k], k))
    b = results[best]
    return Estimate(b.setup, b.cost, b.converged, b.iterations, best, costs, b.flags,
                    b.gradient_norm, b.cost_history)


def align_to_reference(est: RoomTrajectory, ref: RoomTrajectory) -> RoomTrajectory:
    """Rigid motion of ``est`` closest to ``ref`` over normals and centred waypoints."""
    if (est.dim, est.n_planes, est.n_waypoints) != (ref.dim, ref.n_planes, ref.n_waypoints):
        raise InvalidInputError("estimate and reference differ in shape")
    ce, cr = est.waypoints.mean(axis=0), ref.waypoints.mean(axis=0)
    src = np.vstack([est.normals, est.waypoints - ce])
    dst = np.vstack([ref.normals, ref.waypoints - cr])
    rot = procrustes(src, dst)
    normals = _unit_rows(est.normals @ rot.T)
    # x -> rot x + t with t = cr - rot ce; offsets shift by <rot n, t>
    t = cr - rot @ ce
    return RoomTrajectory(normals, est.offsets + normals @ t, est.waypoints @ rot.T + t)


def setup_error(est: RoomTrajectory, ref: RoomTrajectory) -> float:
    """Largest coordinate discrepancy across normals, offsets and waypoints."""
    return float(max(np.max(np.abs(est.normals - ref.normals)),
                     np.max(np.abs(est.offsets - ref.offsets)),
                     np.max(np.abs(est.waypoints - ref.waypoints))))
