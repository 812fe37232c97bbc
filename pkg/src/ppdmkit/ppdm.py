"""Point-to-plane distance matrices and their low-rank structure.

An exact PPDM factors as ``D = -R^T N + 1 q^T`` and hence has rank at most
``d + 1`` regardless of how many waypoints or planes generate it. That bound
drives both denoising (truncated SVD) and completion of missing entries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UnderdeterminedError
from .geometry import RoomTrajectory

log = logging.getLogger(__name__)

DEFAULT_RANK_RTOL = 1e-8


@dataclass(frozen=True)
class PPDM:
    """N x K distance matrix with an optional boolean mask (True = observed).

    ``converged`` is only meaningful for outputs of :func:`complete`.
    """

    entries: np.ndarray
    dim: int
    mask: np.ndarray | None = None
    converged: bool = True

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim != 2:
            raise InvalidInputError(f"PPDM entries must be a matrix, got shape {e.shape}")
        if self.dim not in (2, 3):
            raise InvalidInputError(f"dim must be 2 or 3, got {self.dim}")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)
        if self.mask is not None:
            m = np.array(self.mask, dtype=bool)
            if m.shape != e.shape:
                raise InvalidInputError(f"mask shape {m.shape} differs from entries {e.shape}")
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def fully_observed(self) -> bool:
        return self.mask is None or bool(self.mask.all())

    def weights(self) -> np.ndarray:
        """Observation mask as a float array of ones and zeros."""
        if self.mask is None:
            return np.ones(self.shape)
        return self.mask.astype(float)

    def with_mask(self, mask) -> "PPDM":
        return PPDM(self.entries, self.dim, mask)


def build_ppdm(setup: RoomTrajectory) -> PPDM:
    d = setup.offsets[None, :] - setup.waypoints @ setup.normals.T
    return PPDM(d, setup.dim)


def numerical_rank(m: PPDM, rel_tol: float = DEFAULT_RANK_RTOL) -> int:
    if not m.fully_observed:
        raise InvalidInputError("numerical_rank needs a fully observed matrix")
    s = np.linalg.svd(m.entries, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def add_noise(m: PPDM, sigma: float, seed: int | np.random.SeedSequence) -> PPDM:
    """Add iid N(0, sigma^2) noise to every entry, masked ones included."""
    if sigma < 0:
        raise InvalidInputError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return m
    rng = np.random.default_rng(seed)
    return PPDM(m.entries + sigma * rng.standard_normal(m.shape), m.dim, m.mask)


def _truncate(a: np.ndarray, rank: int) -> np.ndarray:
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return (u[:, :rank] * s[:rank]) @ vt[:rank]


def denoise(m: PPDM, d: int | None = None) -> PPDM:
    """Best rank-(d+1) Frobenius approximation of a fully observed PPDM."""
    d = m.dim if d is None else d
    if not m.fully_observed:
        raise InvalidInputError("denoise needs a fully observed matrix; use complete()")
    if d + 1 > min(m.shape):
        raise InvalidInputError(f"rank {d + 1} exceeds min{m.shape}")
    return PPDM(_truncate(m.entries, d + 1), m.dim)


def _factored_ls(entries, mask, rank, start, max_iters, tol):
    """Alternating least squares on ``U V^T`` fitted to the observed entries."""
    u, sv, vt = np.linalg.svd(start, full_matrices=False)
    left = u[:, :rank] * sv[:rank]
    right = vt[:rank].T
    low = left @ right.T
    for _ in range(max_iters):
        for i in range(entries.shape[0]):
            o = mask[i]
            left[i] = np.linalg.lstsq(right[o], entries[i, o], rcond=None)[0]
        for j in range(entries.shape[1]):
            o = mask[:, j]
            right[j] = np.linalg.lstsq(left[o], entries[o, j], rcond=None)[0]
        nxt = left @ right.T
        step = np.linalg.norm(nxt - low)
        low = nxt
        if step < tol:
            return low, True
    return low, False


def complete(m: PPDM, d: int | None = None, max_iters: int = 20000, tol: float = 1e-12,
             factored_iters: int = 2000) -> PPDM:
    """Fill unobserved entries by alternating projections.

    Alternates between the set of rank-(d+1) matrices and the set of matrices
    that agree with the observed entries, and stops when successive iterates
    differ by less than ``tol`` (Frobenius). Projection can crawl when a row
    or column has barely d+1 observations; if ``max_iters`` runs out, the
    last iterate seeds up to ``factored_iters`` rounds of alternating least
    squares on a rank-(d+1) factorisation (0 disables this). The result is
    the last low-rank iterate; ``converged`` is False if neither stage met
    ``tol``.
    """
    d = m.dim if d is None else d
    if m.mask is None:
        return denoise(m, d)
    mask = m.mask
    need = d + 1
    rows, cols = mask.sum(axis=1), mask.sum(axis=0)
    if rows.min() < need or cols.min() < need:
        bad_r = np.flatnonzero(rows < need)
        bad_c = np.flatnonzero(cols < need)
        raise UnderdeterminedError(
            f"completion needs >= {need} observations per row and column; "
            f"short rows {bad_r.tolist()}, short columns {bad_c.tolist()}")
    if need > min(m.shape):
        raise InvalidInputError(f"rank {need} exceeds min{m.shape}")

    observed = np.where(mask, m.entries, 0.0)
    # start from column means of the observed entries
    col_mean = observed.sum(axis=0) / cols
    x = np.where(mask, m.entries, col_mean[None, :])
    low = _truncate(x, need)
    converged = False
    step = np.inf
    for _ in range(max_iters):
        x = np.where(mask, m.entries, low)
        nxt = _truncate(x, need)
        step = np.linalg.norm(nxt - low)
        low = nxt
        if step < tol:
            converged = True
            break
    if not converged and factored_iters > 0:
        log.info("projection stalled after %d iterations (last step %.3g); switching to factored least squares",
                 max_iters, step)
        low, converged = _factored_ls(m.entries, mask, need, low, factored_iters, tol)
    if not converged:
        log.info("completion did not reach tol %.3g", tol)
    return PPDM(low, m.dim, converged=converged)


def random_mask(shape, missing_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean observation mask with ``missing_rate`` of entries dropped."""
    n = shape[0] * shape[1]
    k = int(round(missing_rate * n))
    flat = np.ones(n, dtype=bool)
    flat[rng.choice(n, size=k, replace=False)] = False
    return flat.reshape(shape)
