"""Noise sweeps: corrupt a known setup, re-estimate it, and measure errors.

Room error is the mean distance between corresponding room corners and
waypoint error the mean distance between corresponding waypoints, both after
rigidly aligning the estimate to the ground truth.
"""
from __future__ import annotations

import csv
import io as _io
import logging
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInputError, NoPolytopeError
from .geometry import RoomTrajectory, enumerate_vertices
from .ppdm import add_noise, build_ppdm
from .solver import Gauge, SolverConfig, align_to_reference, solve

log = logging.getLogger(__name__)

CSV_COLUMNS = ("sigma", "mean_room_err", "median_room_err", "mean_wp_err", "median_wp_err", "failures", "trials")


def load_preset(name: str) -> RoomTrajectory:
    from .io import setup_from_dict, _load_json
    path = resources.files("ppdmkit") / "data" / "presets" / f"{name}.json"
    if not path.is_file():
        raise InvalidInputError(f"unknown preset {name!r}; have {preset_names()}")
    return setup_from_dict(_load_json(path), name)


def preset_names() -> list[str]:
    root = resources.files("ppdmkit") / "data" / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def vertex_errors(est: RoomTrajectory, truth: RoomTrajectory) -> tuple[np.ndarray, bool]:
    """Per-corner distances and whether corners matched by their plane sets.

    Corners are paired through the set of planes meeting there. If the two
    rooms have different combinatorics the pairing falls back to a minimum
    total-distance assignment and the flag is False.
    """
    if est.n_planes != truth.n_planes or est.dim != truth.dim:
        raise InvalidInputError("rooms differ in plane count or dimension")
    ve, se = enumerate_vertices(est.normals, est.offsets)
    vt, st = enumerate_vertices(truth.normals, truth.offsets)
    lookup = {s: i for i, s in enumerate(se)}
    if len(lookup) == len(se) == len(st) and all(s in lookup for s in st):
        idx = [lookup[s] for s in st]
        return np.linalg.norm(ve[idx] - vt, axis=1), True
    cost = np.linalg.norm(vt[:, None, :] - ve[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    return cost[rows, cols], False


def room_error(est: RoomTrajectory, truth: RoomTrajectory) -> float:
    return float(np.mean(vertex_errors(est, truth)[0]))


def waypoint_error(est: RoomTrajectory, truth: RoomTrajectory) -> float:
    if est.waypoints.shape != truth.waypoints.shape:
        raise InvalidInputError("waypoint sets differ in shape")
    return float(np.mean(np.linalg.norm(est.waypoints - truth.waypoints, axis=1)))


def linear_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares line ``y = slope x + intercept`` and its R^2."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise InvalidInputError("linear_fit needs at least 3 paired points")
    if np.ptp(x) == 0:
        raise InvalidInputError("linear_fit needs at least two distinct x values")
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


@dataclass(frozen=True)
class SweepSpec:
    setup: RoomTrajectory
    sigmas: tuple[float, ...]
    trials_per_sigma: int
    solver: SolverConfig
    seed: int = 0
    failure_factor: float = 10.0
    cost_floor: float = 1e-12

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigmas)
        if not s or min(s) < 0 or any(b <= a for a, b in zip(s, s[1:])):
            raise InvalidInputError("sigmas must be non-negative and strictly increasing")
        if self.trials_per_sigma < 1:
            raise InvalidInputError("trials_per_sigma must be >= 1")
        object.__setattr__(self, "sigmas", s)

    def manifest(self) -> dict:
        from .io import setup_to_dict
        cfg = self.solver
        return {
            "setup": setup_to_dict(self.setup),
            "sigmas": list(self.sigmas),
            "trials_per_sigma": self.trials_per_sigma,
            "seed": self.seed,
            "failure_factor": self.failure_factor,
            "cost_floor": self.cost_floor,
            "solver": {"restarts": cfg.restarts, "max_iters": cfg.max_iters, "polish_iters": cfg.polish_iters,
                       "cost_tol": cfg.cost_tol, "step_tol": cfg.step_tol, "seed": cfg.seed,
                       "gauge": cfg.gauge.describe()},
        }


@dataclass(frozen=True)
class SweepRow:
    sigma: float
    mean_room_err: float
    median_room_err: float
    mean_wp_err: float
    median_wp_err: float
    failures: int
    trials: int
    matching_fallbacks: int = field(default=0, compare=False)

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


def sigma_grid(stop: float = 0.20, step: float = 0.02) -> tuple[float, ...]:
    n = int(round(stop / step))
    return tuple(round(k * step, 12) for k in range(n + 1))


def default_sweep_spec(trials: int = 200, restarts: int = 3, seed: int = 0, sigmas=None,
                       fixed_planes=(0, 2)) -> SweepSpec:
    """Bundled non-shoebox room with the floor and one wall known."""
    room = load_preset("hexahedron3d")
    cfg = SolverConfig(restarts=restarts, gauge=Gauge.from_setup(room, fixed_planes), seed=seed)
    return SweepSpec(room, sigma_grid() if sigmas is None else tuple(sigmas), trials, cfg, seed)


def _trial(spec: SweepSpec, clean, si: int, t: int, sigma: float):
    seq = np.random.SeedSequence([int(spec.seed), si, t])
    noise_seq, solver_seq = seq.spawn(2)
    noisy = add_noise(clean, sigma, noise_seq)
    cfg = replace(spec.solver, seed=int(solver_seq.generate_state(1)[0]))
    est = solve(noisy, clean.dim, cfg)
    aligned = align_to_reference(est.setup, spec.setup)
    try:
        errs, exact = vertex_errors(aligned, spec.setup)
        room = float(np.mean(errs))
    except NoPolytopeError:
        room, exact = float("nan"), False
    return est.cost, est.converged, room, waypoint_error(aligned, spec.setup), exact


def noise_sweep(spec: SweepSpec, n_jobs: int = 1) -> list[SweepRow]:
    """Run every (sigma, trial) cell; per-cell seeds make the result independent of n_jobs."""
    clean = build_ppdm(spec.setup)
    cells = [(si, t, sigma) for si, sigma in enumerate(spec.sigmas) for t in range(spec.trials_per_sigma)]
    if n_jobs == 1:
        results = [_trial(spec, clean, si, t, sigma) for si, t, sigma in cells]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_trial)(spec, clean, si, t, sigma) for si, t, sigma in cells)
    rows = []
    n = spec.trials_per_sigma
    for si, sigma in enumerate(spec.sigmas):
        chunk = results[si * n:(si + 1) * n]
        costs = np.array([c[0] for c in chunk])
        limit = max(spec.failure_factor * float(np.median(costs)), spec.cost_floor)
        ok = [c for c in chunk if c[1] and c[0] <= limit and np.isfinite(c[2])]
        room = np.array([c[2] for c in ok]) if ok else np.array([np.nan])
        wp = np.array([c[3] for c in ok]) if ok else np.array([np.nan])
        rows.append(SweepRow(sigma, float(np.mean(room)), float(np.median(room)), float(np.mean(wp)),
                             float(np.median(wp)), n - len(ok), n, sum(1 for c in chunk if not c[4])))
    return rows


def rows_to_csv(rows) -> str:
    buf = _io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for r in rows:
        wr.writerow([repr(v) if isinstance(v, float) else v for v in r.as_tuple()])
    return buf.getvalue()
