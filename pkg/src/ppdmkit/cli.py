"""Command-line entry point: ``ppdmkit <subcommand> [flags]``.

Every subcommand writes its outputs atomically and prints one line of JSON
to stdout. Errors go to stderr and exit with status 1 (2 for bad usage).
Plane indices on the command line are 0-based.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import io as pio
from .ambiguity import (ClassTag, random_row_dependence_pair, reflection_class_generator,
                        transform_class_generator, uniqueness_verdict, verify_equivalence)
from .errors import InvalidInputError
from .experiments import (SweepSpec, load_preset, noise_sweep, preset_names, rows_to_csv, sigma_grid,
                          linear_fit)
from .geometry import RoomTrajectory, random_interior_points, random_setup
from .ppdm import PPDM, add_noise, build_ppdm, complete, denoise, numerical_rank, random_mask
from .solver import FixedPlane, Gauge, SolverConfig, solve

log = logging.getLogger("ppdmkit")


class UsageError(InvalidInputError):
    pass


def _summary(**fields) -> None:
    print(json.dumps(pio._plain(fields), sort_keys=True, separators=(",", ":")))


# generate ---------------------------------------------------------------------

def _degenerate_waypoints(setup: RoomTrajectory, n: int, rng: np.random.Generator) -> np.ndarray:
    """Interior points on a random line (2D) or plane (3D) through the room."""
    pts = random_interior_points(setup.normals, setup.offsets, 4 * n + 8, rng)
    center = pts.mean(axis=0)
    u = rng.standard_normal(setup.dim)
    u /= np.linalg.norm(u)
    flat = pts - np.outer((pts - center) @ u, u)
    inside = np.all(setup.offsets[None, :] - flat @ setup.normals.T > 0.05, axis=1)
    flat = flat[inside]
    if len(flat) < n:
        raise InvalidInputError("could not place enough degenerate waypoints inside the room")
    return flat[:n]


def cmd_generate(args) -> None:
    rng = np.random.default_rng(args.seed)
    if args.preset:
        setup = load_preset(args.preset)
    else:
        if args.dim is None or args.planes is None:
            raise UsageError("give --preset, or --dim and --planes for a random room")
        setup = random_setup(args.dim, args.planes, args.waypoints or 3 * args.planes, rng)
    if args.layout == "degenerate":
        n = args.waypoints or setup.n_waypoints
        setup = RoomTrajectory(setup.normals, setup.offsets, _degenerate_waypoints(setup, n, rng))
    elif args.preset and args.waypoints:
        pts = random_interior_points(setup.normals, setup.offsets, args.waypoints, rng)
        setup = RoomTrajectory(setup.normals, setup.offsets, pts)
    pio.write_setup(args.output, setup)
    _summary(command="generate", output=args.output, dim=setup.dim, planes=setup.n_planes,
             waypoints=setup.n_waypoints, seed=args.seed)


# matrices ---------------------------------------------------------------------

def _read_matrix(args) -> tuple[PPDM, dict]:
    return pio.read_ppdm(args.input, args.dim)


def cmd_ppdm(args) -> None:
    setup = pio.read_setup(args.setup)
    m = build_ppdm(setup)
    pio.write_ppdm(args.output, m, sigma=0.0, seed=None)
    _summary(command="ppdm", output=args.output, shape=list(m.shape), dim=m.dim)


def cmd_noise(args) -> None:
    m, _ = _read_matrix(args)
    noisy = add_noise(m, args.sigma, args.seed)
    pio.write_ppdm(args.output, noisy, sigma=args.sigma, seed=args.seed)
    _summary(command="noise", output=args.output, sigma=args.sigma, seed=args.seed)


def cmd_denoise(args) -> None:
    m, meta = _read_matrix(args)
    out = denoise(m)
    pio.write_ppdm(args.output, out, sigma=meta.get("sigma", 0.0), seed=meta.get("seed"))
    _summary(command="denoise", output=args.output, rank=m.dim + 1)


def cmd_complete(args) -> None:
    m, meta = _read_matrix(args)
    if args.mask_rate:
        drop = random_mask(m.shape, args.mask_rate, np.random.default_rng(args.seed))
        mask = drop if m.mask is None else (drop & m.mask)
        m = m.with_mask(mask)
    done = complete(m, max_iters=args.max_iters)
    pio.write_ppdm(args.output, done, sigma=meta.get("sigma", 0.0), seed=meta.get("seed"))
    _summary(command="complete", output=args.output, missing=0 if m.mask is None else int((~m.mask).sum()),
             converged=done.converged)


def cmd_rank(args) -> None:
    m, _ = _read_matrix(args)
    r = numerical_rank(m, args.tol)
    _summary(command="rank", rank=r, bound=m.dim + 1, within_bound=r <= m.dim + 1)


# solve ------------------------------------------------------------------------

def _parse_fix(spec: str, known: RoomTrajectory | None, dim: int) -> FixedPlane:
    parts = spec.split(":")
    try:
        index = int(parts[0])
    except ValueError:
        raise UsageError(f"--fix-normal {spec!r}: index must be an integer") from None
    if len(parts) == 1:
        if known is None:
            raise UsageError(f"--fix-normal {spec!r} gives no values; add --known-planes or INDEX:nx,ny[,nz][:q]")
        if not 0 <= index < known.n_planes:
            raise UsageError(f"--fix-normal {spec!r}: index out of range for --known-planes")
        return FixedPlane(index, known.normals[index], known.offsets[index])
    if len(parts) > 3:
        raise UsageError(f"--fix-normal {spec!r}: expected INDEX[:nx,ny[,nz][:q]]")
    try:
        normal = [float(v) for v in parts[1].split(",")]
        offset = float(parts[2]) if len(parts) == 3 else None
    except ValueError:
        raise UsageError(f"--fix-normal {spec!r}: values must be numbers") from None
    if len(normal) != dim:
        raise UsageError(f"--fix-normal {spec!r}: normal needs {dim} components")
    return FixedPlane(index, normal, offset)


def _gauge(args, dim: int, k: int) -> Gauge:
    kind = args.gauge or ("fixed" if args.fix_normal else "none")
    if kind == "none":
        if args.fix_normal:
            raise UsageError("--fix-normal conflicts with --gauge none")
        return Gauge.none()
    if kind == "align":
        if not args.reference:
            raise UsageError("--gauge align needs --reference")
        return Gauge.align_to(pio.read_setup(args.reference))
    if not args.fix_normal:
        raise UsageError("--gauge fixed needs at least one --fix-normal")
    known = pio.read_setup(args.known_planes) if args.known_planes else None
    fixed = [_parse_fix(s, known, dim) for s in args.fix_normal]
    for f in fixed:
        if not 0 <= f.index < k:
            raise UsageError(f"--fix-normal index {f.index} out of range for {k} planes")
    return Gauge.fixed_normals(fixed)


def cmd_solve(args) -> None:
    m, _ = _read_matrix(args)
    gauge = _gauge(args, m.dim, m.shape[1])
    cfg = SolverConfig(restarts=args.restarts, max_iters=args.max_iters, gauge=gauge, seed=args.seed)
    est = solve(m, m.dim, cfg)
    report = {
        "estimate": pio.setup_to_dict(est.setup),
        "cost": est.cost,
        "restart_costs": list(est.restart_costs),
        "restart_index": est.restart_index,
        "iterations": est.iterations,
        "converged": est.converged,
        "flags": list(est.flags),
        "gauge": gauge.describe(),
        "seed": args.seed,
    }
    pio.atomic_write(args.output, pio.dumps(report))
    _summary(command="solve", output=args.output, cost=est.cost, converged=est.converged,
             restart_index=est.restart_index)


# ambiguity --------------------------------------------------------------------

def cmd_ambiguity(args) -> None:
    cls = args.cls
    if cls == "row-dependence":
        if args.dim is None:
            raise UsageError("--class row-dependence needs --dim")
        d = args.dim
        pair = random_row_dependence_pair(d, args.base_rows or d + 1, args.planes or 2 * d + 1,
                                          args.waypoints or 3 * d, np.random.default_rng(args.seed))
    else:
        if not args.setup:
            raise UsageError(f"--class {cls} needs --setup")
        setup = pio.read_setup(args.setup)
        if cls == "reflection":
            other = reflection_class_generator(setup, seed=args.seed)
            if other is None:
                raise InvalidInputError("waypoints span the full space; no reflection-class partner exists")
            pair = verify_equivalence(setup, other, class_tag=ClassTag.REFLECTION)
        else:
            found = transform_class_generator(setup, seed=args.seed, attempts=args.attempts)
            if found is None:
                raise InvalidInputError(f"no non-orthogonal unit-preserving transform found in {args.attempts} attempts")
            tr, other = found
            pair = verify_equivalence(setup, other, class_tag=ClassTag.TRANSFORM, transform=tr)
        if pair is None:
            raise InvalidInputError("generated partner failed verification")
    pio.atomic_write(args.output, pio.dumps(pio.pair_to_dict(pair)))
    _summary(command="ambiguity", output=args.output, **{"class": pair.class_tag.value},
             residual=pair.residual, deviation=pair.deviation, congruent=pair.congruent)


def cmd_verdict(args) -> None:
    setup = pio.read_setup(args.setup)
    v = uniqueness_verdict(setup, search_budget=args.attempts, seed=args.seed)
    _summary(command="verdict", verdict=v.value, planes=setup.n_planes, dim=setup.dim)


# sweep ------------------------------------------------------------------------

def cmd_sweep(args) -> None:
    setup = pio.read_setup(args.setup) if args.setup else load_preset(args.preset)
    if args.sigmas:
        sigmas = tuple(float(v) for v in args.sigmas.split(","))
    else:
        sigmas = sigma_grid(args.sigma_max, args.sigma_step)
    try:
        fixed = [int(v) for v in args.fix_planes.split(",")] if args.fix_planes else []
    except ValueError:
        raise UsageError("--fix-planes must be comma-separated integers") from None
    gauge = Gauge.from_setup(setup, fixed) if fixed else Gauge.none()
    cfg = SolverConfig(restarts=args.restarts, gauge=gauge, seed=args.seed)
    spec = SweepSpec(setup, sigmas, args.trials, cfg, args.seed, failure_factor=args.failure_factor)
    rows = noise_sweep(spec, n_jobs=args.jobs)
    medians = [r.median_room_err for r in rows]
    fit = linear_fit(sigmas, medians) if len(rows) >= 3 else None
    manifest = spec.manifest()
    if fit is not None:
        manifest["fit"] = {"slope": fit[0], "intercept": fit[1], "r2": fit[2]}
    pio.atomic_write(args.output, rows_to_csv(rows))
    pio.atomic_write(pio.sidecar_path(args.output), pio.dumps(manifest))
    _summary(command="sweep", output=args.output, rows=len(rows), trials=args.trials,
             r2=None if fit is None else fit[2], failures=sum(r.failures for r in rows))


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppdmkit", description="Room and trajectory recovery from point-to-plane distances.")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    def matrix_in(sp):
        sp.add_argument("--input", required=True, help="PPDM CSV")
        sp.add_argument("--dim", type=int, choices=(2, 3), help="dimension if the CSV has no sidecar")

    sp = add("generate", cmd_generate, "write a room-trajectory setup")
    sp.add_argument("--preset", choices=preset_names())
    sp.add_argument("--dim", type=int, choices=(2, 3))
    sp.add_argument("--planes", type=int)
    sp.add_argument("--waypoints", type=int, help="resample this many interior waypoints")
    sp.add_argument("--layout", choices=("generic", "degenerate"), default="generic",
                    help="degenerate puts waypoints on one line (2D) or plane (3D)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)

    sp = add("ppdm", cmd_ppdm, "build the exact PPDM of a setup")
    sp.add_argument("--setup", required=True)
    sp.add_argument("--output", required=True)

    sp = add("noise", cmd_noise, "add Gaussian noise to a PPDM")
    matrix_in(sp)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)

    sp = add("denoise", cmd_denoise, "project a PPDM onto rank d+1")
    matrix_in(sp)
    sp.add_argument("--output", required=True)

    sp = add("complete", cmd_complete, "fill missing PPDM entries")
    matrix_in(sp)
    sp.add_argument("--mask-rate", type=float, default=0.0, help="hide this fraction of entries first")
    sp.add_argument("--max-iters", type=int, default=20000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)

    sp = add("solve", cmd_solve, "estimate planes and waypoints from a PPDM")
    matrix_in(sp)
    sp.add_argument("--restarts", type=int, default=10)
    sp.add_argument("--max-iters", type=int, default=500)
    sp.add_argument("--gauge", choices=("none", "fixed", "align"))
    sp.add_argument("--fix-normal", action="append", default=[], metavar="INDEX[:nx,ny[,nz][:q]]")
    sp.add_argument("--known-planes", help="setup JSON supplying values for index-only --fix-normal")
    sp.add_argument("--reference", help="setup JSON for --gauge align")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)

    sp = add("ambiguity", cmd_ambiguity, "construct a PPDM-equivalent partner setup")
    sp.add_argument("--class", dest="cls", required=True, choices=("reflection", "transform", "row-dependence"))
    sp.add_argument("--setup")
    sp.add_argument("--attempts", type=int, default=50)
    sp.add_argument("--dim", type=int, choices=(2, 3))
    sp.add_argument("--planes", type=int)
    sp.add_argument("--waypoints", type=int)
    sp.add_argument("--base-rows", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)

    sp = add("verdict", cmd_verdict, "decide whether a setup is determined by its PPDM")
    sp.add_argument("--setup", required=True)
    sp.add_argument("--attempts", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("sweep", cmd_sweep, "noise sweep on a known setup")
    sp.add_argument("--setup")
    sp.add_argument("--preset", default="hexahedron3d", choices=preset_names())
    sp.add_argument("--sigmas", help="comma-separated list; overrides --sigma-max/--sigma-step")
    sp.add_argument("--sigma-max", type=float, default=0.20)
    sp.add_argument("--sigma-step", type=float, default=0.02)
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--restarts", type=int, default=3)
    sp.add_argument("--fix-planes", default="0,2", help="plane indices held at their true values; empty for none")
    sp.add_argument("--failure-factor", type=float, default=10.0)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)

    sp = add("rank", cmd_rank, "numerical rank of a PPDM")
    matrix_in(sp)
    sp.add_argument("--tol", type=float, default=1e-8, help="relative singular value threshold")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ppdmkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (InvalidInputError, OSError, RuntimeError, ValueError) as exc:
        print(f"ppdmkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
