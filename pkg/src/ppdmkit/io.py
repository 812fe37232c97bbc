"""Canonical JSON and CSV formats.

Setups are JSON documents ``{"dim", "planes": [{"normal", "offset"}],
"waypoints"}``. PPDMs are CSV files with a ``j=1..j=K`` header and empty
fields for missing entries, plus a ``<file>.json`` sidecar holding
``{"dim", "sigma", "seed"}``. JSON is written with sorted keys and shortest
round-trip float formatting so rewriting a parsed file is byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .ambiguity import EquivalencePair
from .errors import InvalidInputError
from .geometry import Plane, RoomTrajectory
from .ppdm import PPDM


class FormatError(InvalidInputError):
    """A file does not match its schema; the message names field and line."""


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=True) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def setup_to_dict(setup: RoomTrajectory) -> dict:
    return {
        "dim": setup.dim,
        "planes": [{"normal": p.normal.tolist(), "offset": p.offset} for p in setup.planes],
        "waypoints": setup.waypoints.tolist(),
    }


def _vector(value, field: str, dim: int | None = None) -> list[float]:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise FormatError(f"field {field!r} must be a list of numbers")
    if dim is not None and len(value) != dim:
        raise FormatError(f"field {field!r} has length {len(value)}, expected {dim}")
    return [float(v) for v in value]


def setup_from_dict(data, source: str = "<setup>") -> RoomTrajectory:
    if not isinstance(data, dict):
        raise FormatError(f"{source}: top level must be an object")
    for key in ("dim", "planes", "waypoints"):
        if key not in data:
            raise FormatError(f"{source}: missing field {key!r}")
    dim = data["dim"]
    if dim not in (2, 3) or isinstance(dim, bool):
        raise FormatError(f"{source}: field 'dim' must be 2 or 3, got {dim!r}")
    if not isinstance(data["planes"], list) or not data["planes"]:
        raise FormatError(f"{source}: field 'planes' must be a non-empty list")
    planes = []
    for j, p in enumerate(data["planes"]):
        where = f"planes[{j}]"
        if not isinstance(p, dict) or "normal" not in p or "offset" not in p:
            raise FormatError(f"{source}: field {where!r} needs 'normal' and 'offset'")
        normal = _vector(p["normal"], f"{where}.normal", dim)
        off = p["offset"]
        if not isinstance(off, (int, float)) or isinstance(off, bool):
            raise FormatError(f"{source}: field '{where}.offset' must be a number")
        try:
            planes.append(Plane(np.array(normal), float(off)))
        except InvalidInputError as exc:
            raise FormatError(f"{source}: field {where!r}: {exc}") from None
    if not isinstance(data["waypoints"], list) or not data["waypoints"]:
        raise FormatError(f"{source}: field 'waypoints' must be a non-empty list")
    pts = [_vector(w, f"waypoints[{i}]", dim) for i, w in enumerate(data["waypoints"])]
    return RoomTrajectory.from_planes(planes, pts)


def write_setup(path, setup: RoomTrajectory) -> None:
    atomic_write(path, dumps(setup_to_dict(setup)))


def read_setup(path) -> RoomTrajectory:
    return setup_from_dict(_load_json(path), str(path))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def ppdm_to_csv(m: PPDM) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([f"j={j + 1}" for j in range(m.shape[1])])
    mask = m.mask if m.mask is not None else np.ones(m.shape, dtype=bool)
    for row, obs in zip(m.entries.tolist(), mask.tolist()):
        wr.writerow([repr(v) if o else "" for v, o in zip(row, obs)])
    return buf.getvalue()


def write_ppdm(path, m: PPDM, sigma: float = 0.0, seed: int | None = None) -> None:
    atomic_write(path, ppdm_to_csv(m))
    atomic_write(sidecar_path(path), dumps({"dim": m.dim, "sigma": sigma, "seed": seed}))


def read_ppdm(path, dim: int | None = None) -> tuple[PPDM, dict]:
    """Parse a PPDM CSV (and its sidecar if present). Returns ``(ppdm, meta)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = _load_json(side)
        if not isinstance(meta, dict):
            raise FormatError(f"{side}: top level must be an object")
    dim = dim if dim is not None else meta.get("dim")
    if dim is None:
        raise FormatError(f"{path}: dimension unknown (no sidecar {side.name} and no --dim)")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    expected = [f"j={j + 1}" for j in range(len(header))]
    if header != expected:
        raise FormatError(f"{path}: line 1: header must be {','.join(expected)}")
    k = len(header)
    values, mask = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != k:
            raise FormatError(f"{path}: line {lineno}: expected {k} fields, got {len(row)}")
        vals, obs = [], []
        for col, field in enumerate(row):
            if field.strip() == "":
                vals.append(0.0)
                obs.append(False)
                continue
            try:
                vals.append(float(field))
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: field j={col + 1} is not a number: {field!r}") from None
            obs.append(True)
        values.append(vals)
        mask.append(obs)
    if not values:
        raise FormatError(f"{path}: no data rows")
    mask_arr = np.array(mask)
    entries = np.array(values)
    return PPDM(entries, int(dim), None if mask_arr.all() else mask_arr), meta


def pair_to_dict(pair: EquivalencePair) -> dict:
    out = {
        "first": setup_to_dict(pair.first),
        "second": setup_to_dict(pair.second),
        "class": pair.class_tag.value if pair.class_tag is not None else None,
        "residual": pair.residual,
        "congruent": pair.congruent,
        "deviation": pair.deviation,
        "valid_room": pair.valid_room,
    }
    if pair.transform is not None:
        out["transform"] = pair.transform.matrix.ravel().tolist()
    return out
