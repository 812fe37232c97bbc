"""Backend selection for the block-coordinate descent kernel.

The compiled extension ``ppdmkit._bcd`` is used when it imports; otherwise
the numpy implementation in ``ppdmkit._bcd_py`` takes over. Both accept the
same arguments and return ``(R, N, q, costs, iterations, converged,
ridge_used)``.
"""
from __future__ import annotations

from . import _bcd_py

try:
    from . import _bcd as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _bcd_py.run}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled.run

_active = "cython" if _compiled is not None else "python"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available_backends()}")
    _active = name


def run_bcd(D, W, R, N, q, fix_n, fix_q, max_iters, cost_tol, step_tol, backend: str | None = None):
    return _BACKENDS[backend or _active](D, W, R, N, q, fix_n, fix_q, int(max_iters),
                                         float(cost_tol), float(step_tol))
