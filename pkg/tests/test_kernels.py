import numpy as np
import pytest

from ppdmkit import kernels
from ppdmkit.geometry import random_setup
from ppdmkit.ppdm import add_noise, build_ppdm, random_mask
from ppdmkit.solver import random_init

needs_cython = pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")


def problem(seed, dim=3, k=6, n=15, sigma=0.05, missing=0.0):
    rng = np.random.default_rng(seed)
    s = random_setup(dim, k, n, rng)
    m = add_noise(build_ppdm(s), sigma, seed)
    w = m.weights() if not missing else random_mask(m.shape, missing, rng).astype(float)
    init = random_init(m, rng)
    return m.entries, w, init


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


@needs_cython
@pytest.mark.parametrize("seed,dim,missing", [(0, 3, 0.0), (1, 2, 0.0), (2, 3, 0.15), (3, 2, 0.2)])
def test_backends_agree(seed, dim, missing):
    d, w, init = problem(seed, dim=dim, k=5 + dim, missing=missing)
    k = d.shape[1]
    fix_n = np.zeros(k, np.uint8)
    fix_q = np.zeros(k, np.uint8)
    fix_n[0] = fix_q[0] = 1
    args = (d, w, init.waypoints, init.normals, init.offsets, fix_n, fix_q, 40, 0.0, 0.0)
    py = kernels.run_bcd(*args, backend="python")
    cy = kernels.run_bcd(*args, backend="cython")
    assert py[4] == cy[4]
    for a, b in zip(py[:4], cy[:4]):
        np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-9)


@needs_cython
def test_cython_backend_leaves_inputs_untouched():
    d, w, init = problem(4)
    r0 = init.waypoints.copy()
    kernels.run_bcd(d, w, init.waypoints, init.normals, init.offsets, np.zeros(6, np.uint8),
                    np.zeros(6, np.uint8), 5, 1e-15, 1e-15, backend="cython")
    assert np.array_equal(init.waypoints, r0)


def test_fixed_blocks_never_move():
    d, w, init = problem(5)
    fix = np.array([1, 0, 1, 0, 0, 0], np.uint8)
    for backend in kernels.available_backends():
        r, n, q, *_ = kernels.run_bcd(d, w, init.waypoints, init.normals, init.offsets, fix, fix, 50,
                                      1e-15, 1e-15, backend=backend)
        assert np.array_equal(n[[0, 2]], init.normals[[0, 2]])
        assert np.array_equal(q[[0, 2]], init.offsets[[0, 2]])


def test_ridge_flag_on_rank_deficient_waypoint_step():
    # every normal in the xy-plane: the z coordinate of each waypoint is unconstrained
    rng = np.random.default_rng(6)
    ang = rng.uniform(0, 2 * np.pi, 5)
    n = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(5)])
    d = rng.uniform(1, 2, (8, 5))
    r = rng.normal(size=(8, 3))
    for backend in kernels.available_backends():
        *_, ridge = kernels.run_bcd(d, np.ones_like(d), r, n, np.ones(5), np.ones(5, np.uint8),
                                    np.zeros(5, np.uint8), 3, 1e-15, 1e-15, backend=backend)
        assert ridge


def test_set_backend_round_trip():
    before = kernels.get_backend()
    try:
        kernels.set_backend("python")
        assert kernels.get_backend() == "python"
    finally:
        kernels.set_backend(before)
