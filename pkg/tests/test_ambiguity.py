import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppdmkit.ambiguity import (ClassTag, NormalTransform, apply_normal_transform, find_unit_transforms,
                               nullspace_residual, random_row_dependence_pair, reflection_class_generator,
                               row_dependence_class_generator, transform_class_generator, uniqueness_verdict,
                               unit_transform_freedom, verify_equivalence)
from ppdmkit.errors import DegenerateCombinationError, InvalidInputError
from ppdmkit.geometry import (RigidMotion, RoomTrajectory, Verdict, affine_dimension, apply_rigid_motion,
                              is_congruent, random_interior_points, random_room, random_setup)
from ppdmkit.ppdm import build_ppdm
from ppdmkit.solver import Gauge, SolverConfig, solve


def square(waypoints):
    normals = np.array([[1.0, 0], [0, 1.0], [-1.0, 0], [0, -1.0]])
    return RoomTrajectory(normals, np.array([1.0, 1, 0, 0]), np.asarray(waypoints, dtype=float))


def shoebox(dims, n, rng, coplanar=False):
    normals = np.vstack([np.eye(3), -np.eye(3)])
    offsets = np.concatenate([dims, np.zeros(3)])
    pts = random_interior_points(normals, offsets, n, rng)
    if coplanar:
        pts[:, 2] = 0.4 * dims[2]
    return RoomTrajectory(normals, offsets, pts)


def ppdm_dev(a, b):
    return float(np.max(np.abs(build_ppdm(a).entries - build_ppdm(b).entries)))


def test_residual_zero_for_identical_setups():
    s = random_setup(3, 6, 10, np.random.default_rng(0))
    assert nullspace_residual(s, s) < 1e-12


def test_residual_large_for_unrelated_setups():
    rng = np.random.default_rng(1)
    vals = [nullspace_residual(random_setup(3, 6, 10, rng), random_setup(3, 6, 10, rng)) for _ in range(20)]
    assert min(vals) > 0.1


def test_verify_rigid_copy_is_congruent():
    rng = np.random.default_rng(2)
    s = random_setup(3, 6, 10, rng)
    pair = verify_equivalence(s, apply_rigid_motion(s, RigidMotion.random(3, rng)))
    assert pair is not None and pair.congruent


def test_verify_rejects_perturbed_copy():
    s = random_setup(2, 5, 8, np.random.default_rng(3))
    pts = s.waypoints.copy()
    pts[0, 0] += 1.0
    assert verify_equivalence(s, s.replace(waypoints=pts)) is None
    with pytest.raises(InvalidInputError):
        verify_equivalence(s, RoomTrajectory(s.normals[:4], s.offsets[:4], s.waypoints))


def test_reflection_square_collinear():
    s = square([[0.2, 0.3], [0.5, 0.3], [0.8, 0.3]])
    other = reflection_class_generator(s)
    assert other is not None
    assert ppdm_dev(s, other) < 1e-10
    assert not is_congruent(s, other)


def test_reflection_coplanar_shoebox():
    rng = np.random.default_rng(4)
    s = shoebox(np.array([5.0, 4.0, 3.0]), 4, rng, coplanar=True)
    other = reflection_class_generator(s, seed=1)
    pair = verify_equivalence(s, other, 1e-10, ClassTag.REFLECTION)
    assert pair is not None and not pair.congruent
    assert pair.residual < 1e-10


def test_reflection_of_every_wall_is_congruent():
    s = square([[0.2, 0.3], [0.5, 0.3], [0.8, 0.3]])
    other = reflection_class_generator(s, planes=range(4))
    assert is_congruent(s, other)


def test_reflection_none_for_full_dimensional_waypoints():
    assert reflection_class_generator(random_setup(3, 6, 10, np.random.default_rng(5))) is None


def test_transform_square_gives_parallelogram():
    s = square([[0.2, 0.3], [0.7, 0.6], [0.4, 0.8]])
    tr, other = transform_class_generator(s, seed=0)
    assert tr.orthogonality_defect() > 1e-6
    assert ppdm_dev(s, other) < 1e-8
    assert not is_congruent(s, other)
    # opposite walls stay antiparallel; adjacent ones are no longer perpendicular
    m = other.normals
    assert m[0] @ m[2] == pytest.approx(-1.0, abs=1e-9)
    assert abs(m[0] @ m[1]) > 1e-3
    assert nullspace_residual(s, other) < 1e-9


def test_transform_certificate():
    rng = np.random.default_rng(6)
    s = apply_rigid_motion(shoebox(np.array([4.0, 3.0, 2.5]), 10, rng), RigidMotion.random(3, rng))
    tr, other = transform_class_generator(s, seed=3)
    assert tr.unit_defect(s.normals) < 1e-9
    bil_a = s.waypoints @ s.normals.T
    bil_b = other.waypoints @ other.normals.T
    assert np.max(np.abs(bil_a - bil_b)) < 1e-10


def test_orthogonal_transform_reduces_to_rigid_motion():
    rng = np.random.default_rng(7)
    s = random_setup(3, 6, 10, rng)
    rot = RigidMotion.random(3, rng).rotation
    assert is_congruent(s, apply_normal_transform(s, rot))


def test_apply_normal_transform_rejects_non_unit():
    s = random_setup(3, 6, 10, np.random.default_rng(8))
    with pytest.raises(InvalidInputError, match="unit length"):
        apply_normal_transform(s, np.diag([1.0, 2.0, 1.0]))
    with pytest.raises(InvalidInputError, match="singular"):
        NormalTransform(np.zeros((3, 3)))


def test_generic_k9_has_only_orthogonal_transforms():
    rng = np.random.default_rng(9)
    n, q = random_room(3, 9, rng)
    s = RoomTrajectory(n, q, random_interior_points(n, q, 15, rng))
    assert unit_transform_freedom(n) == 0
    assert transform_class_generator(s, seed=0, attempts=100) is None
    for t in find_unit_transforms(n, seed=0, attempts=30, stop_at_non_orthogonal=False):
        assert np.linalg.norm(t.T @ t - np.eye(3)) < 1e-6


def test_unit_freedom_counts():
    assert unit_transform_freedom(np.vstack([np.eye(3), -np.eye(3)])) == 3
    assert unit_transform_freedom(square([[0.5, 0.5]]).normals) == 1
    assert unit_transform_freedom(random_room(3, 6, np.random.default_rng(10))[0]) == 0


def test_transform_generator_rejects_rank_deficient_normals():
    n = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])
    s = RoomTrajectory(n, np.ones(4), np.zeros((3, 3)))
    with pytest.raises(InvalidInputError, match="span"):
        transform_class_generator(s)


def test_row_dependence_pair_verifies():
    pair = random_row_dependence_pair(3, 4, 7, 6, np.random.default_rng(11))
    assert pair.deviation < 1e-8
    assert pair.residual < 1e-8
    assert not pair.congruent
    # stacked waypoints live in a (2d - L)-dimensional null space
    stacked = np.hstack([pair.first.waypoints, -pair.second.waypoints])
    assert np.linalg.matrix_rank(stacked, tol=1e-9) <= 2


def test_row_dependence_rejects_too_many_base_rows():
    rng = np.random.default_rng(12)
    v = rng.normal(size=(4, 2))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    with pytest.raises(InvalidInputError, match="fewer than 4"):
        row_dependence_class_generator(list(zip(v, v[::-1])), np.ones((1, 4)), np.ones(5), np.ones((3, 0)))


def test_row_dependence_zero_half_fails():
    e = np.eye(2)
    pairs = [(e[0], e[0]), (-e[0], e[1])]
    # c = (1, 1) cancels the first half exactly
    with pytest.raises(DegenerateCombinationError):
        row_dependence_class_generator(pairs, np.array([[1.0, 1.0]]), np.ones(3), np.ones((2, 2)))


def test_verdicts_2d():
    assert uniqueness_verdict(square([[0.2, 0.3], [0.5, 0.3]])) is Verdict.AMBIGUOUS_COLLINEAR
    assert uniqueness_verdict(square([[0.2, 0.3], [0.7, 0.6], [0.4, 0.8]])) is Verdict.AMBIGUOUS_PARALLELOGRAM
    s = random_setup(2, 5, 8, np.random.default_rng(13))
    assert uniqueness_verdict(s) is Verdict.UNIQUE
    assert transform_class_generator(s, attempts=50) is None


def test_verdicts_3d():
    rng = np.random.default_rng(14)
    assert uniqueness_verdict(random_setup(3, 6, 10, rng)) is Verdict.AMBIGUOUS_FEW_WALLS
    s = random_setup(3, 9, 15, rng)
    assert uniqueness_verdict(s, search_budget=20) is Verdict.UNIQUE
    flat = s.waypoints.copy()
    flat[:, 2] = flat[:, 2].mean()
    inside = np.all(s.offsets - flat @ s.normals.T > 0, axis=1)
    assert affine_dimension(flat[inside]) == 2
    assert uniqueness_verdict(s.replace(waypoints=flat[inside])) is Verdict.AMBIGUOUS_COPLANAR


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.sampled_from([2, 3]))
def test_verdict_invariant_under_rigid_motion(seed, dim):
    rng = np.random.default_rng(seed)
    s = random_setup(dim, int(rng.integers(dim + 2, 10)), 12, rng)
    moved = apply_rigid_motion(s, RigidMotion.random(dim, rng, scale=2.0))
    assert uniqueness_verdict(s, search_budget=5) is uniqueness_verdict(moved, search_budget=5)


def test_solver_without_gauge_can_land_on_a_non_congruent_partner():
    # a shoebox has non-orthogonal unit transforms, so the PPDM fits a sheared room exactly
    rng = np.random.default_rng(15)
    s = shoebox(np.array([5.0, 4.0, 3.0]), 15, rng)
    tr, other = transform_class_generator(s, seed=1)
    est = solve(build_ppdm(other), config=SolverConfig(restarts=3, gauge=Gauge.none()))
    assert est.cost < 1e-12
    assert ppdm_dev(est.setup, s) < 1e-6
