import json

import numpy as np
import pytest

from hypodiff import group
from hypodiff.errors import (
    DimensionMismatch,
    NonIncreasingViolation,
    NonPositiveLambda,
    NonZeroOutsideBlocks,
    RankDeficientBlock,
)
from hypodiff.group import GroupPoint, kolmogorov_matrix, validate_structure

KOLMO = kolmogorov_matrix()


def random_point(rng, sm, scale=2.0):
    return GroupPoint(scale * rng.standard_normal(), scale * rng.standard_normal(sm.d))


def test_validate_kolmogorov_dbar():
    sm = validate_structure(np.array([[0.0, 0.0], [1.0, 0.0]]), (1, 1))
    assert sm.dbar == 6
    assert sm.d0 == 1 and sm.n == 1


def test_validate_three_block_dbar():
    sm = kolmogorov_matrix(d0=2, n_blocks=3)
    # 2 + 1*2 + 3*2 + 5*2
    assert sm.dbar == 20


def test_identity_matrix_rejected():
    with pytest.raises(NonZeroOutsideBlocks):
        validate_structure(np.eye(2), (1, 1))


def test_increasing_dims_rejected():
    B = np.zeros((3, 3))
    B[1:, :1] = 1.0
    with pytest.raises(NonIncreasingViolation):
        validate_structure(B, (1, 2))


def test_rank_deficient_block_rejected():
    B = np.zeros((4, 4))
    B[2:, :2] = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(RankDeficientBlock):
        validate_structure(B, (2, 2))


def test_dims_sum_mismatch_rejected():
    with pytest.raises(DimensionMismatch):
        validate_structure(np.zeros((3, 3)), (1, 1))


def test_matrix_exp_exact():
    assert np.allclose(KOLMO.matrix_exp(0.0), np.eye(2), atol=0)
    assert np.array_equal(KOLMO.matrix_exp(2.0), np.array([[1.0, 0.0], [2.0, 1.0]]))
    lhs = KOLMO.matrix_exp(1.0) @ KOLMO.matrix_exp(2.0)
    assert np.max(np.abs(lhs - KOLMO.matrix_exp(3.0))) <= 1e-14


def test_compose_hand_example():
    p = KOLMO.compose(GroupPoint(1.0, [1.0, 0.0]), GroupPoint(1.0, [0.0, 0.0]))
    assert p.s == 2.0
    assert np.allclose(p.x, [1.0, 1.0], atol=1e-15)


def test_identity_element():
    rng = np.random.default_rng(7)
    e = GroupPoint(0.0, np.zeros(2))
    for _ in range(20):
        p = random_point(rng, KOLMO)
        q = KOLMO.compose(p, e)
        assert q.s == p.s and np.allclose(q.x, p.x, atol=0)


def test_associativity():
    rng = np.random.default_rng(11)
    for _ in range(100):
        p, q, r = (random_point(rng, KOLMO) for _ in range(3))
        lhs = KOLMO.compose(KOLMO.compose(p, q), r)
        rhs = KOLMO.compose(p, KOLMO.compose(q, r))
        assert abs(lhs.s - rhs.s) <= 1e-12
        assert np.max(np.abs(lhs.x - rhs.x)) <= 1e-12


def test_inverse_hand_example():
    inv = KOLMO.inverse(GroupPoint(1.0, [1.0, 0.0]))
    assert inv.s == -1.0
    assert np.allclose(inv.x, [-1.0, 1.0], atol=1e-15)
    origin = KOLMO.inverse(GroupPoint(0.0, [0.0, 0.0]))
    assert origin.s == 0.0 and not np.any(origin.x)


def test_inverse_axiom():
    rng = np.random.default_rng(13)
    for _ in range(100):
        p = random_point(rng, KOLMO)
        e = KOLMO.compose(p, KOLMO.inverse(p))
        assert abs(e.s) <= 1e-12 and np.max(np.abs(e.x)) <= 1e-12


def test_dilate_examples():
    p = KOLMO.dilate(1.0, GroupPoint(0.3, [0.5, -0.7]))
    assert p.s == 0.3 and np.allclose(p.x, [0.5, -0.7], atol=0)
    q = KOLMO.dilate(2.0, GroupPoint(1.0, [1.0, 1.0]))
    assert q.s == 4.0 and np.allclose(q.x, [2.0, 8.0], atol=0)
    with pytest.raises(NonPositiveLambda):
        KOLMO.dilate(0.0, p)


def test_dilation_automorphism():
    rng = np.random.default_rng(17)
    for _ in range(100):
        lam = rng.uniform(0.2, 3.0)
        p, q = random_point(rng, KOLMO), random_point(rng, KOLMO)
        lhs = KOLMO.dilate(lam, KOLMO.compose(p, q))
        rhs = KOLMO.compose(KOLMO.dilate(lam, p), KOLMO.dilate(lam, q))
        assert abs(lhs.s - rhs.s) <= 1e-12
        assert np.max(np.abs(lhs.x - rhs.x)) <= 1e-12


def test_dilation_conjugates_exponential():
    rng = np.random.default_rng(19)
    sm = kolmogorov_matrix(d0=2, n_blocks=3)
    for _ in range(50):
        lam = rng.uniform(0.3, 2.5)
        t = rng.uniform(-2.0, 2.0)
        dl = sm.spatial_dilation_matrix(lam)
        lhs = dl @ sm.matrix_exp(t) @ np.linalg.inv(dl)
        rhs = sm.matrix_exp(lam ** 2 * t)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_dilation_determinant():
    rng = np.random.default_rng(23)
    sm = kolmogorov_matrix(d0=2, n_blocks=2)
    for _ in range(50):
        lam = rng.uniform(0.3, 2.5)
        det = np.linalg.det(sm.dilation_matrix(lam))
        assert det == pytest.approx(lam ** sm.dbar, rel=1e-10)


def test_homogeneous_norm_examples():
    assert KOLMO.homogeneous_norm(GroupPoint(0.0, [0.0, 0.0])) == 0.0
    rho = KOLMO.homogeneous_norm(GroupPoint(0.0, [0.0, 8.0]))
    assert rho == pytest.approx(2.0, abs=1e-11)


def test_homogeneous_norm_scaling():
    rng = np.random.default_rng(29)
    for _ in range(100):
        lam = rng.uniform(0.2, 4.0)
        p = random_point(rng, KOLMO)
        lhs = KOLMO.homogeneous_norm(KOLMO.dilate(lam, p))
        rhs = lam * KOLMO.homogeneous_norm(p)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-11)


def test_norm_versus_euclidean():
    rng = np.random.default_rng(31)
    for _ in range(200):
        p = random_point(rng, KOLMO, scale=rng.uniform(0.05, 5.0))
        e = np.linalg.norm(p.as_vector())
        rho = KOLMO.homogeneous_norm(p)
        if e <= 1.0:
            assert e <= rho + 1e-10
        if e >= 1.0:
            assert rho <= e + 1e-10


def test_json_round_trip():
    sm = kolmogorov_matrix(d0=2, n_blocks=3)
    obj = json.loads(json.dumps(sm.to_json()))
    back = group.StructuralMatrix.from_json(obj)
    assert back.block_dims == sm.block_dims
    assert np.array_equal(back.matrix, sm.matrix)
