import numpy as np
import pytest

from bft.parser import ConstraintMatrices, ParameterSpace, parse
from bft.spaces import ConstraintError, boundary_point, build_transformation

SPACE3 = ParameterSpace(["a", "b", "c"])


def cm_of(text, space=SPACE3):
    return parse(text, space)[0]


def test_full_order_chain_transformation():
    cm = cm_of("a > b > c")
    tr = build_transformation(cm, 3)
    assert tr.reduced is None
    assert tr.T.shape == (3, 3)
    # the completion row spans the direction left free by the two contrasts
    d = tr.D[0]
    np.testing.assert_allclose(np.abs(d), np.full(3, 1 / np.sqrt(3)), atol=1e-12)
    # T is invertible
    assert abs(np.linalg.det(tr.T)) > 1e-8


def test_identity_equalities_give_identity_transform():
    P = 3
    cm = ConstraintMatrices(np.eye(P), np.zeros(P), np.zeros((0, P)), np.zeros(0))
    tr = build_transformation(cm, P)
    np.testing.assert_allclose(tr.T, np.eye(P), atol=1e-12)


def test_transformation_inverse_round_trip():
    rng = np.random.default_rng(42)
    for _ in range(25):
        RE = rng.standard_normal((1, 4))
        RO = rng.standard_normal((2, 4))
        cm = ConstraintMatrices(RE, rng.standard_normal(1), RO, rng.standard_normal(2))
        tr = build_transformation(cm, 4)
        if tr.reduced is None:
            Tinv = np.linalg.inv(tr.T)
            np.testing.assert_allclose(tr.T @ Tinv, np.eye(4), atol=1e-10)


def test_redundant_equalities_rejected():
    RE = np.array([[1.0, -1.0, 0.0], [2.0, -2.0, 0.0]])
    cm = ConstraintMatrices(RE, np.zeros(2), np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ConstraintError, match="redundant"):
        build_transformation(cm, 3)


def test_inconsistent_equalities_rejected():
    RE = np.array([[1.0, -1.0, 0.0], [2.0, -2.0, 0.0]])
    cm = ConstraintMatrices(RE, np.array([0.0, 1.0]), np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ConstraintError, match="infeasible|redundant"):
        build_transformation(cm, 3)


def test_rank_deficient_orders_reduced_system_membership():
    """Dependent order rows must keep the same feasible set after reduction."""
    space = ParameterSpace(["a", "b", "c", "d"])
    cm = cm_of("(a, b) > (c, d) & a = b", space)
    tr = build_transformation(cm, 4)
    assert tr.reduced is not None
    RO_t, rO_t = tr.reduced
    rng = np.random.default_rng(11)
    for _ in range(1000):
        theta = rng.standard_normal(4) * 2
        # project onto the equality surface a = b, where the two systems
        # describe the same region
        theta[1] = theta[0]
        slack_direct = cm.RO @ theta - cm.rO
        slack_reduced = RO_t @ (tr.D @ theta) - rO_t
        if np.all(slack_direct > 1e-9):
            assert np.all(slack_reduced > 0)
        elif np.any(slack_direct < -1e-9):
            assert not np.all(slack_reduced > 1e-9)


def test_boundary_point_single_bound():
    cm = cm_of("a > 5", ParameterSpace(["a"]))
    bp = boundary_point(cm)
    assert bp.exact
    np.testing.assert_allclose(bp.theta0, [5.0])


def test_boundary_point_homogeneous_is_origin():
    cm = cm_of("a > b & b > c")
    bp = boundary_point(cm)
    assert bp.exact
    np.testing.assert_allclose(bp.theta0, np.zeros(3), atol=1e-12)


def test_boundary_point_mixed_constraints():
    space = ParameterSpace(["a", "b"])
    cm = cm_of("a - b = 1 & a > 2", space)
    bp = boundary_point(cm)
    assert bp.exact
    np.testing.assert_allclose(bp.theta0, [2.0, 1.0], atol=1e-10)


def test_boundary_point_satisfies_equalities_when_orders_conflict():
    # equality a = 0 with active orders a > 1 and a > -1 cannot all hold;
    # the equalities still hold exactly at the returned point
    space = ParameterSpace(["a", "b"])
    RE = np.array([[1.0, 0.0]])
    RO = np.array([[1.0, 0.0], [-1.0, 0.0]])
    cm = ConstraintMatrices(RE, np.zeros(1), RO, np.array([1.0, 1.0]))
    bp = boundary_point(cm)
    assert not bp.exact
    np.testing.assert_allclose(cm.RE @ bp.theta0, cm.rE, atol=1e-10)


def test_boundary_point_empty_constraints():
    cm = ConstraintMatrices.empty(3)
    np.testing.assert_allclose(boundary_point(cm).theta0, np.zeros(3))


def test_boundary_point_minimum_norm():
    # of all points with a - b = 2, the minimum-norm one is (1, -1)
    space = ParameterSpace(["a", "b"])
    cm = cm_of("a - b = 2", space)
    np.testing.assert_allclose(boundary_point(cm).theta0, [1.0, -1.0], atol=1e-10)
