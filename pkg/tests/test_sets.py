import numpy as np
import pytest

from scenvi.errors import DimensionMismatchError, InfeasibleSetError, InvalidSetError
from scenvi.sets import Box, ConvexSet, Halfspace, ParametrizedSet, ProductSet, Quadratic, intersect


def _vi_check(S, x, p, probes):
    # projection characterisation: (x - p).(z - p) <= 0 for z in S
    return all((x - p) @ (z - p) <= 1e-7 for z in probes if S.contains(z, 1e-9))


def test_halfspace_projection():
    H = ConvexSet(2, [Halfspace([1.0, 1.0], 1.0)])
    np.testing.assert_allclose(H.project([2.0, 2.0]), [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(H.project([0.0, 0.0]), [0.0, 0.0])


def test_box_projection_and_infinite_bounds():
    B = ConvexSet(3, [Box([0, -np.inf, -1], [1, 0, np.inf])])
    np.testing.assert_allclose(B.project([2, 3, -5]), [1, 0, -1])


def test_ball_projection():
    ball = ConvexSet(2, [Quadratic(2 * np.eye(2), np.zeros(2), 1.0)])  # |x|^2 <= 1
    np.testing.assert_allclose(ball.project([3.0, 4.0]), [0.6, 0.8], atol=1e-9)


def test_ellipse_projection_is_optimal():
    Q = np.diag([2.0, 8.0])
    E = ConvexSet(2, [Quadratic(Q, np.zeros(2), 1.0)])
    x = np.array([2.0, 1.0])
    p = E.project(x)
    assert abs(0.5 * p @ Q @ p - 1.0) < 1e-8
    # normal cone: x - p parallel to Q p
    g = Q @ p
    assert abs((x - p)[0] * g[1] - (x - p)[1] * g[0]) < 1e-7


def test_polyhedron_projection_variational():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(6, 3))
    S = ConvexSet(3, [Halfspace(a, 1.0) for a in A])
    probes = rng.normal(size=(400, 3))
    for _ in range(10):
        x = 4 * rng.normal(size=3)
        p = S.project(x)
        assert S.contains(p, 1e-9)
        assert _vi_check(S, x, p, probes)


def test_dykstra_matches_conic():
    S = ConvexSet(2, [Quadratic(2 * np.eye(2), np.zeros(2), 1.0), Halfspace([1.0, 0.0], 0.2),
                      Box([-0.5, -2], [2, 2])])
    for x in ([2.0, 2.0], [-3.0, 0.1], [0.1, -3.0]):
        np.testing.assert_allclose(S.project(x, tol=1e-12), S.project(x, method="conic"), atol=1e-6)


def test_contains_and_violation():
    S = ConvexSet(2, [Halfspace([1.0, 0.0], 1.0), Box([-1, -1], [2, 2])])
    assert S.contains([1.0, 0.0])
    assert S.violation([1.5, 0.0]) == pytest.approx(0.5)


def test_non_psd_quadratic_rejected():
    with pytest.raises(InvalidSetError):
        Quadratic(np.diag([1.0, -1.0]), np.zeros(2), 1.0)


def test_dimension_errors():
    with pytest.raises(DimensionMismatchError):
        ConvexSet(2, [Halfspace([1.0, 0.0, 0.0], 1.0)])
    with pytest.raises(DimensionMismatchError):
        ConvexSet(2).project([1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatchError):
        intersect([ConvexSet(2), ConvexSet(3)])


def test_empty_intersection_detected():
    S = ConvexSet(1, [Halfspace([1.0], -1.0), Halfspace([-1.0], -1.0)])
    with pytest.raises(InfeasibleSetError):
        S.project([0.0])


def test_product_set_blockwise():
    P = ProductSet((ConvexSet(1, [Box([0], [1])]), ConvexSet(2, [Halfspace([1.0, 1.0], 0.0)])))
    np.testing.assert_allclose(P.project([5.0, 1.0, 1.0]), [1.0, 0.0, 0.0], atol=1e-12)
    flat = P.flatten()
    x = np.array([0.3, -1.0, 0.2])
    assert flat.violation(x) == pytest.approx(P.violation(x))


def test_intersect_of_products_stays_product():
    a = ProductSet((ConvexSet(1, [Box([0], [2])]), ConvexSet(1, [Box([0], [2])])))
    b = ProductSet((ConvexSet(1, [Halfspace([1.0], 1.0)]), ConvexSet(1)))
    c = intersect([a, b])
    assert isinstance(c, ProductSet)
    np.testing.assert_allclose(c.project([3.0, 3.0]), [1.0, 2.0])


def test_parametrized_set():
    P = ParametrizedSet(1, lambda a: ConvexSet(1, [Halfspace([1.0], float(a[0]) / 2)]))
    np.testing.assert_allclose(P.at([2.0]).project([5.0]), [1.0])
    bad = ParametrizedSet(2, lambda a: ConvexSet(1))
    with pytest.raises(DimensionMismatchError):
        bad.at([0.0, 0.0])
