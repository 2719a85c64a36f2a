import numpy as np
import pytest

from cusp_spectra.quadrature import physical_points, triangle_areas, triangle_rule


def monomial_integral(i, j):
    # integral of x^i y^j over the reference triangle: i! j! / (i + j + 2)!
    from math import factorial
    return factorial(i) * factorial(j) / factorial(i + j + 2)


@pytest.mark.parametrize("order,degree", [(3, 2), (7, 5)])
def test_rule_exact_to_degree(order, degree):
    rule = triangle_rule(order)
    assert rule.degree == degree
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    x, y = rule.bary[:, 1], rule.bary[:, 2]
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            got = 0.5 * np.sum(rule.weights * x ** i * y ** j)
            assert got == pytest.approx(monomial_integral(i, j), rel=1e-13)


def test_unknown_order():
    with pytest.raises(ValueError):
        triangle_rule(4)


def test_physical_points_and_areas():
    nodes = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 1]])
    assert triangle_areas(nodes, tris).tolist() == [1.0, -1.0]
    pts = physical_points(nodes, tris, triangle_rule(7))
    assert pts.shape == (2, 7, 2)
    np.testing.assert_allclose(pts[0].mean(axis=0), [2 / 3, 1 / 3], atol=1e-15)
