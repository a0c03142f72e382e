import numpy as np
import pytest

from ssmc.mechmodel import PolynomialMap, eval_polynomial
from ssmc.series import MultiIndexSet, compose_polynomial, indices_of_degree


def test_indices_of_degree_order():
    assert indices_of_degree(2, 2) == [(2, 0), (1, 1), (0, 2)]
    assert len(indices_of_degree(4, 3)) == 20


def test_set_layout():
    mis = MultiIndexSet(2, 3)
    assert len(mis) == 2 + 3 + 4
    assert mis.indices[:2] == [(1, 0), (0, 1)]
    assert list(mis.degrees[mis.rows(3)]) == [3, 3, 3, 3]
    assert mis.unit(1) == 1


def test_swap_rows_is_involution():
    mis = MultiIndexSet(4, 3)
    swap = mis.swap_rows([1, 0, 3, 2])
    np.testing.assert_array_equal(swap[swap], np.arange(len(mis)))
    assert mis.indices[swap[mis.position[(2, 1, 0, 0)]]] == (1, 2, 0, 0)


def _random_series(mis, rng, width=None):
    shape = (len(mis),) if width is None else (len(mis), width)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_mul_matches_pointwise_product_at_small_p():
    rng = np.random.default_rng(1)
    mis = MultiIndexSet(2, 4)
    x = mis.truncate(_random_series(mis, rng), 2)
    y = mis.truncate(_random_series(mis, rng), 2)
    xy = mis.mul(x, y)
    p = np.array([0.3 - 0.1j, 0.2 + 0.05j])
    # degrees ≤ 2 each, so the product is exact up to order 4
    assert mis.evaluate(xy, p) == pytest.approx(mis.evaluate(x, p) * mis.evaluate(y, p), rel=1e-12)


def test_mul_single_degree():
    rng = np.random.default_rng(2)
    mis = MultiIndexSet(3, 3)
    x, y = _random_series(mis, rng), _random_series(mis, rng)
    full = mis.mul(x, y)
    only3 = mis.mul(x, y, degree=3)
    rows = mis.rows(3)
    np.testing.assert_allclose(only3[rows], full[rows])
    assert not np.any(only3[mis.rows(2)])


def test_derivative_of_monomial():
    mis = MultiIndexSet(2, 3)
    x = mis.zeros()
    x[mis.position[(2, 1)]] = 3.0
    dx = mis.derivative(x, 0)
    expected = mis.zeros()
    expected[mis.position[(1, 1)]] = 6.0
    np.testing.assert_allclose(dx, expected)


def test_derivative_drops_linear_part():
    mis = MultiIndexSet(2, 2)
    x = mis.zeros()
    x[mis.unit(0)] = 1.0
    assert not np.any(mis.derivative(x, 0))


def test_monomials_batch_matches_single():
    mis = MultiIndexSet(2, 3)
    P = np.array([[0.1, 0.2], [1.0 + 1j, 1.0 - 1j]])
    batch = mis.monomials(P)
    for i in range(2):
        np.testing.assert_allclose(batch[i], mis.monomials(P[i]))


def test_compose_polynomial_with_linear_inner_map():
    # pm(W(p)) with linear W is exactly a homogeneous polynomial in p
    rng = np.random.default_rng(4)
    mis = MultiIndexSet(2, 3)
    W = mis.zeros(3)
    W[mis.rows(1)] = rng.standard_normal((2, 3))
    pm = PolynomialMap(3, 2, (
        (0, 1.5, ((0, 2), (1, 1))),
        (1, -0.7, ((2, 2),)),
    ))
    comp = compose_polynomial(pm, mis, W)
    p = np.array([0.4, -0.3])
    z = mis.evaluate(W, p)
    np.testing.assert_allclose(mis.evaluate(comp, p), eval_polynomial(pm, z), rtol=1e-12)


def test_compose_single_degree():
    rng = np.random.default_rng(5)
    mis = MultiIndexSet(2, 3)
    W = _random_series(mis, rng, 2)
    pm = PolynomialMap(2, 1, ((0, 1.0, ((0, 1), (1, 1))),))
    full = compose_polynomial(pm, mis, W)
    part = compose_polynomial(pm, mis, W, degree=3)
    np.testing.assert_allclose(part[mis.rows(3)], full[mis.rows(3)])
    assert not np.any(part[mis.rows(2)])


def test_power_requires_positive_exponent():
    mis = MultiIndexSet(1, 2)
    with pytest.raises(ValueError):
        mis.power(mis.zeros(), 0)
