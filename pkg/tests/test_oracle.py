import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from klflow.errors import InputError, NumericalError, ScaleError
from klflow.oracle import (
    QuadratureGrid,
    finite_diff_grad,
    quad_integral,
    simplex_grid,
    simplex_grid_argmin,
)


def test_trapezoid_exact_for_linear():
    g = QuadratureGrid(0.0, 2.0, 3)
    assert np.allclose(g.weights, [0.5, 1.0, 0.5])
    assert quad_integral(lambda x: 3 * x + 1, g) == pytest.approx(8.0)


def test_normal_density_integrates_to_one():
    g = QuadratureGrid(-10, 10, 10_000)
    val = quad_integral(lambda y: np.exp(-0.5 * y * y) / np.sqrt(2 * np.pi), g, vectorized=True)
    assert abs(val - 1) < 1e-8


def test_nonfinite_integrand_reports_node():
    g = QuadratureGrid(-1.0, 1.0, 5)
    with pytest.raises(NumericalError) as info, np.errstate(divide="ignore"):
        quad_integral(lambda x: np.float64(1.0) / x, g)
    assert info.value.index == 2


def test_grid_validation():
    with pytest.raises(InputError):
        QuadratureGrid(1.0, 0.0, 10)
    with pytest.raises(InputError):
        QuadratureGrid(0.0, 1.0, 1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_finite_diff_on_cubic(x):
    x = np.array(x)
    f = lambda z: np.sum(z ** 3) + z[0] * z[1]
    exact = 3 * x ** 2 + np.array([x[1], x[0], 0.0])
    assert np.allclose(finite_diff_grad(f, x, 1e-5), exact, atol=1e-8)


def test_finite_diff_rejects_bad_step():
    with pytest.raises(InputError):
        finite_diff_grad(lambda z: 0.0, [0.0], h=0.0)


@pytest.mark.parametrize("m,res,count", [(1, 0.5, 1), (2, 0.25, 5), (3, 0.5, 6), (4, 1.0, 4)])
def test_simplex_grid_size(m, res, count):
    pts = simplex_grid(m, res)
    assert pts.shape == (count, m)
    assert np.allclose(pts.sum(axis=1), 1.0) and np.all(pts >= 0)


def test_simplex_grid_scale_limit():
    with pytest.raises(ScaleError):
        simplex_grid(5, 0.5)


def test_grid_argmin_quadratic():
    target = np.array([0.2, 0.3, 0.5])
    obj = lambda w: np.sum((np.atleast_2d(w) - target) ** 2, axis=-1)
    assert np.allclose(simplex_grid_argmin(obj, 3, 0.1, vectorized=True), target)
    assert np.allclose(simplex_grid_argmin(lambda w: float(obj(w)[0]), 3, 0.1), target)
