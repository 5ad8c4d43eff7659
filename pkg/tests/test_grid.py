import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from fracflow.errors import DomainEmptyError, IndexRangeError, ParameterRangeError
from fracflow.grid import Cylinder, Grid1D, build_grid, tail_weight


def test_centers_and_spacing():
    g = build_grid(0.0, 1.0, 4, 0.5, 2.0)
    assert g.h == 0.25
    np.testing.assert_allclose(g.centers, [0.125, 0.375, 0.625, 0.875])


def test_kernel_entries_by_hand():
    g = Grid1D(0.0, 3.0, 3, 0.5, 2.0)
    # h = 1, |x_i - x_j|^(-2)
    expected = np.array([[0, 1, 0.25], [1, 0, 1], [0.25, 1, 0]])
    np.testing.assert_allclose(g.kernel, expected)
    np.testing.assert_allclose(g.weights, 2 * expected)


@pytest.mark.parametrize("s,p", [(0.3, 2.0), (0.5, 3.0), (0.8, 2.5)])
def test_tail_matches_quadrature(s, p):
    g = Grid1D(0.0, 1.0, 16, s, p)
    for i in (0, 7, 15):
        x = g.centers[i]
        left, _ = quad(lambda y: (x - y) ** (-1 - s * p), -np.inf, 0.0)
        right, _ = quad(lambda y: (y - x) ** (-1 - s * p), 1.0, np.inf)
        assert tail_weight(g, i) == pytest.approx(2 * (left + right), rel=1e-9)


def test_tail_symmetric_and_largest_at_edges():
    g = Grid1D(-1.0, 2.0, 33, 0.4, 2.0)
    np.testing.assert_allclose(g.tail, g.tail[::-1], rtol=1e-13)
    assert g.tail[0] == g.tail.max()


@given(
    a=st.floats(-5, 5),
    length=st.floats(0.1, 10),
    n=st.integers(3, 40),
    s=st.floats(0.05, 0.95),
    p=st.floats(1.5, 4.0),
)
@settings(max_examples=50, deadline=None)
def test_weights_symmetric_positive(a, length, n, s, p):
    g = Grid1D(a, a + length, n, s, p)
    assert np.array_equal(g.kernel, g.kernel.T)
    off = ~np.eye(n, dtype=bool)
    assert np.all(g.kernel[off] > 0)
    assert np.all(np.diag(g.kernel) == 0)
    assert np.all(g.tail > 0)


def test_arrays_read_only():
    g = Grid1D(0.0, 1.0, 8, 0.5, 2.0)
    with pytest.raises(ValueError):
        g.kernel[0, 1] = 3.0


@pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.0, 1.0), (0.0, math.inf)])
def test_empty_domain(a, b):
    with pytest.raises(DomainEmptyError):
        build_grid(a, b, 8, 0.5, 2.0)


@pytest.mark.parametrize("n,s,p", [(2, 0.5, 2.0), (8, 0.0, 2.0), (8, 1.0, 2.0), (8, 0.5, 1.0), (8.5, 0.5, 2.0)])
def test_parameter_ranges(n, s, p):
    with pytest.raises(ParameterRangeError):
        build_grid(0.0, 1.0, n, s, p)


def test_low_p_warns_but_builds():
    with pytest.warns(RuntimeWarning):
        g = build_grid(0.0, 1.0, 8, 0.5, 1.5)
    assert g.low_p


def test_no_warning_for_p_at_least_two():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_grid(0.0, 1.0, 8, 0.5, 2.0)


def test_tail_weight_index_checked():
    g = Grid1D(0.0, 1.0, 8, 0.5, 2.0)
    with pytest.raises(IndexRangeError):
        tail_weight(g, 8)
    with pytest.raises(IndexRangeError):
        tail_weight(g, -1)


def test_cylinder_scaling():
    c = Cylinder.scaled(0.5, 1.0, 0.2, 0.5, 3.0)
    assert c.gamma == pytest.approx(0.75)
    assert c.t_start == pytest.approx(1.0 - 0.2**0.75)
    half = c.shrink(1)
    assert half.r == pytest.approx(0.1)
    assert half.t_start > c.t_start


def test_cylinder_rejects_bad_radius():
    with pytest.raises(ParameterRangeError):
        Cylinder(0.5, 1.0, 0.0, 1.0)


@given(
    a=st.floats(-3, 3),
    length=st.floats(0.2, 5),
    n=st.integers(3, 64),
    s=st.floats(0.05, 0.95),
    p=st.floats(1.2, 5.0),
    frac=st.floats(0, 1),
)
@settings(max_examples=40, deadline=None)
def test_tail_quadrature_random_sample(a, length, n, s, p, frac):
    g = Grid1D(a, a + length, n, s, p)
    i = min(int(frac * n), n - 1)
    x = g.centers[i]
    e = -1 - s * p
    # substitute |x - y| = d * exp(u): each half-line becomes an exponentially decaying integral
    def half_line(d):
        val, _ = quad(lambda u: math.exp((1 + e) * (math.log(d) + u)), 0.0, np.inf, epsabs=0, epsrel=1e-13)
        return val

    expected = 2 * (half_line(x - a) + half_line(a + length - x))
    assert tail_weight(g, i) == pytest.approx(expected, rel=1e-10)
    # row sums stay finite without ever touching the diagonal
    assert np.isfinite(g.kernel[i].sum() + g.tail[i] * g.h)


def _seminorm_on(n, s, p):
    from fracflow.io import bump
    from fracflow.operator import Field, seminorm_p

    return seminorm_p(Field.from_function(Grid1D(0.0, 1.0, n, s, p), lambda x: bump(x, 0.5, 0.3, 1.0)))


def _refinement_ratios(s, p):
    vals = [_seminorm_on(n, s, p) for n in (64, 128, 256, 512)]
    d = np.abs(np.diff(vals))
    return d[:-1] / d[1:]


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_seminorm_refinement_band(p):
    ratios = _refinement_ratios(0.5, p)
    assert np.all((ratios >= 1.5) & (ratios <= 3.0))


@pytest.mark.parametrize("s,p", [(0.3, 2.0), (0.8, 2.0), (0.3, 3.0), (0.8, 3.0), (0.5, 2.5)])
def test_seminorm_refinement_order(s, p):
    # the excluded diagonal cells carry ~ h^(p - s p) of a smooth field's energy
    order = np.log2(_refinement_ratios(s, p))
    np.testing.assert_allclose(order, p * (1 - s), atol=0.15)
