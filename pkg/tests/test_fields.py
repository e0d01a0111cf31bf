import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from continuity_lab.errors import EvaluationError, InvalidArgument
from continuity_lab.fields import (
    CellField, builtin_velocity, cell_average, domain_quadrature, entropy, field_names,
    grad_lp_norm, is_tangential, lp_distance, lq_norm, make_grid, sample_points,
)


class TestGrid:
    def test_uniform_1d(self):
        g = make_grid([1.0], 4)
        assert g.h == 0.25
        assert g.cell_volume == 0.25
        np.testing.assert_allclose(g.centers(0), [0.125, 0.375, 0.625, 0.875])

    def test_h_is_largest_edge(self):
        g = make_grid([1.0, 2.0], 4)
        np.testing.assert_allclose(g.spacing, [0.25, 0.5])
        assert g.h == 0.5

    def test_face_area_is_volume_over_edge(self):
        g = make_grid([(0, 1), (0, 2)], (4, 6))
        for a in range(2):
            assert g.face_area(a) == pytest.approx(g.cell_volume / g.spacing[a], rel=1e-15)

    def test_anisotropy_rejected(self):
        with pytest.raises(InvalidArgument, match="irregular"):
            make_grid([1.0, 1.0], (4, 64))

    @pytest.mark.parametrize("extent,cells", [([0.0], 4), ([1.0], 0), ([(1.0, 1.0)], 3), ([-1.0], 2)])
    def test_degenerate_rejected(self, extent, cells):
        with pytest.raises(InvalidArgument):
            make_grid(extent, cells)

    def test_three_dimensions_rejected(self):
        with pytest.raises(InvalidArgument):
            make_grid([1, 1, 1], 2)

    def test_points_c_order(self):
        g = make_grid([1.0, 1.0], (2, 3))
        p = g.points()
        assert p.shape == (6, 2)
        np.testing.assert_allclose(p[1], [0.25, 0.5])


class TestCellAverage:
    def test_constant(self):
        f = cell_average(lambda x, y: np.ones_like(x), make_grid([1, 1], 5))
        np.testing.assert_allclose(f.values, 1.0, rtol=0, atol=1e-15)

    def test_linear_two_cells(self):
        f = cell_average(lambda x: x, make_grid([1.0], 2))
        np.testing.assert_allclose(f.values, [0.25, 0.75], atol=1e-15)

    def test_sine_has_zero_mass(self):
        f = cell_average(lambda x: np.sin(2 * np.pi * x), make_grid([1.0], 8))
        assert abs(f.mass()) <= 1e-12

    def test_nonfinite_values_raise(self):
        with pytest.raises(EvaluationError), np.errstate(divide="ignore", invalid="ignore"):
            cell_average(lambda x: 1 / (x - x), make_grid([1.0], 4))


class TestNorms:
    def test_unit_density(self):
        f = CellField(make_grid([1.0], 7), np.ones(7))
        assert entropy(f) == 0.0
        for q in (1, 2, 3.5, math.inf):
            assert lq_norm(f, q) == pytest.approx(1.0)

    def test_entropy_two_cells(self):
        f = CellField(make_grid([1.0], 2), [2.0, 0.0])
        assert entropy(f) == pytest.approx(math.log(2), rel=1e-15)

    def test_l2_two_cells(self):
        f = CellField(make_grid([1.0], 2), [3.0, 1.0])
        assert lq_norm(f, 2) == pytest.approx(math.sqrt(5), rel=1e-15)

    def test_entropy_rejects_negative(self):
        with pytest.raises(InvalidArgument):
            entropy(CellField(make_grid([1.0], 2), [1.0, -0.1]))

    def test_mass_matches_direct_sum(self, rng):
        g = make_grid([(0, 2), (0, 3)], (8, 12))
        v = rng.random(g.shape)
        direct = sum(float(x) * (2 / 8) * (3 / 12) for x in v.ravel())
        assert CellField(g, v).mass() == pytest.approx(direct, rel=1e-12)

    def test_values_are_frozen(self):
        f = CellField(make_grid([1.0], 3), [1, 2, 3])
        with pytest.raises(ValueError):
            f.values[0] = 5


class TestCatalog:
    def test_names(self):
        assert set(field_names()) >= {"zero", "constant", "oscillating", "rigid_rotation",
                                      "shear_x", "shear_y", "alternating_shear"}

    def test_unknown_name(self):
        with pytest.raises(InvalidArgument, match="unknown"):
            builtin_velocity("vortex")

    def test_bad_parameters(self):
        with pytest.raises(InvalidArgument):
            builtin_velocity("oscillating", q=3)

    def test_oscillating_value(self):
        u = builtin_velocity("oscillating", k=10)
        assert float(np.ravel(u(0.0, np.array([[1 / 40]])))[0]) == pytest.approx(1 / (20 * math.pi), rel=1e-14)
        assert u.autonomous and not u.divergence_free
        assert u.sup_norm == pytest.approx(1 / (20 * math.pi))

    def test_oscillating_divergence(self):
        u = builtin_velocity("oscillating", k=3)
        x = np.linspace(0, 1, 11)[:, None]
        np.testing.assert_allclose(np.ravel(u.divergence(0.0, x)), np.cos(6 * np.pi * x.ravel()), atol=1e-14)

    def test_shear_divergence_free(self):
        u = builtin_velocity("shear_x", A=2.0, m=3)
        x = np.random.default_rng(0).random((50, 2))
        assert u.divergence_free
        assert np.abs(u.divergence(0.3, x)).max() == 0.0
        np.testing.assert_allclose(u(0.0, x)[:, 0], 2 * np.sin(6 * np.pi * x[:, 1]))

    def test_zero_field_norms(self):
        u = builtin_velocity("zero", dim=2)
        g = make_grid([1, 1], 4)
        assert u.sup_norm == 0.0
        assert grad_lp_norm(u, g, 0.0, 2.0) == 0.0

    def test_alternating_switches(self):
        u = builtin_velocity("alternating_shear", A=1.0, m=1, period=1.0)
        x = np.array([[0.1, 0.2]])
        first = u(0.25, x)
        second = u(0.75, x)
        assert first[0, 1] == 0 and first[0, 0] != 0
        assert second[0, 0] == 0 and second[0, 1] != 0
        assert u.next_switch(0.0) == pytest.approx(0.5)
        assert u.next_switch(0.5) == pytest.approx(1.0)

    def test_tangential(self):
        box = make_grid([1.0], 8)
        assert is_tangential(builtin_velocity("oscillating", k=2), box)
        assert not is_tangential(builtin_velocity("linear", a=1.0), box)
        # circles around the center cross the walls of the unit square
        assert not is_tangential(builtin_velocity("rigid_rotation", omega=1.0), make_grid([1, 1], 8))

    def test_shear_gradient_norm_analytic(self):
        # |grad u|_{L^2} of A sin(2 pi m y) is A 2 pi m / sqrt(2)
        u = builtin_velocity("shear_x", A=1.5, m=2)
        g = make_grid([1, 1], 16)
        expect = 1.5 * 4 * math.pi / math.sqrt(2)
        assert grad_lp_norm(u, g, 0.0, 2.0) == pytest.approx(expect, rel=1e-10)
        assert u.grad_lp(0.0, 2.0) == pytest.approx(expect, rel=1e-12)

    def test_lp_distance_oscillating(self):
        # ||sin(2 pi k x)/(2 pi k)||_{L^2} = 1/(2 pi k sqrt 2)
        u = builtin_velocity("oscillating", k=4)
        z = builtin_velocity("zero", dim=1)
        d = lp_distance(u, z, make_grid([1.0], 128), 0.0, 2.0)
        assert d == pytest.approx(1 / (8 * math.pi * math.sqrt(2)), rel=1e-10)


def test_domain_quadrature_weights():
    x, w = domain_quadrature(make_grid([1, 2], (3, 4)))
    assert x.shape == (3 * 4 * 25, 2)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)


def test_sample_points_midpoints():
    p = sample_points(make_grid([2.0], 4), 4)
    np.testing.assert_allclose(p.ravel(), [0.25, 0.75, 1.25, 1.75])


# --- properties ----------------------------------------------------------

coef = st.floats(-3, 3, allow_nan=False)


@given(st.lists(coef, min_size=5, max_size=5), st.lists(coef, min_size=5, max_size=5),
       st.integers(2, 7), st.integers(0, 1))
def test_cell_average_exact_on_quartics(a, b, nx, extra):
    grid = make_grid([(0.0, 1.0), (-0.5, 0.8)], (nx, nx + extra))
    P = np.polynomial.polynomial
    f = cell_average(lambda x, y: P.polyval(x, a) * P.polyval(y, b), grid)
    # exact cell integrals from antiderivatives
    Ia, Ib = P.polyint(a), P.polyint(b)
    ex, ey = grid.edges(0), grid.edges(1)
    ix = np.diff(P.polyval(ex, Ia)) / np.diff(ex)
    iy = np.diff(P.polyval(ey, Ib)) / np.diff(ey)
    scale = 1 + np.abs(np.outer(ix, iy)).max()
    assert np.abs(f.values - np.outer(ix, iy)).max() <= 1e-12 * scale


divfree = st.sampled_from([
    ("shear_x", dict(A=1.3, m=2)), ("shear_y", dict(A=0.4, m=3)),
    ("rigid_rotation", dict(omega=2.0)), ("alternating_shear", dict(A=1.0, m=1, period=0.7)),
    ("zero", dict(dim=2)), ("constant", dict(c=(0.3, 0.1))),
])


@given(divfree, st.integers(0, 2**32 - 1))
def test_divergence_free_fields_sample_zero_divergence(spec, seed):
    name, params = spec
    u = builtin_velocity(name, **params)
    assert u.divergence_free
    r = np.random.default_rng(seed)
    x = r.random((1000, 2))
    t = r.random() * 3
    assert np.abs(u.divergence(t, x)).max() <= 1e-10
    # the field's own divergence agrees with the trace of its gradient
    assert np.abs(np.trace(u.gradient(t, x), axis1=-2, axis2=-1)).max() <= 1e-10


@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_lq_norm_monotone_in_q(seed, n):
    r = np.random.default_rng(seed)
    f = CellField(make_grid([1.0], n), r.standard_normal(n) * 3)
    l1, l2, li = lq_norm(f, 1), lq_norm(f, 2), lq_norm(f, math.inf)
    assert l1 <= l2 * (1 + 1e-12) and l2 <= li * (1 + 1e-12)
    a = np.abs(f.values)
    assert l1 == pytest.approx(a.mean(), rel=1e-12)
    assert l2 == pytest.approx(math.sqrt((a**2).mean()), rel=1e-12)
    assert li == a.max()
