import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nlheat.errors import DegenerateStateError, DomainError, GridMismatchError
from nlheat.flow import renormalize
from nlheat.manifold import (
    ScalarField,
    TorusGrid,
    format_snapshot,
    grad_sq,
    integrate,
    l2_norm,
    laplacian,
    parse_snapshot,
    read_snapshot,
    write_snapshot,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def sin_field(grid, k=1):
    return grid.sample(lambda x: np.sin(2 * np.pi * k * x))


class TestGrid:
    def test_spacing_times_count_is_period(self):
        g = TorusGrid((12, 20), (1.0, 2.5))
        for h, n, L in zip(g.spacing, g.n_per_axis, g.period):
            assert h * n == pytest.approx(L, rel=1e-15)
        assert g.size == 240
        assert g.cell_volume > 0
        assert g.volume == pytest.approx(2.5)

    def test_defaults_to_unit_period(self):
        assert TorusGrid((8,)).period == (1.0,)

    @pytest.mark.parametrize("n", [(3,), (0,), (8, 8, 8)])
    def test_rejects_bad_shapes(self, n):
        with pytest.raises(DomainError):
            TorusGrid(n)

    def test_coords_are_ij_indexed(self):
        g = TorusGrid((4, 8))
        x, y = g.coords()
        assert x.shape == (4, 8)
        assert np.all(x[:, 0] == np.arange(4) / 4)
        assert np.all(y[0] == np.arange(8) / 8)


class TestScalarField:
    def test_values_are_read_only_copies(self, line64):
        raw = np.ones(64)
        u = ScalarField(line64, raw)
        raw[0] = 5
        assert u.values[0] == 1
        with pytest.raises(ValueError):
            u.values[0] = 2
        with pytest.raises(AttributeError):
            u.grid = TorusGrid.line(8)

    def test_rejects_wrong_length_and_nan(self, line64):
        with pytest.raises(DomainError):
            ScalarField(line64, np.ones(63))
        with pytest.raises(DomainError):
            ScalarField(line64, np.full(64, np.nan))

    def test_grid_mismatch_in_arithmetic(self, line64):
        with pytest.raises(GridMismatchError):
            line64.constant(1.0) + TorusGrid.line(32).constant(1.0)

    def test_arithmetic(self, line64):
        u = line64.constant(2.0)
        assert (u * u - 1).allclose(3.0)
        assert (1 / u).allclose(0.5)
        assert (-u).max() == -2.0


class TestLaplacian:
    def test_constant(self, line64):
        assert np.all(laplacian(line64.constant(3.7)).values == 0)

    def test_sine_eigenfunction(self):
        g = TorusGrid.line(256)
        h = g.spacing[0]
        x = g.coords()[0]
        err = np.max(np.abs(laplacian(sin_field(g)).values + 4 * np.pi**2 * np.sin(2 * np.pi * x)))
        assert err <= (2 * np.pi) ** 4 * h**2 / 12 * 1.01

    def test_spike_stencil_wraps(self):
        g = TorusGrid.line(8)
        h2 = g.spacing[0] ** 2
        e0 = np.zeros(8)
        e0[0] = 1
        out = laplacian(ScalarField(g, e0)).values * h2
        expected = np.zeros(8)
        expected[[0, 1, 7]] = [-2, 1, 1]
        assert np.allclose(out, expected, atol=1e-12)

    def test_2d_separable(self):
        g = TorusGrid.square(64)
        x, y = g.coords()
        u = ScalarField(g, np.sin(2 * np.pi * x) + np.cos(4 * np.pi * y))
        lx = 2 / g.spacing[0] ** 2 * (1 - math.cos(2 * np.pi / 64))
        ly = 2 / g.spacing[1] ** 2 * (1 - math.cos(4 * np.pi / 64))
        expected = -lx * np.sin(2 * np.pi * x) - ly * np.cos(4 * np.pi * y)
        assert np.allclose(laplacian(u).values, expected, atol=1e-9)


class TestGradSq:
    def test_constant(self, line64):
        assert np.all(grad_sq(line64.constant(2.0)).values == 0)

    def test_sine_energy(self):
        g = TorusGrid.line(256)
        assert integrate(grad_sq(sin_field(g))) == pytest.approx(2 * np.pi**2, rel=0.01)

    def test_spike(self):
        g = TorusGrid.line(8)
        e = np.zeros(8)
        e[3] = 1
        out = grad_sq(ScalarField(g, e)).values * g.spacing[0] ** 2
        expected = np.zeros(8)
        expected[[2, 3]] = 1
        assert np.allclose(out, expected, atol=1e-12)


class TestIntegrals:
    def test_unit_constant(self):
        assert integrate(TorusGrid.line(7).constant(1.0)) == pytest.approx(1.0, abs=1e-15)
        assert integrate(TorusGrid((5, 9), (2.0, 3.0)).constant(1.0)) == pytest.approx(6.0, rel=1e-15)

    @pytest.mark.parametrize("n", [4, 5, 17, 64])
    def test_sine_cancels(self, n):
        assert abs(integrate(sin_field(TorusGrid.line(n)))) < 1e-15

    def test_sine_squared(self):
        g = TorusGrid.line(64)
        assert integrate(sin_field(g) ** 2) == pytest.approx(0.5, abs=1e-15)

    def test_l2_norm(self):
        g = TorusGrid.line(64)
        assert l2_norm(g.constant(1.0)) == 1.0
        assert l2_norm(g.zeros()) == 0.0
        assert l2_norm(sin_field(g) * math.sqrt(2)) == pytest.approx(1.0, abs=1e-15)


class TestRenormalize:
    def test_constant_two(self, line64):
        assert renormalize(line64.constant(2.0)).allclose(1.0, atol=1e-15)

    def test_idempotent(self, line64):
        u = renormalize(line64.sample(lambda x: 1 + 0.3 * np.cos(2 * np.pi * x)))
        assert renormalize(u).allclose(u, atol=1e-15)

    def test_zero_is_degenerate(self, line64):
        with pytest.raises(DegenerateStateError):
            renormalize(line64.zeros())


# -- properties ----------------------------------------------------------------

grids = st.sampled_from([TorusGrid.line(16), TorusGrid.line(33), TorusGrid((8, 6), (1.0, 2.0))])


@st.composite
def fields(draw, grid_strategy=grids):
    g = draw(grid_strategy)
    vals = draw(arrays(np.float64, g.shape, elements=finite))
    return ScalarField(g, vals)


@settings(max_examples=60, deadline=None)
@given(fields())
def test_summation_by_parts(u):
    d = integrate(grad_sq(u))
    assert abs(integrate(u * laplacian(u)) + d) <= 1e-12 * (1 + d) * max(1.0, l2_norm(u) ** 2)
    assert abs(integrate(laplacian(u))) <= 1e-12 * max(1.0, float(np.max(np.abs(laplacian(u).values))))


@settings(max_examples=40, deadline=None)
@given(fields(), st.integers(-20, 20))
def test_translation_equivariance(u, shift):
    lhs = laplacian(u.roll(shift, axis=0))
    rhs = laplacian(u).roll(shift, axis=0)
    assert lhs.allclose(rhs, atol=1e-9 * max(1.0, float(np.max(np.abs(lhs.values)))))


@settings(max_examples=40, deadline=None)
@given(fields(), st.floats(0.1, 10))
def test_scaling(u, c):
    assert (laplacian(u * c)).allclose(laplacian(u) * c, rtol=1e-12, atol=1e-9)
    assert integrate(grad_sq(u * c)) == pytest.approx(c * c * integrate(grad_sq(u)), rel=1e-10, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(fields())
def test_laplacian_output_orthogonal_to_constants(u):
    lu = laplacian(u)
    scale = max(1.0, float(np.max(np.abs(lu.values))))
    assert abs(integrate(lu)) <= 1e-12 * scale * u.grid.volume * 10


@settings(max_examples=40, deadline=None)
@given(fields())
def test_renormalize_idempotent(u):
    if l2_norm(u) < 1e-6:
        return
    v = renormalize(u)
    assert l2_norm(v) == pytest.approx(1.0, abs=1e-13)
    assert renormalize(v).allclose(v, atol=1e-14)


class TestSnapshots:
    def test_round_trip_exact(self, tmp_path):
        g = TorusGrid((6, 5), (1.0, 0.3))
        rng = np.random.default_rng(0)
        u = ScalarField(g, rng.standard_normal(g.shape))
        path = write_snapshot(u, tmp_path / "u.txt")
        v = read_snapshot(path)
        assert v.grid == g
        assert np.array_equal(v.values, u.values)
        assert format_snapshot(v) == path.read_text()

    def test_header(self):
        text = format_snapshot(TorusGrid.line(4).constant(1.0))
        assert text.splitlines()[0] == "torus dim=1 n=4 L=1.0"

    @pytest.mark.parametrize("text", [
        "", "grid 4\n1\n", "torus dim=1 n=4 L=1.0\n1\n2\n", "torus dim=2 n=4 L=1.0\n" + "1\n" * 4,
        "torus dim=1 n=4 L=1.0\n1\n2\nnan\n3\n",
    ])
    def test_bad_snapshots(self, text):
        with pytest.raises(DomainError):
            parse_snapshot(text)
