import numpy as np
import pytest

from gsbd.errors import EmptySlice, SupportViolation
from gsbd.grids import (
    Box,
    Grid,
    Mollifier,
    VectorField,
    affine_field,
    interpolate,
    mollify,
    pad_field,
    slice_field,
    sym_gradient,
)


class TestSymGradient:
    def test_constant_field_has_zero_strain(self):
        g = Grid.unit(2, 16)
        u = affine_field(g, [0.7, -0.3], np.zeros((2, 2)))
        assert np.abs(sym_gradient(u).samples).max() == 0.0

    def test_rigid_motion_nullspace_random(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            spin = rng.normal()
            b = rng.normal(size=2)
            g = Grid(rng.uniform(-1, 1, size=2), 1.0 / 16, (16, 16))
            u = affine_field(g, b, [[0.0, -spin], [spin, 0.0]])
            worst = max(worst, float(np.abs(sym_gradient(u).samples).max()))
        assert worst <= 1e-12

    def test_linear_stretch_on_quarter_grid(self):
        # u(x, y) = (x, 0) with h = 1/4: strain diag(1, 0) on every cell
        g = Grid(np.zeros(2), 0.25, (4, 4))
        u = VectorField.from_function(g, lambda p: np.array([p[0], 0.0]))
        e = sym_gradient(u).samples
        assert np.allclose(e[..., 0], 1.0, atol=1e-14)
        assert np.allclose(e[..., 1], 0.0, atol=1e-14)
        assert np.allclose(e[..., 2], 0.0, atol=1e-14)

    def test_1d_strain(self):
        g = Grid(np.zeros(1), 0.125, (8,))
        u = VectorField.from_function(g, lambda p: np.array([3.0 * p[0]]))
        assert np.allclose(sym_gradient(u).samples[..., 0], 3.0)


class TestMollifier:
    def test_weights_sum_to_one_and_moments_vanish(self):
        g = Grid.unit(2, 32)
        m = Mollifier.for_grid(g, 8.0)
        assert abs(m.weight_sum() - 1.0) <= 1e-12
        assert np.abs(m.first_moment()).max() <= 1e-12
        assert m.reach * g.spacing <= 1.0 / 8.0 + 1e-15

    def test_constant_is_fixed_point(self):
        g = Grid.unit(2, 32)
        u = affine_field(g, [4.2, -1.1], np.zeros((2, 2)))
        m = Mollifier.for_grid(g, 8.0)
        target, _ = g.subgrid(Box([0.25, 0.25], [0.75, 0.75]))
        out = mollify(u, m, target)
        assert np.allclose(out.samples[..., 0], 4.2, atol=1e-13)

    def test_affine_is_fixed_point(self):
        g = Grid(np.zeros(1), 1.0 / 64, (64,))
        u = VectorField.from_function(g, lambda p: np.array([3.0 * p[0] + 1.0]))
        m = Mollifier.for_grid(g, 16.0)
        target, _ = g.subgrid(Box([0.25], [0.75]))
        out = mollify(u, m, target)
        exact = VectorField.from_function(target, lambda p: np.array([3.0 * p[0] + 1.0]))
        assert np.abs(out.samples - exact.samples).max() <= 1e-12

    def test_step_transition_layer(self):
        # step at 0 mollified at k = 4: monotone, layer within 2/k
        g = Grid(np.array([-1.0]), 1.0 / 32, (64,))
        u = VectorField.from_function(g, lambda p: np.array([1.0 if p[0] >= 0 else 0.0]))
        m = Mollifier.for_grid(g, 4.0)
        target, _ = g.subgrid(Box([-0.5], [0.5]))
        out = mollify(u, m, target)
        vals = out.samples[..., 0]
        assert np.all(np.diff(vals) >= -1e-14)
        x = target.node_coords()[..., 0]
        outside = np.abs(x) > 1.0 / 4.0
        dist = np.minimum(np.abs(vals), np.abs(vals - 1.0))
        assert dist[outside].max() <= 1e-12

    def test_support_violation(self):
        g = Grid.unit(2, 16)
        u = VectorField.zero(g)
        m = Mollifier.for_grid(g, 4.0)
        with pytest.raises(SupportViolation):
            mollify(u, m)  # stencil exceeds the grid at its own boundary


class TestSliceField:
    def test_affine_exact_all_directions(self):
        g = Grid.unit(2, 32)
        A = np.array([[0.4, -0.2], [0.3, 0.1]])
        u = affine_field(g, [0.1, 0.2], A)
        e = 0.5 * (A + A.T)
        for xi in ([1, 0], [0, 1], [1, 1], [1, -1]):
            xi = np.asarray(xi, dtype=float)
            xi /= np.linalg.norm(xi)
            y = np.array([0.0, 0.37]) if abs(xi[0]) > 1e-12 else np.array([0.37, 0.0])
            s = slice_field(u, xi, y)
            assert np.abs(s.deriv - float(xi @ e @ xi)).max() <= 1e-12

    def test_quadratic_axis_slice(self):
        g = Grid.unit(2, 64)
        u = VectorField.from_function(g, lambda p: np.array([p[0] ** 2, 0.0]))
        s = slice_field(u, np.array([1.0, 0.0]), np.array([0.0, 0.31]), num_samples=25)
        assert np.abs(s.deriv - 2.0 * s.deriv_t).max() <= 4.0 * (1.0 / 64) ** 2 * 8

    def test_orthogonal_direction_sees_nothing(self):
        g = Grid.unit(2, 32)
        u = VectorField.from_function(g, lambda p: np.array([p[0] ** 2, 0.0]))
        s = slice_field(u, np.array([0.0, 1.0]), np.array([0.4, 0.0]))
        assert np.abs(s.values).max() <= 1e-14
        assert np.abs(s.deriv).max() <= 1e-12

    def test_quadratic_convergence_order(self):
        errs = []
        for cells in (16, 32, 64):
            g = Grid.unit(2, cells)
            u = VectorField.from_function(
                g, lambda p: np.array([p[0] ** 2 + 0.5 * p[1] ** 2, p[0] * p[1]])
            )
            xi = np.array([1.0, 1.0]) / np.sqrt(2.0)
            worst = 0.0
            for off in (0.11, 0.23, 0.37):
                s = slice_field(u, xi, np.array([off, 0.0]), num_samples=25)
                pts = np.array([off, 0.0]) + s.deriv_t[:, None] * xi
                exact = (
                    2 * pts[:, 0] * xi[0] ** 2
                    + pts[:, 0] * xi[1] ** 2
                    + 2 * pts[:, 1] * xi[0] * xi[1]
                )
                worst = max(worst, float(np.abs(s.deriv - exact).max()))
            errs.append(worst)
        order = np.log2(errs[0] / errs[-1]) / 2.0
        assert order >= 1.9, f"errors {errs}, order {order:.2f}"

    def test_missing_line_raises(self):
        g = Grid.unit(2, 16)
        u = VectorField.zero(g)
        with pytest.raises(EmptySlice):
            slice_field(u, np.array([1.0, 0.0]), np.array([0.0, 2.0]))


class TestGridMechanics:
    def test_subgrid_alignment(self):
        g = Grid(np.zeros(2), 0.125, (8, 8))
        sub, slices = g.subgrid(Box([0.25, 0.375], [0.75, 0.625]))
        assert np.allclose(sub.origin, [0.25, 0.375])
        assert sub.counts == (4, 2)
        assert slices == (slice(2, 7), slice(3, 6))

    def test_restrict_round_trip(self):
        g = Grid.unit(2, 16)
        u = VectorField.from_function(g, lambda p: np.array([p[0], p[1] ** 2]))
        sub, _ = g.subgrid(Box([0.25, 0.25], [0.75, 0.75]))
        r = u.restrict(sub)
        assert np.allclose(r.samples[0, 0], u.samples[4, 4])

    def test_interpolate_matches_bilinear(self):
        g = Grid.unit(2, 8)
        u = VectorField.from_function(g, lambda p: np.array([p[0] * p[1], p[0]]))
        pts = np.array([[0.3, 0.45], [0.99, 0.01]])
        vals = interpolate(u, pts)
        assert np.allclose(vals[:, 0], pts[:, 0] * pts[:, 1], atol=1e-12)

    def test_pad_modes(self):
        g = Grid(np.zeros(1), 0.25, (4,))
        u = VectorField(g, np.arange(5.0)[:, None])
        pe = pad_field(u, 2, mode="edge")
        assert pe.samples[0, 0] == 0.0 and pe.samples[-1, 0] == 4.0
        pz = pad_field(u, 2, mode="zero")
        assert pz.samples[0, 0] == 0.0 and pz.samples[1, 0] == 0.0
        pr = pad_field(u, 6, mode="reflect")  # margin larger than the field
        assert pr.grid.counts == (16,)

    def test_fields_are_immutable(self):
        g = Grid.unit(2, 8)
        u = VectorField.zero(g)
        with pytest.raises(ValueError):
            u.samples[0, 0, 0] = 1.0
