import numpy as np
import pytest

from switchvi.discretization import (
    LevyQuadrature,
    SpatialGrid,
    TimeGrid,
    ValueField,
    build_levy_quadrature,
    gradient_surface,
    interpolate,
    local_generator,
    nonlocal_driver_term,
    nonlocal_generator,
    offgrid_eval,
    second_derivative_surface,
)
from switchvi.model import GrowthBound, LevyMeasureSpec, MalformedSpecError


def beta_identity(x, e):
    return np.full_like(np.asarray(x, dtype=float), e)


class TestGrids:
    def test_spacing_and_axis(self):
        g = SpatialGrid.line(-2.0, 2.0, 101)
        assert g.spacing[0] == pytest.approx(0.04)
        assert g.axis()[0] == -2.0 and g.axis()[-1] == 2.0

    def test_min_nodes(self):
        with pytest.raises(MalformedSpecError):
            SpatialGrid.line(0, 1, 2)

    def test_time_grid_hits_horizon_exactly(self):
        tg = TimeGrid(horizon=0.7, n_steps=7)
        assert tg.times()[-1] == 0.7
        assert tg.dt == pytest.approx(0.1)

    def test_value_field_rejects_nan(self):
        with pytest.raises(MalformedSpecError):
            ValueField(np.full((1, 1, 4), np.nan), 0.0)


class TestQuadrature:
    def test_atom_passthrough(self):
        spec = LevyMeasureSpec(atoms=((1.0, 0.5), (-1.0, 0.5)), cutoff=0.0)
        quad = build_levy_quadrature(spec)
        np.testing.assert_array_equal(quad.marks, [1.0, -1.0])
        np.testing.assert_array_equal(quad.weights, [0.5, 0.5])
        assert quad.small_jump_second_moment == 0.0

    def test_small_atoms_fold_into_second_moment(self):
        spec = LevyMeasureSpec(atoms=((0.05, 2.0), (1.0, 0.5)), cutoff=0.1)
        quad = build_levy_quadrature(spec)
        np.testing.assert_array_equal(quad.marks, [1.0])
        assert quad.small_jump_second_moment == pytest.approx(2.0 * 0.05**2)

    def test_inverse_square_density_accepted(self):
        # moment integral: 2 * int_{0.1}^{1} e^-2 e^2 de = 1.8, finite
        spec = LevyMeasureSpec.from_dict({"density": "e^-2", "radius": 1.0, "cutoff": 0.1})
        quad = build_levy_quadrature(spec, n_atoms=400)
        moment = float(np.sum(quad.weights * np.minimum(1.0, quad.marks**2)))
        assert moment == pytest.approx(1.8, rel=2e-3)
        assert quad.small_jump_second_moment == pytest.approx(0.2, rel=2e-3)  # 2 * int_0^0.1 e^-2 e^2

    def test_empty_atoms_valid(self):
        quad = build_levy_quadrature(LevyMeasureSpec(atoms=()))
        assert quad.n_atoms == 0
        assert quad.total_weight == 0.0

    def test_tiny_weights_dropped(self):
        spec = LevyMeasureSpec(atoms=((1.0, 1e-15), (0.5, 0.2)))
        quad = build_levy_quadrature(spec)
        assert quad.n_atoms == 1

    def test_invariants_enforced(self):
        with pytest.raises(MalformedSpecError):
            LevyQuadrature(marks=np.array([0.01]), weights=np.array([1.0]), cutoff=0.1)
        with pytest.raises(MalformedSpecError):
            LevyQuadrature(marks=np.array([1.0]), weights=np.array([-1.0]))


class TestInterpolate:
    def grid(self):
        return SpatialGrid.line(0.0, 1.0, 3)

    def field(self):
        return ValueField(np.array([0.0, 1.0, 2.0]).reshape(1, 1, 3), 0.0)

    def test_node_identity_exact(self):
        g = SpatialGrid.line(-2.0, 2.0, 101)
        vals = np.sin(np.linspace(0, 5, 101)) if False else np.exp(-np.linspace(-2, 2, 101) ** 2)
        f = ValueField(vals.reshape(1, 1, -1), 0.0)
        x = g.axis()
        for p in (0, 17, 50, 100):
            assert interpolate(f, (0, 0), float(x[p]), g) == vals[p]

    def test_linear_midpoint(self):
        # values 0 -> 2 linearly over [0, 1]; query at 0.5 gives 1.0
        assert interpolate(self.field(), (0, 0), 0.5, self.grid()) == pytest.approx(1.0)
        assert interpolate(self.field(), (0, 0), 0.25, self.grid()) == pytest.approx(0.5)

    def test_clamp_beyond_box(self):
        assert interpolate(self.field(), (0, 0), 7.0, self.grid()) == 2.0
        assert interpolate(self.field(), (0, 0), -3.0, self.grid()) == 0.0

    def test_growth_extrapolation_linear_exact(self):
        g = SpatialGrid.line(-2.0, 2.0, 41)
        surf = g.axis().copy()  # v(x) = x
        growth = GrowthBound(coeff=1.0, exponent=1.0)
        out = offgrid_eval(surf, g, np.array([2.75, -3.5]), growth)
        np.testing.assert_allclose(out, [2.75, -3.5], atol=1e-14)

    def test_growth_cap(self):
        g = SpatialGrid.line(-1.0, 1.0, 11)
        surf = np.full(11, 10.0)  # violates the claimed envelope on purpose
        growth = GrowthBound(coeff=1.0, exponent=1.0)
        out = float(offgrid_eval(surf, g, np.array([3.0]), growth)[0])
        assert out == pytest.approx(1.0 + 3.0)  # clipped to C (1 + |x|)


class TestLocalGenerator:
    def test_affine_drift_exact_interior(self):
        g = SpatialGrid.line(-1.0, 1.0, 21)
        surf = 3.0 + 1.5 * g.axis()
        b = np.full(21, 2.0)
        out = local_generator(surf, g, b, np.zeros(21))
        np.testing.assert_allclose(out[1:-1], 3.0, atol=1e-12)

    def test_quadratic_diffusion_exact(self):
        g = SpatialGrid.line(-1.0, 1.0, 21)
        surf = g.axis() ** 2
        out = local_generator(surf, g, np.zeros(21), np.full(21, np.sqrt(2.0)))
        np.testing.assert_allclose(out[1:-1], 2.0, atol=1e-10)

    def test_constant_is_zero(self):
        g = SpatialGrid.line(-1.0, 1.0, 11)
        out = local_generator(np.full(11, 4.2), g, np.full(11, -1.0), np.full(11, 0.7))
        np.testing.assert_allclose(out, 0.0, atol=1e-14)

    def test_upwind_direction(self):
        g = SpatialGrid.line(0.0, 1.0, 11)
        surf = g.axis().copy()
        # negative drift at the left boundary: the outward difference vanishes
        out = local_generator(surf, g, np.full(11, -1.0), np.zeros(11))
        assert out[0] == 0.0
        assert out[5] == pytest.approx(-1.0)


class TestNonlocalGenerator:
    def test_quadratic_hand_value(self):
        g = SpatialGrid.line(-3.0, 3.0, 25)  # dx = 0.25, +-1 lands on nodes
        x = g.axis()
        surf = x**2
        grad = gradient_surface(surf, g)
        quad = LevyQuadrature(marks=np.array([1.0, -1.0]), weights=np.array([1.0, 1.0]))
        out = nonlocal_generator(surf, grad, g, quad, beta_identity)
        mid = 12  # x = 0
        assert out[mid] == pytest.approx(2.0, abs=1e-12)

    def test_affine_cancellation_inside(self):
        g = SpatialGrid.line(-3.0, 3.0, 61)
        x = g.axis()
        surf = 0.7 - 1.3 * x
        grad = gradient_surface(surf, g)
        quad = LevyQuadrature(marks=np.array([0.5, -0.25, 0.1]), weights=np.array([0.3, 0.8, 2.0]))
        out = nonlocal_generator(surf, grad, g, quad, beta_identity)
        inside = (x + 0.5 <= 3.0) & (x - 0.25 >= -3.0)
        inside[0] = inside[-1] = False  # boundary gradient is one-sided
        np.testing.assert_allclose(out[inside], 0.0, atol=1e-12)

    def test_odd_affine_with_growth_cancels_everywhere(self):
        g = SpatialGrid.line(-2.0, 2.0, 41)
        x = g.axis()
        surf = x.copy()
        grad = gradient_surface(surf, g)
        quad = LevyQuadrature(marks=np.array([1.0, -1.0]), weights=np.array([1.0, 1.0]))
        out = nonlocal_generator(surf, grad, g, quad, beta_identity, growth=GrowthBound(1.0, 1.0))
        np.testing.assert_allclose(out, 0.0, atol=1e-13)

    def test_empty_quadrature_zero(self):
        g = SpatialGrid.line(-1.0, 1.0, 11)
        surf = np.random.default_rng(0).normal(size=11)
        quad = LevyQuadrature(marks=np.array([]), weights=np.array([]))
        out = nonlocal_generator(surf, gradient_surface(surf, g), g, quad, beta_identity)
        np.testing.assert_array_equal(out, 0.0)

    def test_split_consistency_with_small_jump_surrogate(self):
        spec = LevyMeasureSpec.from_dict({"density": "1", "radius": 1.0, "cutoff": 0.2})
        quad = build_levy_quadrature(spec, n_atoms=32)
        assert quad.small_jump_second_moment == pytest.approx(2 * 0.2**3 / 3, rel=1e-4)
        g = SpatialGrid.line(-2.0, 2.0, 41)
        surf = np.cos(g.axis())
        grad = gradient_surface(surf, g)
        i1, i2 = nonlocal_generator(surf, grad, g, quad, beta_identity, split=True)
        total = nonlocal_generator(surf, grad, g, quad, beta_identity)
        np.testing.assert_allclose(i1 + i2, total, atol=1e-15)
        assert float(np.max(np.abs(i1))) > 0.0

    def test_monotone_in_field(self):
        g = SpatialGrid.line(-1.0, 1.0, 21)
        rng = np.random.default_rng(5)
        quad = LevyQuadrature(marks=np.array([0.3, -0.4]), weights=np.array([0.5, 0.5]))
        for _ in range(20):
            v = rng.normal(size=21)
            bump = np.abs(rng.normal(size=21))
            node = rng.integers(1, 20)
            w = v + bump
            w[node] = v[node]  # equality at the evaluation node
            grad = np.zeros(21)  # shared gradient: isolates the field dependence
            iv = nonlocal_generator(v, grad, g, quad, beta_identity, node=int(node))
            iw = nonlocal_generator(w, grad, g, quad, beta_identity, node=int(node))
            assert iv <= iw + 1e-12


class TestNonlocalDriverTerm:
    def gamma_one(self, x, e):
        return np.ones_like(np.asarray(x, dtype=float))

    def test_constant_surface_zero(self):
        g = SpatialGrid.line(-1.0, 1.0, 11)
        quad = LevyQuadrature(marks=np.array([0.3]), weights=np.array([2.0]))
        out = nonlocal_driver_term(np.full(11, 3.3), g, quad, beta_identity, self.gamma_one)
        np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_two_atom_cancellation(self):
        g = SpatialGrid.line(-3.0, 3.0, 25)
        surf = g.axis().copy()
        quad = LevyQuadrature(marks=np.array([1.0, -1.0]), weights=np.array([1.0, 1.0]))
        out = nonlocal_driver_term(surf, g, quad, beta_identity, self.gamma_one)
        x = g.axis()
        inside = (x + 1 <= 3) & (x - 1 >= -3)
        np.testing.assert_allclose(out[inside], 0.0, atol=1e-13)

    def test_zero_gamma(self):
        g = SpatialGrid.line(-1.0, 1.0, 11)
        quad = LevyQuadrature(marks=np.array([0.5]), weights=np.array([1.0]))
        out = nonlocal_driver_term(np.random.default_rng(1).normal(size=11), g, quad, beta_identity, lambda x, e: np.zeros_like(x))
        np.testing.assert_array_equal(out, 0.0)

    def test_split_small_half_is_zero(self):
        g = SpatialGrid.line(-1.0, 1.0, 11)
        quad = LevyQuadrature(marks=np.array([0.5]), weights=np.array([1.0]), cutoff=0.1, small_jump_second_moment=0.01)
        i1, i2 = nonlocal_driver_term(np.linspace(0, 1, 11), g, quad, beta_identity, self.gamma_one, split=True)
        np.testing.assert_array_equal(i1, 0.0)
        total = nonlocal_driver_term(np.linspace(0, 1, 11), g, quad, beta_identity, self.gamma_one)
        np.testing.assert_array_equal(i2, total)

    def test_monotone_in_field_with_nonneg_gamma(self):
        g = SpatialGrid.line(-1.0, 1.0, 21)
        rng = np.random.default_rng(9)
        quad = LevyQuadrature(marks=np.array([0.3, -0.2]), weights=np.array([1.0, 0.5]))
        for _ in range(20):
            v = rng.normal(size=21)
            w = v + np.abs(rng.normal(size=21))
            node = int(rng.integers(1, 20))
            w[node] = v[node]
            dv = nonlocal_driver_term(v, g, quad, beta_identity, self.gamma_one, node=node)
            dw = nonlocal_driver_term(w, g, quad, beta_identity, self.gamma_one, node=node)
            assert dv <= dw + 1e-12


class TestDerivativeSurfaces:
    def test_gradient_edges_one_sided(self):
        g = SpatialGrid.line(0.0, 1.0, 5)
        surf = g.axis() ** 2
        grad = gradient_surface(surf, g)
        assert grad[0] == pytest.approx((surf[1] - surf[0]) / 0.25)
        assert grad[-1] == pytest.approx((surf[-1] - surf[-2]) / 0.25)
        assert grad[2] == pytest.approx(1.0)  # 2x at x=0.5

    def test_second_derivative_clamped_ghost(self):
        g = SpatialGrid.line(0.0, 1.0, 5)
        surf = np.array([1.0, 2.0, 4.0, 7.0, 11.0])
        d2 = second_derivative_surface(surf, g)
        assert d2[0] == pytest.approx((surf[1] - surf[0]) / 0.25**2)
        assert d2[2] == pytest.approx((surf[3] - 2 * surf[2] + surf[1]) / 0.25**2)
