import numpy as np
import pytest

from switchvi.discretization import build_levy_quadrature
from switchvi.exprdsl import NumericDomainError
from switchvi.model import (
    CapacityError,
    MalformedSpecError,
    ModeSet,
    ProblemSpec,
    builtin_problem_names,
    eval_f_ij,
    eval_obstacles,
    eval_penalized_driver,
    load_builtin_problem,
    validate_coefficient_bounds,
    validate_non_free_loop,
    validate_terminal_consistency,
)

from conftest import make_spec

POINTS = [(0.0, 0.0), (0.25, 1.0), (0.5, -1.5)]


def _cost_spec(lower, upper, m1=2, m2=2, terminal="0"):
    return make_spec(
        modes={"m1": m1, "m2": m2},
        drivers={"default": "0"},
        lower_costs={"default": lower} if m1 > 1 else {},
        upper_costs={"default": upper} if m2 > 1 else {},
        terminal={"default": terminal},
    )


class TestNonFreeLoop:
    def test_equal_costs_free_loop_detected(self):
        spec = _cost_spec("1", "1")
        report = validate_non_free_loop(spec, POINTS)
        assert not report.passed
        # the witness is a mixed loop alternating the two players
        loop = report.violations[0]["loop"]
        assert loop[0] == loop[-1]
        assert abs(report.violations[0]["loop_sum"]) < 1e-12
        assert len(loop) == 5

    def test_distinct_costs_pass(self):
        spec = _cost_spec("1", "2")
        report = validate_non_free_loop(spec, POINTS)
        assert report.passed
        assert report.details["loops_checked"] > 0

    def test_single_mode_trivial_pass(self):
        spec = _cost_spec("1", "1", m1=1, m2=1)
        report = validate_non_free_loop(spec, POINTS)
        assert report.passed
        assert report.details["loops_checked"] == 0

    def test_empty_points_rejected(self):
        spec = _cost_spec("1", "2")
        with pytest.raises(MalformedSpecError):
            validate_non_free_loop(spec, [])

    def test_mode_cap(self):
        with pytest.raises(CapacityError):
            ModeSet(7, 6)

    def test_lower_only_moves(self):
        # equal costs do not hurt player-1-only loops (sums are -2c != 0)
        spec = _cost_spec("1", "1")
        report = validate_non_free_loop(spec, POINTS, moves="lower")
        assert report.passed


class TestTerminalConsistency:
    def test_zero_terminal_passes(self):
        spec = _cost_spec("0.5", "0.5")
        report = validate_terminal_consistency(spec, np.linspace(-2, 2, 9))
        assert report.passed
        assert report.details["worst_violation"] == 0.0

    def test_lower_violation_magnitude(self):
        spec = make_spec(
            modes={"m1": 2, "m2": 1},
            drivers={"default": "0"},
            lower_costs={"default": "1"},
            upper_costs={},
            terminal={"0,0": "0", "1,0": "5"},
        )
        report = validate_terminal_consistency(spec, [0.0, 1.0])
        assert not report.passed
        assert report.details["worst_violation"] == pytest.approx(4.0)
        assert report.violations[0]["side"] == "lower"

    def test_upper_violation_magnitude(self):
        spec = make_spec(
            modes={"m1": 1, "m2": 2},
            drivers={"default": "0"},
            lower_costs={},
            upper_costs={"default": "1"},
            terminal={"0,0": "0", "0,1": "-3"},
        )
        report = validate_terminal_consistency(spec, [0.0])
        assert not report.passed
        assert report.details["worst_violation"] == pytest.approx(2.0)
        assert report.violations[0]["side"] == "upper"


class TestObstacles:
    def test_constant_field(self):
        y = np.zeros((2, 2))
        lc = np.ones((2, 2))
        uc = np.ones((2, 2))
        L, U = eval_obstacles(y, lc, uc)
        assert L[0, 0] == -1.0 and U[0, 0] == 1.0

    def test_single_mode_sentinels(self):
        y = np.zeros((1, 3))
        L, U = eval_obstacles(y, np.zeros((1, 1)), np.ones((3, 3)))
        assert np.all(L == -np.inf)
        assert np.all(np.isfinite(U))

    def test_direct_formula(self):
        y = np.array([[0.0, 0.0], [3.0, 0.0]])
        lc = np.full((2, 2), 0.5)
        L, _ = eval_obstacles(y, lc, np.ones((2, 2)))
        assert L[0, 0] == pytest.approx(2.5)

    def test_monotone_in_field(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            y = rng.normal(size=(3, 2))
            lc = rng.uniform(0.1, 1.0, size=(3, 3))
            uc = rng.uniform(0.1, 1.0, size=(2, 2))
            L0, U0 = eval_obstacles(y, lc, uc)
            bump = y.copy()
            i, j = rng.integers(3), rng.integers(2)
            bump[i, j] += rng.uniform(0.0, 2.0)
            L1, U1 = eval_obstacles(bump, lc, uc)
            assert np.all(L1 >= L0 - 1e-14) and np.all(U1 >= U0 - 1e-14)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(11)
        y = rng.normal(size=(2, 2, 5))
        lc = np.broadcast_to(rng.uniform(0.1, 1, (2, 2, 1)), (2, 2, 5)).copy()
        uc = np.broadcast_to(rng.uniform(0.1, 1, (2, 2, 1)), (2, 2, 5)).copy()
        L, U = eval_obstacles(y, lc, uc)
        for p in range(5):
            Lp, Up = eval_obstacles(y[:, :, p], lc[:, :, p], uc[:, :, p])
            np.testing.assert_allclose(L[:, :, p], Lp)
            np.testing.assert_allclose(U[:, :, p], Up)


class TestPenalizedDriver:
    def test_inactive_penalties_return_driver(self):
        spec = make_spec(
            modes={"m1": 2, "m2": 2},
            drivers={"default": "x + q + z"},
            lower_costs={"default": "1"},
            upper_costs={"default": "1"},
        )
        y = np.zeros((2, 2))
        out = eval_penalized_driver(spec, (0, 0), 7.0, 9.0, 0.1, 0.3, y, 0.0, 0.0)
        assert out == pytest.approx(0.3)

    def test_lower_penalty(self):
        spec = make_spec(
            modes={"m1": 2, "m2": 1},
            drivers={"default": "0"},
            lower_costs={"default": "0.5"},
            upper_costs={},
        )
        y = np.array([[0.0], [1.0]])  # L_00 = 1 - 0.5 = 0.5
        out = eval_penalized_driver(spec, (0, 0), 10.0, 0.0, 0.0, 0.0, y, 0.0, 0.0)
        assert out == pytest.approx(5.0)

    def test_upper_penalty(self):
        spec = make_spec(
            modes={"m1": 1, "m2": 2},
            drivers={"default": "0"},
            lower_costs={},
            upper_costs={"default": "0.5"},
        )
        y = np.array([[2.0, 0.5]])  # U_00 = 0.5 + 0.5 = 1
        out = eval_penalized_driver(spec, (0, 0), 0.0, 4.0, 0.0, 0.0, y, 0.0, 0.0)
        assert out == pytest.approx(-4.0)

    def test_monotone_in_penalties(self):
        spec = make_spec(
            modes={"m1": 2, "m2": 2},
            drivers={"default": "0"},
            lower_costs={"default": "0.2"},
            upper_costs={"default": "0.2"},
        )
        y = np.array([[0.0, 0.0], [1.0, 0.0]])  # below L at (0,0)
        vals = [eval_penalized_driver(spec, (0, 0), n, 0.0, 0.0, 0.0, y, 0.0, 0.0) for n in (0.0, 1.0, 2.0, 5.0)]
        assert vals == sorted(vals)
        y2 = np.array([[3.0, 0.0], [0.0, 0.0]])  # above U at (0,0)
        vals2 = [eval_penalized_driver(spec, (0, 0), 0.0, m, 0.0, 0.0, y2, 0.0, 0.0) for m in (0.0, 1.0, 2.0)]
        assert vals2 == sorted(vals2, reverse=True)

    def test_between_obstacles_equals_driver(self):
        spec = make_spec(
            modes={"m1": 2, "m2": 2},
            drivers={"default": "1 + x"},
            lower_costs={"default": "5"},
            upper_costs={"default": "5"},
        )
        y = np.zeros((2, 2))
        with_pen = eval_penalized_driver(spec, (1, 1), 50.0, 50.0, 0.0, 0.5, y, 0.0, 0.0)
        assert with_pen == pytest.approx(1.5)

    def test_nonfinite_rejected(self):
        spec = make_spec(modes={"m1": 1, "m2": 1}, drivers={"default": "0"}, lower_costs={}, upper_costs={})
        with pytest.raises(NumericDomainError):
            eval_penalized_driver(spec, (0, 0), 1.0, 1.0, 0.0, np.inf, np.zeros((1, 1)), 0.0, 0.0)
        with pytest.raises(NumericDomainError):
            eval_penalized_driver(spec, (0, 0), np.inf, 1.0, 0.0, 0.0, np.zeros((1, 1)), 0.0, 0.0)

    def test_zero_penalties_match_f_ij(self):
        spec = make_spec(
            modes={"m1": 2, "m2": 2},
            drivers={"default": "x + 2*q"},
            lower_costs={"default": "1"},
            upper_costs={"default": "1"},
        )
        quad = build_levy_quadrature(spec.levy)
        y = np.full((2, 2), 0.3)
        x, t = 0.4, 0.1
        u = lambda e: 0.9 * e  # any mark function works here
        q = sum(u(e) * float(spec.eval_gamma((0, 0), np.asarray(x), float(e))) * w for e, w in zip(quad.marks, quad.weights))
        lhs = eval_penalized_driver(spec, (0, 0), 0.0, 0.0, t, x, y, 0.0, q)
        rhs = eval_f_ij(spec, (0, 0), t, x, y, 0.0, u, quad)
        assert lhs == pytest.approx(rhs, abs=1e-14)


class TestFij:
    def _spec(self):
        return make_spec(
            modes={"m1": 1, "m2": 1},
            drivers={"default": "10 + q"},
            lower_costs={},
            upper_costs={},
            jump_weights={"default": "1"},
            levy={"atoms": [[1.0, 1.0], [-1.0, 1.0]]},
        )

    def test_zero_mark_function(self):
        spec = self._spec()
        quad = build_levy_quadrature(spec.levy)
        out = eval_f_ij(spec, (0, 0), 0.0, 0.0, np.zeros((1, 1)), 0.0, lambda e: 0.0, quad)
        assert out == pytest.approx(10.0)

    def test_zero_gamma(self):
        spec = make_spec(
            modes={"m1": 1, "m2": 1},
            drivers={"default": "q"},
            lower_costs={},
            upper_costs={},
            jump_weights={"default": "0"},
            levy={"atoms": [[1.0, 1.0], [-1.0, 1.0]]},
        )
        quad = build_levy_quadrature(spec.levy)
        out = eval_f_ij(spec, (0, 0), 0.0, 0.0, np.zeros((1, 1)), 0.0, lambda e: 1e6 * e, quad)
        assert out == 0.0

    def test_two_atom_cancellation(self):
        spec = self._spec()
        quad = build_levy_quadrature(spec.levy)
        # u(e) = e with symmetric atoms: q = 1 - 1 = 0
        out = eval_f_ij(spec, (0, 0), 0.0, 0.0, np.zeros((1, 1)), 0.0, lambda e: e, quad)
        assert out == pytest.approx(10.0)


class TestCoefficientBounds:
    def test_negative_cost_flagged(self):
        spec = _cost_spec("-1", "1")
        report = validate_coefficient_bounds(spec, [0.0, 0.5], np.linspace(-2, 2, 9))
        assert not report.passed
        assert any("lower_cost" in v["what"] for v in report.violations)

    def test_decreasing_in_q_warns_not_blocks(self):
        spec = make_spec(
            modes={"m1": 2, "m2": 2},
            drivers={"default": "-q"},
            lower_costs={"default": "1"},
            upper_costs={"default": "2"},
        )
        report = validate_coefficient_bounds(spec, [0.0], np.linspace(-2, 2, 9))
        assert report.passed  # warnings only
        assert any("decreasing in q" in w["what"] for w in report.warnings)

    def test_decreasing_in_other_y_warns(self):
        spec = make_spec(
            modes={"m1": 2, "m2": 1},
            drivers={"0,0": "0 - y_1_0", "1,0": "0"},
            lower_costs={"default": "1"},
            upper_costs={},
        )
        report = validate_coefficient_bounds(spec, [0.0], np.linspace(-1, 1, 5))
        assert any("decreasing in y" in w["what"] for w in report.warnings)

    def test_envelope_constants_reported(self, spec_2x2):
        report = validate_coefficient_bounds(spec_2x2, [0.0, 0.5], np.linspace(-2, 2, 9))
        assert report.passed
        assert report.details["beta_envelope_constant"] == pytest.approx(0.8, rel=1e-9)
        assert report.details["gamma_envelope_constant"] == pytest.approx(0.5, rel=1e-9)


class TestShippedProblems:
    def test_names(self):
        names = builtin_problem_names()
        assert {"no_jump", "two_atom_jump", "switch_2x2_jump"} <= set(names)

    @pytest.mark.parametrize("name", ["no_jump", "two_atom_jump", "switch_2x2_jump"])
    def test_all_assumptions_pass(self, name):
        spec = load_builtin_problem(name)
        xs = np.linspace(-2, 2, 17)
        pts = [(t, float(x)) for t in (0.0, 0.25, 0.5) for x in xs[::4]]
        assert validate_non_free_loop(spec, pts).passed
        assert validate_terminal_consistency(spec, xs).passed
        report = validate_coefficient_bounds(spec, [0.0, 0.25, 0.5], xs)
        assert report.passed
        assert not report.warnings

    def test_missing_entry_rejected(self):
        with pytest.raises(MalformedSpecError):
            ProblemSpec.from_dict(
                {
                    "modes": {"m1": 2, "m2": 1},
                    "horizon": 1.0,
                    "drivers": {"0,0": "0"},  # (1,0) missing, no default
                    "terminal": {"default": "0"},
                    "lower_costs": {"default": "1"},
                }
            )
