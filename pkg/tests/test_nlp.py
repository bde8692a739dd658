import numpy as np
import pytest

from lexplan.nlp import SmoothProgram, gradient, kkt_residual, minimize


def quadratic_bowl():
    return SmoothProgram(
        dim=1,
        objective=lambda x: float((x[0] - 1.0) ** 2),
        objective_grad=lambda x: np.array([2.0 * (x[0] - 1.0)]),
    )


def equality_qp():
    return SmoothProgram(
        dim=2,
        objective=lambda x: float(x @ x),
        objective_grad=lambda x: 2.0 * x,
        eq=lambda x: np.array([x[0] + x[1] - 1.0]),
        eq_vjp=lambda x, w: np.array([w[0], w[0]]),
    )


def bound_lp():
    return SmoothProgram(
        dim=1,
        objective=lambda x: float(x[0]),
        objective_grad=lambda x: np.ones(1),
        ineq=lambda x: np.array([x[0] - 2.0]),
        ineq_vjp=lambda x, w: np.array([w[0]]),
    )


class TestGradient:
    def test_constant_function(self):
        np.testing.assert_allclose(gradient(lambda x: 3.5, np.zeros(4)), np.zeros(4))

    def test_quadratic(self):
        g = gradient(lambda x: float(x @ x), np.array([1.0, 2.0]))
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-6)

    def test_sine_at_origin(self):
        g = gradient(lambda x: float(np.sin(x[0])), np.zeros(1))
        assert g[0] == pytest.approx(1.0, abs=1e-6)

    def test_nonfinite_evaluation_raises(self):
        with pytest.raises(ArithmeticError):
            gradient(lambda x: float("nan"), np.zeros(1))


class TestMinimize:
    def test_unconstrained_quadratic(self):
        res = minimize(quadratic_bowl(), np.zeros(1))
        assert res.status == "converged"
        assert res.point[0] == pytest.approx(1.0, abs=1e-6)
        assert res.objective_value == pytest.approx(0.0, abs=1e-10)

    def test_equality_qp_with_multiplier(self):
        res = minimize(equality_qp(), np.zeros(2))
        assert res.status == "converged"
        np.testing.assert_allclose(res.point, [0.5, 0.5], atol=1e-4)
        assert res.objective_value == pytest.approx(0.5, abs=1e-4)
        assert res.multipliers[0][0] == pytest.approx(1.0, abs=1e-3)
        assert res.kkt_residual <= 1e-4

    def test_inequality_with_active_multiplier(self):
        res = minimize(bound_lp(), np.array([10.0]))
        assert res.status == "converged"
        assert res.point[0] == pytest.approx(2.0, abs=1e-4)
        assert res.multipliers[1][0] == pytest.approx(1.0, abs=1e-3)

    def test_deterministic_bitwise(self):
        a = minimize(equality_qp(), np.zeros(2))
        b = minimize(equality_qp(), np.zeros(2))
        assert np.array_equal(a.point, b.point)
        assert a.objective_value == b.objective_value
        assert np.array_equal(a.multipliers[0], b.multipliers[0])

    def test_x0_dimension_checked(self):
        with pytest.raises(ValueError):
            minimize(quadratic_bowl(), np.zeros(2))

    def test_infeasible_program_detected(self):
        prog = SmoothProgram(
            dim=1,
            objective=lambda x: float(x[0] ** 2),
            objective_grad=lambda x: 2.0 * x,
            ineq=lambda x: np.array([x[0] - 1.0, -x[0] - 1.0]),
            ineq_vjp=lambda x, w: np.array([w[0] - w[1]]),
        )
        res = minimize(prog, np.zeros(1), max_outer=8)
        assert res.status == "infeasible"

    def test_box_bounds_respected(self):
        prog = SmoothProgram(
            dim=1,
            objective=lambda x: float(x[0] ** 2),
            objective_grad=lambda x: 2.0 * x,
            bounds=(np.array([1.0]), np.array([2.0])),
        )
        res = minimize(prog, np.array([1.5]))
        assert res.status == "converged"
        assert res.point[0] == pytest.approx(1.0)
        assert res.kkt_residual <= 1e-4

    def test_merit_trace_monotone(self):
        res = minimize(equality_qp(), np.array([3.0, -2.0]), trace=True)
        assert res.merit_trace
        for subtrace in res.merit_trace:
            diffs = np.diff(np.array(subtrace))
            assert np.all(diffs <= 1e-10 * np.maximum(1.0, np.abs(subtrace[:-1])))

    def test_finite_difference_fallback_path(self):
        # no derivative callbacks at all: the FD path must still solve
        prog = SmoothProgram(
            dim=2,
            objective=lambda x: float((x[0] - 2.0) ** 2 + (x[1] + 1.0) ** 2),
            eq=lambda x: np.array([x[0] - x[1] - 3.0]),
        )
        res = minimize(prog, np.zeros(2))
        assert res.status == "converged"
        np.testing.assert_allclose(res.point, [2.0, -1.0], atol=1e-3)


class TestKktResidual:
    def test_exact_point_of_equality_qp(self):
        residual = kkt_residual(equality_qp(), np.array([0.5, 0.5]), (np.array([1.0]), np.zeros(0)))
        assert residual <= 1e-8

    def test_perturbed_point_has_residual(self):
        residual = kkt_residual(equality_qp(), np.array([0.6, 0.5]), (np.array([1.0]), np.zeros(0)))
        assert residual > 0.01

    def test_residual_formula_on_unconstrained_quadratic(self):
        prog = SmoothProgram(
            dim=1, objective=lambda x: float(x[0] ** 2), objective_grad=lambda x: 2.0 * x
        )
        for x in (0.3, -1.2, 4.0):
            residual = kkt_residual(prog, np.array([x]), (np.zeros(0), np.zeros(0)))
            assert residual == pytest.approx(abs(2.0 * x))

    def test_complementarity_enters_residual(self):
        prog = bound_lp()
        # feasible non-active point with a positive multiplier violates complementarity
        residual = kkt_residual(prog, np.array([5.0]), (np.zeros(0), np.array([1.0])))
        assert residual >= 3.0 - 1e-12
