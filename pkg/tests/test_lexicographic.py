import numpy as np
import pytest

from lexplan.costs import ControlEffort, LaneDeviation, ProgressShortfall, SpeedLimitExcess
from lexplan.dynamics import AgentState, Trajectory
from lexplan.lexicographic import (
    BestResponseProblem,
    FixedOpponent,
    LevelInfeasibleError,
    SolverOptions,
    WindowTranscription,
    build_level_program,
    level_bound_slack,
    solve_lexicographic,
)
from lexplan.model import (
    AgentSpec,
    ConstraintSet,
    ControlBounds,
    PreferenceLevel,
    PreferenceRelation,
    RoadGeometry,
)
from lexplan.nlp import SmoothProgram, finite_difference_jacobian, minimize

ROAD = RoadGeometry(lane_centers=(-2.0, 2.0), lane_width=4.0)
BOUNDS = ControlBounds(accel=(-4.0, 3.0), yaw_rate=(-2.5, 2.5))


def make_agent(levels, radius=1.0, constraints=ConstraintSet()):
    return AgentSpec(
        id=1,
        initial_state=AgentState(0.0, -2.0, 0.0, 5.0),
        radius=radius,
        control_bounds=BOUNDS,
        preferences=PreferenceRelation(tuple(PreferenceLevel(i + 1, t) for i, t in enumerate(levels))),
        constraints=constraints,
    )


def make_problem(agent, T=6, opponents=(), warm_speed=None):
    speed = agent.initial_state.speed if warm_speed is None else warm_speed
    measured = AgentState(
        agent.initial_state.px, agent.initial_state.py, agent.initial_state.heading, speed
    )
    warm = Trajectory.from_rollout(measured, np.zeros((T, 2)), 0.1)
    return BestResponseProblem(
        agent=agent,
        window_start=0,
        measured_state=measured,
        opponents=list(opponents),
        road=ROAD,
        t_window=T,
        dt=0.1,
        warm_start=warm,
    )


def overtaking_levels():
    return [
        (SpeedLimitExcess(weight=1.0, limit=6.0),),
        (ProgressShortfall(weight=1.0, pace=5.0),),
        (
            LaneDeviation(weight=1.0, lane_y=-2.0, heading_weight=0.5, lane_heading=0.0),
            ControlEffort(accel_weight=0.01, yaw_weight=0.05),
        ),
    ]


def incoming_opponent(T=6, y=-1.8, speed=8.0, start=-4.5):
    xs = start + speed * 0.1 * np.arange(T)
    return FixedOpponent(agent_id=9, radius=1.0, positions=np.column_stack([xs, np.full(T, y)]))


class TestBuildLevelProgram:
    def test_level_one_has_no_bound_rows(self):
        problem = make_problem(make_agent(overtaking_levels()), opponents=[incoming_opponent()])
        tr = WindowTranscription(problem)
        program = build_level_program(problem, 1, np.zeros(0), tr)
        z = tr.pack(problem.warm_start)
        assert program.eval_ineq(z).size == tr.base_ineq_size()

    def test_nondegenerate_priors_become_bound_rows(self):
        problem = make_problem(make_agent(overtaking_levels()), opponents=[incoming_opponent()])
        tr = WindowTranscription(problem)
        priors = np.array([0.7, 0.9])
        program = build_level_program(problem, 3, priors, tr)
        z = tr.pack(problem.warm_start)
        rows = program.eval_ineq(z)
        assert rows.size == tr.base_ineq_size() + 2
        expected = [
            0.7 + level_bound_slack(0.7) - tr.level_value(1, z),
            0.9 + level_bound_slack(0.9) - tr.level_value(2, z),
        ]
        np.testing.assert_allclose(rows[-2:], expected, atol=1e-12)

    def test_numerically_zero_prior_becomes_variable_box(self):
        problem = make_problem(make_agent(overtaking_levels()))
        tr = WindowTranscription(problem)
        program = build_level_program(problem, 2, np.array([0.0]), tr)
        z = tr.pack(problem.warm_start)
        # no extra inequality row; the speed ceiling moves into the bounds instead
        assert program.eval_ineq(z).size == tr.base_ineq_size()
        upper = program.bounds[1].reshape(problem.t_window, 6)
        assert np.all(upper[1:, 3] <= 6.0 + 1e-3)

    def test_dimension_checks(self):
        problem = make_problem(make_agent(overtaking_levels()))
        with pytest.raises(ValueError):
            build_level_program(problem, 2, np.zeros(0))
        with pytest.raises(ValueError):
            build_level_program(problem, 4, np.zeros(3))

    def test_equality_rows_for_t2(self):
        # T=2: one 4-row initial-state block plus 4 dynamics rows
        problem = make_problem(make_agent(overtaking_levels()), T=2)
        tr = WindowTranscription(problem)
        program = build_level_program(problem, 1, np.zeros(0), tr)
        z = tr.pack(problem.warm_start)
        assert program.eval_eq(z).size == 8
        np.testing.assert_allclose(program.eval_eq(z)[:4], 0.0, atol=1e-12)

    def test_analytic_jacobians_match_finite_differences(self):
        problem = make_problem(
            make_agent(
                overtaking_levels(), constraints=ConstraintSet(hard_road=True, forward_only=True)
            ),
            T=4,
            opponents=[incoming_opponent(T=4)],
        )
        tr = WindowTranscription(problem)
        program = build_level_program(problem, 3, np.array([0.4, 0.8]), tr)
        rng = np.random.default_rng(2)
        z = tr.pack(problem.warm_start) + rng.normal(0, 0.1, tr.dim)
        J_eq = finite_difference_jacobian(program.eq, z)
        np.testing.assert_allclose(program.eq_jac(z), J_eq, atol=1e-6)
        J_in = finite_difference_jacobian(program.ineq, z)
        np.testing.assert_allclose(program.ineq_jac(z), J_in, atol=1e-5)
        w = rng.normal(0, 1, J_eq.shape[0])
        np.testing.assert_allclose(program.eq_pullback(z, w), J_eq.T @ w, atol=1e-6)
        w = rng.normal(0, 1, J_in.shape[0])
        np.testing.assert_allclose(program.ineq_pullback(z, w), J_in.T @ w, atol=1e-5)


class TestScalarLexicographicSemantics:
    """The level-bound recipe on hand-built scalar programs, checked against
    grid-search oracles."""

    def test_toy_two_level_sequence(self):
        box = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        level1 = SmoothProgram(
            dim=2,
            objective=lambda x: float(x[0] ** 2),
            objective_grad=lambda x: np.array([2 * x[0], 0.0]),
            bounds=box,
        )
        r1 = minimize(level1, np.array([0.5, -0.5]))
        assert r1.status == "converged"
        y1 = r1.objective_value
        assert y1 == pytest.approx(0.0, abs=1e-8)
        delta = level_bound_slack(y1)
        level2 = SmoothProgram(
            dim=2,
            objective=lambda x: float((x[1] - x[0] - 1.0) ** 2),
            objective_grad=lambda x: np.array(
                [-2 * (x[1] - x[0] - 1.0), 2 * (x[1] - x[0] - 1.0)]
            ),
            ineq=lambda x: np.array([y1 + delta - x[0] ** 2]),
            ineq_vjp=lambda x, w: np.array([-2 * x[0] * w[0], 0.0]),
            bounds=box,
        )
        r2 = minimize(level2, r1.point, feas_tol=1e-8, max_outer=40)
        assert abs(r2.point[0]) <= 1.1e-3
        assert r2.point[1] == pytest.approx(1.0, abs=2e-3)

    def test_conflicting_levels_match_grid_oracle(self):
        box = (np.array([-1.0]), np.array([1.0]))
        level1 = SmoothProgram(
            dim=1,
            objective=lambda x: float(x[0] ** 2),
            objective_grad=lambda x: 2.0 * x,
            bounds=box,
        )
        r1 = minimize(level1, np.array([0.4]))
        y1 = r1.objective_value
        delta = level_bound_slack(y1)
        level2 = SmoothProgram(
            dim=1,
            objective=lambda x: float((x[0] - 1.0) ** 2),
            objective_grad=lambda x: 2.0 * (x - 1.0),
            ineq=lambda x: np.array([y1 + delta - x[0] ** 2]),
            ineq_vjp=lambda x, w: np.array([-2 * x[0] * w[0]]),
            bounds=box,
        )
        r2 = minimize(level2, r1.point, feas_tol=1e-8, max_outer=40)
        # independent oracle: exhaustive grid search at resolution 1e-4
        xs = np.arange(-1.0, 1.0 + 5e-5, 1e-4)
        feasible = xs[xs**2 <= y1 + delta]
        x_oracle = feasible[np.argmin((feasible - 1.0) ** 2)]
        assert x_oracle == pytest.approx(1e-3, abs=1.5e-4)
        assert abs(r2.point[0] - x_oracle) <= 2e-4
        assert abs(r2.point[0]) <= np.sqrt(delta) * 1.1  # level-1 bound active


@pytest.fixture(scope="module")
def contact_solution():
    agent = make_agent(overtaking_levels())
    problem = make_problem(agent, opponents=[incoming_opponent()])
    solution = solve_lexicographic(problem, SolverOptions())
    return agent, problem, solution


class TestSolveLexicographic:
    def test_k1_matches_single_minimize(self):
        agent = make_agent([overtaking_levels()[2]])  # single comfort level
        problem = make_problem(agent)
        solution = solve_lexicographic(problem)
        tr = WindowTranscription(problem)
        program = build_level_program(problem, 1, np.zeros(0), tr)
        direct = minimize(program, tr.pack(problem.warm_start), tol=1e-4, feas_tol=1e-5, rho0=100.0)
        direct_traj = Trajectory.from_rollout(problem.measured_state, tr.controls(direct.point), 0.1)
        np.testing.assert_allclose(solution.trajectory.states, direct_traj.states, atol=1e-6)
        assert len(solution.level_optima) == 1

    def test_level_optima_recorded_at_returned_points(self, contact_solution):
        agent, problem, solution = contact_solution
        tr = WindowTranscription(problem)
        assert len(solution.level_optima) == 3
        z = tr.pack(solution.trajectory)
        final_cost = tr.level_value(3, z)
        assert final_cost == pytest.approx(solution.level_optima[2], abs=1e-9)

    def test_lexicographic_dominance_bounds(self, contact_solution):
        # cost_j(z*) <= y_j* + delta_j, up to the inequality feasibility tolerance
        agent, problem, solution = contact_solution
        tr = WindowTranscription(problem)
        z = tr.pack(solution.trajectory)
        for j, y in enumerate(solution.level_optima, start=1):
            slack = level_bound_slack(y) + 1e-4 * (1.0 + abs(y))
            assert tr.level_value(j, z) <= y + slack

    def test_trajectory_satisfies_dynamics_and_initial_state(self, contact_solution):
        agent, problem, solution = contact_solution
        tr = WindowTranscription(problem)
        z = tr.pack(solution.trajectory)
        np.testing.assert_allclose(tr.eq(z), 0.0, atol=1e-9)
        np.testing.assert_allclose(
            solution.trajectory.states[0], problem.measured_state.as_array(), atol=0.0
        )

    def test_feasible_set_nesting(self, contact_solution):
        # the level-k solution satisfies every constraint of the level-(k+1)
        # program except possibly its newly added bound
        agent, problem, solution = contact_solution
        tr = WindowTranscription(problem)
        for k in range(1, 3):
            point_k = solution.statuses[k - 1].point
            next_program = build_level_program(problem, k + 1, solution.level_optima[:k], tr)
            rows = next_program.eval_ineq(point_k)
            assert rows.min() >= -1e-4
            lo, hi = next_program.bounds
            assert np.all(point_k >= lo - 2e-3)
            assert np.all(point_k <= hi + 2e-3)

    def test_strictly_better_prior_levels_accepted(self):
        # the level bound is an inequality: a level-2 point may drive the
        # level-1 cost strictly below its recorded optimum without rejection
        agent = make_agent(
            [
                (ProgressShortfall(weight=1.0, pace=4.0),),  # warm start at 5 already exceeds pace
                (ControlEffort(accel_weight=1.0, yaw_weight=1.0),),
            ]
        )
        problem = make_problem(agent)
        solution = solve_lexicographic(problem)
        tr = WindowTranscription(problem)
        z = tr.pack(solution.trajectory)
        assert tr.level_value(1, z) <= solution.level_optima[0] + 1e-8

    def test_infeasible_level_raises_with_index(self):
        agent = make_agent(
            overtaking_levels(), radius=5.0, constraints=ConstraintSet(hard_road=True)
        )
        problem = make_problem(agent)
        with pytest.raises(LevelInfeasibleError) as err:
            solve_lexicographic(problem)
        assert err.value.level == 1
        assert err.value.agent_id == agent.id

    def test_warm_duals_do_not_slow_resolve(self, contact_solution):
        agent, problem, solution = contact_solution
        warm_problem = BestResponseProblem(
            agent=agent,
            window_start=0,
            measured_state=problem.measured_state,
            opponents=problem.opponents,
            road=problem.road,
            t_window=problem.t_window,
            dt=problem.dt,
            warm_start=solution.trajectory,
            warm_duals=solution.duals,
        )
        warm = solve_lexicographic(warm_problem)
        assert warm.inner_iterations <= solution.inner_iterations
        np.testing.assert_allclose(
            warm.trajectory.states, solution.trajectory.states, atol=5e-4
        )


class TestProblemValidation:
    def test_opponent_window_length_checked(self):
        agent = make_agent(overtaking_levels())
        with pytest.raises(ValueError):
            make_problem(agent, T=6, opponents=[incoming_opponent(T=5)])

    def test_warm_start_must_match_measured(self):
        agent = make_agent(overtaking_levels())
        warm = Trajectory.from_rollout(AgentState(9.0, 0.0, 0.0, 1.0), np.zeros((6, 2)), 0.1)
        with pytest.raises(ValueError):
            BestResponseProblem(
                agent=agent,
                window_start=0,
                measured_state=agent.initial_state,
                opponents=[],
                road=ROAD,
                t_window=6,
                dt=0.1,
                warm_start=warm,
            )
