"""Receding-horizon trajectory games with ordered preferences, solved by
lexicographic iterated best response."""

from .dynamics import AgentState, ControlInput, Decision, Trajectory, rollout, step, wrap_angle
from .ibr import (
    JointStrategy,
    StageError,
    StageMetrics,
    best_response_round,
    gne_certificate,
    ibr_solve,
    improvement,
    predict_initial,
    shift_and_pad,
)
from .lexicographic import (
    BestResponseProblem,
    FixedOpponent,
    LevelInfeasibleError,
    LexiSolution,
    SolverOptions,
    build_level_program,
    solve_lexicographic,
)
from .model import (
    AgentSpec,
    ConstraintSet,
    ControlBounds,
    GameConfig,
    PedestrianDisc,
    PreferenceLevel,
    PreferenceRelation,
    RoadGeometry,
    Scenario,
    collision_inequalities,
    evaluate_level_cost,
    road_inequalities,
)
from .nlp import SmoothProgram, SolveResult, gradient, kkt_residual, minimize
from .receding import GameRun, GameRunError, advance, run_game
from .scenario_io import load_scenario, parse_scenario, scenario_to_dict, write_scenario
from .scenarios import (
    PerturbationSpec,
    build_city,
    build_highway,
    build_overtaking,
    initial_margins,
    perturb,
    with_config,
)

__version__ = "0.1.0"
