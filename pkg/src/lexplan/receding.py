"""Receding-horizon outer loop: measure, solve a stage, execute the turn, recede."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import AgentState, ControlInput, Trajectory, step
from .ibr import JointStrategy, StageError, StageMetrics, ibr_solve
from .lexicographic import SolverOptions
from .model import Scenario


@dataclass
class GameRun:
    """A completed game: executed per-agent trajectories of length T_g plus per-stage audit data."""

    executed: list  # per-agent Trajectory, scenario agent order
    stage_metrics: list
    stage_solutions: list
    agent_ids: list = field(default_factory=list)

    @property
    def n_stages(self) -> int:
        return len(self.stage_solutions)


class GameRunError(RuntimeError):
    """A stage failed; carries the partial run for diagnosis."""

    def __init__(self, message: str, partial: GameRun):
        super().__init__(message)
        self.partial = partial


def advance(states: list, stage: JointStrategy, t_turn: int, dt: float) -> list:
    """Evolve every agent t_turn steps through the first t_turn stage controls."""
    if t_turn < 1:
        raise ValueError("turn length must be >= 1")
    out = []
    for state, trajectory in zip(states, stage.trajectories):
        for k in range(t_turn):
            state = step(state, ControlInput.from_array(trajectory.controls[k]), dt)
        out.append(state)
    return out


def run_game(
    scenario: Scenario,
    options: SolverOptions | None = None,
    mode: str = "gauss_seidel",
    warm_start: bool = True,
    stage_observer=None,
) -> GameRun:
    """Play the full game: ceil(T_g / T_l) stages, executing the first T_l decisions
    of each stage solution (the final stage is truncated to the remaining steps).

    stage_observer, when given, is called as
    observer(stage_index, stage_time, strategy, measured_states, metrics)
    after each stage solve and before the states are advanced.
    """
    config = scenario.config
    states = [agent.initial_state for agent in scenario.agents]
    executed_states = [[] for _ in scenario.agents]
    executed_controls = [[] for _ in scenario.agents]
    stage_metrics: list[StageMetrics] = []
    stage_solutions: list[JointStrategy] = []
    prev: JointStrategy | None = None
    duals_cache: dict = {}
    t = 0
    stage_index = 0
    while t < config.t_game:
        try:
            strategy, metrics = ibr_solve(
                prev,
                states,
                scenario,
                options,
                mode=mode,
                stage_time=t,
                warm_start=warm_start,
                duals_cache=duals_cache,
            )
        except StageError as err:
            partial = _assemble(scenario, executed_states, executed_controls, stage_metrics, stage_solutions)
            raise GameRunError(f"stage at t={t} failed: {err}", partial) from err
        if stage_observer is not None:
            stage_observer(stage_index, t, strategy, states, metrics)
        n_exec = min(config.t_turn, config.t_game - t)
        for idx in range(scenario.n_agents):
            executed_states[idx].append(strategy.trajectories[idx].states[:n_exec])
            executed_controls[idx].append(strategy.trajectories[idx].controls[:n_exec])
        states = advance(states, strategy, n_exec, config.dt)
        stage_metrics.append(metrics)
        stage_solutions.append(strategy)
        prev = strategy
        t += n_exec
        stage_index += 1
    return _assemble(scenario, executed_states, executed_controls, stage_metrics, stage_solutions)


def _assemble(scenario, executed_states, executed_controls, stage_metrics, stage_solutions) -> GameRun:
    executed = []
    for idx in range(scenario.n_agents):
        if executed_states[idx]:
            states = np.concatenate(executed_states[idx], axis=0)
            controls = np.concatenate(executed_controls[idx], axis=0)
        else:
            states = np.zeros((0, 4))
            controls = np.zeros((0, 2))
        executed.append(Trajectory(states, controls))
    return GameRun(
        executed=executed,
        stage_metrics=stage_metrics,
        stage_solutions=stage_solutions,
        agent_ids=[a.id for a in scenario.agents],
    )


def expected_stage_count(config) -> int:
    return math.ceil(config.t_game / config.t_turn)
