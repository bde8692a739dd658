"""One decision-making stage: shift-and-pad prediction, then best-response rounds.

Each stage builds an initial joint guess by shifting the previous stage's
solutions forward by the turn length and padding the controls, then runs
Gauss-Seidel rounds of single-agent lexicographic solves until the mean
absolute change of the joint strategy falls below epsilon or the round cap L
is reached.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import CONTROL_DIM, AgentState, Trajectory
from .lexicographic import (
    BestResponseProblem,
    FixedOpponent,
    LevelInfeasibleError,
    SolverOptions,
    build_level_program,
    solve_lexicographic,
)
from .model import Scenario
from .nlp import kkt_residual


@dataclass
class JointStrategy:
    """Per-agent window trajectories (scenario agent order) for one stage at time t."""

    trajectories: list
    stage_time: int

    def __post_init__(self):
        lengths = {len(t) for t in self.trajectories}
        if len(lengths) > 1:
            raise ValueError(f"trajectories must share one window length, got {lengths}")

    def copy(self) -> "JointStrategy":
        return JointStrategy([t.copy() for t in self.trajectories], self.stage_time)

    def stacked(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([t.states, t.controls], axis=1).reshape(-1) for t in self.trajectories]
        )


@dataclass
class StageMetrics:
    iterations_used: int
    improvements: list
    solve_time_s: float
    nlp_iterations: list  # [agent][level] inner iteration counts, summed over rounds
    degraded_agents: list = field(default_factory=list)
    solutions: list = field(default_factory=list)  # last-round LexiSolution per agent


class StageError(RuntimeError):
    """No agent produced a feasible best response in the first round."""


def shift_and_pad(prev: Trajectory, t_turn: int, policy: str) -> np.ndarray:
    """Controls for the next window: drop the first t_turn, pad t_turn at the end.

    Padding is zeros under 'null_action' and copies of the final retained
    control under 'repeat_last' (zeros when nothing is retained).
    """
    T = len(prev)
    if not 0 < t_turn <= T:
        raise ValueError(f"turn length {t_turn} out of range for window {T}")
    kept = prev.controls[t_turn:]
    if policy == "null_action" or kept.shape[0] == 0:
        pad = np.zeros((t_turn, CONTROL_DIM))
    elif policy == "repeat_last":
        pad = np.tile(kept[-1], (t_turn, 1))
    else:
        raise ValueError(f"unknown padding policy {policy!r}")
    return np.concatenate([kept, pad], axis=0)


def predict_initial(
    prev_joint: JointStrategy | None, measured: list, scenario: Scenario, stage_time: int
) -> JointStrategy:
    """Initial joint guess: evolve each measured state through the shifted-and-padded
    controls of the previous stage (all-padding controls on the first stage)."""
    config = scenario.config
    T = config.t_window
    trajectories = []
    for idx, agent in enumerate(scenario.agents):
        if prev_joint is None:
            controls = np.zeros((T, CONTROL_DIM))
        else:
            controls = shift_and_pad(prev_joint.trajectories[idx], config.t_turn, config.padding_policy)
        trajectories.append(Trajectory.from_rollout(measured[idx], controls, config.dt))
    return JointStrategy(trajectories, stage_time)


def improvement(prev: JointStrategy, next_strategy: JointStrategy) -> float:
    """Mean absolute change over all stacked decision variables of the joint strategy."""
    a = prev.stacked()
    b = next_strategy.stacked()
    if a.shape != b.shape:
        raise ValueError(f"strategy shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def _build_problem(scenario, idx, trajectories, measured, stage_time, warm_duals):
    agent = scenario.agents[idx]
    opponents = [
        FixedOpponent(other.id, other.radius, trajectories[j].positions.copy())
        for j, other in enumerate(scenario.agents)
        if j != idx
    ]
    return BestResponseProblem(
        agent=agent,
        window_start=stage_time,
        measured_state=measured[idx],
        opponents=opponents,
        road=scenario.road,
        t_window=scenario.config.t_window,
        dt=scenario.config.dt,
        warm_start=trajectories[idx],
        warm_duals=warm_duals or {},
    )


def best_response_round(
    current: JointStrategy,
    scenario: Scenario,
    options: SolverOptions | None = None,
    duals_cache: dict | None = None,
    mode: str = "gauss_seidel",
    measured: list | None = None,
):
    """One sweep of per-agent lexicographic best responses in ascending agent id.

    Gauss-Seidel (the default) commits each response immediately so later agents
    see it; 'jacobi' solves every agent against the incoming strategy and
    commits at the end. Returns (next strategy, round info).
    """
    if mode not in ("gauss_seidel", "jacobi"):
        raise ValueError(f"unknown round mode {mode!r}")
    if measured is None:
        measured = [AgentState.from_array(t.states[0]) for t in current.trajectories]
    order = sorted(range(len(scenario.agents)), key=lambda i: scenario.agents[i].id)
    working = [t.copy() for t in current.trajectories]
    frozen = [t.copy() for t in current.trajectories] if mode == "jacobi" else None
    info = {"solutions": [None] * len(working), "degraded": [], "iterations": []}
    for idx in order:
        source = frozen if mode == "jacobi" else working
        warm = duals_cache.get(scenario.agents[idx].id) if duals_cache is not None else None
        problem = _build_problem(scenario, idx, source, measured, current.stage_time, warm)
        try:
            solution = solve_lexicographic(problem, options)
        except LevelInfeasibleError:
            info["degraded"].append(scenario.agents[idx].id)
            continue
        working[idx] = solution.trajectory
        info["solutions"][idx] = solution
        if duals_cache is not None:
            duals_cache[scenario.agents[idx].id] = solution.duals
    return JointStrategy(working, current.stage_time), info


def ibr_solve(
    prev_joint: JointStrategy | None,
    measured: list,
    scenario: Scenario,
    options: SolverOptions | None = None,
    mode: str = "gauss_seidel",
    stage_time: int = 0,
    warm_start: bool = True,
    duals_cache: dict | None = None,
):
    """Solve one stage: predict, then up to L best-response rounds with an early
    break once the joint improvement drops below epsilon.

    duals_cache, when passed, warm-starts each agent's level multipliers and is
    updated in place (the row structure of every level program is constant for
    a fixed scenario, so multipliers carry across rounds and stages).

    Returns (JointStrategy, StageMetrics). Raises StageError when no agent is
    feasible in the first round.
    """
    config = scenario.config
    t0 = time.perf_counter()
    current = predict_initial(prev_joint if warm_start else None, measured, scenario, stage_time)
    improvements: list[float] = []
    if duals_cache is None:
        duals_cache = {}
    n_agents = len(scenario.agents)
    nlp_iterations = [
        [0] * len(agent.preferences) for agent in scenario.agents
    ]
    last_info = None
    rounds = 0
    for _ in range(config.max_rounds):
        next_strategy, info = best_response_round(
            current, scenario, options, duals_cache, mode, measured
        )
        rounds += 1
        if len(info["degraded"]) == n_agents and rounds == 1:
            raise StageError(f"all agents infeasible at stage t={stage_time}")
        for idx, solution in enumerate(info["solutions"]):
            if solution is not None:
                for k, status in enumerate(solution.statuses):
                    nlp_iterations[idx][k] += status.inner_iterations
        improvements.append(improvement(current, next_strategy))
        current = next_strategy
        last_info = info
        if improvements[-1] < config.epsilon:
            break
    metrics = StageMetrics(
        iterations_used=rounds,
        improvements=improvements,
        solve_time_s=time.perf_counter() - t0,
        nlp_iterations=nlp_iterations,
        degraded_agents=list(last_info["degraded"]) if last_info else [],
        solutions=list(last_info["solutions"]) if last_info else [],
    )
    return current, metrics


def gne_certificate(
    strategy: JointStrategy,
    scenario: Scenario,
    metrics: StageMetrics,
    measured: list | None = None,
) -> float:
    """Max per-agent per-level KKT residual of the returned joint strategy, with
    every opponent fixed at the final strategy (approximate-GNE certificate)."""
    if measured is None:
        measured = [AgentState.from_array(t.states[0]) for t in strategy.trajectories]
    worst = 0.0
    for idx, agent in enumerate(scenario.agents):
        solution = metrics.solutions[idx] if idx < len(metrics.solutions) else None
        if solution is None:
            continue
        problem = _build_problem(scenario, idx, strategy.trajectories, measured, strategy.stage_time, None)
        from .lexicographic import WindowTranscription

        tr = WindowTranscription(problem)
        z = tr.pack(solution.trajectory)
        for k in range(1, len(agent.preferences) + 1):
            program = build_level_program(problem, k, solution.level_optima[: k - 1], tr)
            residual = kkt_residual(program, z, solution.duals[k])
            worst = max(worst, residual)
    return worst
