"""Benchmark harness, brute-force oracle and CSV export.

The benchmark reproduces the structure of the efficiency study: Monte Carlo
perturbations of the overtaking scenario over a (K, L) grid, measuring mean
stage solve time and the L1 distance between each stage's returned strategy
and what one more best-response round would produce. The fixed-iteration
protocol disables the early break by running with a vanishing epsilon.

The brute-force oracle enumerates joint discretized control sequences on tiny
instances and returns a grid equilibrium by exhaustive lexicographic best
response -- the desk-scale stand-in used to cross-check the IBR path.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .costs import ControlEffort, LaneDeviation, ProgressShortfall, SpeedLimitExcess
from .dynamics import AgentState, Trajectory, wrap_angle
from .ibr import JointStrategy, best_response_round, improvement
from .lexicographic import SolverOptions
from .model import (
    AgentSpec,
    ConstraintSet,
    ControlBounds,
    GameConfig,
    PreferenceLevel,
    PreferenceRelation,
    RoadGeometry,
    Scenario,
)
from .receding import GameRun, run_game
from .scenarios import PerturbationSpec, build_overtaking, perturb, with_config

BENCH_EPSILON = 1e-15  # disables the early break: stages always run all L rounds


@dataclass
class BenchmarkRecord:
    scenario: str
    seed: int
    K: int
    L: int
    t_solve_mean: float
    l1_next_iter: float
    stages: int
    converged_fraction: float


@dataclass
class BenchmarkGrid:
    k_values: tuple
    l_values: tuple
    runs: int
    seed: int = 0

    def __post_init__(self):
        if not self.k_values or not self.l_values or self.runs < 1:
            raise ValueError("benchmark grid must have K values, L values and runs >= 1")


def l1_next_iteration_distance(strategy, measured, scenario, options=None, duals=None) -> float:
    """Run one extra best-response round on a returned stage strategy and report
    the improvement it would bring. NaN when the extra round is fully infeasible."""
    duals_cache = dict(duals) if duals else {}
    extra, info = best_response_round(strategy, scenario, options, duals_cache, "gauss_seidel", measured)
    if len(info["degraded"]) == len(scenario.agents):
        return float("nan")
    return improvement(strategy, extra)


def benchmark_run(K: int, L: int, seed: int, options: SolverOptions | None = None, config_overrides: dict | None = None):
    """One seeded overtaking run at iteration cap L under the fixed-iteration
    protocol. Returns per-stage lists of solve times, next-iteration distances
    and early-break flags."""
    scenario = perturb(build_overtaking(K), PerturbationSpec(seed=seed))
    overrides = {"max_rounds": L, "epsilon": BENCH_EPSILON}
    if config_overrides:
        overrides.update(config_overrides)
    scenario = with_config(scenario, **overrides)
    per_stage = {"t_solve": [], "l1": [], "converged": []}

    def observer(stage_index, stage_time, strategy, measured, metrics):
        per_stage["t_solve"].append(metrics.solve_time_s)
        duals = {
            scenario.agents[idx].id: sol.duals
            for idx, sol in enumerate(metrics.solutions)
            if sol is not None
        }
        per_stage["l1"].append(
            l1_next_iteration_distance(strategy, measured, scenario, options, duals)
        )
        per_stage["converged"].append(metrics.improvements[-1] < scenario.config.epsilon)

    run_game(scenario, options, stage_observer=observer)
    return per_stage


def _benchmark_task(args):
    K, L, seed, overrides = args
    per_stage = benchmark_run(K, L, seed, config_overrides=overrides)
    return (K, L, seed, per_stage)


def run_benchmark(
    grid: BenchmarkGrid,
    workers: int = 1,
    config_overrides: dict | None = None,
) -> list:
    """Run the full (K, L, seed) grid and aggregate one BenchmarkRecord per (K, L)
    cell, sorted by (K, L). Distances are deterministic given seeds; timings are
    only meaningful with workers=1."""
    tasks = [
        (K, L, grid.seed + r, config_overrides)
        for K in grid.k_values
        for L in grid.l_values
        for r in range(grid.runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_benchmark_task, tasks))
    else:
        results = [_benchmark_task(t) for t in tasks]

    cells: dict = {}
    for K, L, seed, per_stage in results:
        cells.setdefault((K, L), []).append((seed, per_stage))
    records = []
    for (K, L), runs in sorted(cells.items()):
        t_solve = np.concatenate([r["t_solve"] for _, r in runs])
        l1 = np.concatenate([r["l1"] for _, r in runs])
        converged = np.concatenate([r["converged"] for _, r in runs])
        records.append(
            BenchmarkRecord(
                scenario=f"overtaking-K{K}",
                seed=grid.seed,
                K=K,
                L=L,
                t_solve_mean=float(np.mean(t_solve)),
                l1_next_iter=float(np.nanmean(l1)),
                stages=int(len(t_solve)),
                converged_fraction=float(np.mean(converged)),
            )
        )
    return records


# -- brute-force oracle -----------------------------------------------------


@dataclass
class OracleResult:
    strategy: JointStrategy
    level_costs: list  # per agent, array of K level costs
    cell_tolerance: list  # per agent, array of K one-grid-cell cost variations


def make_tiny_scenario(seed: int = 0) -> Scenario:
    """A randomized two-agent, two-step, two-level instance small enough for
    exhaustive enumeration."""
    rng = np.random.default_rng(seed)
    road = RoadGeometry(lane_centers=(-2.0, 2.0), lane_width=4.0)
    bounds = ControlBounds(accel=(-3.0, 3.0), yaw_rate=(-1.0, 1.0))
    agents = []
    rows = (
        (1, 0.0, -1.0, -1.0),
        (2, 2.4 + rng.uniform(0.0, 1.0), 1.0, 1.0),
    )
    for agent_id, x, y, lane_y in rows:
        state = AgentState(
            x + rng.uniform(-0.3, 0.3), y + rng.uniform(-0.3, 0.3), 0.0, 3.0 + rng.uniform(-0.5, 0.5)
        )
        preferences = PreferenceRelation(
            (
                PreferenceLevel(1, (SpeedLimitExcess(weight=1.0, limit=4.0),)),
                PreferenceLevel(
                    2,
                    (
                        LaneDeviation(weight=1.0, lane_y=lane_y, heading_weight=0.5, lane_heading=0.0),
                        ProgressShortfall(weight=1.0, pace=3.5),
                        ControlEffort(accel_weight=0.05, yaw_weight=0.1),
                    ),
                ),
            )
        )
        agents.append(
            AgentSpec(
                id=agent_id,
                initial_state=state,
                radius=1.0,
                control_bounds=bounds,
                preferences=preferences,
                constraints=ConstraintSet(forward_only=True),
            )
        )
    config = GameConfig(
        t_game=2, t_window=2, t_turn=2, max_rounds=8, epsilon=1e-7, dt=0.1, padding_policy="null_action"
    )
    return Scenario(agents=agents, road=road, config=config, name=f"tiny-{seed}")


def _control_grid(agent: AgentSpec, points: int) -> np.ndarray:
    accel = np.linspace(*agent.control_bounds.accel, points)
    yaw = np.linspace(*agent.control_bounds.yaw_rate, points)
    return accel, yaw


def _enumerate_sequences(agent: AgentSpec, T: int, points: int, dt: float):
    """All discretized control sequences for one agent: digit matrix, control
    arrays (n, T, 2) and rolled-out states (n, T, 4)."""
    accel, yaw = _control_grid(agent, points)
    digits = np.array(list(itertools.product(range(points), repeat=2 * T)))  # (n, 2T)
    n = digits.shape[0]
    controls = np.empty((n, T, 2))
    controls[:, :, 0] = accel[digits[:, 0::2]]
    controls[:, :, 1] = yaw[digits[:, 1::2]]
    states = np.empty((n, T, 4))
    states[:, 0, :] = agent.initial_state.as_array()
    for t in range(T - 1):
        s = states[:, t, :]
        states[:, t + 1, 0] = s[:, 0] + dt * s[:, 3] * np.cos(s[:, 2])
        states[:, t + 1, 1] = s[:, 1] + dt * s[:, 3] * np.sin(s[:, 2])
        states[:, t + 1, 2] = np.vectorize(wrap_angle)(s[:, 2] + dt * controls[:, t, 1])
        states[:, t + 1, 3] = s[:, 3] + dt * controls[:, t, 0]
    return digits, controls, states


def _own_feasible(agent: AgentSpec, road, states: np.ndarray) -> np.ndarray:
    ok = np.ones(states.shape[0], dtype=bool)
    cons = agent.constraints
    if cons.forward_only:
        ok &= np.all(states[:, :, 3] >= -1e-12, axis=1)
    if cons.hard_road:
        margin = road.half_width - agent.radius
        ok &= np.all(np.abs(states[:, :, 1]) <= margin + 1e-12, axis=1)
    if cons.hard_pedestrians:
        for px, py, pr in road.pedestrian_array():
            d2 = (states[:, :, 0] - px) ** 2 + (states[:, :, 1] - py) ** 2
            ok &= np.all(d2 >= (agent.radius + pr) ** 2 - 1e-12, axis=1)
    return ok


def _level_cost_table(agent: AgentSpec, states, controls) -> np.ndarray:
    n = states.shape[0]
    K = len(agent.preferences)
    table = np.empty((n, K))
    for i in range(n):
        window = Trajectory(states[i], controls[i])
        for k, level in enumerate(agent.preferences.levels):
            table[i, k] = level.cost(window)
    return table


def _lex_best(table: np.ndarray, feasible: np.ndarray):
    """Indices of the lexicographically minimal cost rows among feasible ones."""
    idx = np.where(feasible)[0]
    if idx.size == 0:
        return np.array([], dtype=int)
    order = np.lexsort(tuple(table[idx, k] for k in range(table.shape[1] - 1, -1, -1)))
    best = table[idx[order[0]]]
    ties = idx[np.all(table[idx] == best, axis=1)]
    return ties


def brute_force_oracle(scenario: Scenario, points_per_dim: int = 3) -> OracleResult:
    """Exhaustive grid equilibrium for tiny instances (N <= 2, T <= 3, <= 5 grid
    points per control dimension): every returned strategy is a lexicographic
    best response on the grid to the other's returned strategy; colliding joints
    are excluded."""
    config = scenario.config
    T = config.t_window
    if scenario.n_agents > 2:
        raise ValueError("oracle supports at most 2 agents")
    if T > 3:
        raise ValueError("oracle supports windows up to T=3")
    if points_per_dim > 5:
        raise ValueError("oracle supports at most 5 grid points per control dimension")

    enums = [_enumerate_sequences(a, T, points_per_dim, config.dt) for a in scenario.agents]
    feasible_own = [
        _own_feasible(a, scenario.road, states) for a, (_, _, states) in zip(scenario.agents, enums)
    ]
    tables = [
        _level_cost_table(a, states, controls)
        for a, (_, controls, states) in zip(scenario.agents, enums)
    ]

    if scenario.n_agents == 1:
        ties = _lex_best(tables[0], feasible_own[0])
        if ties.size == 0:
            raise RuntimeError("no feasible control sequence on the grid")
        chosen = [int(ties[0])]
    else:
        a_states, b_states = enums[0][2], enums[1][2]
        clearance_sq = (scenario.agents[0].radius + scenario.agents[1].radius) ** 2
        diff = a_states[:, None, :, :2] - b_states[None, :, :, :2]  # (na, nb, T, 2)
        pair_ok = np.all(np.sum(diff**2, axis=3) >= clearance_sq - 1e-12, axis=2)
        pair_ok &= feasible_own[0][:, None]
        pair_ok &= feasible_own[1][None, :]
        if not pair_ok.any():
            raise RuntimeError("no feasible joint control sequence on the grid")

        na = tables[0].shape[0]
        nb = tables[1].shape[0]
        br_a = [frozenset(_lex_best(tables[0], pair_ok[:, j]).tolist()) for j in range(nb)]
        br_b = [frozenset(_lex_best(tables[1], pair_ok[i, :]).tolist()) for i in range(na)]
        chosen = None
        for i in range(na):
            if chosen is not None:
                break
            for j in range(nb):
                if pair_ok[i, j] and i in br_a[j] and j in br_b[i]:
                    chosen = [i, j]
                    break
        if chosen is None:
            raise RuntimeError("no grid equilibrium found")

    trajectories = []
    level_costs = []
    tolerances = []
    for agent_idx, seq_idx in enumerate(chosen):
        digits, controls, _states = enums[agent_idx]
        agent = scenario.agents[agent_idx]
        trajectories.append(Trajectory.from_rollout(agent.initial_state, controls[seq_idx], config.dt))
        level_costs.append(tables[agent_idx][seq_idx].copy())
        tolerances.append(
            _cell_tolerance(digits, tables[agent_idx], seq_idx, points_per_dim)
        )
    return OracleResult(
        strategy=JointStrategy(trajectories, 0),
        level_costs=level_costs,
        cell_tolerance=tolerances,
    )


def _cell_tolerance(digits, table, seq_idx, points) -> np.ndarray:
    """Cost variation across single-coordinate grid neighbors of a sequence."""
    base_digits = digits[seq_idx]
    base_cost = table[seq_idx]
    # digits enumerate in mixed-radix order: digit d contributes points^(n_digits-1-d)
    n_digits = base_digits.size
    weights = points ** np.arange(n_digits - 1, -1, -1)
    tol = np.zeros(table.shape[1])
    for d in range(n_digits):
        for delta in (-1, 1):
            value = base_digits[d] + delta
            if 0 <= value < points:
                neighbor = seq_idx + delta * weights[d]
                tol = np.maximum(tol, np.abs(table[neighbor] - base_cost))
    return tol


def lexicographically_ties_or_beats(candidate, reference, tolerance) -> bool:
    """candidate <=_lex reference, comparing level by level within tolerance."""
    for c, r, tol in zip(candidate, reference, tolerance):
        if c < r - tol:
            return True
        if c > r + tol:
            return False
    return True


def oracle_check(runs: int = 10, seed: int = 0, options: SolverOptions | None = None) -> list:
    """Compare IBR level costs against the brute-force oracle on randomized tiny
    instances. Returns one dict per instance with the comparison verdict."""
    results = []
    for r in range(runs):
        scenario = make_tiny_scenario(seed + r)
        oracle = brute_force_oracle(scenario)
        run = run_game(scenario, options)
        verdicts = []
        for idx, agent in enumerate(scenario.agents):
            window = run.executed[idx]
            ibr_costs = np.array([level.cost(window) for level in agent.preferences.levels])
            ok = lexicographically_ties_or_beats(
                ibr_costs, oracle.level_costs[idx], oracle.cell_tolerance[idx]
            )
            verdicts.append(
                {
                    "agent": agent.id,
                    "ok": bool(ok),
                    "ibr": ibr_costs.tolist(),
                    "oracle": oracle.level_costs[idx].tolist(),
                    "tolerance": oracle.cell_tolerance[idx].tolist(),
                }
            )
        results.append({"seed": seed + r, "ok": all(v["ok"] for v in verdicts), "agents": verdicts})
    return results


# -- CSV export ---------------------------------------------------------------


def _fmt(value: float) -> str:
    return f"{value:.17g}"


TRAJECTORY_HEADER = "t,agent,px,py,heading,speed,accel,yaw_rate"
METRICS_HEADER = "stage,iterations,improvement_last,t_solve_s"


def export_run(run: GameRun, path) -> tuple:
    """Write trajectory.csv (t-major, then agent id, 17 significant digits) and
    metrics.csv into the directory `path`; returns both file paths."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    t_game = len(run.executed[0]) if run.executed else 0
    order = np.argsort(run.agent_ids)
    lines = [TRAJECTORY_HEADER]
    for t in range(t_game):
        for idx in order:
            traj = run.executed[idx]
            x = traj.states[t]
            u = traj.controls[t]
            lines.append(
                ",".join(
                    [str(t), str(run.agent_ids[idx])]
                    + [_fmt(v) for v in (x[0], x[1], x[2], x[3], u[0], u[1])]
                )
            )
    traj_path = out / "trajectory.csv"
    traj_path.write_text("\n".join(lines) + "\n")

    lines = [METRICS_HEADER]
    for stage, metrics in enumerate(run.stage_metrics):
        lines.append(
            ",".join(
                [
                    str(stage),
                    str(metrics.iterations_used),
                    _fmt(metrics.improvements[-1]),
                    _fmt(metrics.solve_time_s),
                ]
            )
        )
    metrics_path = out / "metrics.csv"
    metrics_path.write_text("\n".join(lines) + "\n")
    return traj_path, metrics_path


def write_benchmark_csv(records, path) -> Path:
    path = Path(path)
    lines = ["scenario,seed,K,L,t_solve_mean,l1_next_iter,stages,converged_fraction"]
    for r in records:
        lines.append(
            f"{r.scenario},{r.seed},{r.K},{r.L},{_fmt(r.t_solve_mean)},{_fmt(r.l1_next_iter)},{r.stages},{_fmt(r.converged_fraction)}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path
