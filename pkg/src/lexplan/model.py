"""Data model for trajectory games with ordered preferences.

A Scenario bundles the agents (initial state, actuation bounds, preference
hierarchy, hard-constraint declarations), the road geometry and the horizon
configuration. Everything is immutable after construction and safe to share
across concurrent solves.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .costs import CostTerm, sum_terms_value
from .dynamics import AgentState, Decision, Trajectory


@dataclass(frozen=True)
class PreferenceLevel:
    """One rung of the preference hierarchy: index 1 is the highest priority.

    y_star is the recorded optimum of this level's cost; it is None on scenario
    templates and only set on records produced by a solve.
    """

    index: int
    terms: tuple
    y_star: float | None = None

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"level index must be >= 1, got {self.index}")
        if not all(isinstance(t, CostTerm) for t in self.terms):
            raise TypeError("level terms must be CostTerm instances")

    def cost(self, window: Trajectory) -> float:
        return sum_terms_value(self.terms, window.states, window.controls)


@dataclass(frozen=True)
class PreferenceRelation:
    """Ordered list of preference levels, indices 1..K."""

    levels: tuple

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ValueError("a preference relation needs at least one level")
        indices = [lvl.index for lvl in self.levels]
        if indices != list(range(1, len(self.levels) + 1)):
            raise ValueError(f"level indices must be 1..K in order, got {indices}")

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class ControlBounds:
    """Box bounds on (accel, yaw_rate)."""

    accel: tuple
    yaw_rate: tuple

    def __post_init__(self):
        for lo, hi in (self.accel, self.yaw_rate):
            if not lo < hi:
                raise ValueError(f"invalid control bound ({lo}, {hi})")

    def lower(self) -> np.ndarray:
        return np.array([self.accel[0], self.yaw_rate[0]])

    def upper(self) -> np.ndarray:
        return np.array([self.accel[1], self.yaw_rate[1]])


@dataclass(frozen=True)
class PedestrianDisc:
    """Static keep-out disc: vehicle discs must stay outside it."""

    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class RoadGeometry:
    """Straight road along +x: symmetric corridor |y| <= half_width with lane centerlines."""

    lane_centers: tuple
    lane_width: float
    pedestrians: tuple = ()

    def __post_init__(self):
        if self.lane_width <= 0:
            raise ValueError("lane width must be positive")
        if len(self.lane_centers) < 1:
            raise ValueError("at least one lane required")

    @property
    def half_width(self) -> float:
        return 0.5 * self.lane_width * len(self.lane_centers)

    def pedestrian_array(self) -> np.ndarray:
        """Rows (x, y, radius); shape (P, 3)."""
        return np.array([[p.x, p.y, p.radius] for p in self.pedestrians]).reshape(-1, 3)


@dataclass(frozen=True)
class ConstraintSet:
    """Hard-constraint declarations for one agent.

    The private inequalities realize the declarations against the road geometry;
    the shared inequalities are the pairwise collision constraints. Equality
    blocks (dynamics, initial state) are contributed by the transcription.
    """

    hard_road: bool = False
    hard_pedestrians: bool = False
    forward_only: bool = True

    def private_eq(self, X, U, agent, road) -> np.ndarray:
        return np.zeros(0)

    def private_ineq(self, X, U, agent, road) -> np.ndarray:
        rows = []
        if self.hard_road:
            margin = road.half_width - agent.radius
            rows.append(margin - X[:, 1])
            rows.append(X[:, 1] + margin)
        if self.hard_pedestrians:
            discs = road.pedestrian_array()
            for px, py, pr in discs:
                d2 = (X[:, 0] - px) ** 2 + (X[:, 1] - py) ** 2
                rows.append(d2 - (agent.radius + pr) ** 2)
        if self.forward_only:
            rows.append(X[:, 3])
        if not rows:
            return np.zeros(0)
        return np.concatenate(rows)

    def shared_eq(self, joint_positions, radii) -> np.ndarray:
        return np.zeros(0)

    def shared_ineq(self, joint_positions, radii) -> np.ndarray:
        return _pairwise_collision(joint_positions, radii)


@dataclass(frozen=True)
class AgentSpec:
    """One agent: identity, initial state, footprint, actuation bounds and preferences.

    params carries scenario-specific parameters (target speed, speed limit, goal
    lane) for auditability; the fixed opponent trajectories join them at solve
    time through BestResponseProblem.
    """

    id: int
    initial_state: AgentState
    radius: float
    control_bounds: ControlBounds
    preferences: PreferenceRelation
    constraints: ConstraintSet = ConstraintSet()
    params: tuple = ()

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("agent radius must be positive")


@dataclass(frozen=True)
class GameConfig:
    """Horizon bookkeeping: game length T_g, window T, turn length T_l, IBR cap L."""

    t_game: int
    t_window: int
    t_turn: int
    max_rounds: int
    epsilon: float
    dt: float
    padding_policy: str = "null_action"

    def __post_init__(self):
        if not (0 < self.t_turn <= self.t_window <= self.t_game):
            raise ValueError(
                f"need 0 < T_l <= T <= T_g, got T_l={self.t_turn}, T={self.t_window}, T_g={self.t_game}"
            )
        if self.max_rounds < 1:
            raise ValueError("max IBR iterations must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.padding_policy not in ("null_action", "repeat_last"):
            raise ValueError(f"unknown padding policy {self.padding_policy!r}")


@dataclass
class Scenario:
    """A complete game description. Treated as immutable after construction."""

    agents: list
    road: RoadGeometry
    config: GameConfig
    name: str = "scenario"

    def __post_init__(self):
        if len(self.agents) < 1:
            raise ValueError("scenario needs at least one agent")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"agent ids must be unique, got {ids}")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def agent_by_id(self, agent_id: int) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def radii(self) -> np.ndarray:
        return np.array([a.radius for a in self.agents])


def _pairwise_collision(positions, radii) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    radii = np.asarray(radii, dtype=float)
    rows = []
    for i, j in itertools.combinations(range(len(radii)), 2):
        d2 = float(np.sum((positions[i] - positions[j]) ** 2))
        rows.append(d2 - (radii[i] + radii[j]) ** 2)
    return np.array(rows)


def collision_inequalities(joint, radii=None) -> np.ndarray:
    """Pairwise separation margins ||p_i - p_j||^2 - (r_i + r_j)^2 at one time step.

    joint is a list of Decision (or states); radii defaults to 1 for each agent
    when not given. Ordered over unordered pairs (i, j) with i < j.
    """
    positions = []
    for entry in joint:
        state = entry.state if isinstance(entry, Decision) else entry
        positions.append([state.px, state.py])
    if len(positions) < 2:
        raise ValueError("collision inequalities need at least two agents")
    if radii is None:
        radii = np.ones(len(positions))
    return _pairwise_collision(np.array(positions), radii)


def road_inequalities(decision: Decision, road: RoadGeometry, radius: float) -> np.ndarray:
    """Signed margins: [corridor top, corridor bottom, one entry per pedestrian disc].

    All entries >= 0 iff the agent's disc lies inside the corridor and outside
    every keep-out disc. Corridor entries are in meters, pedestrian entries in
    squared meters (same convention as collision_inequalities).
    """
    state = decision.state if isinstance(decision, Decision) else decision
    margin = road.half_width - radius
    rows = [margin - state.py, state.py + margin]
    for px, py, pr in road.pedestrian_array():
        d2 = (state.px - px) ** 2 + (state.py - py) ** 2
        rows.append(d2 - (radius + pr) ** 2)
    return np.array(rows)


def evaluate_level_cost(level: PreferenceLevel, window: Trajectory, theta=None) -> float:
    """Sum the level's cost terms over the window. theta is accepted for signature
    parity with parametrized costs; the built-in templates bind their parameters
    at construction."""
    value = level.cost(window)
    if not np.isfinite(value):
        raise ArithmeticError(f"non-finite level cost {value} at level {level.index}")
    return value
