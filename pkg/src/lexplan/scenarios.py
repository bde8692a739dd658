"""Built-in traffic scenarios and the Monte Carlo perturbation sampler.

Three constructions: a highway and a city variant of the same three-agent road
(two cars in opposite lanes plus an ambulance pushing through), differing only
in preference relations and road/pedestrian constraint declarations, and a
same-direction overtaking scenario used by the benchmark harness.

Geometry, horizons and perturbation halfwidths are desk-scale defaults; all are
overridable through scenario files or with_config().
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .costs import (
    ControlEffort,
    LaneDeviation,
    PedestrianClearance,
    ProgressShortfall,
    RoadBoundary,
    SpeedLimitExcess,
)
from .dynamics import AgentState
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
    road_inequalities,
)

LANE_WIDTH = 4.0
LANE_CENTERS = (-2.0, 2.0)
CAR_RADIUS = 1.2
CONTROL_BOX = ControlBounds(accel=(-4.0, 3.0), yaw_rate=(-2.5, 2.5))

CAR_SPEED = 5.0
CAR_LIMIT = 6.0
AMBULANCE_PACE = 8.0
AMBULANCE_LIMIT = 12.0

PED_BUFFER = 0.3  # extra soft clearance beyond the hard keep-out radius


@dataclass(frozen=True)
class PerturbationSpec:
    """Uniform perturbation halfwidths applied to initial positions and speeds."""

    position_halfwidth: float = 0.5
    speed_halfwidth: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.position_halfwidth < 0 or self.speed_halfwidth < 0:
            raise ValueError("halfwidths must be >= 0")


def _effort():
    return ControlEffort(accel_weight=0.01, yaw_weight=0.05)


def _comfort_terms(lane_y, heading, road, radius):
    return (
        LaneDeviation(weight=1.0, lane_y=lane_y, heading_weight=0.5, lane_heading=heading),
        RoadBoundary(weight=0.5, half_width=road.half_width, radius=radius),
        _effort(),
    )


def _highway_preferences(limit, pace, lane_y, heading, road, radius):
    return PreferenceRelation(
        (
            PreferenceLevel(1, (SpeedLimitExcess(weight=1.0, limit=limit),)),
            PreferenceLevel(2, (ProgressShortfall(weight=1.0, pace=pace),)),
            PreferenceLevel(3, _comfort_terms(lane_y, heading, road, radius)),
        )
    )


def _city_preferences(limit, pace, lane_y, heading, road, radius):
    soft_discs = tuple(
        (p.x, p.y, p.radius + radius + PED_BUFFER) for p in road.pedestrians
    )
    safety = (
        SpeedLimitExcess(weight=1.0, limit=limit),
        RoadBoundary(weight=5.0, half_width=road.half_width, radius=radius),
        PedestrianClearance(weight=5.0, discs=soft_discs),
    )
    return PreferenceRelation(
        (
            PreferenceLevel(1, safety),
            PreferenceLevel(2, (ProgressShortfall(weight=1.0, pace=pace),)),
            PreferenceLevel(
                3,
                (
                    LaneDeviation(weight=1.0, lane_y=lane_y, heading_weight=0.5, lane_heading=heading),
                    _effort(),
                ),
            ),
        )
    )


def _road(pedestrians=()) -> RoadGeometry:
    return RoadGeometry(lane_centers=LANE_CENTERS, lane_width=LANE_WIDTH, pedestrians=pedestrians)


_ROAD_AGENTS = (
    # (id, x, y, heading, speed, lane_y, limit, pace); the ambulance tracks the
    # left edge of its lane, which breaks the head-to-tail symmetry of the
    # collision constraint and gives the yielding car a definite escape side
    (1, 0.0, -2.0, 0.0, CAR_SPEED, -2.0, CAR_LIMIT, CAR_SPEED),
    (2, 34.0, 2.0, math.pi, CAR_SPEED, 2.0, CAR_LIMIT, CAR_SPEED),
    (3, -10.0, -1.8, 0.0, AMBULANCE_PACE, -1.8, AMBULANCE_LIMIT, AMBULANCE_PACE),
)

_CITY_PEDESTRIANS = (
    PedestrianDisc(8.0, -4.8, 0.6),
    PedestrianDisc(14.0, -4.8, 0.6),
    PedestrianDisc(20.0, -4.8, 0.6),
    PedestrianDisc(14.0, 4.8, 0.6),
)


def _road_config() -> GameConfig:
    # Fig.4-style runs use a single IBR iteration per stage
    return GameConfig(
        t_game=60, t_window=10, t_turn=2, max_rounds=1, epsilon=1e-3, dt=0.1, padding_policy="null_action"
    )


def build_highway() -> Scenario:
    """Two cars in opposite lanes and an ambulance pushing through its own lane.

    Road boundaries are only soft preference terms at the lowest level, so
    yielding off the roadway is preferred over braking.
    """
    road = _road()
    agents = []
    for agent_id, x, y, heading, speed, lane_y, limit, pace in _ROAD_AGENTS:
        agents.append(
            AgentSpec(
                id=agent_id,
                initial_state=AgentState(x, y, heading, speed),
                radius=CAR_RADIUS,
                control_bounds=CONTROL_BOX,
                preferences=_highway_preferences(limit, pace, lane_y, heading, road, CAR_RADIUS),
                constraints=ConstraintSet(hard_road=False, hard_pedestrians=False, forward_only=True),
                params=(lane_y, limit, pace),
            )
        )
    return Scenario(agents=agents, road=road, config=_road_config(), name="highway")


def build_city() -> Scenario:
    """Same geometry and initial states as the highway, plus pedestrian keep-out
    discs on the sidewalks; road corridor and pedestrian clearance are hard
    constraints and ranked above progress."""
    road = _road(_CITY_PEDESTRIANS)
    agents = []
    for agent_id, x, y, heading, speed, lane_y, limit, pace in _ROAD_AGENTS:
        agents.append(
            AgentSpec(
                id=agent_id,
                initial_state=AgentState(x, y, heading, speed),
                radius=CAR_RADIUS,
                control_bounds=CONTROL_BOX,
                preferences=_city_preferences(limit, pace, lane_y, heading, road, CAR_RADIUS),
                constraints=ConstraintSet(hard_road=True, hard_pedestrians=True, forward_only=True),
                params=(lane_y, limit, pace),
            )
        )
    return Scenario(agents=agents, road=road, config=_road_config(), name="city")


_OVERTAKING_AGENTS = (
    (1, 0.0, -2.0, 0.0, 5.0, -2.0, CAR_LIMIT, 5.0),
    (2, 6.0, 2.0, 0.0, 5.0, 2.0, CAR_LIMIT, 5.0),
    (3, -5.0, -1.8, 0.0, 7.0, -1.8, AMBULANCE_LIMIT, AMBULANCE_PACE),
)

OVERTAKING_RADIUS = 1.0


def _overtaking_preferences(K, limit, pace, lane_y, road):
    comfort = (
        LaneDeviation(weight=1.0, lane_y=lane_y, heading_weight=0.5, lane_heading=0.0),
        RoadBoundary(weight=0.5, half_width=road.half_width, radius=OVERTAKING_RADIUS),
        _effort(),
    )
    if K == 2:
        return PreferenceRelation(
            (
                PreferenceLevel(1, (SpeedLimitExcess(weight=1.0, limit=limit),)),
                PreferenceLevel(2, (ProgressShortfall(weight=1.0, pace=pace),) + comfort),
            )
        )
    return PreferenceRelation(
        (
            PreferenceLevel(1, (SpeedLimitExcess(weight=1.0, limit=limit),)),
            PreferenceLevel(2, (ProgressShortfall(weight=1.0, pace=pace),)),
            PreferenceLevel(3, comfort),
        )
    )


def build_overtaking(K: int = 2) -> Scenario:
    """Two cars in parallel same-direction lanes with an ambulance overtaking;
    preference templates instantiated to depth K for every player."""
    if K not in (2, 3):
        raise ValueError(f"K must be 2 or 3, got {K}")
    road = _road()
    agents = []
    for agent_id, x, y, heading, speed, lane_y, limit, pace in _OVERTAKING_AGENTS:
        agents.append(
            AgentSpec(
                id=agent_id,
                initial_state=AgentState(x, y, heading, speed),
                radius=OVERTAKING_RADIUS,
                control_bounds=CONTROL_BOX,
                preferences=_overtaking_preferences(K, limit, pace, lane_y, road),
                constraints=ConstraintSet(hard_road=False, hard_pedestrians=False, forward_only=True),
                params=(lane_y, limit, pace),
            )
        )
    config = GameConfig(
        t_game=24, t_window=10, t_turn=3, max_rounds=10, epsilon=5e-5, dt=0.1, padding_policy="null_action"
    )
    return Scenario(agents=agents, road=road, config=config, name=f"overtaking-K{K}")


BUILTIN_SCENARIOS = {
    "highway": build_highway,
    "city": build_city,
    "overtaking": build_overtaking,
}


def with_config(scenario: Scenario, **overrides) -> Scenario:
    """Copy of the scenario with GameConfig fields replaced."""
    config = dataclasses.replace(scenario.config, **overrides)
    return Scenario(agents=scenario.agents, road=scenario.road, config=config, name=scenario.name)


def initial_margins(scenario: Scenario) -> float:
    """Smallest constraint margin at t=0: pairwise collision entries plus road and
    pedestrian entries for agents declaring those constraints hard."""
    states = [a.initial_state for a in scenario.agents]
    margins = []
    if scenario.n_agents >= 2:
        margins.extend(collision_inequalities(states, scenario.radii()))
    for agent in scenario.agents:
        rows = road_inequalities(agent.initial_state, scenario.road, agent.radius)
        if agent.constraints.hard_road:
            margins.extend(rows[:2])
        if agent.constraints.hard_pedestrians:
            margins.extend(rows[2:])
        if agent.constraints.forward_only:
            margins.append(agent.initial_state.speed)
    return float(min(margins)) if margins else float("inf")


def perturb(scenario: Scenario, spec: PerturbationSpec) -> Scenario:
    """Scenario copy with uniform initial-state offsets drawn deterministically
    from the seed. Draws are rejected and resampled until the perturbed scenario
    is initially feasible with positive margin."""
    rng = np.random.default_rng(spec.seed)
    for _ in range(1000):
        agents = []
        for agent in scenario.agents:
            dx = rng.uniform(-spec.position_halfwidth, spec.position_halfwidth)
            dy = rng.uniform(-spec.position_halfwidth, spec.position_halfwidth)
            dv = rng.uniform(-spec.speed_halfwidth, spec.speed_halfwidth)
            state = agent.initial_state
            agents.append(
                dataclasses.replace(
                    agent,
                    initial_state=AgentState(state.px + dx, state.py + dy, state.heading, state.speed + dv),
                )
            )
        candidate = Scenario(agents=agents, road=scenario.road, config=scenario.config, name=scenario.name)
        if initial_margins(candidate) > 0.0:
            return candidate
    raise RuntimeError("could not sample an initially feasible perturbation in 1000 draws")
