"""Scenario file format: strict-schema JSON.

Top level: {"name"?, "agents": [...], "road": {...}, "config": {...}}.
Config keys are the horizon symbols T_g, T, T_l, L plus epsilon, dt, padding.
Unknown keys are rejected at every nesting level so typos cannot silently
change a game.
"""

from __future__ import annotations

import json
from pathlib import Path

from .costs import term_from_config
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
)


class ScenarioFormatError(ValueError):
    pass


def _check_keys(mapping: dict, allowed: set, required: set, where: str):
    unknown = set(mapping) - allowed
    if unknown:
        raise ScenarioFormatError(f"unknown keys {sorted(unknown)} in {where}")
    missing = required - set(mapping)
    if missing:
        raise ScenarioFormatError(f"missing keys {sorted(missing)} in {where}")


def _parse_agent(entry: dict, where: str) -> AgentSpec:
    allowed = {"id", "initial_state", "radius", "control_bounds", "preference", "hard_constraints"}
    required = {"id", "initial_state", "radius", "control_bounds", "preference"}
    _check_keys(entry, allowed, required, where)

    state = entry["initial_state"]
    if len(state) != 4:
        raise ScenarioFormatError(f"initial_state must be [px, py, heading, speed] in {where}")
    bounds = entry["control_bounds"]
    _check_keys(bounds, {"accel", "yaw_rate"}, {"accel", "yaw_rate"}, f"{where}.control_bounds")

    levels = []
    for i, level_terms in enumerate(entry["preference"], start=1):
        try:
            terms = tuple(term_from_config(term) for term in level_terms)
        except ValueError as err:
            raise ScenarioFormatError(f"{where}.preference[{i - 1}]: {err}") from err
        levels.append(PreferenceLevel(i, terms))

    hard = dict(entry.get("hard_constraints", {}))
    _check_keys(hard, {"road", "pedestrians", "forward_only"}, set(), f"{where}.hard_constraints")
    constraints = ConstraintSet(
        hard_road=bool(hard.get("road", False)),
        hard_pedestrians=bool(hard.get("pedestrians", False)),
        forward_only=bool(hard.get("forward_only", True)),
    )
    return AgentSpec(
        id=int(entry["id"]),
        initial_state=AgentState(*(float(v) for v in state)),
        radius=float(entry["radius"]),
        control_bounds=ControlBounds(
            accel=tuple(float(v) for v in bounds["accel"]),
            yaw_rate=tuple(float(v) for v in bounds["yaw_rate"]),
        ),
        preferences=PreferenceRelation(tuple(levels)),
        constraints=constraints,
    )


def parse_scenario(data: dict) -> Scenario:
    _check_keys(data, {"name", "agents", "road", "config"}, {"agents", "road", "config"}, "scenario")

    road_data = data["road"]
    _check_keys(
        road_data, {"lane_centers", "lane_width", "pedestrians"}, {"lane_centers", "lane_width"}, "road"
    )
    pedestrians = []
    for i, ped in enumerate(road_data.get("pedestrians", [])):
        _check_keys(ped, {"x", "y", "radius"}, {"x", "y", "radius"}, f"road.pedestrians[{i}]")
        pedestrians.append(PedestrianDisc(float(ped["x"]), float(ped["y"]), float(ped["radius"])))
    road = RoadGeometry(
        lane_centers=tuple(float(v) for v in road_data["lane_centers"]),
        lane_width=float(road_data["lane_width"]),
        pedestrians=tuple(pedestrians),
    )

    config_data = data["config"]
    keys = {"T_g", "T", "T_l", "L", "epsilon", "dt", "padding"}
    _check_keys(config_data, keys, keys - {"padding"}, "config")
    config = GameConfig(
        t_game=int(config_data["T_g"]),
        t_window=int(config_data["T"]),
        t_turn=int(config_data["T_l"]),
        max_rounds=int(config_data["L"]),
        epsilon=float(config_data["epsilon"]),
        dt=float(config_data["dt"]),
        padding_policy=str(config_data.get("padding", "null_action")),
    )

    agents = [_parse_agent(entry, f"agents[{i}]") for i, entry in enumerate(data["agents"])]
    return Scenario(agents=agents, road=road, config=config, name=str(data.get("name", "scenario")))


def scenario_to_dict(scenario: Scenario) -> dict:
    agents = []
    for agent in scenario.agents:
        state = agent.initial_state
        agents.append(
            {
                "id": agent.id,
                "initial_state": [state.px, state.py, state.heading, state.speed],
                "radius": agent.radius,
                "control_bounds": {
                    "accel": list(agent.control_bounds.accel),
                    "yaw_rate": list(agent.control_bounds.yaw_rate),
                },
                "preference": [
                    [term.to_config() for term in level.terms] for level in agent.preferences.levels
                ],
                "hard_constraints": {
                    "road": agent.constraints.hard_road,
                    "pedestrians": agent.constraints.hard_pedestrians,
                    "forward_only": agent.constraints.forward_only,
                },
            }
        )
    config = scenario.config
    return {
        "name": scenario.name,
        "agents": agents,
        "road": {
            "lane_centers": list(scenario.road.lane_centers),
            "lane_width": scenario.road.lane_width,
            "pedestrians": [
                {"x": p.x, "y": p.y, "radius": p.radius} for p in scenario.road.pedestrians
            ],
        },
        "config": {
            "T_g": config.t_game,
            "T": config.t_window,
            "T_l": config.t_turn,
            "L": config.max_rounds,
            "epsilon": config.epsilon,
            "dt": config.dt,
            "padding": config.padding_policy,
        },
    }


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ScenarioFormatError(f"{path}: {err}") from err
    return parse_scenario(data)


def write_scenario(scenario: Scenario, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")
    return path
