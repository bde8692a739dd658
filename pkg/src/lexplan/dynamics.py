"""Kinematic unicycle dynamics shared by the optimizer, the predictor, and the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATE_DIM = 4  # px, py, heading, speed
CONTROL_DIM = 2  # accel, yaw_rate


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    return -((-theta + math.pi) % (2.0 * math.pi) - math.pi)


def angle_difference(theta: float | np.ndarray, reference: float | np.ndarray):
    """Signed difference theta - reference, wrapped to (-pi, pi]. Works on arrays."""
    return -((-(np.asarray(theta) - reference) + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass(frozen=True)
class AgentState:
    """Planar vehicle state: position [m], heading [rad], forward speed [m/s]."""

    px: float
    py: float
    heading: float
    speed: float

    def __post_init__(self):
        values = (self.px, self.py, self.heading, self.speed)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite agent state {values}")

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.heading, self.speed])

    @staticmethod
    def from_array(x) -> "AgentState":
        px, py, heading, speed = (float(v) for v in x)
        return AgentState(px, py, heading, speed)


@dataclass(frozen=True)
class ControlInput:
    """Actuation: longitudinal acceleration [m/s^2] and yaw rate [rad/s]."""

    accel: float
    yaw_rate: float

    def __post_init__(self):
        if not (math.isfinite(self.accel) and math.isfinite(self.yaw_rate)):
            raise ValueError(f"non-finite control ({self.accel}, {self.yaw_rate})")

    def as_array(self) -> np.ndarray:
        return np.array([self.accel, self.yaw_rate])

    @staticmethod
    def from_array(u) -> "ControlInput":
        accel, yaw_rate = (float(v) for v in u)
        return ControlInput(accel, yaw_rate)


NULL_ACTION = ControlInput(0.0, 0.0)


@dataclass(frozen=True)
class Decision:
    """One time step of a trajectory: the state and the control applied at it."""

    state: AgentState
    control: ControlInput


def step(state: AgentState, control: ControlInput, dt: float) -> AgentState:
    """Explicit-Euler unicycle update over one step of length dt > 0."""
    if not (isinstance(dt, (int, float)) and math.isfinite(dt)):
        raise ValueError(f"non-finite dt {dt}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return AgentState(
        px=state.px + dt * state.speed * math.cos(state.heading),
        py=state.py + dt * state.speed * math.sin(state.heading),
        heading=wrap_angle(state.heading + dt * control.yaw_rate),
        speed=state.speed + dt * control.accel,
    )


def rollout(initial: AgentState, controls, dt: float) -> list[Decision]:
    """Evolve `initial` through `controls`, pairing each control with the state it acts on."""
    controls = list(controls)
    if not controls:
        raise ValueError("rollout requires at least one control")
    decisions = []
    state = initial
    for control in controls:
        decisions.append(Decision(state, control))
        state = step(state, control, dt)
    return decisions


@dataclass
class Trajectory:
    """A window of T decisions as arrays: states (T, 4) and controls (T, 2)."""

    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != STATE_DIM:
            raise ValueError(f"states must be (T, {STATE_DIM}), got {self.states.shape}")
        if self.controls.shape != (self.states.shape[0], CONTROL_DIM):
            raise ValueError(
                f"controls must be ({self.states.shape[0]}, {CONTROL_DIM}), got {self.controls.shape}"
            )

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def copy(self) -> "Trajectory":
        return Trajectory(self.states.copy(), self.controls.copy())

    def to_decisions(self) -> list[Decision]:
        return [
            Decision(AgentState.from_array(x), ControlInput.from_array(u))
            for x, u in zip(self.states, self.controls)
        ]

    @staticmethod
    def from_decisions(decisions) -> "Trajectory":
        states = np.array([d.state.as_array() for d in decisions])
        controls = np.array([d.control.as_array() for d in decisions])
        return Trajectory(states, controls)

    @staticmethod
    def from_rollout(initial: AgentState, controls: np.ndarray, dt: float) -> "Trajectory":
        ctrl = [ControlInput.from_array(u) for u in np.asarray(controls, dtype=float)]
        return Trajectory.from_decisions(rollout(initial, ctrl, dt))
