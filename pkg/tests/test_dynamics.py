import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexplan.dynamics import (
    AgentState,
    ControlInput,
    Decision,
    Trajectory,
    rollout,
    step,
    wrap_angle,
)


def state(px=0.0, py=0.0, heading=0.0, speed=0.0):
    return AgentState(px, py, heading, speed)


class TestStep:
    def test_straight_motion(self):
        out = step(state(speed=1.0), ControlInput(0.0, 0.0), 0.1)
        assert out == AgentState(0.1, 0.0, 0.0, 1.0)

    def test_rest_fixed_point(self):
        s = state()
        assert step(s, ControlInput(0.0, 0.0), 0.1) == s

    def test_hand_evaluated_euler_update(self):
        # px' = 0 + 0.1*2*cos(pi/2), py' = 0 + 0.1*2*sin(pi/2), th' = pi/2 + 0.05, v' = 2.1
        out = step(state(heading=math.pi / 2, speed=2.0), ControlInput(1.0, 0.5), 0.1)
        assert out.px == pytest.approx(0.0, abs=1e-12)
        assert out.py == pytest.approx(0.2)
        assert out.heading == pytest.approx(math.pi / 2 + 0.05)
        assert out.speed == pytest.approx(2.1)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            step(state(), ControlInput(0.0, 0.0), 0.0)
        with pytest.raises(ValueError):
            step(state(), ControlInput(0.0, 0.0), -0.1)

    def test_rejects_nonfinite_input(self):
        with pytest.raises(ValueError):
            AgentState(float("nan"), 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            ControlInput(float("inf"), 0.0)
        with pytest.raises(ValueError):
            step(state(), ControlInput(0.0, 0.0), float("nan"))


class TestWrap:
    def test_interval_is_open_closed(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
        assert wrap_angle(0.0) == 0.0

    @given(st.floats(-50.0, 50.0))
    def test_wrap_range_and_identity(self, theta):
        w = wrap_angle(theta)
        assert -math.pi < w <= math.pi
        assert math.cos(w) == pytest.approx(math.cos(theta), abs=1e-9)
        assert math.sin(w) == pytest.approx(math.sin(theta), abs=1e-9)


controls_strategy = st.lists(
    st.tuples(st.floats(-3.0, 3.0), st.floats(-2.0, 2.0)), min_size=1, max_size=8
)
state_strategy = st.tuples(
    st.floats(-10.0, 10.0), st.floats(-10.0, 10.0), st.floats(-3.0, 3.0), st.floats(0.0, 10.0)
)


class TestRollout:
    def test_rest_with_zero_controls(self):
        decisions = rollout(state(), [ControlInput(0.0, 0.0)] * 5, 0.1)
        assert len(decisions) == 5
        assert all(d.state == state() for d in decisions)

    def test_single_control_base_case(self):
        decisions = rollout(state(speed=2.0), [ControlInput(1.0, 0.0)], 0.1)
        assert len(decisions) == 1
        assert decisions[0].state == state(speed=2.0)

    def test_two_step_chain(self):
        decisions = rollout(state(speed=1.0), [ControlInput(0.0, 0.0)] * 2, 0.1)
        positions = [(d.state.px, d.state.py) for d in decisions]
        assert positions == [(0.0, 0.0), (0.1, 0.0)]

    def test_empty_controls_rejected(self):
        with pytest.raises(ValueError):
            rollout(state(), [], 0.1)

    @settings(max_examples=40, deadline=None)
    @given(state_strategy, controls_strategy, controls_strategy)
    def test_segment_composability(self, s0, c1, c2):
        initial = AgentState(*s0)
        ctrl1 = [ControlInput(*c) for c in c1]
        ctrl2 = [ControlInput(*c) for c in c2]
        full = rollout(initial, ctrl1 + ctrl2, 0.1)
        head = rollout(initial, ctrl1, 0.1)
        mid = step(head[-1].state, head[-1].control, 0.1)
        tail = rollout(mid, ctrl2, 0.1)
        assert full[: len(ctrl1)] == head
        assert full[len(ctrl1) :] == tail

    @settings(max_examples=40, deadline=None)
    @given(state_strategy, controls_strategy, st.floats(-30.0, 30.0), st.floats(-30.0, 30.0))
    def test_translation_equivariance(self, s0, cs, dx, dy):
        initial = AgentState(*s0)
        shifted = AgentState(s0[0] + dx, s0[1] + dy, s0[2], s0[3])
        ctrl = [ControlInput(*c) for c in cs]
        base = rollout(initial, ctrl, 0.1)
        moved = rollout(shifted, ctrl, 0.1)
        for a, b in zip(base, moved):
            assert b.state.px == pytest.approx(a.state.px + dx, abs=1e-9)
            assert b.state.py == pytest.approx(a.state.py + dy, abs=1e-9)
            assert b.state.heading == a.state.heading
            assert b.state.speed == a.state.speed


class TestTrajectory:
    def test_round_trip_decisions(self):
        decisions = rollout(state(speed=3.0), [ControlInput(1.0, 0.2)] * 4, 0.1)
        traj = Trajectory.from_decisions(decisions)
        assert len(traj) == 4
        back = traj.to_decisions()
        assert back == decisions

    def test_from_rollout_matches_step_chain(self):
        controls = np.array([[1.0, 0.5], [0.0, -0.5], [-1.0, 0.0]])
        traj = Trajectory.from_rollout(state(speed=2.0), controls, 0.1)
        s = state(speed=2.0)
        for t in range(3):
            assert tuple(traj.states[t]) == (s.px, s.py, s.heading, s.speed)
            s = step(s, ControlInput(*controls[t]), 0.1)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            Trajectory(np.zeros((3, 4)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            Trajectory(np.zeros((3, 5)), np.zeros((3, 2)))
