"""Cost templates for preference levels.

Every template evaluates a window of states X (T, 4) and controls U (T, 2) to a
non-negative scalar, and provides the analytic gradient with respect to both
arrays. Templates are immutable and serializable to the scenario-file term
-- see scenario_io for the wire format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import angle_difference


class CostTerm:
    """Base class; subclasses implement value() and accumulate() over window arrays."""

    template = "base"

    def value(self, X: np.ndarray, U: np.ndarray) -> float:
        raise NotImplementedError

    def accumulate(self, X, U, dX, dU):
        """Add this term's gradient into the (dX, dU) buffers."""
        raise NotImplementedError

    def grad(self, X: np.ndarray, U: np.ndarray):
        """Return (dX, dU) with the shapes of X and U."""
        dX = np.zeros_like(X)
        dU = np.zeros_like(U)
        self.accumulate(X, U, dX, dU)
        return dX, dU

    def zero_set_boxes(self, budget: float, T: int):
        """Variable boxes (column, lo, hi) that imply this term's value <= budget.

        Used to replace a level-optimum bound whose recorded optimum is
        numerically zero: such a bound has a vanishing gradient on its boundary
        (the squared hinge is flat at its own zero set), so the equivalent
        margin boxes keep the program regular. Columns index the per-step
        variable layout [px, py, heading, speed, accel, yaw_rate]. Returns None
        when the term's zero set has no box description.
        """
        return None

    def zero_set_disc_margin(self, budget: float, T: int):
        """For disc-clearance terms: squared-distance slack implying value <= budget."""
        return None

    def hess_diag(self, X, U, hX, hU):
        """Add a diagonal (Gauss-Newton style) Hessian approximation into buffers."""
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LaneDeviation(CostTerm):
    """Quadratic deviation from a lane centerline, with optional heading alignment."""

    weight: float
    lane_y: float
    heading_weight: float = 0.0
    lane_heading: float = 0.0

    template = "lane_deviation"

    def value(self, X, U):
        cost = self.weight * float(np.sum((X[:, 1] - self.lane_y) ** 2))
        if self.heading_weight:
            dth = angle_difference(X[:, 2], self.lane_heading)
            cost += self.heading_weight * float(np.sum(dth**2))
        return cost

    def accumulate(self, X, U, dX, dU):
        dX[:, 1] += 2.0 * self.weight * (X[:, 1] - self.lane_y)
        if self.heading_weight:
            dth = angle_difference(X[:, 2], self.lane_heading)
            dX[:, 2] += 2.0 * self.heading_weight * dth

    def zero_set_boxes(self, budget, T):
        parts = 2 if self.heading_weight else 1
        m = math.sqrt(budget / (parts * self.weight * T))
        boxes = [(1, self.lane_y - m, self.lane_y + m)]
        if self.heading_weight:
            mh = math.sqrt(budget / (parts * self.heading_weight * T))
            boxes.append((2, self.lane_heading - mh, self.lane_heading + mh))
        return boxes

    def hess_diag(self, X, U, hX, hU):
        hX[:, 1] += 2.0 * self.weight
        if self.heading_weight:
            hX[:, 2] += 2.0 * self.heading_weight

    def to_config(self):
        return {
            "template": self.template,
            "weight": self.weight,
            "lane_y": self.lane_y,
            "heading_weight": self.heading_weight,
            "lane_heading": self.lane_heading,
        }


@dataclass(frozen=True)
class SpeedLimitExcess(CostTerm):
    """Quadratic hinge on speed above a limit."""

    weight: float
    limit: float

    template = "speed_limit"

    def value(self, X, U):
        excess = np.maximum(0.0, X[:, 3] - self.limit)
        return self.weight * float(np.sum(excess**2))

    def accumulate(self, X, U, dX, dU):
        excess = np.maximum(0.0, X[:, 3] - self.limit)
        dX[:, 3] += 2.0 * self.weight * excess

    def zero_set_boxes(self, budget, T):
        m = math.sqrt(budget / (self.weight * T))
        return [(3, -math.inf, self.limit + m)]

    def hess_diag(self, X, U, hX, hU):
        hX[:, 3] += 2.0 * self.weight * (X[:, 3] > self.limit)

    def to_config(self):
        return {"template": self.template, "weight": self.weight, "limit": self.limit}


@dataclass(frozen=True)
class ProgressShortfall(CostTerm):
    """Quadratic hinge on speed below a target pace (progress-to-goal shortfall)."""

    weight: float
    pace: float

    template = "progress_shortfall"

    def value(self, X, U):
        shortfall = np.maximum(0.0, self.pace - X[:, 3])
        return self.weight * float(np.sum(shortfall**2))

    def accumulate(self, X, U, dX, dU):
        shortfall = np.maximum(0.0, self.pace - X[:, 3])
        dX[:, 3] -= 2.0 * self.weight * shortfall

    def zero_set_boxes(self, budget, T):
        m = math.sqrt(budget / (self.weight * T))
        return [(3, self.pace - m, math.inf)]

    def hess_diag(self, X, U, hX, hU):
        hX[:, 3] += 2.0 * self.weight * (X[:, 3] < self.pace)

    def to_config(self):
        return {"template": self.template, "weight": self.weight, "pace": self.pace}


@dataclass(frozen=True)
class TargetSpeed(CostTerm):
    """Quadratic tracking of a reference speed (penalizes both over and under)."""

    weight: float
    target: float

    template = "target_speed"

    def value(self, X, U):
        return self.weight * float(np.sum((X[:, 3] - self.target) ** 2))

    def accumulate(self, X, U, dX, dU):
        dX[:, 3] += 2.0 * self.weight * (X[:, 3] - self.target)

    def zero_set_boxes(self, budget, T):
        m = math.sqrt(budget / (self.weight * T))
        return [(3, self.target - m, self.target + m)]

    def hess_diag(self, X, U, hX, hU):
        hX[:, 3] += 2.0 * self.weight

    def to_config(self):
        return {"template": self.template, "weight": self.weight, "target": self.target}


@dataclass(frozen=True)
class ControlEffort(CostTerm):
    """Quadratic penalty on actuation."""

    accel_weight: float
    yaw_weight: float

    template = "control_effort"

    def value(self, X, U):
        return float(self.accel_weight * np.sum(U[:, 0] ** 2) + self.yaw_weight * np.sum(U[:, 1] ** 2))

    def accumulate(self, X, U, dX, dU):
        dU[:, 0] += 2.0 * self.accel_weight * U[:, 0]
        dU[:, 1] += 2.0 * self.yaw_weight * U[:, 1]

    def zero_set_boxes(self, budget, T):
        boxes = []
        if self.accel_weight:
            m = math.sqrt(budget / (2 * self.accel_weight * T))
            boxes.append((4, -m, m))
        if self.yaw_weight:
            m = math.sqrt(budget / (2 * self.yaw_weight * T))
            boxes.append((5, -m, m))
        return boxes

    def hess_diag(self, X, U, hX, hU):
        hU[:, 0] += 2.0 * self.accel_weight
        hU[:, 1] += 2.0 * self.yaw_weight

    def to_config(self):
        return {
            "template": self.template,
            "accel_weight": self.accel_weight,
            "yaw_weight": self.yaw_weight,
        }


@dataclass(frozen=True)
class RoadBoundary(CostTerm):
    """Quadratic hinge on the vehicle disc leaving the road corridor |y| <= half_width.

    The hinge activates once |y| exceeds half_width - radius, i.e. when the disc
    edge touches the boundary.
    """

    weight: float
    half_width: float
    radius: float

    template = "road_boundary"

    def _overhang(self, X):
        return np.maximum(0.0, np.abs(X[:, 1]) - (self.half_width - self.radius))

    def value(self, X, U):
        return self.weight * float(np.sum(self._overhang(X) ** 2))

    def accumulate(self, X, U, dX, dU):
        over = self._overhang(X)
        dX[:, 1] += 2.0 * self.weight * over * np.sign(X[:, 1])

    def zero_set_boxes(self, budget, T):
        m = math.sqrt(budget / (self.weight * T)) + (self.half_width - self.radius)
        return [(1, -m, m)]

    def hess_diag(self, X, U, hX, hU):
        hX[:, 1] += 2.0 * self.weight * (self._overhang(X) > 0.0)

    def to_config(self):
        return {
            "template": self.template,
            "weight": self.weight,
            "half_width": self.half_width,
            "radius": self.radius,
        }


@dataclass(frozen=True)
class PedestrianClearance(CostTerm):
    """Quadratic hinge on squared clearance to pedestrian keep-out discs.

    discs is a (P, 3) array of rows (x, y, clear_radius); the hinge activates
    when the squared center distance drops below clear_radius**2.
    """

    weight: float
    discs: tuple

    template = "pedestrian_clearance"

    def __post_init__(self):
        object.__setattr__(self, "_disc_array", np.asarray(self.discs, dtype=float).reshape(-1, 3))

    def _discs(self):
        return self._disc_array

    def value(self, X, U):
        discs = self._discs()
        if discs.shape[0] == 0:
            return 0.0
        diff = X[:, None, :2] - discs[None, :, :2]  # (T, P, 2)
        d2 = np.sum(diff**2, axis=2)
        hinge = np.maximum(0.0, discs[None, :, 2] ** 2 - d2)
        return self.weight * float(np.sum(hinge**2))

    def accumulate(self, X, U, dX, dU):
        discs = self._discs()
        if discs.shape[0] > 0:
            diff = X[:, None, :2] - discs[None, :, :2]
            d2 = np.sum(diff**2, axis=2)
            hinge = np.maximum(0.0, discs[None, :, 2] ** 2 - d2)
            # d/dX of sum hinge^2 = 2*hinge * (-2*diff)
            dX[:, :2] += -4.0 * self.weight * np.sum(hinge[:, :, None] * diff, axis=1)

    def zero_set_boxes(self, budget, T):
        if self._disc_array.shape[0] == 0:
            return []
        return None

    def zero_set_disc_margin(self, budget, T):
        # value <= budget if every hinge entry satisfies d2 >= clear^2 - slack
        slack = math.sqrt(budget / (self.weight * max(1, T * self._disc_array.shape[0])))
        return self._disc_array, slack

    def hess_diag(self, X, U, hX, hU):
        discs = self._discs()
        if discs.shape[0] > 0:
            diff = X[:, None, :2] - discs[None, :, :2]
            d2 = np.sum(diff**2, axis=2)
            hinge = np.maximum(0.0, discs[None, :, 2] ** 2 - d2)
            # Gauss-Newton: 8 w diff^2 on active entries, plus the 4 w hinge term
            active = hinge > 0.0
            hX[:, :2] += 8.0 * self.weight * np.sum(active[:, :, None] * diff**2, axis=1)
            hX[:, :2] += 4.0 * self.weight * np.sum(hinge, axis=1)[:, None]

    def to_config(self):
        return {
            "template": self.template,
            "weight": self.weight,
            "discs": [list(map(float, d)) for d in self._discs()],
        }


_TEMPLATES = {
    cls.template: cls
    for cls in (
        LaneDeviation,
        SpeedLimitExcess,
        ProgressShortfall,
        TargetSpeed,
        ControlEffort,
        RoadBoundary,
        PedestrianClearance,
    )
}


def term_from_config(config: dict) -> CostTerm:
    """Build a cost term from its wire-format dict; rejects unknown templates/keys."""
    config = dict(config)
    name = config.pop("template", None)
    if name not in _TEMPLATES:
        raise ValueError(f"unknown cost template {name!r}")
    cls = _TEMPLATES[name]
    fields = set(cls.__dataclass_fields__)
    unknown = set(config) - fields
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)} for template {name!r}")
    if name == "pedestrian_clearance":
        config["discs"] = tuple(tuple(map(float, d)) for d in config.get("discs", ()))
    return cls(**config)


def sum_terms_value(terms, X, U) -> float:
    return float(sum(term.value(X, U) for term in terms))


def sum_terms_hess_diag(terms, X, U, out):
    hX, hU = out
    hX[:] = 0.0
    hU[:] = 0.0
    for term in terms:
        term.hess_diag(X, U, hX, hU)
    return hX, hU


def sum_terms_grad(terms, X, U, out=None):
    if out is None:
        dX = np.zeros_like(X)
        dU = np.zeros_like(U)
    else:
        dX, dU = out
        dX[:] = 0.0
        dU[:] = 0.0
    for term in terms:
        term.accumulate(X, U, dX, dU)
    return dX, dU
