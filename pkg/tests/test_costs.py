import numpy as np
import pytest

from lexplan.costs import (
    ControlEffort,
    LaneDeviation,
    PedestrianClearance,
    ProgressShortfall,
    RoadBoundary,
    SpeedLimitExcess,
    TargetSpeed,
    sum_terms_grad,
    sum_terms_value,
    term_from_config,
)
from lexplan.nlp import gradient

ALL_TEMPLATES = [
    LaneDeviation(weight=1.3, lane_y=-2.0, heading_weight=0.4, lane_heading=0.3),
    SpeedLimitExcess(weight=0.7, limit=6.0),
    ProgressShortfall(weight=1.1, pace=5.0),
    TargetSpeed(weight=0.9, target=4.0),
    ControlEffort(accel_weight=0.02, yaw_weight=0.05),
    RoadBoundary(weight=0.5, half_width=4.0, radius=1.0),
    PedestrianClearance(weight=2.0, discs=((3.0, -4.0, 1.7), (8.0, 4.0, 1.2))),
]


def random_window(rng, T=7):
    X = np.column_stack(
        [
            rng.uniform(-5.0, 15.0, T),
            rng.uniform(-6.0, 6.0, T),
            rng.uniform(-2.5, 2.5, T),
            rng.uniform(0.0, 9.0, T),
        ]
    )
    U = np.column_stack([rng.uniform(-4.0, 3.0, T), rng.uniform(-2.5, 2.5, T)])
    return X, U


class TestTemplateValues:
    def test_control_effort_zero_on_zero_controls(self):
        X = np.zeros((5, 4))
        U = np.zeros((5, 2))
        assert ControlEffort(1.0, 1.0).value(X, U) == 0.0

    def test_lane_deviation_zero_on_centerline(self):
        X = np.zeros((6, 4))
        X[:, 1] = -2.0
        term = LaneDeviation(weight=1.0, lane_y=-2.0)
        assert term.value(X, np.zeros((6, 2))) == 0.0

    def test_speed_limit_hinge_sum(self):
        # speeds [1, 2, 3] against limit 2 leaves a single excess of 1
        X = np.zeros((3, 4))
        X[:, 3] = [1.0, 2.0, 3.0]
        assert SpeedLimitExcess(weight=1.0, limit=2.0).value(X, np.zeros((3, 2))) == pytest.approx(1.0)

    def test_templates_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            X, U = random_window(rng)
            for term in ALL_TEMPLATES:
                assert term.value(X, U) >= 0.0

    def test_progress_shortfall_only_below_pace(self):
        X = np.zeros((2, 4))
        X[:, 3] = [4.0, 6.0]
        assert ProgressShortfall(weight=1.0, pace=5.0).value(X, np.zeros((2, 2))) == pytest.approx(1.0)

    def test_road_boundary_hinge(self):
        X = np.zeros((1, 4))
        X[0, 1] = 3.5  # disc edge 0.5 beyond the corridor for half_width 4, radius 1
        term = RoadBoundary(weight=2.0, half_width=4.0, radius=1.0)
        assert term.value(X, np.zeros((1, 2))) == pytest.approx(2.0 * 0.5**2)


class TestGradients:
    @pytest.mark.parametrize("term", ALL_TEMPLATES, ids=lambda t: t.template)
    def test_analytic_matches_finite_differences(self, term):
        rng = np.random.default_rng(11)
        T = 5
        for _ in range(25):
            X, U = random_window(rng, T)
            z = np.concatenate([X.reshape(-1), U.reshape(-1)])

            def f(zz):
                return term.value(zz[: 4 * T].reshape(T, 4), zz[4 * T :].reshape(T, 2))

            dX, dU = term.grad(X, U)
            analytic = np.concatenate([dX.reshape(-1), dU.reshape(-1)])
            numeric = gradient(f, z)
            scale = max(1.0, np.abs(numeric).max())
            assert np.abs(analytic - numeric).max() / scale < 1e-5

    def test_sum_terms_matches_individual(self):
        rng = np.random.default_rng(5)
        X, U = random_window(rng)
        total = sum_terms_value(ALL_TEMPLATES, X, U)
        assert total == pytest.approx(sum(t.value(X, U) for t in ALL_TEMPLATES))
        dX, dU = sum_terms_grad(ALL_TEMPLATES, X, U)
        eX = np.zeros_like(X)
        eU = np.zeros_like(U)
        for t in ALL_TEMPLATES:
            gx, gu = t.grad(X, U)
            eX += gx
            eU += gu
        np.testing.assert_allclose(dX, eX, atol=1e-12)
        np.testing.assert_allclose(dU, eU, atol=1e-12)


class TestZeroSetBoxes:
    @pytest.mark.parametrize(
        "term",
        [t for t in ALL_TEMPLATES if t.template != "pedestrian_clearance"],
        ids=lambda t: t.template,
    )
    def test_boxes_imply_budget(self, term):
        rng = np.random.default_rng(7)
        T = 6
        budget = 1e-5
        boxes = term.zero_set_boxes(budget, T)
        assert boxes is not None
        for _ in range(40):
            X, U = random_window(rng, T)
            for col, lo, hi in boxes:
                target = X if col < 4 else U
                target[:, col % 4 if col < 4 else col - 4] = rng.uniform(
                    max(lo, -1e3), min(hi, 1e3), T
                )
            assert term.value(X, U) <= budget + 1e-12

    def test_pedestrian_disc_margin_implies_budget(self):
        term = PedestrianClearance(weight=2.0, discs=((0.0, 0.0, 2.0),))
        T = 6
        budget = 1e-5
        discs, slack = term.zero_set_disc_margin(budget, T)
        rng = np.random.default_rng(9)
        for _ in range(40):
            X = np.zeros((T, 4))
            # place points exactly on the relaxed clearance circle
            angles = rng.uniform(0, 2 * np.pi, T)
            r = np.sqrt(discs[0, 2] ** 2 - slack)
            X[:, 0] = r * np.cos(angles)
            X[:, 1] = r * np.sin(angles)
            assert term.value(X, np.zeros((T, 2))) <= budget + 1e-12


class TestSerialization:
    @pytest.mark.parametrize("term", ALL_TEMPLATES, ids=lambda t: t.template)
    def test_round_trip(self, term):
        clone = term_from_config(term.to_config())
        rng = np.random.default_rng(1)
        X, U = random_window(rng)
        assert clone.value(X, U) == pytest.approx(term.value(X, U))

    def test_unknown_template_rejected(self):
        with pytest.raises(ValueError):
            term_from_config({"template": "no_such_cost", "weight": 1.0})

    def test_unknown_parameter_rejected(self):
        with pytest.raises(ValueError):
            term_from_config({"template": "speed_limit", "weight": 1.0, "limit": 5.0, "bogus": 1})
