import math

import numpy as np
import pytest

from densify360.errors import ConfigError
from densify360.geometry import RigidPose
from densify360.keyframes import Keyframe
from densify360.viewfilter import (
    ViewFilterConfig,
    common_landmarks,
    triangulation_angle,
    view_filter_accept,
)


def oracle_angle_deg(point, center_a, center_b):
    """Law-of-cosines triangle angle at the point (independent of the
    dot-product formula used by the implementation)."""
    a = np.linalg.norm(np.subtract(center_a, point))
    b = np.linalg.norm(np.subtract(center_b, point))
    c = np.linalg.norm(np.subtract(center_a, center_b))
    cos_t = (a * a + b * b - c * c) / (2 * a * b)
    return math.degrees(math.acos(min(1.0, max(-1.0, cos_t))))


def kf(kf_id, translation, points):
    return Keyframe(
        id=kf_id,
        image=np.zeros((2, 4, 3), np.uint8),
        pose=RigidPose(rotation=np.eye(3), translation=np.asarray(translation, float)),
        sparse_points=np.asarray(points, float),
    )


class TestTriangulationAngle:
    def test_symmetric_pair_at_two_meters(self):
        # Cameras at (+-1, 0, 0), point on-axis at distance 2: the half-angle
        # is atan(1/2), so the apex angle is 2*atan(1/2) = 53.13 deg.
        theta = triangulation_angle(np.array([0.0, 0.0, 2.0]),
                                    np.array([1.0, 0.0, 0.0]),
                                    np.array([-1.0, 0.0, 0.0]))
        assert theta == pytest.approx(math.degrees(2 * math.atan2(1, 2)), abs=1e-9)
        assert theta == pytest.approx(53.13, abs=0.01)

    def test_matches_law_of_cosines_oracle(self, rng):
        for _ in range(300):
            p = rng.standard_normal(3) * 3
            a = rng.standard_normal(3)
            b = rng.standard_normal(3)
            if np.linalg.norm(a - p) < 1e-6 or np.linalg.norm(b - p) < 1e-6:
                continue
            assert triangulation_angle(p, a, b) == pytest.approx(
                oracle_angle_deg(p, a, b), abs=1e-7
            )

    def test_swap_symmetry(self, rng):
        for _ in range(50):
            p = rng.standard_normal(3)
            a = rng.standard_normal(3) + 2
            b = rng.standard_normal(3) - 2
            assert triangulation_angle(p, a, b) == triangulation_angle(p, b, a)

    def test_point_at_camera_center(self):
        p = np.array([1.0, 0.0, 0.0])
        assert triangulation_angle(p, p, np.array([0.0, 0.0, 1.0])) == 0.0


class TestViewFilter:
    def test_zero_baseline_rejected(self):
        pts = [[0, 0, 2], [1, 0, 2], [0, 1, 2]]
        a = kf(0, (0, 0, 0), pts)
        b = kf(1, (0, 0, 0), pts)
        decision = view_filter_accept(b, a, ViewFilterConfig())
        assert not decision
        assert decision.fraction == 0.0
        assert decision.reason == "insufficient-parallax"

    def test_good_parallax_accepted(self):
        # All common points at ~53 deg, inside [6, 60].
        pts = [[dx, dy, 2.0] for dx in (-0.2, 0.0, 0.2) for dy in (-0.2, 0.0, 0.2)]
        a = kf(0, (1, 0, 0), pts)
        b = kf(1, (-1, 0, 0), pts)
        decision = view_filter_accept(b, a, ViewFilterConfig())
        assert decision
        assert decision.fraction == 1.0
        assert decision.common_points == len(pts)

    def test_no_overlap_diagnostic(self):
        a = kf(0, (0, 0, 0), [[0, 0, 2]])
        b = kf(1, (1, 0, 0), [[5, 5, 5]])
        decision = view_filter_accept(b, a, ViewFilterConfig())
        assert not decision
        assert decision.reason == "no-overlap"
        assert decision.common_points == 0

    def test_boundary_fraction_counts_as_pass(self):
        # 100 common points, exactly 20 inside [6, 60]: inclusive threshold.
        good = [[0.0, 0.01 * i, 2.0] for i in range(20)]        # ~53 deg
        bad = [[0.0, 0.01 * i, 500.0] for i in range(80)]       # ~0.2 deg
        pts = good + bad
        a = kf(0, (1, 0, 0), pts)
        b = kf(1, (-1, 0, 0), pts)
        decision = view_filter_accept(b, a, ViewFilterConfig(accept_fraction=0.20))
        assert decision.common_points == 100
        assert decision.fraction == pytest.approx(0.20)
        assert decision.accepted

    def test_nineteen_of_hundred_rejected(self):
        good = [[0.0, 0.01 * i, 2.0] for i in range(19)]
        bad = [[0.0, 0.01 * i, 500.0] for i in range(81)]
        pts = good + bad
        a = kf(0, (1, 0, 0), pts)
        b = kf(1, (-1, 0, 0), pts)
        decision = view_filter_accept(b, a, ViewFilterConfig(accept_fraction=0.20))
        assert not decision.accepted

    def test_closed_interval_boundaries(self):
        # Points engineered to sit exactly on the 60 deg edge pass; just
        # outside fails.  Apex angle 2*atan(1/d) = 60 deg at d = 1/tan(30).
        d_edge = 1.0 / math.tan(math.radians(30.0))
        on_edge = kf(0, (1, 0, 0), [[0, 0, d_edge]])
        other = kf(1, (-1, 0, 0), [[0, 0, d_edge]])
        assert view_filter_accept(other, on_edge, ViewFilterConfig()).accepted
        too_close = [[0.0, 0.0, d_edge * 0.9]]  # angle above 60 deg
        a = kf(0, (1, 0, 0), too_close)
        b = kf(1, (-1, 0, 0), too_close)
        assert not view_filter_accept(b, a, ViewFilterConfig()).accepted

    def test_common_landmarks_exact_match(self):
        shared = [[0.5, 0.25, 2.0], [1.0, -0.5, 3.0]]
        a = kf(0, (0, 0, 0), shared + [[9, 9, 9]])
        b = kf(1, (1, 0, 0), [[7, 7, 7]] + shared)
        common = common_landmarks(a, b)
        assert common.shape == (2, 3)
        assert {tuple(p) for p in common} == {tuple(p) for p in shared}


class TestConfigValidation:
    def test_theta_order(self):
        with pytest.raises(ConfigError, match="theta"):
            ViewFilterConfig(theta_min=70.0, theta_max=60.0)

    def test_fraction_range(self):
        with pytest.raises(ConfigError):
            ViewFilterConfig(accept_fraction=0.0)
        with pytest.raises(ConfigError):
            ViewFilterConfig(accept_fraction=1.5)
