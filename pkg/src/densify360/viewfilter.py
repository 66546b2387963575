"""Keyframe view filter based on landmark triangulation angles.

A candidate keyframe is useful for stereo only if enough of the landmarks it
shares with the newest accepted keyframe subtend a triangulation angle that is
neither too flat (no depth signal) nor too wide (no photometric overlap).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .keyframes import Keyframe


@dataclass(frozen=True)
class ViewFilterConfig:
    theta_min: float = 6.0
    theta_max: float = 60.0
    accept_fraction: float = 0.20

    def __post_init__(self) -> None:
        if not (0.0 < self.theta_min < self.theta_max < 180.0):
            raise ConfigError(
                "viewfilter requires 0 < theta_min < theta_max < 180, got "
                f"theta_min={self.theta_min}, theta_max={self.theta_max}"
            )
        if not (0.0 < self.accept_fraction <= 1.0):
            raise ConfigError(
                f"viewfilter.accept_fraction must be in (0, 1], got {self.accept_fraction}"
            )


@dataclass(frozen=True)
class ViewFilterDecision:
    accepted: bool
    fraction: float
    common_points: int
    reason: str

    def __bool__(self) -> bool:
        return self.accepted


def triangulation_angle(point: np.ndarray, center_a: np.ndarray, center_b: np.ndarray) -> float:
    """Angle at ``point`` subtended by the two camera centers, in degrees.

    Degenerate configurations (point coincides with a center) have no
    triangulation signal and count as zero.
    """
    u = np.asarray(center_a, np.float64) - point
    v = np.asarray(center_b, np.float64) - point
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    c = float(u @ v) / (nu * nv)
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def common_landmarks(a: Keyframe, b: Keyframe) -> np.ndarray:
    """Landmarks observed by both keyframes, matched by exact coordinates."""
    seen = {tuple(p) for p in b.sparse_points}
    rows = [p for p in a.sparse_points if tuple(p) in seen]
    if not rows:
        return np.zeros((0, 3))
    return np.asarray(rows)


def view_filter_accept(
    candidate: Keyframe, latest: Keyframe, config: ViewFilterConfig
) -> ViewFilterDecision:
    """Accept ``candidate`` iff enough co-visible landmarks triangulate well.

    The triangulation angle is computed per common landmark from the two
    camera centers; the candidate passes when the fraction of angles inside
    the closed interval [theta_min, theta_max] reaches ``accept_fraction``.
    Boundary values count on both the interval and the fraction.
    """
    common = common_landmarks(candidate, latest)
    if common.shape[0] == 0:
        return ViewFilterDecision(
            accepted=False, fraction=0.0, common_points=0, reason="no-overlap"
        )
    ta = candidate.pose.translation
    tb = latest.pose.translation
    inside = 0
    for p in common:
        theta = triangulation_angle(p, ta, tb)
        if config.theta_min <= theta <= config.theta_max:
            inside += 1
    fraction = inside / common.shape[0]
    if fraction >= config.accept_fraction:
        return ViewFilterDecision(
            accepted=True, fraction=fraction, common_points=common.shape[0], reason="ok"
        )
    return ViewFilterDecision(
        accepted=False,
        fraction=fraction,
        common_points=common.shape[0],
        reason="insufficient-parallax",
    )
