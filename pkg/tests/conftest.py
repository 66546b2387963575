"""Shared test configuration.

The thread-pool size cap must be configured before numba is first imported,
otherwise worker-count tests cannot request more threads than the machine has
cores.
"""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest

from densify360.geometry import EquirectCamera, RigidPose


@pytest.fixture
def small_camera() -> EquirectCamera:
    return EquirectCamera(width=64, height=32)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] *= -1.0
    return q


def random_pose(rng: np.random.Generator, t_scale: float = 1.0) -> RigidPose:
    return RigidPose(
        rotation=random_rotation(rng),
        translation=rng.uniform(-t_scale, t_scale, size=3),
    )
