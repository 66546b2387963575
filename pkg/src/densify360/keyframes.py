"""Keyframe and stereo-group containers shared by the engine and the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import EquirectCamera, RigidPose


@dataclass
class Keyframe:
    """One posed equirectangular frame with its sparse landmark observations.

    ``image`` is an (H, W, 3) or (H, W) uint8 raster matching the shared
    camera; ``sparse_points`` holds the world-coordinate landmarks observed in
    this frame, one row per point.
    """

    id: int
    image: np.ndarray
    pose: RigidPose
    sparse_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image)
        self.sparse_points = np.asarray(self.sparse_points, dtype=np.float64).reshape(-1, 3)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass
class StereoGroup:
    """A reference keyframe plus exactly two neighbor keyframes at one resolution."""

    reference: Keyframe
    neighbors: tuple[Keyframe, Keyframe]
    camera: EquirectCamera

    def __post_init__(self) -> None:
        if len(self.neighbors) != 2:
            raise ValueError("a stereo group needs exactly 2 neighbor keyframes")
        for kf in (self.reference, *self.neighbors):
            if kf.image.shape[:2] != self.camera.shape:
                raise ValueError(
                    f"keyframe {kf.id} image {kf.image.shape[:2]} does not match "
                    f"camera {self.camera.shape}"
                )
        for nb in self.neighbors:
            base = np.linalg.norm(nb.pose.translation - self.reference.pose.translation)
            if base <= 0.0:
                raise ValueError(
                    f"neighbor {nb.id} has zero baseline to reference {self.reference.id}"
                )


def to_gray(image: np.ndarray) -> np.ndarray:
    """uint8 RGB or grayscale raster to float32 luma in [0, 1]."""
    img = np.asarray(image)
    if img.ndim == 2:
        return img.astype(np.float32) / 255.0
    if img.ndim == 3 and img.shape[2] == 3:
        f = img.astype(np.float32)
        return (0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]) / 255.0
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")
