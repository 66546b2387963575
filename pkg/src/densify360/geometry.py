"""Equirectangular camera model and rigid-transform primitives.

Conventions used throughout the package:

* Camera frame: x right, y down, z forward (optical axis).
* Longitude ``lam`` increases to the right and spans ``[-pi, pi)`` across the
  image width; ``lam = 0`` maps to the image centre.
* Latitude ``phi`` is ``+pi/2`` at the top edge (up, ``y = -1``) and ``-pi/2``
  at the bottom edge.
* Pixel centres sit at half-integer raster positions, and the mapping
  functions absorb that shift: passing the integer index ``(ix, iy)`` yields
  the ray through the centre of pixel ``(ix, iy)``, via
  ``lam = 2*pi*(x + 0.5)/width - pi`` and ``phi = pi/2 - pi*(y + 0.5)/height``.
* Poses are camera-to-world: ``x_world = R @ x_cam + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised for out-of-domain geometric inputs."""


@dataclass(frozen=True)
class EquirectCamera:
    """Full-sphere equirectangular camera of a fixed raster size."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(
                f"camera size must be positive, got {self.width}x{self.height}"
            )
        if self.width != 2 * self.height:
            raise GeometryError(
                "equirectangular raster must have width == 2 * height, got "
                f"{self.width}x{self.height}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(height, width)``."""
        return (self.height, self.width)

    def scaled(self, width: int, height: int) -> "EquirectCamera":
        """Return a camera for the same sphere at a different raster size."""
        return EquirectCamera(width=width, height=height)


def pixel_to_ray(camera: EquirectCamera, pixel: np.ndarray) -> np.ndarray:
    """Map continuous pixel coordinates to unit ray directions.

    Args:
        camera: Raster geometry.
        pixel: ``(..., 2)`` array of ``(x, y)`` pixel coordinates in
            ``[0, width) x [0, height)``.

    Returns:
        ``(..., 3)`` array of unit direction vectors in the camera frame.

    Raises:
        GeometryError: If any coordinate lies outside the raster.
    """
    p = np.asarray(pixel, dtype=np.float64)
    if p.shape[-1] != 2:
        raise GeometryError(f"pixel must have trailing dimension 2, got {p.shape}")
    x = p[..., 0]
    y = p[..., 1]
    if np.any(x < 0.0) or np.any(x >= camera.width) or np.any(y < 0.0) or np.any(
        y >= camera.height
    ):
        raise GeometryError(
            f"pixel coordinates outside [0, {camera.width}) x [0, {camera.height})"
        )
    lam = (2.0 * np.pi) * ((x + 0.5) / camera.width) - np.pi
    phi = np.pi / 2.0 - np.pi * ((y + 0.5) / camera.height)
    cos_phi = np.cos(phi)
    d = np.stack(
        [cos_phi * np.sin(lam), -np.sin(phi), cos_phi * np.cos(lam)], axis=-1
    )
    return d


def ray_to_pixel(camera: EquirectCamera, direction: np.ndarray) -> np.ndarray:
    """Map direction vectors to continuous pixel coordinates.

    Directions need not be normalised but must be non-zero.  Longitude wraps
    into ``[-pi, pi)``, so the returned x lies in ``[-0.5, width - 0.5)`` and
    y in ``[-0.5, height - 0.5]``, with the half-pixel overhang reached only
    at the exact poles and the seam.

    Raises:
        GeometryError: If any direction has (near-)zero norm.
    """
    d = np.asarray(direction, dtype=np.float64)
    if d.shape[-1] != 3:
        raise GeometryError(f"direction must have trailing dimension 3, got {d.shape}")
    norm = np.sqrt(np.sum(d * d, axis=-1))
    if np.any(norm < 1e-12):
        raise GeometryError("zero-length direction has no pixel image")
    lam = np.arctan2(d[..., 0], d[..., 2])
    # atan2 can return exactly +pi, which lands on the wrap seam.
    lam = np.where(lam >= np.pi, lam - 2.0 * np.pi, lam)
    sin_phi = np.clip(-d[..., 1] / norm, -1.0, 1.0)
    phi = np.arcsin(sin_phi)
    x = (lam + np.pi) * (camera.width / (2.0 * np.pi)) - 0.5
    y = (np.pi / 2.0 - phi) * (camera.height / np.pi) - 0.5
    return np.stack([x, y], axis=-1)


def camera_rays(camera: EquirectCamera) -> np.ndarray:
    """Unit ray directions for every pixel centre, shape ``(H, W, 3)``."""
    xs = np.arange(camera.width, dtype=np.float64)
    ys = np.arange(camera.height, dtype=np.float64)
    grid = np.stack(np.meshgrid(xs, ys), axis=-1)
    return pixel_to_ray(camera, grid)


def row_latitudes(camera: EquirectCamera) -> np.ndarray:
    """Latitude in radians of each pixel-row centre, shape ``(H,)``."""
    ys = np.arange(camera.height, dtype=np.float64) + 0.5
    return np.pi / 2.0 - np.pi * (ys / camera.height)


@dataclass(frozen=True)
class RigidPose:
    """Camera-to-world rigid transform: ``x_world = rotation @ x_cam + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise GeometryError(f"translation must have shape (3,), got {t.shape}")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise GeometryError("rotation is not orthonormal (tolerance 1e-9)")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise GeometryError("rotation determinant must be +1 (tolerance 1e-9)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rotation=rt, translation=-rt @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Return the pose applying ``other`` first, then ``self``."""
        return RigidPose(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform ``(..., 3)`` points from this camera's frame to world."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_direction(self, directions: np.ndarray) -> np.ndarray:
        """Rotate ``(..., 3)`` direction vectors into the world frame."""
        return np.asarray(directions, dtype=np.float64) @ self.rotation.T


def transform_point(pose_src: RigidPose, pose_dst: RigidPose, point: np.ndarray) -> np.ndarray:
    """Re-express camera-frame points of ``pose_src`` in the frame of ``pose_dst``."""
    return pose_dst.inverse().apply(pose_src.apply(point))


def relative_transform(pose_src: RigidPose, pose_dst: RigidPose) -> tuple[np.ndarray, np.ndarray]:
    """Rotation/translation mapping src-camera coordinates into dst-camera coordinates.

    Returns ``(R, t)`` with ``x_dst = R @ x_src + t``.
    """
    rel = pose_dst.inverse().compose(pose_src)
    return rel.rotation, rel.translation


@dataclass(frozen=True)
class PlaneHypothesis:
    """Local scene plane for one pixel: depth along the pixel ray plus unit normal.

    The plane passes through ``depth * anchor_ray`` and has normal ``normal``;
    a hypothesis is only meaningful when the normal faces the camera, i.e.
    ``dot(normal, anchor_ray) < 0``.
    """

    depth: float
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,):
            raise GeometryError(f"normal must have shape (3,), got {n.shape}")
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise GeometryError("plane normal must be unit length (tolerance 1e-6)")
        if not self.depth > 0.0:
            raise GeometryError(f"plane depth must be positive, got {self.depth}")
        object.__setattr__(self, "normal", n)

    def faces(self, anchor_ray: np.ndarray) -> bool:
        """True when the plane is front-facing along ``anchor_ray``."""
        return float(np.dot(self.normal, np.asarray(anchor_ray))) < 0.0


def plane_depth_along_ray(
    hypothesis: PlaneHypothesis,
    anchor_ray: np.ndarray,
    query_ray: np.ndarray,
    parallel_eps: float = 1e-9,
) -> float:
    """Depth at which ``query_ray`` meets the hypothesis plane.

    The plane passes through ``hypothesis.depth * anchor_ray`` with normal
    ``hypothesis.normal``.  Returns NaN when the query ray is within
    ``parallel_eps`` of parallel to the plane (no usable intersection);
    callers treat that as a failed sample and assign the penalty cost.
    """
    n = hypothesis.normal
    a = np.asarray(anchor_ray, dtype=np.float64)
    q = np.asarray(query_ray, dtype=np.float64)
    denom = float(np.dot(n, q))
    if abs(denom) <= parallel_eps:
        return float("nan")
    return float(hypothesis.depth * np.dot(n, a) / denom)


def plane_depths_along_rays(
    depth: np.ndarray,
    normal: np.ndarray,
    anchor_ray: np.ndarray,
    query_rays: np.ndarray,
    parallel_eps: float = 1e-9,
) -> np.ndarray:
    """Vectorised :func:`plane_depth_along_ray` over ``(..., 3)`` query rays."""
    n = np.asarray(normal, dtype=np.float64)
    num = np.asarray(depth, dtype=np.float64) * np.dot(
        np.asarray(anchor_ray, dtype=np.float64), n
    )
    denom = np.asarray(query_rays, dtype=np.float64) @ n
    out = np.where(np.abs(denom) <= parallel_eps, np.nan, num / np.where(denom == 0, 1.0, denom))
    return out
