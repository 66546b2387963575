"""Synthetic equirectangular scenes with analytic ground-truth depth.

Scenes are closed convex primitives (axis-aligned box room, long-box
corridor, sphere shell) viewed from inside, so every pixel has a well-defined
closest hit computed in closed form.  Surfaces carry a procedural solid
texture — multi-octave 3D value noise — that is non-repeating at patch scale,
plus an intentionally ambiguous checker texture for degenerate-case tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DatasetError
from .geometry import EquirectCamera, GeometryError, RigidPose, camera_rays
from .engine import DepthPanorama

SCENE_KINDS = ("box", "corridor", "sphere")


@dataclass(frozen=True)
class SyntheticScene:
    """Closed analytic scene: geometry, texture, and camera trajectory.

    ``size`` is the full box extent (x, y, z) in meters for box/corridor
    kinds, or ``(diameter,)*3`` for the sphere shell (radius = size[0] / 2).
    """

    kind: str
    size: tuple[float, float, float] = (4.0, 3.0, 5.0)
    texture_seed: int = 7
    noise_scale: float = 0.6
    octaves: int = 4
    checker: bool = False
    trajectory: tuple[RigidPose, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.kind not in SCENE_KINDS:
            raise ConfigError(f"scene kind must be one of {SCENE_KINDS}, got {self.kind!r}")
        if min(self.size) <= 0:
            raise ConfigError(f"scene size must be positive, got {self.size}")
        if self.octaves < 1:
            raise ConfigError(f"texture octaves must be >= 1, got {self.octaves}")
        for pose in self.trajectory:
            if not self.contains(pose.translation):
                raise GeometryError(
                    f"trajectory pose at {pose.translation} lies outside the scene"
                )

    @property
    def radius(self) -> float:
        return self.size[0] / 2.0

    def contains(self, point: np.ndarray, margin: float = 0.05) -> bool:
        p = np.asarray(point, dtype=np.float64)
        if self.kind == "sphere":
            return float(np.linalg.norm(p)) < self.radius - margin
        half = np.asarray(self.size) / 2.0
        return bool(np.all(np.abs(p) < half - margin))

    def cast(self, origin: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Closest-hit distance for unit ``directions`` (..., 3) from ``origin``."""
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(directions, dtype=np.float64)
        if self.kind == "sphere":
            # |o + t d| = R with o inside: positive root of the quadratic.
            od = d @ o
            disc = od * od - (o @ o - self.radius**2)
            return -od + np.sqrt(np.maximum(disc, 0.0))
        half = np.asarray(self.size) / 2.0
        # Exit distance through each slab; the closest positive one wins.
        t = np.full(d.shape[:-1], np.inf)
        for axis in range(3):
            da = d[..., axis]
            with np.errstate(divide="ignore"):
                bound = np.where(da > 0, half[axis], -half[axis])
                ta = np.where(da != 0.0, (bound - o[axis]) / np.where(da == 0, 1, da), np.inf)
            t = np.minimum(t, np.where(ta > 0, ta, np.inf))
        return t

    def shade(self, points: np.ndarray) -> np.ndarray:
        """RGB uint8 texture at world ``points`` (..., 3)."""
        if self.checker:
            cells = np.floor(np.asarray(points) / self.noise_scale).astype(np.int64)
            parity = (cells.sum(axis=-1)) & 1
            v = np.where(parity == 0, 40, 215).astype(np.uint8)
            return np.stack([v, v, v], axis=-1)
        channels = [
            value_noise(points, self.noise_scale, self.texture_seed + 101 * c, self.octaves)
            for c in range(3)
        ]
        rgb = np.stack(channels, axis=-1)
        return np.clip(rgb * 255.0, 0, 255).astype(np.uint8)


def _mix(h: np.ndarray) -> np.ndarray:
    """64-bit integer finalizer (splitmix-style)."""
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


def _lattice_values(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic uniform [0, 1) value at integer lattice points."""
    salt = (seed * 0x27D4EB2F165667C5) & 0xFFFFFFFFFFFFFFFF
    h = (
        ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        + iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        + iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
        + np.uint64(salt)
    )
    return (_mix(h) >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def value_noise(points: np.ndarray, scale: float, seed: int, octaves: int) -> np.ndarray:
    """Multi-octave trilinear value noise in [0, 1] at world points (..., 3)."""
    p = np.asarray(points, dtype=np.float64)
    out = np.zeros(p.shape[:-1])
    amp_total = 0.0
    amp = 1.0
    freq = 1.0 / scale
    for o in range(octaves):
        q = p * freq
        q0 = np.floor(q)
        f = q - q0
        f = f * f * (3.0 - 2.0 * f)  # smoothstep fade
        i0 = q0.astype(np.int64)
        acc = np.zeros(p.shape[:-1])
        for dz in (0, 1):
            for dy in (0, 1):
                wz = f[..., 2] if dz else 1.0 - f[..., 2]
                wy = f[..., 1] if dy else 1.0 - f[..., 1]
                for dx in (0, 1):
                    wx = f[..., 0] if dx else 1.0 - f[..., 0]
                    v = _lattice_values(
                        i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz, seed + o
                    )
                    acc += wx * wy * wz * v
        out += amp * acc
        amp_total += amp
        amp *= 0.6
        freq *= 2.0
    out /= amp_total
    # Stretch around mid-grey: averaged value noise is low-contrast, and NCC
    # needs texture variance inside every ~15 cm patch footprint.
    return np.clip(0.5 + (out - 0.5) * 2.4, 0.0, 1.0)


def render_scene(
    scene: SyntheticScene, camera: EquirectCamera, pose: RigidPose
) -> tuple[np.ndarray, DepthPanorama]:
    """Analytic render: RGB image plus exact ground-truth depth panorama."""
    if not scene.contains(pose.translation):
        raise GeometryError(f"camera at {pose.translation} lies outside the scene")
    rays_world = camera_rays(camera) @ pose.rotation.T
    depth = scene.cast(pose.translation, rays_world)
    points = pose.translation + depth[..., None] * rays_world
    image = scene.shade(points)
    pano = DepthPanorama(
        camera=camera,
        depth=depth.astype(np.float32),
        valid=np.ones(camera.shape, bool),
    )
    return image, pano


def straight_line_trajectory(
    scene: SyntheticScene, keyframes: int, span_fraction: float = 0.7
) -> tuple[RigidPose, ...]:
    """In-and-out straight flight along the scene's long axis.

    The camera starts at one end, flies to the other, and returns, with
    identity orientation throughout.
    """
    if keyframes < 1:
        raise ConfigError(f"keyframes must be >= 1, got {keyframes}")
    if scene.kind == "sphere":
        reach = scene.radius * span_fraction / 2.0
        axis = np.array([0.0, 0.0, 1.0])
    else:
        extents = np.asarray(scene.size)
        long_axis = int(np.argmax(extents))
        axis = np.zeros(3)
        axis[long_axis] = 1.0
        reach = extents[long_axis] * span_fraction / 2.0
    # Triangle wave with the fold offset half a step past the apex so the
    # return leg interleaves the outbound grid: every pose is distinct and
    # consecutive baselines never vanish.
    h = 4.0 / keyframes
    raw = -1.0 + h * np.arange(keyframes)
    s = np.where(raw > 1.0 + h / 4.0, 2.0 + h / 2.0 - raw, raw)
    poses = tuple(
        RigidPose(rotation=np.eye(3), translation=axis * (si * reach)) for si in s
    )
    return poses


def default_scene(kind: str, keyframes: int = 0, checker: bool = False) -> SyntheticScene:
    """Scene presets used by the CLI and the test harness."""
    if kind == "box":
        scene = SyntheticScene(kind="box", size=(4.0, 3.0, 5.0), checker=checker)
    elif kind == "corridor":
        scene = SyntheticScene(kind="corridor", size=(4.0, 3.0, 20.0), checker=checker)
    elif kind == "sphere":
        scene = SyntheticScene(kind="sphere", size=(4.0, 4.0, 4.0), checker=checker)
    else:
        raise ConfigError(f"scene kind must be one of {SCENE_KINDS}, got {kind!r}")
    if keyframes:
        traj = straight_line_trajectory(scene, keyframes)
        scene = SyntheticScene(
            kind=scene.kind,
            size=scene.size,
            texture_seed=scene.texture_seed,
            noise_scale=scene.noise_scale,
            octaves=scene.octaves,
            checker=scene.checker,
            trajectory=traj,
        )
    return scene


def scene_to_dict(scene: SyntheticScene) -> dict:
    return {
        "kind": scene.kind,
        "size": list(scene.size),
        "texture_seed": scene.texture_seed,
        "noise_scale": scene.noise_scale,
        "octaves": scene.octaves,
        "checker": scene.checker,
    }


def scene_from_dict(data: dict, trajectory: tuple[RigidPose, ...] = ()) -> SyntheticScene:
    return SyntheticScene(
        kind=data["kind"],
        size=tuple(data["size"]),
        texture_seed=int(data["texture_seed"]),
        noise_scale=float(data["noise_scale"]),
        octaves=int(data["octaves"]),
        checker=bool(data.get("checker", False)),
        trajectory=trajectory,
    )


def make_dataset(
    scene: SyntheticScene,
    keyframes: int,
    sparse_density: int,
    out_dir: str | Path,
    camera: EquirectCamera = EquirectCamera(512, 256),
    seed: int = 11,
) -> Path:
    """Render a scene trajectory into the pipeline's dataset directory format.

    Sparse points are surface hits sampled once for the whole sequence and
    handed to keyframes through an overlapping sliding window, so consecutive
    keyframes share at least half of their landmark identities (exact float
    coordinates), which is what the view filter keys on.
    """
    if keyframes < 3:
        raise ConfigError(f"make_dataset needs keyframes >= 3, got {keyframes}")
    if sparse_density < 1:
        raise ConfigError(f"sparse_density must be >= 1, got {sparse_density}")
    poses = scene.trajectory
    if len(poses) != keyframes:
        poses = straight_line_trajectory(scene, keyframes)

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {out}: {exc}") from exc

    # Global landmark pool: surface hits of random directions, each batch cast
    # from a camera near the landmark's window so that elongated scenes still
    # give every keyframe pair nearby (high-parallax) common landmarks.
    rng = np.random.default_rng(seed)
    stride = max(1, sparse_density // 3)
    pool_size = sparse_density + stride * (keyframes - 1)
    dirs = rng.standard_normal((pool_size, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    src = np.clip(np.arange(pool_size) // stride - 1, 0, keyframes - 1)
    pool = np.empty((pool_size, 3))
    for k in np.unique(src):
        sel = src == k
        origin = poses[k].translation
        pool[sel] = origin + dirs[sel] * scene.cast(origin, dirs[sel])[:, None]

    entries = []
    for k, pose in enumerate(poses):
        image, _ = render_scene(scene, camera, pose)
        name = f"kf{k:04d}.png"
        try:
            Image.fromarray(image).save(out / name)
        except OSError as exc:
            raise DatasetError(f"cannot write image {out / name}: {exc}") from exc
        points = pool[k * stride : k * stride + sparse_density]
        entries.append(
            {
                "id": k,
                "image": name,
                "rotation": [float(v) for v in pose.rotation.reshape(-1)],
                "translation": [float(v) for v in pose.translation],
                "sparse_points": [[float(c) for c in p] for p in points],
            }
        )

    manifest = {
        "camera": {"width": camera.width, "height": camera.height},
        "keyframes": entries,
        "synthetic": scene_to_dict(scene),
    }
    try:
        with open(out / "dataset.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1)
    except OSError as exc:
        raise DatasetError(f"cannot write manifest {out / 'dataset.json'}: {exc}") from exc
    return out
