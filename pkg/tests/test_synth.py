import json

import numpy as np
import pytest

from densify360.errors import ConfigError
from densify360.geometry import EquirectCamera, GeometryError, RigidPose
from densify360.synth import (
    SyntheticScene,
    default_scene,
    make_dataset,
    render_scene,
    scene_from_dict,
    straight_line_trajectory,
    value_noise,
)


def oracle_box_cast(size, origin, direction):
    """Slowest possible box intersection: test all six face planes."""
    half = np.asarray(size) / 2.0
    best = np.inf
    for axis in range(3):
        for sign in (-1.0, 1.0):
            if direction[axis] == 0.0:
                continue
            t = (sign * half[axis] - origin[axis]) / direction[axis]
            if t <= 0:
                continue
            hit = origin + t * np.asarray(direction)
            others = [a for a in range(3) if a != axis]
            if all(abs(hit[a]) <= half[a] + 1e-9 for a in others):
                best = min(best, t)
    return best


def oracle_sphere_cast(radius, origin, direction):
    o, d = np.asarray(origin), np.asarray(direction)
    roots = np.roots([d @ d, 2 * (o @ d), o @ o - radius**2])
    return float(min(r.real for r in roots if r.real > 0))


class TestCast:
    def test_box_center_forward(self):
        scene = SyntheticScene(kind="box", size=(4.0, 3.0, 5.0))
        t = scene.cast(np.zeros(3), np.array([0.0, 0.0, 1.0]))
        assert t == pytest.approx(2.5)

    def test_box_against_oracle(self, rng):
        scene = SyntheticScene(kind="box", size=(4.0, 3.0, 5.0))
        for _ in range(200):
            origin = (rng.random(3) - 0.5) * np.array([3.0, 2.0, 4.0])
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            expected = oracle_box_cast(scene.size, origin, d)
            assert scene.cast(origin, d) == pytest.approx(expected, abs=1e-9)

    def test_sphere_constant_depth_from_center(self):
        scene = SyntheticScene(kind="sphere", size=(4.0, 4.0, 4.0))
        camera = EquirectCamera(128, 64)
        _, pano = render_scene(scene, camera, RigidPose.identity())
        assert np.allclose(pano.depth, 2.0, atol=1e-6)

    def test_sphere_against_oracle(self, rng):
        scene = SyntheticScene(kind="sphere", size=(6.0, 6.0, 6.0))
        for _ in range(100):
            origin = rng.standard_normal(3)
            origin *= rng.random() * 2.0 / np.linalg.norm(origin)
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            expected = oracle_sphere_cast(scene.radius, origin, d)
            assert scene.cast(origin, d) == pytest.approx(expected, abs=1e-9)

    def test_depths_finite_and_positive(self):
        for kind in ("box", "corridor", "sphere"):
            scene = default_scene(kind)
            camera = EquirectCamera(64, 32)
            pose = RigidPose(rotation=np.eye(3), translation=np.array([0.3, -0.2, 0.5]))
            _, pano = render_scene(scene, camera, pose)
            assert np.all(np.isfinite(pano.depth))
            assert np.all(pano.depth > 0)

    def test_pose_outside_scene_rejected(self):
        scene = default_scene("box")
        camera = EquirectCamera(64, 32)
        pose = RigidPose(rotation=np.eye(3), translation=np.array([10.0, 0.0, 0.0]))
        with pytest.raises(GeometryError):
            render_scene(scene, camera, pose)

    def test_render_is_deterministic(self):
        scene = default_scene("box")
        camera = EquirectCamera(96, 48)
        pose = RigidPose(rotation=np.eye(3), translation=np.array([0.1, 0.2, -0.3]))
        img_a, pano_a = render_scene(scene, camera, pose)
        img_b, pano_b = render_scene(scene, camera, pose)
        assert np.array_equal(img_a, img_b)
        assert np.array_equal(pano_a.depth, pano_b.depth)


class TestTexture:
    def test_noise_range_and_determinism(self, rng):
        pts = rng.standard_normal((500, 3)) * 2.0
        a = value_noise(pts, 0.6, 7, 4)
        b = value_noise(pts, 0.6, 7, 4)
        assert np.array_equal(a, b)
        assert np.all((a >= 0.0) & (a <= 1.0))

    def test_noise_seed_sensitivity(self, rng):
        pts = rng.standard_normal((500, 3)) * 2.0
        a = value_noise(pts, 0.6, 7, 4)
        b = value_noise(pts, 0.6, 8, 4)
        assert not np.allclose(a, b)

    def test_texture_varies_at_patch_scale(self):
        # Patches span ~11 px; at 512 px width and 2 m range that is ~15 cm on
        # a wall.  The texture must carry contrast over windows of that size,
        # otherwise NCC is degenerate everywhere.
        scene = default_scene("box")
        x = np.linspace(-1.5, 1.5, 400)
        pts = np.stack([x, np.full_like(x, 1.5), np.full_like(x, 0.7)], axis=-1)
        shade = scene.shade(pts)[:, 0].astype(np.float64)
        window = 20  # ~15 cm of samples
        stds = [shade[i : i + window].std() for i in range(0, 400 - window, window)]
        assert min(stds) > 1.0

    def test_checker_is_binary(self):
        scene = default_scene("box", checker=True)
        camera = EquirectCamera(64, 32)
        img, _ = render_scene(scene, camera, RigidPose.identity())
        assert set(np.unique(img)) <= {40, 215}


class TestTrajectory:
    @pytest.mark.parametrize("n", [1, 2, 3, 4, 7, 30])
    def test_poses_inside_and_distinct(self, n):
        scene = default_scene("corridor")
        poses = straight_line_trajectory(scene, n)
        assert len(poses) == n
        for pose in poses:
            assert scene.contains(pose.translation)
        for a, b in zip(poses, poses[1:]):
            assert np.linalg.norm(a.translation - b.translation) > 1e-6

    def test_moves_along_long_axis(self):
        scene = default_scene("corridor")
        poses = straight_line_trajectory(scene, 10)
        offsets = np.stack([p.translation for p in poses])
        assert np.all(offsets[:, :2] == 0)
        assert np.ptp(offsets[:, 2]) > scene.size[2] * 0.5

    def test_returns_toward_start(self):
        scene = default_scene("box")
        poses = straight_line_trajectory(scene, 12)
        z = np.array([p.translation[2] for p in poses])
        apex = int(np.argmax(z))
        assert 0 < apex < len(z) - 1
        assert z[-1] < z[apex]

    def test_zero_keyframes_rejected(self):
        with pytest.raises(ConfigError):
            straight_line_trajectory(default_scene("box"), 0)


class TestMakeDataset:
    def test_writes_manifest_and_images(self, tmp_path):
        scene = default_scene("box")
        out = make_dataset(scene, keyframes=4, sparse_density=30, out_dir=tmp_path,
                           camera=EquirectCamera(64, 32))
        manifest = json.loads((out / "dataset.json").read_text())
        assert manifest["camera"] == {"width": 64, "height": 32}
        assert len(manifest["keyframes"]) == 4
        for entry in manifest["keyframes"]:
            assert (out / entry["image"]).exists()
            assert len(entry["rotation"]) == 9
            assert len(entry["translation"]) == 3
            assert len(entry["sparse_points"]) == 30

    def test_consecutive_keyframes_share_landmarks(self, tmp_path):
        scene = default_scene("box")
        out = make_dataset(scene, keyframes=5, sparse_density=30, out_dir=tmp_path,
                           camera=EquirectCamera(64, 32))
        manifest = json.loads((out / "dataset.json").read_text())
        sets = [
            {tuple(p) for p in e["sparse_points"]} for e in manifest["keyframes"]
        ]
        for a, b in zip(sets, sets[1:]):
            overlap = len(a & b) / len(a)
            assert overlap >= 0.5

    def test_sparse_points_lie_on_surface(self, tmp_path):
        scene = default_scene("box")
        out = make_dataset(scene, keyframes=3, sparse_density=20, out_dir=tmp_path,
                           camera=EquirectCamera(64, 32))
        manifest = json.loads((out / "dataset.json").read_text())
        half = np.asarray(scene.size) / 2.0
        for entry in manifest["keyframes"]:
            for p in np.asarray(entry["sparse_points"]):
                assert np.isclose(np.abs(p / half), 1.0, atol=1e-6).any()
                assert np.all(np.abs(p) <= half + 1e-6)

    def test_scene_round_trips_through_manifest(self, tmp_path):
        scene = default_scene("corridor")
        out = make_dataset(scene, keyframes=3, sparse_density=10, out_dir=tmp_path,
                           camera=EquirectCamera(64, 32))
        manifest = json.loads((out / "dataset.json").read_text())
        restored = scene_from_dict(manifest["synthetic"])
        assert restored.kind == scene.kind
        assert restored.size == scene.size
        assert restored.texture_seed == scene.texture_seed
