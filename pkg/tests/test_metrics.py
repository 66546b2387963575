import numpy as np
import pytest

from densify360.engine import DepthPanorama
from densify360.geometry import EquirectCamera, RigidPose, camera_rays
from densify360.metrics import accuracy, completeness, voxel_occupancy

from conftest import random_pose


class TestCompleteness:
    def test_empty_cloud(self):
        poses = [RigidPose.identity()]
        report = completeness(np.zeros((0, 3)), poses)
        assert report["per_keyframe"] == [0.0]
        assert report["mean"] == 0.0
        assert report["point_count"] == 0

    def test_saturation(self):
        # One point back-projected through every raster pixel at depth 1.
        camera = EquirectCamera(720, 360)
        rays = camera_rays(camera).reshape(-1, 3)
        report = completeness(rays, [RigidPose.identity()], camera)
        assert report["per_keyframe"] == [1.0]
        assert report["point_count"] == 259200

    def test_monotone_in_points(self, rng):
        camera = EquirectCamera(720, 360)
        pts = rng.standard_normal((500, 3)) * 2
        more = np.vstack([pts, rng.standard_normal((500, 3)) * 2])
        poses = [RigidPose.identity(), random_pose(rng)]
        a = completeness(pts, poses, camera)
        b = completeness(more, poses, camera)
        for ra, rb in zip(a["per_keyframe"], b["per_keyframe"]):
            assert rb >= ra

    def test_rigid_invariance(self, rng):
        camera = EquirectCamera(720, 360)
        pts = rng.standard_normal((800, 3)) * 3
        poses = [random_pose(rng), random_pose(rng)]
        base = completeness(pts, poses, camera)

        world = random_pose(rng)
        moved_pts = pts @ world.rotation.T + world.translation
        moved_poses = [world.compose(p) for p in poses]
        moved = completeness(moved_pts, moved_poses, camera)
        assert moved["per_keyframe"] == pytest.approx(base["per_keyframe"], abs=1e-3)


class TestAccuracy:
    def _pano(self, camera, depth, valid=None):
        if valid is None:
            valid = np.ones(camera.shape, bool)
        return DepthPanorama(camera=camera, depth=depth.astype(np.float32), valid=valid)

    def test_perfect_prediction(self, small_camera, rng):
        depth = rng.uniform(1, 5, small_camera.shape)
        gt = self._pano(small_camera, depth)
        result = accuracy(self._pano(small_camera, depth), gt)
        assert result["defined"]
        assert result["mean_abs_rel"] == 0.0
        assert result["rmse_m"] == 0.0
        assert result["inlier_2pc"] == 1.0

    def test_one_percent_scaling(self, small_camera):
        depth = np.full(small_camera.shape, 2.0)
        gt = self._pano(small_camera, depth)
        pred = self._pano(small_camera, depth * 1.01)
        result = accuracy(pred, gt)
        assert result["mean_abs_rel"] == pytest.approx(0.01, abs=1e-6)
        assert result["inlier_2pc"] == 1.0

    def test_joint_validity(self, small_camera, rng):
        depth = rng.uniform(1, 5, small_camera.shape)
        va = rng.random(small_camera.shape) > 0.5
        vb = rng.random(small_camera.shape) > 0.5
        res = accuracy(self._pano(small_camera, depth, va),
                       self._pano(small_camera, depth, vb))
        assert res["valid_pixels"] == int((va & vb).sum())

    def test_undefined_overlap(self, small_camera):
        depth = np.ones(small_camera.shape)
        empty = np.zeros(small_camera.shape, bool)
        res = accuracy(self._pano(small_camera, depth, empty),
                       self._pano(small_camera, depth))
        assert not res["defined"]
        assert np.isnan(res["mean_abs_rel"])

    def test_resolution_mismatch_rejected(self, small_camera):
        other = EquirectCamera(128, 64)
        with pytest.raises(ValueError):
            accuracy(
                self._pano(small_camera, np.ones(small_camera.shape)),
                self._pano(other, np.ones(other.shape)),
            )


class TestVoxelOccupancy:
    def test_empty(self):
        assert voxel_occupancy(np.zeros((0, 3))) == 0

    def test_counts_unique_cells(self):
        pts = np.array([[0.01, 0.01, 0.01], [0.02, 0.05, 0.03], [0.95, 0.0, 0.0]])
        assert voxel_occupancy(pts, voxel=0.1) == 2
