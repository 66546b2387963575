"""Evaluation metrics: raster completeness, depth accuracy, voxel coverage."""

from __future__ import annotations

import numpy as np

from .engine import DepthPanorama
from .geometry import EquirectCamera, RigidPose

COMPLETENESS_CAMERA = EquirectCamera(720, 360)


def completeness(
    points: np.ndarray,
    poses: list[RigidPose],
    camera: EquirectCamera = COMPLETENESS_CAMERA,
) -> dict:
    """Fraction of raster pixels covered by projected cloud points, per pose.

    Every point is splatted to its nearest pixel in an equirectangular raster
    rendered at each keyframe pose; completeness is occupied / total pixels.
    """
    pts = np.asarray(points, np.float64).reshape(-1, 3)
    h, w = camera.shape
    series = []
    for pose in poses:
        if pts.shape[0] == 0:
            series.append(0.0)
            continue
        local = (pts - pose.translation) @ pose.rotation
        r = np.linalg.norm(local, axis=1)
        keep = r > 1e-12
        local = local[keep]
        r = r[keep]
        lon = np.arctan2(local[:, 0], local[:, 2])
        lon = np.where(lon >= np.pi, lon - 2.0 * np.pi, lon)
        u = (lon + np.pi) * (w / (2.0 * np.pi)) - 0.5
        v = np.arccos(np.clip(-local[:, 1] / r, -1.0, 1.0)) * (h / np.pi) - 0.5
        px = np.rint(u).astype(np.int64) % w
        py = np.clip(np.rint(v).astype(np.int64), 0, h - 1)
        raster = np.zeros((h, w), bool)
        raster[py, px] = True
        series.append(float(raster.mean()))
    return {
        "per_keyframe": series,
        "mean": float(np.mean(series)) if series else 0.0,
        "point_count": int(pts.shape[0]),
        "resolution": [camera.width, camera.height],
    }


def accuracy(prediction: DepthPanorama, ground_truth: DepthPanorama) -> dict:
    """Per-pixel depth error statistics over jointly valid pixels."""
    if prediction.camera != ground_truth.camera:
        raise ValueError(
            f"resolution mismatch: prediction {prediction.camera.shape} "
            f"vs ground truth {ground_truth.camera.shape}"
        )
    joint = prediction.valid & ground_truth.valid
    n = int(joint.sum())
    if n == 0:
        return {
            "defined": False,
            "mean_abs_rel": float("nan"),
            "rmse_m": float("nan"),
            "inlier_2pc": float("nan"),
            "valid_pixels": 0,
        }
    pred = prediction.depth[joint].astype(np.float64)
    gt = ground_truth.depth[joint].astype(np.float64)
    rel = np.abs(pred - gt) / gt
    return {
        "defined": True,
        "mean_abs_rel": float(rel.mean()),
        "rmse_m": float(np.sqrt(np.mean((pred - gt) ** 2))),
        "inlier_2pc": float((rel <= 0.02).mean()),
        "valid_pixels": n,
    }


def voxel_occupancy(points: np.ndarray, voxel: float = 0.1) -> int:
    """Number of occupied voxels at the given edge length."""
    pts = np.asarray(points, np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return 0
    cells = np.floor(pts / voxel).astype(np.int64)
    return int(np.unique(cells, axis=0).shape[0])
