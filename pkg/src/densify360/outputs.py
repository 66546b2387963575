"""Run artifacts: binary PLY cloud, 16-bit depth PNGs, JSON reports.

All writers are deterministic byte-for-byte for identical inputs, which the
pipeline's reproducibility guarantee relies on.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .engine import DepthPanorama
from .errors import DatasetError
from .geometry import EquirectCamera, GeometryError
from .pipeline import FusedCloud

_PLY_DTYPE = np.dtype(
    [
        ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ]
)

DEPTH_SCALE_MM = 1000.0  # stored uint16 value = depth in millimeters


def write_ply(path: str | Path, cloud: FusedCloud) -> None:
    n = len(cloud)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    records = np.empty(n, _PLY_DTYPE)
    pts = cloud.points.astype(np.float32)
    records["x"] = pts[:, 0]
    records["y"] = pts[:, 1]
    records["z"] = pts[:, 2]
    records["red"] = cloud.colors[:, 0]
    records["green"] = cloud.colors[:, 1]
    records["blue"] = cloud.colors[:, 2]
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(records.tobytes())


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read back a cloud written by write_ply: (points f64, colors u8)."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise DatasetError(f"{path}: not a PLY file written by this tool")
    header = data[:end].decode("ascii").splitlines()
    n = None
    for line in header:
        if line.startswith("element vertex "):
            n = int(line.split()[-1])
    if n is None:
        raise DatasetError(f"{path}: PLY header lacks a vertex element")
    body = data[end + len(b"end_header\n") :]
    records = np.frombuffer(body, dtype=_PLY_DTYPE, count=n)
    points = np.stack(
        [records["x"], records["y"], records["z"]], axis=1
    ).astype(np.float64)
    colors = np.stack(
        [records["red"], records["green"], records["blue"]], axis=1
    )
    return points, colors


def write_depth_png(path: str | Path, pano: DepthPanorama) -> None:
    """16-bit grayscale PNG in millimeters (0 = invalid) + JSON sidecar."""
    path = Path(path)
    mm = np.rint(pano.depth.astype(np.float64) * DEPTH_SCALE_MM)
    mm = np.clip(mm, 0, 65535).astype(np.uint16)
    mm[~pano.valid] = 0
    Image.fromarray(mm).save(path)
    valid_depths = pano.depth[pano.valid]
    sidecar = {
        "scale": "millimeters",
        "width": pano.camera.width,
        "height": pano.camera.height,
        "valid_count": int(pano.valid.sum()),
        "depth_min_m": float(valid_depths.min()) if valid_depths.size else None,
        "depth_max_m": float(valid_depths.max()) if valid_depths.size else None,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def read_depth_png(path: str | Path) -> DepthPanorama:
    with Image.open(path) as im:
        mm = np.asarray(im, dtype=np.uint16)
    h, w = mm.shape
    try:
        camera = EquirectCamera(w, h)
    except GeometryError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    valid = mm > 0
    depth = mm.astype(np.float32) / DEPTH_SCALE_MM
    depth[~valid] = 0.0
    return DepthPanorama(camera=camera, depth=depth, valid=valid)


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def write_run_artifacts(
    out_dir: str | Path, effective_config: dict, seed: int, manifest_hash: str
) -> None:
    """Reproducibility capture: effective config echo + provenance record."""
    out = Path(out_dir)
    write_json(out / "config.json", effective_config)
    write_json(
        out / "run.json",
        {"seed": seed, "manifest_sha256": manifest_hash},
    )
