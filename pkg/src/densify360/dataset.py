"""Dataset directory loader: manifest validation and keyframe materialization.

Expected layout::

    <dataset>/
      dataset.json        manifest (see below)
      *.png               8-bit RGB equirectangular keyframe images

Manifest schema (all fields required unless noted)::

    {
      "camera": {"width": int, "height": int},      # width must equal 2*height
      "keyframes": [
        {
          "id": int,                                # strictly increasing
          "image": "file.png",                      # relative to the directory
          "rotation": [r00..r22],                   # world-from-camera, row-major
          "translation": [tx, ty, tz],              # camera center, meters
          "sparse_points": [[x, y, z], ...]         # world-frame landmarks
        }, ...
      ],
      "synthetic": {...}                            # optional scene descriptor
    }
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError
from .geometry import EquirectCamera, GeometryError, RigidPose
from .keyframes import Keyframe

_KEYFRAME_FIELDS = ("id", "image", "rotation", "translation", "sparse_points")


@dataclass
class Dataset:
    root: Path
    camera: EquirectCamera
    entries: list[dict]
    manifest_hash: str
    synthetic: dict | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def load_keyframe(self, index: int) -> Keyframe:
        entry = self.entries[index]
        path = self.root / entry["image"]
        try:
            with Image.open(path) as im:
                image = np.asarray(im.convert("RGB"))
        except OSError as exc:
            raise DatasetError(f"cannot read keyframe image {path}: {exc}") from exc
        if image.shape[:2] != self.camera.shape:
            raise DatasetError(
                f"image {path} is {image.shape[1]}x{image.shape[0]}, "
                f"manifest camera is {self.camera.width}x{self.camera.height}"
            )
        try:
            pose = RigidPose(
                rotation=np.asarray(entry["rotation"], np.float64).reshape(3, 3),
                translation=np.asarray(entry["translation"], np.float64),
            )
        except (GeometryError, ValueError) as exc:
            raise DatasetError(
                f"keyframe {entry['id']}: invalid pose: {exc}"
            ) from exc
        return Keyframe(
            id=int(entry["id"]),
            image=image,
            pose=pose,
            sparse_points=np.asarray(entry["sparse_points"], np.float64).reshape(-1, 3),
        )

    def keyframes(self):
        for i in range(len(self.entries)):
            yield self.load_keyframe(i)


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise DatasetError(f"{context}: missing required field {key!r}")
    return mapping[key]


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    manifest_path = root / "dataset.json"
    try:
        raw = manifest_path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        manifest = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise DatasetError(f"manifest {manifest_path}: top level must be an object")

    cam = _require(manifest, "camera", "manifest")
    width = _require(cam, "width", "manifest camera")
    height = _require(cam, "height", "manifest camera")
    try:
        camera = EquirectCamera(int(width), int(height))
    except GeometryError as exc:
        raise DatasetError(f"manifest camera: {exc}") from exc

    entries = _require(manifest, "keyframes", "manifest")
    if not isinstance(entries, list):
        raise DatasetError("manifest: 'keyframes' must be a list")
    last_id = None
    for k, entry in enumerate(entries):
        context = f"keyframe entry {k}"
        if not isinstance(entry, dict):
            raise DatasetError(f"{context}: must be an object")
        for field_name in _KEYFRAME_FIELDS:
            _require(entry, field_name, context)
        if len(entry["rotation"]) != 9:
            raise DatasetError(f"{context}: 'rotation' must hold 9 numbers (row-major)")
        if len(entry["translation"]) != 3:
            raise DatasetError(f"{context}: 'translation' must hold 3 numbers")
        kf_id = int(entry["id"])
        if last_id is not None and kf_id <= last_id:
            raise DatasetError(
                f"{context}: id {kf_id} does not increase over predecessor {last_id}"
            )
        last_id = kf_id

    return Dataset(
        root=root,
        camera=camera,
        entries=entries,
        manifest_hash=hashlib.sha256(raw).hexdigest(),
        synthetic=manifest.get("synthetic"),
    )


def resample_keyframe(keyframe: Keyframe, camera: EquirectCamera) -> Keyframe:
    """Resize a keyframe's image to another equirectangular resolution."""
    if keyframe.image.shape[:2] == camera.shape:
        return keyframe
    im = Image.fromarray(keyframe.image)
    resized = np.asarray(im.resize((camera.width, camera.height), Image.LANCZOS))
    return Keyframe(
        id=keyframe.id,
        image=resized,
        pose=keyframe.pose,
        sparse_points=keyframe.sparse_points,
    )
