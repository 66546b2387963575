"""End-to-end densification pipeline.

Flow: keyframe ingestion → view filter → sliding 3-frame stereo groups →
PatchMatch densification (plane-map warping between consecutive jobs) →
median outlier removal → 5-window consistency filter → 4-deep fusion buffer
with duplicate erasure → growing fused cloud.

The three stages (ingest/filter, depth compute, consistency+fusion) can run
serially or as threads over bounded FIFO queues; both schedules produce
bit-identical output because every stage is deterministic and order-preserving
by keyframe id.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .dataset import Dataset, load_dataset, resample_keyframe
from .engine import (
    DepthPanorama,
    PatchSpec,
    PlaneMap,
    median_outlier_filter,
    random_init,
    run_patchmatch,
    warp_plane_map,
)
from .errors import ConfigError, OrderingError
from .geometry import EquirectCamera, RigidPose, camera_rays, row_latitudes
from .keyframes import Keyframe, StereoGroup
from .viewfilter import ViewFilterConfig, ViewFilterDecision, view_filter_accept

if TYPE_CHECKING:  # pragma: no cover
    from .config import EngineConfig

log = logging.getLogger("densify360")

# Latitude band treated as low-confidence: patch geometry degenerates at the
# poles, so these rows are densified but excluded from fusion.
POLE_LAT_LIMIT_DEG = 85.0


@dataclass(frozen=True)
class ConsistencyConfig:
    window: int = 5
    min_support: int = 2
    rel_depth_tol: float = 0.01

    def __post_init__(self) -> None:
        if self.window < 2:
            raise ConfigError(f"consistency.window must be >= 2, got {self.window}")
        if not (1 <= self.min_support < self.window):
            raise ConfigError(
                "consistency.min_support must satisfy 1 <= min_support < window, "
                f"got min_support={self.min_support}, window={self.window}"
            )
        if self.rel_depth_tol <= 0:
            raise ConfigError(
                f"consistency.rel_depth_tol must be > 0, got {self.rel_depth_tol}"
            )


@dataclass(frozen=True)
class FusionConfig:
    buffer: int = 4
    reproj_px: float = 1.0
    rel_depth_tol: float = 0.01

    def __post_init__(self) -> None:
        if self.buffer < 1:
            raise ConfigError(f"fusion.buffer must be >= 1, got {self.buffer}")
        if self.reproj_px <= 0:
            raise ConfigError(f"fusion.reproj_px must be > 0, got {self.reproj_px}")
        if self.rel_depth_tol <= 0:
            raise ConfigError(
                f"fusion.rel_depth_tol must be > 0, got {self.rel_depth_tol}"
            )


@dataclass
class FusedCloud:
    """World-space point cloud with per-point color and source keyframe."""

    points: np.ndarray
    colors: np.ndarray
    source_ids: np.ndarray

    @classmethod
    def empty(cls) -> "FusedCloud":
        return cls(
            points=np.zeros((0, 3), np.float64),
            colors=np.zeros((0, 3), np.uint8),
            source_ids=np.zeros((0,), np.int64),
        )

    @classmethod
    def concat(cls, batches: list["FusedCloud"]) -> "FusedCloud":
        if not batches:
            return cls.empty()
        return cls(
            points=np.concatenate([b.points for b in batches]),
            colors=np.concatenate([b.colors for b in batches]),
            source_ids=np.concatenate([b.source_ids for b in batches]),
        )

    def __len__(self) -> int:
        return self.points.shape[0]


def project_points(
    camera: EquirectCamera, pose: RigidPose, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World points (N, 3) → continuous (u, v) pixels and range in ``pose``."""
    local = (np.asarray(points, np.float64) - pose.translation) @ pose.rotation
    r = np.linalg.norm(local, axis=1)
    lon = np.arctan2(local[:, 0], local[:, 2])
    lon = np.where(lon >= np.pi, lon - 2.0 * np.pi, lon)
    u = (lon + np.pi) * (camera.width / (2.0 * np.pi)) - 0.5
    safe_r = np.maximum(r, 1e-300)
    v = np.arccos(np.clip(-local[:, 1] / safe_r, -1.0, 1.0)) * (camera.height / np.pi) - 0.5
    return u, v, r


class KeyframeBuffer:
    """Ingestion state machine: ordering check, view filter, stereo triples."""

    def __init__(self, camera: EquirectCamera, config: ViewFilterConfig):
        self.camera = camera
        self.config = config
        self._window: deque[Keyframe] = deque(maxlen=3)
        self._latest: Keyframe | None = None
        self._last_id: int | None = None
        self.submitted = 0
        self.accepted = 0

    def submit(self, keyframe: Keyframe) -> tuple[ViewFilterDecision, StereoGroup | None]:
        """Feed one keyframe; returns the filter decision and a stereo job
        when a fresh triple is complete."""
        if self._last_id is not None and keyframe.id <= self._last_id:
            raise OrderingError(
                f"keyframe id {keyframe.id} arrived after id {self._last_id}; "
                "ids must be strictly increasing"
            )
        self._last_id = keyframe.id
        self.submitted += 1

        if self._latest is None:
            decision = ViewFilterDecision(
                accepted=True, fraction=1.0, common_points=0, reason="first-keyframe"
            )
        else:
            decision = view_filter_accept(keyframe, self._latest, self.config)
        if not decision.accepted:
            log.debug(
                "view filter rejected keyframe %d (%s, fraction=%.3f)",
                keyframe.id, decision.reason, decision.fraction,
            )
            return decision, None

        self.accepted += 1
        self._latest = keyframe
        self._window.append(keyframe)
        if len(self._window) == 3:
            a, b, c = self._window
            group = StereoGroup(reference=b, neighbors=(a, c), camera=self.camera)
            return decision, group
        return decision, None


@dataclass
class DepthResult:
    """Densified reference keyframe: filtered panorama plus its provenance."""

    id: int
    pano: DepthPanorama
    pose: RigidPose
    image: np.ndarray
    seconds: float


class DepthStage:
    """Sequential densification worker with plane-map warping between jobs."""

    def __init__(
        self,
        camera: EquirectCamera,
        spec: PatchSpec,
        depth_range: tuple[float, float],
        iterations: int,
        seed: int,
        warp: bool = True,
        workers: int | None = None,
        median_window: int = 5,
        median_rel_threshold: float = 0.2,
    ):
        self.camera = camera
        self.spec = spec
        self.depth_range = depth_range
        self.iterations = iterations
        self.seed = seed
        self.warp = warp
        self.workers = workers
        self.median_window = median_window
        self.median_rel_threshold = median_rel_threshold
        self._prev: tuple[PlaneMap, RigidPose] | None = None
        self._pole_rows = np.abs(np.degrees(row_latitudes(camera))) > POLE_LAT_LIMIT_DEG

    def process(self, group: StereoGroup) -> DepthResult:
        start = time.perf_counter()
        ref = group.reference
        init = PlaneMap.empty(self.camera, self.depth_range)
        if self.warp and self._prev is not None:
            prev_map, prev_pose = self._prev
            init = warp_plane_map(prev_map, prev_pose, ref.pose, self.camera)
        init = random_init(init, self.depth_range, seed=self.seed + ref.id)
        plane_map, pano = run_patchmatch(
            group,
            init,
            self.spec,
            iterations=self.iterations,
            seed=self.seed + ref.id,
            workers=self.workers,
        )
        self._prev = (plane_map, ref.pose)
        pano = median_outlier_filter(
            pano, window=self.median_window, rel_threshold=self.median_rel_threshold
        )
        pano.valid[self._pole_rows, :] = False
        return DepthResult(
            id=ref.id,
            pano=pano,
            pose=ref.pose,
            image=ref.image,
            seconds=time.perf_counter() - start,
        )


def consistency_filter(
    target: DepthPanorama,
    target_pose: RigidPose,
    window: list[tuple[DepthPanorama, RigidPose]],
    config: ConsistencyConfig,
) -> DepthPanorama:
    """Keep only target pixels whose depth is corroborated by enough frames.

    Each valid pixel is lifted to a world point, projected into every window
    frame, and compared against that frame's stored depth at the hit pixel;
    the pixel survives with at least ``min_support`` agreements.  Depth values
    are never modified, so the output validity mask is a subset of the input.
    """
    out = target.copy()
    ys, xs = np.nonzero(target.valid)
    if ys.size == 0:
        return out
    camera = target.camera
    rays = camera_rays(camera)[ys, xs]
    depths = target.depth[ys, xs].astype(np.float64)
    world = (depths[:, None] * rays) @ target_pose.rotation.T + target_pose.translation

    support = np.zeros(ys.size, np.int64)
    h, w = camera.shape
    for pano, pose in window:
        u, v, r = project_points(camera, pose, world)
        px = np.rint(u).astype(np.int64) % w
        py = np.clip(np.rint(v).astype(np.int64), 0, h - 1)
        stored = pano.depth[py, px].astype(np.float64)
        ok = pano.valid[py, px] & (
            np.abs(r - stored) <= config.rel_depth_tol * np.abs(stored)
        )
        support += ok
    survive = support >= config.min_support
    out.valid[ys, xs] = survive
    return out


class FusionBuffer:
    """Fixed-depth buffer of consistent frames with duplicate erasure.

    When the buffer is full, the oldest frame's surviving pixels become cloud
    candidates; a candidate is discarded when any newer buffered frame sees
    the same surface point (reprojection within ``reproj_px`` of a pixel whose
    depth agrees within ``rel_depth_tol``) — the newer frame emits it later.
    """

    def __init__(self, camera: EquirectCamera, config: FusionConfig):
        self.camera = camera
        self.config = config
        self._frames: deque[DepthResult] = deque()

    def push(self, frame: DepthResult) -> FusedCloud | None:
        self._frames.append(frame)
        if len(self._frames) == self.config.buffer:
            return self._fuse_oldest()
        return None

    def flush(self) -> list[FusedCloud]:
        batches = []
        while self._frames:
            batches.append(self._fuse_oldest())
        return batches

    def _fuse_oldest(self) -> FusedCloud:
        oldest = self._frames.popleft()
        ys, xs = np.nonzero(oldest.pano.valid)
        if ys.size == 0:
            return FusedCloud.empty()
        rays = camera_rays(self.camera)[ys, xs]
        depths = oldest.pano.depth[ys, xs].astype(np.float64)
        world = (depths[:, None] * rays) @ oldest.pose.rotation.T + oldest.pose.translation

        duplicate = np.zeros(ys.size, bool)
        h, w = self.camera.shape
        tol = self.config.rel_depth_tol
        radius = self.config.reproj_px
        for newer in self._frames:
            u, v, r = project_points(self.camera, newer.pose, world)
            base_x = np.rint(u).astype(np.int64)
            base_y = np.rint(v).astype(np.int64)
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    px = base_x + dx
                    py = base_y + dy
                    dist2 = (px - u) ** 2 + (py - v) ** 2
                    inside = (py >= 0) & (py < h) & (dist2 <= radius * radius)
                    px = px % w
                    py_c = np.clip(py, 0, h - 1)
                    stored = newer.pano.depth[py_c, px].astype(np.float64)
                    hit = (
                        inside
                        & newer.pano.valid[py_c, px]
                        & (np.abs(r - stored) <= tol * np.abs(stored))
                    )
                    duplicate |= hit

        keep = ~duplicate
        return FusedCloud(
            points=world[keep],
            colors=oldest.image[ys[keep], xs[keep]].astype(np.uint8),
            source_ids=np.full(int(keep.sum()), oldest.id, np.int64),
        )


@dataclass
class PipelineResult:
    cloud: FusedCloud
    depths: dict[int, DepthResult]
    report: dict
    camera: EquirectCamera


@dataclass
class _StageClock:
    ingest: float = 0.0
    depth: float = 0.0
    fuse: float = 0.0


class _ConsistencyFusion:
    """Stage C: sliding consistency window feeding the fusion buffer."""

    def __init__(self, camera: EquirectCamera, consistency: ConsistencyConfig,
                 fusion: FusionConfig):
        self.consistency = consistency
        self._window: deque[DepthResult] = deque()
        self._fusion = FusionBuffer(camera, fusion)
        self.batches: list[FusedCloud] = []
        self.filtered: dict[int, DepthResult] = {}

    def _filter_center(self) -> None:
        frames = list(self._window)
        center = len(frames) // 2
        target = frames[center]
        others = [(f.pano, f.pose) for i, f in enumerate(frames) if i != center]
        pano = consistency_filter(target.pano, target.pose, others, self.consistency)
        result = DepthResult(
            id=target.id, pano=pano, pose=target.pose,
            image=target.image, seconds=target.seconds,
        )
        self.filtered[result.id] = result
        batch = self._fusion.push(result)
        if batch is not None:
            self.batches.append(batch)

    def push(self, result: DepthResult) -> None:
        self._window.append(result)
        if len(self._window) == self.consistency.window:
            self._filter_center()
            self._window.popleft()

    def finish(self) -> None:
        self.batches.extend(self._fusion.flush())


def run_offline(dataset: Dataset | str, config: "EngineConfig") -> PipelineResult:
    """Process a whole dataset through the pipeline; deterministic per seed."""
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)

    camera = dataset.camera
    if config.processing.resolution is not None:
        camera = EquirectCamera(*config.processing.resolution)

    clock = _StageClock()
    buffer = KeyframeBuffer(camera, config.viewfilter)
    stage_b = DepthStage(
        camera=camera,
        spec=config.patchmatch.spec,
        depth_range=config.patchmatch.depth_range,
        iterations=config.patchmatch.iterations,
        seed=config.patchmatch.seed,
        warp=config.patchmatch.warp,
        workers=config.processing.workers,
        median_window=config.patchmatch.median_window,
        median_rel_threshold=config.patchmatch.median_rel_threshold,
    )
    stage_c = _ConsistencyFusion(camera, config.consistency, config.fusion)

    poses: list[RigidPose] = []
    depth_seconds: list[float] = []
    queue_peaks = {"jobs": 0, "depths": 0}

    def ingest_jobs():
        for keyframe in dataset.keyframes():
            t0 = time.perf_counter()
            if keyframe.image.shape[:2] != camera.shape:
                keyframe = resample_keyframe(keyframe, camera)
            poses.append(keyframe.pose)
            decision, group = buffer.submit(keyframe)
            clock.ingest += time.perf_counter() - t0
            if group is not None:
                yield group

    if config.processing.threaded:
        _run_threaded(
            ingest_jobs(), stage_b, stage_c, clock, depth_seconds,
            queue_peaks, config.processing.queue_size,
        )
    else:
        for group in ingest_jobs():
            result = stage_b.process(group)
            depth_seconds.append(result.seconds)
            clock.depth += result.seconds
            t0 = time.perf_counter()
            stage_c.push(result)
            clock.fuse += time.perf_counter() - t0

    t0 = time.perf_counter()
    stage_c.finish()
    clock.fuse += time.perf_counter() - t0

    cloud = FusedCloud.concat(stage_c.batches)

    from .metrics import completeness

    comp = completeness(cloud.points, poses) if poses else {
        "per_keyframe": [], "mean": 0.0, "point_count": 0,
        "resolution": [720, 360],
    }
    report = {
        "keyframes_total": buffer.submitted,
        "keyframes_accepted": buffer.accepted,
        "view_filter_acceptance": (
            buffer.accepted / buffer.submitted if buffer.submitted else 0.0
        ),
        "depth_jobs": len(depth_seconds),
        "fused_points": len(cloud),
        "stage_wall_s": {
            "ingest": clock.ingest, "depth": clock.depth, "fuse": clock.fuse,
        },
        "per_keyframe_depth_s": depth_seconds,
        "mean_depth_s": float(np.mean(depth_seconds)) if depth_seconds else 0.0,
        "queue_peak": queue_peaks,
        "completeness": comp,
        "resolution": [camera.width, camera.height],
    }
    return PipelineResult(
        cloud=cloud, depths=stage_c.filtered, report=report, camera=camera
    )


def _run_threaded(jobs, stage_b, stage_c, clock, depth_seconds, queue_peaks, size):
    """Depth compute and fusion as consumer threads over bounded queues."""
    jobs_q: queue.Queue = queue.Queue(maxsize=size)
    depth_q: queue.Queue = queue.Queue(maxsize=size)
    errors: list[BaseException] = []

    def depth_worker():
        try:
            while True:
                group = jobs_q.get()
                if group is None:
                    depth_q.put(None)
                    return
                result = stage_b.process(group)
                depth_seconds.append(result.seconds)
                clock.depth += result.seconds
                depth_q.put(result)
                queue_peaks["depths"] = max(queue_peaks["depths"], depth_q.qsize())
        except BaseException as exc:  # propagate to the main thread
            errors.append(exc)
            while jobs_q.get() is not None:
                pass
            depth_q.put(None)

    def fuse_worker():
        try:
            while True:
                result = depth_q.get()
                if result is None:
                    return
                t0 = time.perf_counter()
                stage_c.push(result)
                clock.fuse += time.perf_counter() - t0
        except BaseException as exc:
            errors.append(exc)
            while depth_q.get() is not None:
                pass

    tb = threading.Thread(target=depth_worker, name="densify-depth")
    tc = threading.Thread(target=fuse_worker, name="densify-fuse")
    tb.start()
    tc.start()
    try:
        for group in jobs:
            jobs_q.put(group)
            queue_peaks["jobs"] = max(queue_peaks["jobs"], jobs_q.qsize())
    finally:
        jobs_q.put(None)
    tb.join()
    tc.join()
    if errors:
        raise errors[0]
