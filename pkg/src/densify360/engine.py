"""Plane-hypothesis stereo for one equirectangular reference frame.

Pipeline per stereo group: initialize a plane map (randomly and/or warped
from the previous keyframe), then alternate checkerboard propagation passes
with randomized refinement, and extract a depth panorama.  The compiled
kernels in :mod:`densify360.kernels` do the per-pixel work; this module owns
array lifecycles, RNG handling, and the reference (pure numpy) cost
implementation used by tests and oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import kernels
from .errors import ConfigError
from .geometry import (
    EquirectCamera,
    PlaneHypothesis,
    camera_rays,
    relative_transform,
)
from .keyframes import StereoGroup, to_gray

DEFAULT_REFINE_THETA_DEG = 60.0
DEFAULT_REFINE_DEPTH_FRACTION = 0.25
REFINE_CANDIDATES = 6


@dataclass(frozen=True)
class PatchSpec:
    """Reference-patch sampling and cost truncation parameters.

    The patch covers ``(2*half_window + 1)**2`` pixels; samples are taken on
    the stride-``sample_stride`` grid centred on the pixel, i.e. at offsets
    ``k * sample_stride`` with ``|k * sample_stride| <= half_window`` along
    each axis.
    """

    half_window: int = 5
    sample_stride: int = 2
    cost_truncation: float = 1.2

    def __post_init__(self) -> None:
        if self.half_window < 1:
            raise ConfigError(f"patchmatch.half_window must be >= 1, got {self.half_window}")
        if self.sample_stride < 1:
            raise ConfigError(
                f"patchmatch.sample_stride must be >= 1, got {self.sample_stride}"
            )
        if not self.cost_truncation > 0:
            raise ConfigError(
                f"patchmatch.cost_truncation must be > 0, got {self.cost_truncation}"
            )

    def sample_offsets(self) -> np.ndarray:
        """(S, 2) int32 array of (dx, dy) patch sample offsets."""
        reach = (self.half_window // self.sample_stride) * self.sample_stride
        steps = np.arange(-reach, reach + 1, self.sample_stride, dtype=np.int32)
        out = [(dx, dy) for dy in steps for dx in steps]
        return np.array(out, dtype=np.int32)


@dataclass
class PlaneMap:
    """Per-pixel plane hypotheses with costs and a validity mask.

    ``cost`` is the matching cost of the stored hypothesis; entries are +inf
    until evaluated against a stereo group (fresh random or warped
    hypotheses).  ``depth_range`` records the engine's configured depth
    interval, which every stored depth respects.
    """

    camera: EquirectCamera
    depth: np.ndarray
    normal: np.ndarray
    cost: np.ndarray
    valid: np.ndarray
    depth_range: tuple[float, float]

    @classmethod
    def empty(cls, camera: EquirectCamera, depth_range: tuple[float, float]) -> "PlaneMap":
        h, w = camera.shape
        return cls(
            camera=camera,
            depth=np.zeros((h, w), np.float32),
            normal=np.zeros((h, w, 3), np.float32),
            cost=np.full((h, w), np.inf, np.float32),
            valid=np.zeros((h, w), bool),
            depth_range=depth_range,
        )

    @property
    def width(self) -> int:
        return self.camera.width

    @property
    def height(self) -> int:
        return self.camera.height

    def copy(self) -> "PlaneMap":
        return PlaneMap(
            camera=self.camera,
            depth=self.depth.copy(),
            normal=self.normal.copy(),
            cost=self.cost.copy(),
            valid=self.valid.copy(),
            depth_range=self.depth_range,
        )

    def hypothesis(self, x: int, y: int) -> PlaneHypothesis:
        return PlaneHypothesis(
            depth=float(self.depth[y, x]), normal=self.normal[y, x].astype(np.float64)
        )


@dataclass
class DepthPanorama:
    """Dense per-pixel depth with a validity mask."""

    camera: EquirectCamera
    depth: np.ndarray
    valid: np.ndarray

    def copy(self) -> "DepthPanorama":
        return DepthPanorama(self.camera, self.depth.copy(), self.valid.copy())

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


class PreparedGroup:
    """Stereo group unpacked into the kernel array layout (cached per group)."""

    def __init__(self, group: StereoGroup, spec: PatchSpec):
        self.group = group
        self.spec = spec
        self.camera = group.camera
        self.ref_gray = to_gray(group.reference.image)
        self.nb0 = to_gray(group.neighbors[0].image)
        self.nb1 = to_gray(group.neighbors[1].image)
        self.rays = camera_rays(self.camera).astype(np.float32)
        self.rays64 = camera_rays(self.camera)
        rel = [
            relative_transform(group.reference.pose, nb.pose) for nb in group.neighbors
        ]
        self.rel_r = np.stack([r for r, _ in rel]).astype(np.float32)
        self.rel_t = np.stack([t for _, t in rel]).astype(np.float32)
        self.rel_r64 = np.stack([r for r, _ in rel])
        self.rel_t64 = np.stack([t for _, t in rel])
        self.offsets = spec.sample_offsets()


def prepare_group(group: StereoGroup, spec: PatchSpec) -> PreparedGroup:
    return PreparedGroup(group, spec)


def _as_prepared(group: StereoGroup | PreparedGroup, spec: PatchSpec) -> PreparedGroup:
    if isinstance(group, PreparedGroup):
        return group
    return PreparedGroup(group, spec)


def patch_cost(
    group: StereoGroup | PreparedGroup,
    pixel: tuple[int, int],
    hypothesis: PlaneHypothesis,
    spec: PatchSpec,
) -> float:
    """Reference matching cost of one hypothesis at one pixel (pure numpy).

    Mirrors the compiled kernel's semantics — truncated 1-NCC over the patch
    samples, averaged over both neighbors, with the truncation value as the
    penalty for unusable patches — but uses exact trigonometry.  This is the
    implementation tests and oracles compare against.
    """
    prep = _as_prepared(group, spec)
    x, y = int(pixel[0]), int(pixel[1])
    h, w = prep.camera.shape
    trunc = spec.cost_truncation
    n = np.asarray(hypothesis.normal, np.float64)
    anchor = prep.rays64[y, x]
    if float(n @ anchor) >= -kernels.FACING_EPS:
        return trunc

    offs = prep.offsets
    qx = (x + offs[:, 0]) % w
    qy = np.clip(y + offs[:, 1], 0, h - 1)
    ref_vals = prep.ref_gray[qy, qx].astype(np.float64)
    mr = ref_vals.mean()
    sr = ref_vals.std()
    if sr < kernels.SIGMA_EPS:
        return trunc

    rays = prep.rays64[qy, qx]
    den = rays @ n
    if np.any(den >= -kernels.PARALLEL_EPS):
        return trunc
    lam = (hypothesis.depth * float(n @ anchor)) / den
    pts = lam[:, None] * rays

    total = 0.0
    for v in range(2):
        t = pts @ prep.rel_r64[v].T + prep.rel_t64[v]
        r = np.linalg.norm(t, axis=1)
        lon = np.arctan2(t[:, 0], t[:, 2])
        sphi = np.clip(-t[:, 1] / np.maximum(r, 1e-15), -1.0, 1.0)
        u = (lon + np.pi) * (w / (2 * np.pi)) - 0.5
        vv = np.arccos(sphi) * (h / np.pi) - 0.5
        img = prep.nb0 if v == 0 else prep.nb1
        vals = _bilinear_np(img, u, vv)
        ms = vals.mean()
        vs = vals.var()
        if vs < kernels.VAR_EPS:
            total += trunc
            continue
        ncc = ((ref_vals * vals).mean() - mr * ms) / (sr * math.sqrt(vs))
        total += min(max(1.0 - ncc, 0.0), trunc)
    return 0.5 * total


def _bilinear_np(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorised bilinear sampling with horizontal wrap and vertical clamp."""
    h, w = img.shape
    u0 = np.floor(u).astype(np.int64)
    fu = u - u0
    u0 %= w
    u1 = (u0 + 1) % w
    vc = np.clip(v, 0.0, h - 1.0)
    v0 = np.minimum(vc.astype(np.int64), h - 2)
    fv = vc - v0
    v1 = v0 + 1
    img64 = img.astype(np.float64)
    top = img64[v0, u0] * (1 - fu) + img64[v0, u1] * fu
    bot = img64[v1, u0] * (1 - fu) + img64[v1, u1] * fu
    return top * (1 - fv) + bot * fv


def random_init(
    plane_map: PlaneMap, depth_range: tuple[float, float], seed: int
) -> PlaneMap:
    """Fill every invalid pixel with a random plane hypothesis.

    Depths are uniform in inverse depth over ``depth_range``; normals are
    uniform over the hemisphere facing the pixel's viewing ray.  Fresh draws
    are generated for the full raster from ``seed``, so a given pixel receives
    the same hypothesis regardless of which other pixels were already filled.
    Valid pixels pass through untouched.
    """
    dmin, dmax = float(depth_range[0]), float(depth_range[1])
    if not (dmin > 0.0 and dmax > dmin):
        raise ConfigError(
            f"patchmatch.depth_range must satisfy 0 < min < max, got [{dmin}, {dmax}]"
        )
    cam = plane_map.camera
    h, w = cam.shape
    rng = np.random.default_rng(seed)
    inv = rng.uniform(1.0 / dmax, 1.0 / dmin, size=(h, w))
    depths = (1.0 / inv).astype(np.float32)

    g = rng.standard_normal((h, w, 3))
    g /= np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
    rays = camera_rays(cam)
    dot = np.sum(g * rays, axis=-1)
    # Reflect upper-hemisphere draws across the tangent plane so every normal
    # faces the camera; the map preserves uniformity.
    g = np.where(dot[..., None] > 0.0, g - 2.0 * dot[..., None] * rays, g)
    dot = np.sum(g * rays, axis=-1)
    g = np.where(dot[..., None] >= -1e-6, -rays, g)

    out = plane_map.copy()
    fill = ~out.valid
    out.depth[fill] = depths[fill]
    out.normal[fill] = g.astype(np.float32)[fill]
    out.cost[fill] = np.inf
    out.valid[:] = True
    out.depth_range = (dmin, dmax)
    return out


def warp_plane_map(
    previous: PlaneMap,
    pose_prev,
    pose_cur,
    camera: EquirectCamera,
) -> PlaneMap:
    """Transfer an optimized plane map into the next keyframe's view.

    Every valid source plane is lifted to 3D, moved through the relative
    pose, and lands on the nearest target pixel; the hypothesis stored there
    is the plane re-anchored on that pixel's viewing ray.  When several
    source pixels hit one target, the smallest source cost wins.  Targets
    with no writer, a non-positive or out-of-range transferred depth, or a
    back-facing transferred plane stay unfilled.
    """
    h, w = camera.shape
    out = PlaneMap.empty(camera, previous.depth_range)
    src_valid = previous.valid & np.isfinite(previous.cost)
    if not src_valid.any():
        return out

    sy, sx = np.nonzero(src_valid)
    rays = camera_rays(previous.camera)
    d = previous.depth[sy, sx].astype(np.float64)
    n = previous.normal[sy, sx].astype(np.float64)
    a = rays[sy, sx]
    pts = d[:, None] * a

    r_rel, t_rel = relative_transform(pose_prev, pose_cur)
    pts_cur = pts @ r_rel.T + t_rel
    n_cur = n @ r_rel.T

    # Target pixel and its center ray.
    rr = np.linalg.norm(pts_cur, axis=1)
    keep = rr > 1e-9
    lon = np.arctan2(pts_cur[:, 0], pts_cur[:, 2])
    sphi = np.clip(-pts_cur[:, 1] / np.maximum(rr, 1e-15), -1.0, 1.0)
    px = (lon + np.pi) * (w / (2 * np.pi)) - 0.5
    py = (np.pi / 2 - np.arcsin(sphi)) * (h / np.pi) - 0.5
    tx = np.rint(px).astype(np.int64) % w
    ty = np.clip(np.rint(py).astype(np.int64), 0, h - 1)

    tgt_rays = camera_rays(camera)[ty, tx]
    num = np.sum(pts_cur * n_cur, axis=1)
    den = np.sum(tgt_rays * n_cur, axis=1)
    keep &= den < -kernels.FACING_EPS
    new_depth = np.where(den != 0.0, num / np.where(den == 0.0, 1.0, den), -1.0)
    dmin, dmax = previous.depth_range
    keep &= (new_depth >= dmin) & (new_depth <= dmax)
    if not keep.any():
        return out

    src_cost = previous.cost[sy, sx][keep]
    flat = (ty[keep] * w + tx[keep]).astype(np.int64)
    depth_k = new_depth[keep].astype(np.float32)
    normal_k = n_cur[keep].astype(np.float32)
    # Smallest source cost wins each contested target pixel; ties resolve to
    # the earliest source pixel in scan order (lexsort is stable).
    order = np.lexsort((src_cost, flat))
    flat_sorted = flat[order]
    first = np.ones(len(flat_sorted), bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    sel = order[first]

    fy, fx = np.divmod(flat[sel], w)
    out.depth[fy, fx] = depth_k[sel]
    out.normal[fy, fx] = normal_k[sel]
    out.cost[fy, fx] = src_cost[sel]
    out.valid[fy, fx] = True
    return out


def _check_initialized(init: PlaneMap) -> None:
    if not init.valid.all():
        raise ConfigError(
            "run_patchmatch requires a fully initialized plane map; "
            "fill unfilled pixels with random_init first"
        )


def _evaluate_all(prep: PreparedGroup, depth, normal, cost) -> None:
    kernels.eval_costs(
        depth,
        normal,
        cost,
        prep.rays,
        prep.ref_gray,
        prep.nb0,
        prep.nb1,
        prep.rel_r,
        prep.rel_t,
        prep.offsets,
        prep.spec.cost_truncation,
    )


def red_black_iteration(
    plane_map: PlaneMap,
    group: StereoGroup | PreparedGroup,
    spec: PatchSpec,
    parity: str | int,
) -> PlaneMap:
    """One checkerboard propagation pass; returns the post-pass plane map.

    ``parity`` is "red"/0 or "black"/1 and selects the pixels with
    ``(x + y) % 2 == parity`` for update.  Costs are evaluated first if the
    map still carries unevaluated (+inf) entries.
    """
    parity_idx = {"red": 0, "black": 1, 0: 0, 1: 1}.get(parity)
    if parity_idx is None:
        raise ConfigError(f"parity must be 'red' or 'black', got {parity!r}")
    _check_initialized(plane_map)
    prep = _as_prepared(group, spec)
    cur = plane_map.copy()
    if not np.isfinite(cur.cost).all():
        _evaluate_all(prep, cur.depth, cur.normal, cur.cost)
    out = cur.copy()
    kernels.red_black_pass(
        parity_idx,
        kernels.NEIGHBOR_OFFSETS,
        cur.depth,
        cur.normal,
        cur.cost,
        out.depth,
        out.normal,
        out.cost,
        prep.rays,
        prep.ref_gray,
        prep.nb0,
        prep.nb1,
        prep.rel_r,
        prep.rel_t,
        prep.offsets,
        spec.cost_truncation,
    )
    return out


@dataclass(frozen=True)
class RefinementResult:
    hypothesis: PlaneHypothesis
    cost: float
    evaluations: int


def random_refinement(
    plane_map: PlaneMap,
    group: StereoGroup | PreparedGroup,
    spec: PatchSpec,
    pixel: tuple[int, int],
    rng_state: np.random.Generator,
    theta_deg: float = DEFAULT_REFINE_THETA_DEG,
    depth_fraction: float = DEFAULT_REFINE_DEPTH_FRACTION,
) -> RefinementResult:
    """Reference single-pixel refinement: 6 shrinking random candidates.

    Candidate ``i`` perturbs depth within ``+/- delta_d / 2**i`` and tilts the
    normal within a cone of ``theta / 2**i``; a candidate replaces the
    current hypothesis iff its cost is strictly lower.  Returns the final
    hypothesis along with its cost and the number of cost evaluations made
    (always 6).  The batch kernel applies the same schedule to all pixels.
    """
    prep = _as_prepared(group, spec)
    x, y = int(pixel[0]), int(pixel[1])
    dmin, dmax = plane_map.depth_range
    delta_d = depth_fraction * (dmax - dmin)
    theta = math.radians(theta_deg)

    d = float(plane_map.depth[y, x])
    n = plane_map.normal[y, x].astype(np.float64)
    c = float(plane_map.cost[y, x])
    if not math.isfinite(c):
        c = patch_cost(prep, (x, y), PlaneHypothesis(depth=d, normal=_unit(n)), spec)
    a = prep.rays64[y, x]
    evals = 0
    for i in range(REFINE_CANDIDATES):
        scale = 0.5**i
        nd = min(max(d + rng_state.uniform(-1.0, 1.0) * delta_d * scale, dmin), dmax)
        ang = rng_state.uniform(0.0, 1.0) * theta * scale
        az = rng_state.uniform(0.0, 2.0 * math.pi)
        e1 = np.cross(n, a)
        m = np.linalg.norm(e1)
        if m < 1e-6:
            e1 = np.cross(n, np.array([0.0, -1.0, 0.0]))
            m = np.linalg.norm(e1)
            if m < 1e-6:
                e1 = np.array([1.0, 0.0, 0.0])
                m = 1.0
        e1 /= m
        e2 = np.cross(n, e1)
        cand_n = n * math.cos(ang) + (e1 * math.cos(az) + e2 * math.sin(az)) * math.sin(
            ang
        )
        cand_n = _unit(cand_n)
        cand_cost = patch_cost(prep, (x, y), PlaneHypothesis(depth=nd, normal=cand_n), spec)
        evals += 1
        if cand_cost < c:
            c = cand_cost
            d = nd
            n = cand_n
    return RefinementResult(
        hypothesis=PlaneHypothesis(depth=d, normal=_unit(n)), cost=c, evaluations=evals
    )


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _refinement_draw_tables(
    rng: np.random.Generator,
    iterations: int,
    delta_d: float,
    theta: float,
) -> list[tuple[np.ndarray, ...]]:
    """Per-iteration candidate perturbations, shared by all pixels.

    Sampling order per candidate matches :func:`random_refinement` (depth
    offset, cone angle, azimuth) so the two paths draw from identical
    schedules.
    """
    tables = []
    for _ in range(iterations):
        dd = np.empty(REFINE_CANDIDATES, np.float64)
        ang = np.empty(REFINE_CANDIDATES, np.float64)
        az = np.empty(REFINE_CANDIDATES, np.float64)
        for i in range(REFINE_CANDIDATES):
            scale = 0.5**i
            dd[i] = rng.uniform(-1.0, 1.0) * delta_d * scale
            ang[i] = rng.uniform(0.0, 1.0) * theta * scale
            az[i] = rng.uniform(0.0, 2.0 * math.pi)
        tables.append(
            (
                dd.astype(np.float32),
                np.sin(ang).astype(np.float32),
                np.cos(ang).astype(np.float32),
                np.cos(az).astype(np.float32),
                np.sin(az).astype(np.float32),
            )
        )
    return tables


def run_patchmatch(
    group: StereoGroup | PreparedGroup,
    init: PlaneMap,
    spec: PatchSpec,
    iterations: int,
    seed: int,
    workers: int | None = None,
    refine_theta_deg: float = DEFAULT_REFINE_THETA_DEG,
    refine_depth_fraction: float = DEFAULT_REFINE_DEPTH_FRACTION,
) -> tuple[PlaneMap, DepthPanorama]:
    """Optimize a plane map and extract its depth panorama.

    Each full iteration runs a red pass, a black pass, and one randomized
    refinement sweep.  Deterministic for fixed inputs and seed, independent
    of ``workers``.  Pixels whose final cost reaches the truncation value
    (no photoconsistent support, e.g. textureless patches) are marked
    invalid in the returned panorama.
    """
    if iterations < 1:
        raise ConfigError(f"patchmatch.iterations must be >= 1, got {iterations}")
    _check_initialized(init)
    prep = _as_prepared(group, spec)
    if prep.camera != init.camera:
        raise ConfigError(
            f"plane map camera {init.camera} does not match group camera {prep.camera}"
        )
    if workers is not None and workers > 0:
        numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))

    dmin, dmax = init.depth_range
    delta_d = refine_depth_fraction * (dmax - dmin)
    rng = np.random.default_rng(seed)
    tables = _refinement_draw_tables(rng, iterations, delta_d, math.radians(refine_theta_deg))

    cur = init.copy()
    _evaluate_all(prep, cur.depth, cur.normal, cur.cost)
    nxt = cur.copy()

    # Monotonicity spot checks: fixed probe pixels, asserted every pass.
    h, w = prep.camera.shape
    probe_y = np.linspace(0, h - 1, 8).astype(np.int64)
    probe_x = np.linspace(0, w - 1, 8).astype(np.int64)

    trunc = spec.cost_truncation
    for it in range(iterations):
        for parity in (0, 1):
            np.copyto(nxt.depth, cur.depth)
            np.copyto(nxt.normal, cur.normal)
            np.copyto(nxt.cost, cur.cost)
            kernels.red_black_pass(
                parity,
                kernels.NEIGHBOR_OFFSETS,
                cur.depth,
                cur.normal,
                cur.cost,
                nxt.depth,
                nxt.normal,
                nxt.cost,
                prep.rays,
                prep.ref_gray,
                prep.nb0,
                prep.nb1,
                prep.rel_r,
                prep.rel_t,
                prep.offsets,
                trunc,
            )
            assert (
                nxt.cost[probe_y, probe_x] <= cur.cost[probe_y, probe_x]
            ).all(), "propagation increased a probe pixel's cost"
            cur, nxt = nxt, cur
        before = cur.cost[probe_y, probe_x].copy()
        dd, sa, ca, caz, saz = tables[it]
        kernels.refine_pass(
            cur.depth,
            cur.normal,
            cur.cost,
            dd,
            sa,
            ca,
            caz,
            saz,
            dmin,
            dmax,
            prep.rays,
            prep.ref_gray,
            prep.nb0,
            prep.nb1,
            prep.rel_r,
            prep.rel_t,
            prep.offsets,
            trunc,
        )
        assert (
            cur.cost[probe_y, probe_x] <= before
        ).all(), "refinement increased a probe pixel's cost"

    pano = DepthPanorama(
        camera=prep.camera,
        depth=cur.depth.copy(),
        valid=cur.cost < trunc,
    )
    return cur, pano


def median_outlier_filter(
    depth: DepthPanorama, window: int = 5, rel_threshold: float = 0.2
) -> DepthPanorama:
    """Invalidate pixels that disagree with their window's median depth.

    The filter only removes pixels — surviving depths pass through unchanged
    and the output validity mask is a subset of the input's.
    """
    if window < 3 or window % 2 == 0:
        raise ConfigError(f"median filter window must be odd and >= 3, got {window}")
    out_valid = np.zeros_like(depth.valid)
    kernels.median_support_mask(
        depth.depth, depth.valid, window // 2, rel_threshold, out_valid
    )
    return DepthPanorama(camera=depth.camera, depth=depth.depth.copy(), valid=out_valid)
