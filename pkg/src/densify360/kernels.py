"""Compiled per-pixel kernels for plane-hypothesis stereo on equirectangular rasters.

All kernels operate on pre-packed float32 arrays and are deliberately free of
Python objects.  Per-pixel work never reads another pixel's *output*, so the
results are independent of the parallel schedule and worker count.

Shared array layout (one stereo group):

* ``rays``     (H, W, 3)  unit viewing ray per reference pixel
* ``ref_gray`` (H, W)     reference intensities in [0, 1]
* ``nb0/nb1``  (H, W)     neighbor intensities in [0, 1]
* ``rel_r``    (2, 3, 3)  rotation reference-cam -> neighbor-cam
* ``rel_t``    (2, 3)     translation reference-cam -> neighbor-cam
* ``offsets``  (S, 2)     integer (dx, dy) patch sample offsets

Horizontal indices wrap modulo width (360 degree continuity); vertical
indices clamp at the polar rows.

The hot path hoists everything reusable out of the candidate loop: for each
pixel a small context block is gathered once (sample rays, their rotations
into both neighbor frames, reference intensities, patch mean/sigma), after
which each candidate hypothesis costs one pass of straight-line arithmetic
over the samples.  The projection math uses polynomial atan/acos (~3e-7 rad)
so the loop stays free of libm calls and data-dependent branches.
"""

import math

import numpy as np
from numba import njit, prange

# Matching-cost penalty guards: a hypothesis whose plane faces away from the
# camera, or whose patch cannot be sampled, scores the truncation value.
FACING_EPS = 1e-6
PARALLEL_EPS = 1e-9
SIGMA_EPS = 1e-4
VAR_EPS = 1e-8

# Rows of the per-pixel context block (see _gather_ctx).
_CTX_ROWS = 10

# Propagation neighborhood: four diagonal neighbors plus four axis-aligned
# ones pushed out to distance two.
NEIGHBOR_OFFSETS = np.array(
    [
        (-1, -1),
        (1, -1),
        (-1, 1),
        (1, 1),
        (0, -2),
        (0, 2),
        (-2, 0),
        (2, 0),
    ],
    dtype=np.int32,
)


@njit(fastmath=True, cache=True)
def _fast_atan2(y_, x_):
    """Polynomial atan2, max error ~3e-7 rad (~2e-5 px at width 512).

    Branchless, and the octant reduction makes the result exactly symmetric
    under quarter-turn rotations of the argument pair, which the longitude
    wraparound tests rely on.
    """
    ax = abs(x_)
    ay = abs(y_)
    hi = ax if ax > ay else ay
    lo = ay if ax > ay else ax
    r = lo / (hi + 1e-300)
    s = r * r
    p = r * (
        9.999999227776e-01
        + s
        * (
            -3.333223261885e-01
            + s
            * (
                1.997402857787e-01
                + s
                * (
                    -1.404782123164e-01
                    + s
                    * (
                        1.000220525649e-01
                        + s
                        * (
                            -6.087448223083e-02
                            + s * (2.533170107199e-02 + s * -5.021063913876e-03)
                        )
                    )
                )
            )
        )
    )
    p = 1.5707963267948966 - p if ay > ax else p
    p = 3.141592653589793 - p if x_ < 0.0 else p
    return -p if y_ < 0.0 else p


@njit(fastmath=True, cache=True)
def _fast_acos(x_):
    """Polynomial acos on [-1, 1], max error ~6e-8 rad.  Branchless."""
    a = abs(x_)
    a = 1.0 if a > 1.0 else a
    p = (
        1.570796263346e00
        + a
        * (
            -2.145970563340e-01
            + a
            * (
                8.895977933699e-02
                + a
                * (
                    -5.008467775423e-02
                    + a
                    * (
                        3.068214201158e-02
                        + a
                        * (
                            -1.682974898800e-02
                            + a * (6.510368059701e-03 + a * -1.223553911532e-03)
                        )
                    )
                )
            )
        )
    ) * math.sqrt(1.0 - a)
    return 3.141592653589793 - p if x_ < 0.0 else p


@njit(fastmath=True, cache=True)
def _bilinear(img, u, v):
    """Bilinear sample with horizontal wrap and vertical clamp."""
    h, w = img.shape
    u0 = int(math.floor(u))
    fu = u - u0
    u0 = u0 + w if u0 < 0 else u0
    u0 = u0 - w if u0 >= w else u0
    u1 = u0 + 1
    u1 = 0 if u1 == w else u1
    vc = 0.0 if v < 0.0 else v
    vm = h - 1.0
    vc = vm if vc > vm else vc
    v0 = int(vc)
    v0 = h - 2 if v0 > h - 2 else v0
    fv = vc - v0
    v1 = v0 + 1
    top = img[v0, u0] * (1.0 - fu) + img[v0, u1] * fu
    bot = img[v1, u0] * (1.0 - fu) + img[v1, u1] * fu
    return top * (1.0 - fv) + bot * fv


@njit(fastmath=True, cache=True)
def _gather_ctx(x, y, rays, ref_gray, offsets, rel_r, buf):
    """Fill the per-pixel context block; returns (patch mean, patch sigma).

    ``buf`` rows: 0..2 sample ray, 3..5 ray rotated into neighbor 0,
    6..8 ray rotated into neighbor 1, 9 reference intensity.
    """
    h, w = ref_gray.shape
    s = offsets.shape[0]
    acc = 0.0
    acc2 = 0.0
    for k in range(s):
        qx = x + offsets[k, 0]
        if qx < 0:
            qx += w
        elif qx >= w:
            qx -= w
        qy = y + offsets[k, 1]
        if qy < 0:
            qy = 0
        elif qy >= h:
            qy = h - 1
        bx = rays[qy, qx, 0]
        by = rays[qy, qx, 1]
        bz = rays[qy, qx, 2]
        buf[0, k] = bx
        buf[1, k] = by
        buf[2, k] = bz
        buf[3, k] = rel_r[0, 0, 0] * bx + rel_r[0, 0, 1] * by + rel_r[0, 0, 2] * bz
        buf[4, k] = rel_r[0, 1, 0] * bx + rel_r[0, 1, 1] * by + rel_r[0, 1, 2] * bz
        buf[5, k] = rel_r[0, 2, 0] * bx + rel_r[0, 2, 1] * by + rel_r[0, 2, 2] * bz
        buf[6, k] = rel_r[1, 0, 0] * bx + rel_r[1, 0, 1] * by + rel_r[1, 0, 2] * bz
        buf[7, k] = rel_r[1, 1, 0] * bx + rel_r[1, 1, 1] * by + rel_r[1, 1, 2] * bz
        buf[8, k] = rel_r[1, 2, 0] * bx + rel_r[1, 2, 1] * by + rel_r[1, 2, 2] * bz
        v = ref_gray[qy, qx]
        buf[9, k] = v
        acc += v
        acc2 += v * v
    m = acc / s
    var = acc2 / s - m * m
    if var < 0.0:
        var = 0.0
    return m, math.sqrt(var)


@njit(fastmath=True, cache=True)
def _cand_cost(
    d,
    nx,
    ny,
    nz,
    ax,
    ay,
    az,
    mr,
    sr,
    buf,
    scr,
    t0x,
    t0y,
    t0z,
    t1x,
    t1y,
    t1z,
    nb0,
    nb1,
    trunc,
):
    """Truncated 1-NCC of one hypothesis over the preloaded pixel context.

    Phase A projects every patch sample into both neighbors (straight-line
    math into ``scr``); phase B gathers the bilinear intensities and reduces
    them to the normalized correlation.  Any sample whose ray misses the
    plane poisons the candidate to the truncation cost.
    """
    s = buf.shape[1]
    ndota = nx * ax + ny * ay + nz * az
    if ndota >= -FACING_EPS or sr < SIGMA_EPS:
        return trunc
    num = d * ndota
    h, w = nb0.shape
    half_w = w * (0.5 / math.pi)
    lat_scale = h / math.pi
    bad = 0.0
    for k in range(s):
        den = nx * buf[0, k] + ny * buf[1, k] + nz * buf[2, k]
        bad = 1.0 if den > -PARALLEL_EPS else bad
        dn = den if den < -PARALLEL_EPS else -PARALLEL_EPS
        lam = num / dn
        tx = lam * buf[3, k] + t0x
        ty = lam * buf[4, k] + t0y
        tz = lam * buf[5, k] + t0z
        inv_r = 1.0 / math.sqrt(tx * tx + ty * ty + tz * tz + 1e-30)
        sphi = -ty * inv_r
        scr[0, k] = (_fast_atan2(tx, tz) + math.pi) * half_w - 0.5
        scr[1, k] = _fast_acos(sphi) * lat_scale - 0.5
        tx = lam * buf[6, k] + t1x
        ty = lam * buf[7, k] + t1y
        tz = lam * buf[8, k] + t1z
        inv_r = 1.0 / math.sqrt(tx * tx + ty * ty + tz * tz + 1e-30)
        sphi = -ty * inv_r
        scr[2, k] = (_fast_atan2(tx, tz) + math.pi) * half_w - 0.5
        scr[3, k] = _fast_acos(sphi) * lat_scale - 0.5
    if bad > 0.0:
        return trunc
    s0 = 0.0
    ss0 = 0.0
    rs0 = 0.0
    s1 = 0.0
    ss1 = 0.0
    rs1 = 0.0
    for k in range(s):
        val0 = _bilinear(nb0, scr[0, k], scr[1, k])
        val1 = _bilinear(nb1, scr[2, k], scr[3, k])
        rv = buf[9, k]
        s0 += val0
        ss0 += val0 * val0
        rs0 += rv * val0
        s1 += val1
        ss1 += val1 * val1
        rs1 += rv * val1
    inv_s = 1.0 / s
    total = 0.0
    m0 = s0 * inv_s
    v0 = ss0 * inv_s - m0 * m0
    if v0 < VAR_EPS:
        total += trunc
    else:
        c = 1.0 - (rs0 * inv_s - mr * m0) / (sr * math.sqrt(v0))
        c = 0.0 if c < 0.0 else c
        c = trunc if c > trunc else c
        total += c
    m1 = s1 * inv_s
    v1 = ss1 * inv_s - m1 * m1
    if v1 < VAR_EPS:
        total += trunc
    else:
        c = 1.0 - (rs1 * inv_s - mr * m1) / (sr * math.sqrt(v1))
        c = 0.0 if c < 0.0 else c
        c = trunc if c > trunc else c
        total += c
    return 0.5 * total


@njit(parallel=True, fastmath=True, cache=True)
def eval_costs(
    depth,
    normal,
    cost_out,
    rays,
    ref_gray,
    nb0,
    nb1,
    rel_r,
    rel_t,
    offsets,
    trunc,
):
    """Matching cost of every pixel's current hypothesis."""
    h, w = depth.shape
    s = offsets.shape[0]
    t0x = rel_t[0, 0]
    t0y = rel_t[0, 1]
    t0z = rel_t[0, 2]
    t1x = rel_t[1, 0]
    t1y = rel_t[1, 1]
    t1z = rel_t[1, 2]
    for y in prange(h):
        buf = np.empty((_CTX_ROWS, s), np.float32)
        scr = np.empty((4, s), np.float32)
        for x in range(w):
            mr, sr = _gather_ctx(x, y, rays, ref_gray, offsets, rel_r, buf)
            cost_out[y, x] = _cand_cost(
                depth[y, x],
                normal[y, x, 0],
                normal[y, x, 1],
                normal[y, x, 2],
                rays[y, x, 0],
                rays[y, x, 1],
                rays[y, x, 2],
                mr,
                sr,
                buf,
                scr,
                t0x,
                t0y,
                t0z,
                t1x,
                t1y,
                t1z,
                nb0,
                nb1,
                trunc,
            )


@njit(parallel=True, fastmath=True, cache=True)
def red_black_pass(
    parity,
    neighbor_offsets,
    depth_in,
    normal_in,
    cost_in,
    depth_out,
    normal_out,
    cost_out,
    rays,
    ref_gray,
    nb0,
    nb1,
    rel_r,
    rel_t,
    offsets,
    trunc,
):
    """One propagation pass over pixels with (x + y) % 2 == parity.

    Reads hypotheses only from the pre-pass arrays and writes only this
    parity's slots of the post-pass arrays, so any parallel schedule yields
    the same result.  The caller pre-copies the in-arrays into the
    out-arrays so off-parity pixels carry over unchanged.
    """
    h, w = depth_in.shape
    s = offsets.shape[0]
    n_off = neighbor_offsets.shape[0]
    t0x = rel_t[0, 0]
    t0y = rel_t[0, 1]
    t0z = rel_t[0, 2]
    t1x = rel_t[1, 0]
    t1y = rel_t[1, 1]
    t1z = rel_t[1, 2]
    for y in prange(h):
        buf = np.empty((_CTX_ROWS, s), np.float32)
        scr = np.empty((4, s), np.float32)
        cand_d = np.empty(n_off, np.float32)
        cand_nx = np.empty(n_off, np.float32)
        cand_ny = np.empty(n_off, np.float32)
        cand_nz = np.empty(n_off, np.float32)
        x0 = (parity + y) & 1
        for x in range(x0, w, 2):
            bd = depth_in[y, x]
            bnx = normal_in[y, x, 0]
            bny = normal_in[y, x, 1]
            bnz = normal_in[y, x, 2]
            bc = cost_in[y, x]
            gathered = False
            mr = 0.0
            sr = 0.0
            n_seen = 0
            for j in range(n_off):
                qy = y + neighbor_offsets[j, 1]
                if qy < 0 or qy >= h:
                    continue
                qx = x + neighbor_offsets[j, 0]
                if qx < 0:
                    qx += w
                elif qx >= w:
                    qx -= w
                d = depth_in[qy, qx]
                nx = normal_in[qy, qx, 0]
                ny = normal_in[qy, qx, 1]
                nz = normal_in[qy, qx, 2]
                # Identical hypotheses can't win a strict comparison; skip
                # re-evaluating them.
                dup = d == bd and nx == bnx and ny == bny and nz == bnz
                if not dup:
                    for m in range(n_seen):
                        if (
                            d == cand_d[m]
                            and nx == cand_nx[m]
                            and ny == cand_ny[m]
                            and nz == cand_nz[m]
                        ):
                            dup = True
                            break
                if dup:
                    continue
                cand_d[n_seen] = d
                cand_nx[n_seen] = nx
                cand_ny[n_seen] = ny
                cand_nz[n_seen] = nz
                n_seen += 1
                if not gathered:
                    mr, sr = _gather_ctx(x, y, rays, ref_gray, offsets, rel_r, buf)
                    gathered = True
                c = _cand_cost(
                    d,
                    nx,
                    ny,
                    nz,
                    rays[y, x, 0],
                    rays[y, x, 1],
                    rays[y, x, 2],
                    mr,
                    sr,
                    buf,
                    scr,
                    t0x,
                    t0y,
                    t0z,
                    t1x,
                    t1y,
                    t1z,
                    nb0,
                    nb1,
                    trunc,
                )
                if c < bc:
                    bc = c
                    bd = d
                    bnx = nx
                    bny = ny
                    bnz = nz
            depth_out[y, x] = bd
            normal_out[y, x, 0] = bnx
            normal_out[y, x, 1] = bny
            normal_out[y, x, 2] = bnz
            cost_out[y, x] = bc


@njit(parallel=True, fastmath=True, cache=True)
def refine_pass(
    depth,
    normal,
    cost,
    cand_dd,
    cand_sa,
    cand_ca,
    cand_caz,
    cand_saz,
    depth_min,
    depth_max,
    rays,
    ref_gray,
    nb0,
    nb1,
    rel_r,
    rel_t,
    offsets,
    trunc,
):
    """Randomized hypothesis refinement, one call per full iteration.

    The per-candidate perturbations — a signed depth delta ``cand_dd[i]`` and
    a normal rotation given by cone angle (sin/cos in ``cand_sa``/``cand_ca``)
    and azimuth (``cand_caz``/``cand_saz``) — are shared by every pixel and
    applied in each pixel's local tangent frame.  Shared draws keep the result
    equivariant under longitude rolls of the whole input; the caller encodes
    the shrinking search schedule into the magnitudes.  Candidates that break
    the facing or depth-range constraints lose by scoring the truncation cost.
    Updates are in place; each pixel only ever touches its own state.
    """
    h, w = depth.shape
    s = offsets.shape[0]
    n_cand = cand_dd.shape[0]
    t0x = rel_t[0, 0]
    t0y = rel_t[0, 1]
    t0z = rel_t[0, 2]
    t1x = rel_t[1, 0]
    t1y = rel_t[1, 1]
    t1z = rel_t[1, 2]
    for y in prange(h):
        buf = np.empty((_CTX_ROWS, s), np.float32)
        scr = np.empty((4, s), np.float32)
        for x in range(w):
            d = depth[y, x]
            nx = normal[y, x, 0]
            ny = normal[y, x, 1]
            nz = normal[y, x, 2]
            c = cost[y, x]
            ax = rays[y, x, 0]
            ay = rays[y, x, 1]
            az = rays[y, x, 2]
            mr, sr = _gather_ctx(x, y, rays, ref_gray, offsets, rel_r, buf)
            basis_stale = True
            e1x = e1y = e1z = e2x = e2y = e2z = 0.0
            for i in range(n_cand):
                nd = d + cand_dd[i]
                if nd < depth_min:
                    nd = depth_min
                elif nd > depth_max:
                    nd = depth_max
                if basis_stale:
                    # Tangent basis of the current normal, built from
                    # pixel-local vectors so it rotates with the scene.
                    e1x = ny * az - nz * ay
                    e1y = nz * ax - nx * az
                    e1z = nx * ay - ny * ax
                    m2 = e1x * e1x + e1y * e1y + e1z * e1z
                    if m2 < 1e-12:
                        # Normal parallel to the ray: fall back to world up.
                        e1x = -nz
                        e1y = 0.0
                        e1z = nx
                        m2 = e1x * e1x + e1z * e1z
                        if m2 < 1e-12:
                            e1x = 1.0
                            e1z = 0.0
                            m2 = 1.0
                    inv = 1.0 / math.sqrt(m2)
                    e1x *= inv
                    e1y *= inv
                    e1z *= inv
                    e2x = ny * e1z - nz * e1y
                    e2y = nz * e1x - nx * e1z
                    e2z = nx * e1y - ny * e1x
                    basis_stale = False
                sa = cand_sa[i]
                ca = cand_ca[i]
                caz = cand_caz[i]
                saz = cand_saz[i]
                cnx = nx * ca + (e1x * caz + e2x * saz) * sa
                cny = ny * ca + (e1y * caz + e2y * saz) * sa
                cnz = nz * ca + (e1z * caz + e2z * saz) * sa
                nrm = math.sqrt(cnx * cnx + cny * cny + cnz * cnz)
                if nrm < 1e-12:
                    continue
                inv = 1.0 / nrm
                cnx *= inv
                cny *= inv
                cnz *= inv
                ev = _cand_cost(
                    nd,
                    cnx,
                    cny,
                    cnz,
                    ax,
                    ay,
                    az,
                    mr,
                    sr,
                    buf,
                    scr,
                    t0x,
                    t0y,
                    t0z,
                    t1x,
                    t1y,
                    t1z,
                    nb0,
                    nb1,
                    trunc,
                )
                if ev < c:
                    c = ev
                    d = nd
                    nx = cnx
                    ny = cny
                    nz = cnz
                    basis_stale = True
            depth[y, x] = d
            normal[y, x, 0] = nx
            normal[y, x, 1] = ny
            normal[y, x, 2] = nz
            cost[y, x] = c


@njit(parallel=True, cache=True)
def median_support_mask(depth, valid, half, rel_threshold, out_valid):
    """Keep valid pixels whose depth stays within rel_threshold of the window median.

    Invalid pixels are excluded from the window statistics and stay invalid.
    Horizontal window indices wrap; vertical ones stop at the polar rows.
    """
    h, w = depth.shape
    win = 2 * half + 1
    for y in prange(h):
        buf = np.empty(win * win, np.float32)
        for x in range(w):
            if not valid[y, x]:
                out_valid[y, x] = False
                continue
            n = 0
            for dy in range(-half, half + 1):
                qy = y + dy
                if qy < 0 or qy >= h:
                    continue
                for dx in range(-half, half + 1):
                    qx = x + dx
                    if qx < 0:
                        qx += w
                    elif qx >= w:
                        qx -= w
                    if valid[qy, qx]:
                        buf[n] = depth[qy, qx]
                        n += 1
            vals = np.sort(buf[:n])
            if n % 2 == 1:
                med = vals[n // 2]
            else:
                med = 0.5 * (vals[n // 2 - 1] + vals[n // 2])
            out_valid[y, x] = abs(depth[y, x] - med) <= rel_threshold * med
