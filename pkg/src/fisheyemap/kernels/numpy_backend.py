"""Vectorized numpy reference implementations of the hot kernels.

This backend is the semantic ground truth: the native extension must produce
bit-identical outputs (same float ops in the same order per output element).
The ``threads`` argument is accepted for signature parity and ignored.

Shared argument conventions:

* ``pose`` is a flat (12,) float64 array: row-major 3x3 rotation then the
  3-vector translation, mapping input points as ``X_out = R @ X_in + t``.
* ``cam`` is a flat (7,) float64 array: xi, fx, fy, cx, cy, width, height
  of a unified-projection fisheye camera.
* Depth values are ranges along unit pixel rays, 0 where invalid.

Dots and matrix products are spelled out componentwise on purpose: BLAS and
einsum may contract multiply-adds into FMAs, which would break bit parity
with the extension (compiled with -ffp-contract=off).
"""

from __future__ import annotations

import numpy as np

from .common import BLOCK, ZNCC_VAR_EPS, box_sums, intra_offsets, pack_keys

_DENOM_EPS = 1e-9
_RAY_EPS = 1e-12


def _rotate(rot, x, y, z):
    """Apply a row-major 3x3 rotation componentwise, fixed summation order."""
    ox = (x * rot[0, 0] + y * rot[0, 1]) + z * rot[0, 2]
    oy = (x * rot[1, 0] + y * rot[1, 1]) + z * rot[1, 2]
    oz = (x * rot[2, 0] + y * rot[2, 1]) + z * rot[2, 2]
    return ox, oy, oz


def _project(x, y, z, cam):
    """Unified-model projection of camera-frame point components.

    Returns (u, v, valid); u, v are continuous pixel coords, garbage where
    invalid. Image-bounds checks are left to the caller (sampling and
    integration need different margins).
    """
    xi, fx, fy, cx, cy = cam[0], cam[1], cam[2], cam[3], cam[4]
    rho = np.sqrt((x * x + y * y) + z * z)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = z / rho + xi
        scale = 1.0 / (rho * denom)
        u = (fx * x) * scale + cx
        v = (fy * y) * scale + cy
    valid = (rho > _RAY_EPS) & (denom > _DENOM_EPS)
    return u, v, valid


def plane_view_cost(rays, ref_img, ref_sum, ref_sumsq, ref_ok, plane, pose,
                    cam, src_img, window, z_lo, z_hi, out_cost, threads=0):
    """ZNCC matching cost of one plane hypothesis against one support view.

    For every reference pixel the pixel ray is intersected with the plane
    ``{X : n . X = d}`` (``plane`` = [nx, ny, nz, d], reference camera frame),
    the point is mapped through ``pose`` (reference -> support) and sampled
    bilinearly in ``src_img``. Costs are (1 - ZNCC) / 2 over ``window`` x
    ``window`` patches; NaN marks invalid pixels.

    A pixel is invalid when its window leaves the reference image, any sample
    in the window fails (ray-plane range outside (z_lo, z_hi], projection
    undefined, or sample point outside the support image), or either patch
    variance is below ``ZNCC_VAR_EPS``.

    ``ref_sum``/``ref_sumsq``/``ref_ok`` are the window sums of the reference
    image and its interior mask (precomputed once per sweep scale).
    """
    h, w = ref_img.shape
    n = float(window * window)
    rot = np.asarray(pose[:9], dtype=np.float64).reshape(3, 3)
    trans = np.asarray(pose[9:12], dtype=np.float64)
    src_w = int(cam[5])
    src_h = int(cam[6])

    rx, ry, rz = rays[..., 0], rays[..., 1], rays[..., 2]
    nx, ny, nz, d = float(plane[0]), float(plane[1]), float(plane[2]), float(plane[3])
    ndotr = (rx * nx + ry * ny) + rz * nz
    with np.errstate(divide="ignore", invalid="ignore"):
        t = d / ndotr
    gate = (ndotr > _RAY_EPS) & (t > z_lo) & (t <= z_hi)

    with np.errstate(invalid="ignore"):
        px, py, pz = t * rx, t * ry, t * rz
        wx, wy, wz = _rotate(rot, px, py, pz)
        u, v, pvalid = _project(wx + trans[0], wy + trans[1], wz + trans[2], cam)

    with np.errstate(invalid="ignore"):
        xs = u - 0.5
        ys = v - 0.5
        valid = (
            gate & pvalid
            & (xs >= 0.0) & (xs <= src_w - 1.0)
            & (ys >= 0.0) & (ys <= src_h - 1.0)
        )
    xs = np.where(valid, xs, 0.0)
    ys = np.where(valid, ys, 0.0)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, src_w - 2)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, src_h - 2)
    fx_ = xs - x0
    fy_ = ys - y0
    i00 = src_img[y0, x0]
    i01 = src_img[y0, x0 + 1]
    i10 = src_img[y0 + 1, x0]
    i11 = src_img[y0 + 1, x0 + 1]
    b = (1.0 - fy_) * ((1.0 - fx_) * i00 + fx_ * i01) + fy_ * ((1.0 - fx_) * i10 + fx_ * i11)
    b = np.where(valid, b, 0.0)

    a64 = np.asarray(ref_img, dtype=np.float64)
    s_m = box_sums(valid.astype(np.float64), window)
    s_b = box_sums(b, window)
    s_bb = box_sums(b * b, window)
    s_ab = box_sums(a64 * b, window)

    full = (ref_ok != 0) & (s_m >= n - 0.5)
    mean_a = ref_sum / n
    mean_b = s_b / n
    var_a = ref_sumsq / n - mean_a * mean_a
    var_b = s_bb / n - mean_b * mean_b
    ok = full & (var_a >= ZNCC_VAR_EPS) & (var_b >= ZNCC_VAR_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        zncc = (s_ab / n - mean_a * mean_b) / np.sqrt(var_a * var_b)
    zncc = np.clip(zncc, -1.0, 1.0)
    out_cost[:] = np.where(ok, (1.0 - zncc) * 0.5, np.nan).astype(np.float32)


def wta(cost_vol, planes, labels, sweep_idx, rays, out_depth, out_best,
        out_second, threads=0):
    """Winner-take-all over a stacked cost volume.

    ``cost_vol`` is (P, H, W) float32 with NaN invalid entries, ``planes`` is
    (P, 4) [nx, ny, nz, d] in the reference frame, ``labels`` (P,) tags each
    plane with its sweep and ``sweep_idx`` (P,) with its index inside that
    sweep. Ties pick the lowest stacking index. The runner-up cost excludes
    the winner's sweep neighbours (same label, index within +-1); if nothing
    else is valid the runner-up is the sentinel 1.0. Output depth is the
    winning plane's ray intersection range, 0 where no plane is valid.
    """
    p, h, w = cost_vol.shape
    slab = max(1, (1 << 22) // max(1, p * w))
    for r0 in range(0, h, slab):
        r1 = min(h, r0 + slab)
        vol = cost_vol[:, r0:r1, :].astype(np.float64)
        vol = np.where(np.isnan(vol), np.inf, vol)
        best = vol.min(axis=0)
        widx = vol.argmin(axis=0)
        valid = np.isfinite(best)

        lab_w = labels[widx]
        idx_w = sweep_idx[widx]
        elig = (labels[:, None, None] != lab_w[None]) | (
            np.abs(sweep_idx[:, None, None] - idx_w[None]) > 1
        )
        second = np.where(elig, vol, np.inf).min(axis=0)
        second = np.where(np.isfinite(second), second, 1.0)

        nw = planes[widx, :3]
        dw = planes[widx, 3]
        r = rays[r0:r1]
        ndotr = (nw[..., 0] * r[..., 0] + nw[..., 1] * r[..., 1]) + nw[..., 2] * r[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = dw / ndotr
        dvalid = valid & np.isfinite(t) & (t > 0.0)
        out_depth[r0:r1] = np.where(dvalid, t, 0.0).astype(np.float32)
        out_best[r0:r1] = np.where(valid, best, 1.0).astype(np.float32)
        out_second[r0:r1] = np.where(valid, second, 1.0).astype(np.float32)


def integrate_blocks(tsdf, weight, obs, coords, rows, depth, pose, cam,
                     voxel_size, mu, w_max, threads=0):
    """Fuse one depth map into the listed voxel blocks (in place).

    ``rows`` indexes the visible blocks; every voxel of those blocks is
    projected into the depth map through ``pose`` (world -> camera). With
    measured range d and voxel range r, eta = d - r; voxels with eta >= -mu
    get the running-average update D <- (w D + min(1, eta / mu)) / (w + 1),
    w <- min(w + 1, w_max). ``obs`` gains 1 per block that had any voxel
    updated.
    """
    rot = np.asarray(pose[:9], dtype=np.float64).reshape(3, 3)
    trans = np.asarray(pose[9:12], dtype=np.float64)
    img_h, img_w = depth.shape
    intra = intra_offsets()
    wmaxf = float(w_max)

    chunk = 512
    for c0 in range(0, len(rows), chunk):
        rr = rows[c0 : c0 + chunk]
        base = coords[rr].astype(np.float64) * BLOCK
        pos = (base[:, None, :] + intra[None]) + 0.5
        px = pos[..., 0] * voxel_size
        py = pos[..., 1] * voxel_size
        pz = pos[..., 2] * voxel_size
        wx, wy, wz = _rotate(rot, px, py, pz)
        xc, yc, zc = wx + trans[0], wy + trans[1], wz + trans[2]
        u, v, valid = _project(xc, yc, zc, cam)
        rho = np.sqrt((xc * xc + yc * yc) + zc * zc)
        u = np.where(valid, u, -1.0)
        v = np.where(valid, v, -1.0)
        ix = np.floor(u).astype(np.int64)
        iy = np.floor(v).astype(np.int64)
        valid &= (ix >= 0) & (ix < img_w) & (iy >= 0) & (iy < img_h)
        d = depth[np.clip(iy, 0, img_h - 1), np.clip(ix, 0, img_w - 1)].astype(np.float64)
        valid &= d > 0.0
        eta = d - rho
        upd = valid & (eta >= -mu)

        w_old = weight[rr].astype(np.float64)
        d_old = tsdf[rr]
        s = np.minimum(1.0, eta / mu)
        tsdf[rr] = np.where(upd, (w_old * d_old + s) / (w_old + 1.0), d_old)
        weight[rr] = np.where(upd, np.minimum(w_old + 1.0, wmaxf), w_old).astype(np.uint16)
        obs[rr] += upd.any(axis=1)


def _sample_tsdf(points, tsdf, weight, sorted_keys, sorted_rows, voxel_size):
    """Trilinear TSDF sample at world points (M, 3).

    Corner weights are renormalized over corners with observation weight > 0;
    points with no observed corner are invalid. Returns (values, valid).
    """
    m = points.shape[0]
    q = points / voxel_size - 0.5
    q0 = np.floor(q).astype(np.int64)
    frac = q - q0
    num = np.zeros(m, dtype=np.float64)
    den = np.zeros(m, dtype=np.float64)
    nkeys = len(sorted_keys)
    for corner in range(8):
        off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1], dtype=np.int64)
        vx = q0 + off
        blk = vx >> 3
        intra = vx - (blk << 3)
        keys = pack_keys(blk)
        idx = np.searchsorted(sorted_keys, keys)
        idx_c = np.clip(idx, 0, max(0, nkeys - 1))
        found = (idx < nkeys) & (nkeys > 0)
        found &= sorted_keys[idx_c] == keys
        row = sorted_rows[idx_c]
        lin = (intra[:, 0] * BLOCK + intra[:, 1]) * BLOCK + intra[:, 2]
        w_c = np.where(found, weight[row, lin], 0).astype(np.float64)
        d_c = np.where(found, tsdf[row, lin], 0.0)
        wx = frac[:, 0] if off[0] else 1.0 - frac[:, 0]
        wy = frac[:, 1] if off[1] else 1.0 - frac[:, 1]
        wz = frac[:, 2] if off[2] else 1.0 - frac[:, 2]
        wt = (wx * wy) * wz
        occ = (w_c > 0.0).astype(np.float64)
        num += (wt * occ) * d_c
        den += wt * occ
    ok = den > 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(ok, num / den, 0.0)
    return val, ok


def raycast_depth(tsdf, weight, sorted_keys, sorted_rows, rays, pose,
                  voxel_size, z_min, z_max, step, out_depth, threads=0):
    """Render a depth map by marching pixel rays through the TSDF.

    ``pose`` maps camera to world (so pose t is the camera center). Rays are
    stepped from z_min to z_max; a surface is a sign change from a positive
    to a non-positive sample between two consecutive valid samples, refined
    with one secant step. Output is range along the ray, 0 where no surface.
    """
    h, w = out_depth.shape
    rot = np.asarray(pose[:9], dtype=np.float64).reshape(3, 3)
    origin = np.asarray(pose[9:12], dtype=np.float64)
    flat = rays.reshape(-1, 3)
    dx, dy, dz = _rotate(rot, flat[:, 0], flat[:, 1], flat[:, 2])
    dirs = np.stack([dx, dy, dz], axis=1)
    m = dirs.shape[0]

    result = np.zeros(m, dtype=np.float64)
    alive = np.arange(m)
    prev_val = np.zeros(m, dtype=np.float64)
    prev_ok = np.zeros(m, dtype=bool)

    n_steps = int(np.floor((z_max - z_min) / step)) + 1
    for k in range(n_steps):
        if alive.size == 0:
            break
        t = z_min + k * step
        pts = origin[None, :] + t * dirs[alive]
        val, ok = _sample_tsdf(pts, tsdf, weight, sorted_keys, sorted_rows, voxel_size)
        pv = prev_val[alive]
        po = prev_ok[alive]
        hit = po & ok & (pv > 0.0) & (val <= 0.0)
        if np.any(hit):
            idx = alive[hit]
            delta = pv[hit] - val[hit]
            frac = np.where(delta > 1e-12, pv[hit] / np.maximum(delta, 1e-12), 0.0)
            result[idx] = (t - step) + step * frac
        prev_val[alive] = val
        prev_ok[alive] = ok
        alive = alive[~hit]
    out_depth[:] = result.reshape(h, w).astype(np.float32)
