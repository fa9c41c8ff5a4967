# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""OpenMP kernels, bit-identical to the numpy backend.

Same float64 operations in the same order per output element as
``numpy_backend``; compiled with -ffp-contract=off so no FMA contraction
changes results. Work is split so every output element is owned by exactly
one thread, which makes results independent of the thread count.
"""

import numpy as np

cimport numpy as cnp
cimport openmp
from cython.parallel cimport prange
from libc.math cimport INFINITY, NAN, floor, isnan, sqrt

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.uint16_t u16
ctypedef cnp.uint8_t u8
ctypedef cnp.int32_t i32

cdef double _DENOM_EPS = 1e-9
cdef double _RAY_EPS = 1e-12
cdef double _VAR_EPS = 1e-8  # keep in sync with common.ZNCC_VAR_EPS
cdef i64 _KEY_OFFSET = <i64>1 << 20


cdef inline int _nthreads(int threads) noexcept nogil:
    if threads > 0:
        return threads
    return openmp.omp_get_max_threads()


cdef void _box_sums(const double[:, ::1] src, double[:, ::1] ii, double[:, ::1] out,
                    int window, int nt) noexcept nogil:
    """Sliding window sums of src into out, borders zeroed.

    ii is an (h+1, w+1) scratch integral image. Column pass then row pass,
    each parallel over independent lines, so the per-element summation order
    matches two numpy cumsums regardless of thread count.
    """
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t w = src.shape[1]
    cdef Py_ssize_t i, j
    cdef int half = window // 2
    cdef double acc

    for j in prange(0, w + 1, num_threads=nt, schedule="static"):
        ii[0, j] = 0.0
        if j >= 1:
            acc = 0.0
            for i in range(h):
                acc = acc + src[i, j - 1]
                ii[i + 1, j] = acc
    for i in prange(1, h + 1, num_threads=nt, schedule="static"):
        ii[i, 0] = 0.0
        acc = 0.0
        for j in range(1, w + 1):
            acc = acc + ii[i, j]
            ii[i, j] = acc
    for i in prange(0, h, num_threads=nt, schedule="static"):
        for j in range(w):
            if h >= window and w >= window and half <= i < h - half and half <= j < w - half:
                out[i, j] = ((ii[i + half + 1, j + half + 1] - ii[i - half, j + half + 1])
                             - ii[i + half + 1, j - half]) + ii[i - half, j - half]
            else:
                out[i, j] = 0.0


def plane_view_cost(const double[:, :, ::1] rays, const float[:, ::1] ref_img,
                    const double[:, ::1] ref_sum, const double[:, ::1] ref_sumsq,
                    const u8[:, ::1] ref_ok, const double[::1] plane, const double[::1] pose,
                    const double[::1] cam, const float[:, ::1] src_img, int window,
                    double z_lo, double z_hi, float[:, ::1] out_cost,
                    int threads=0):
    """See numpy_backend.plane_view_cost."""
    cdef Py_ssize_t h = ref_img.shape[0]
    cdef Py_ssize_t w = ref_img.shape[1]
    cdef int nt = _nthreads(threads)
    cdef double n = <double>(window * window)

    cdef double r00 = pose[0], r01 = pose[1], r02 = pose[2]
    cdef double r10 = pose[3], r11 = pose[4], r12 = pose[5]
    cdef double r20 = pose[6], r21 = pose[7], r22 = pose[8]
    cdef double t0 = pose[9], t1 = pose[10], t2 = pose[11]
    cdef double xi = cam[0], fx = cam[1], fy = cam[2], cx = cam[3], cy = cam[4]
    cdef int src_w = <int>cam[5]
    cdef int src_h = <int>cam[6]
    cdef double nx = plane[0], ny = plane[1], nz = plane[2], d = plane[3]

    buf = np.empty((4, h, w), dtype=np.float64)
    iibuf = np.empty((h + 1, w + 1), dtype=np.float64)
    sums = np.empty((4, h, w), dtype=np.float64)
    cdef double[:, ::1] qm = buf[0]
    cdef double[:, ::1] qb = buf[1]
    cdef double[:, ::1] qbb = buf[2]
    cdef double[:, ::1] qab = buf[3]
    cdef double[:, ::1] sm = sums[0]
    cdef double[:, ::1] sb = sums[1]
    cdef double[:, ::1] sbb = sums[2]
    cdef double[:, ::1] sab = sums[3]
    cdef double[:, ::1] ii = iibuf

    cdef Py_ssize_t i, j
    cdef int x0, y0
    cdef double rx, ry, rz, ndotr, t, px, py, pz, wx, wy, wz
    cdef double rho, denom, scale, u, v, xs, ys, fx_, fy_, b
    cdef double mean_a, mean_b, var_a, var_b, cov, zncc
    cdef bint valid

    with nogil:
        for i in prange(0, h, num_threads=nt, schedule="static"):
            for j in range(w):
                rx = rays[i, j, 0]
                ry = rays[i, j, 1]
                rz = rays[i, j, 2]
                ndotr = (rx * nx + ry * ny) + rz * nz
                t = d / ndotr
                valid = (ndotr > _RAY_EPS) and (t > z_lo) and (t <= z_hi)
                xs = 0.0
                ys = 0.0
                if valid:
                    px = t * rx
                    py = t * ry
                    pz = t * rz
                    wx = ((px * r00 + py * r01) + pz * r02) + t0
                    wy = ((px * r10 + py * r11) + pz * r12) + t1
                    wz = ((px * r20 + py * r21) + pz * r22) + t2
                    rho = sqrt((wx * wx + wy * wy) + wz * wz)
                    denom = wz / rho + xi
                    if rho > _RAY_EPS and denom > _DENOM_EPS:
                        scale = 1.0 / (rho * denom)
                        u = (fx * wx) * scale + cx
                        v = (fy * wy) * scale + cy
                        xs = u - 0.5
                        ys = v - 0.5
                        valid = (xs >= 0.0) and (xs <= src_w - 1.0) and \
                                (ys >= 0.0) and (ys <= src_h - 1.0)
                    else:
                        valid = False
                if valid:
                    x0 = <int>floor(xs)
                    if x0 < 0:
                        x0 = 0
                    if x0 > src_w - 2:
                        x0 = src_w - 2
                    y0 = <int>floor(ys)
                    if y0 < 0:
                        y0 = 0
                    if y0 > src_h - 2:
                        y0 = src_h - 2
                    fx_ = xs - x0
                    fy_ = ys - y0
                    b = (1.0 - fy_) * ((1.0 - fx_) * src_img[y0, x0] + fx_ * src_img[y0, x0 + 1]) \
                        + fy_ * ((1.0 - fx_) * src_img[y0 + 1, x0] + fx_ * src_img[y0 + 1, x0 + 1])
                    qm[i, j] = 1.0
                    qb[i, j] = b
                    qbb[i, j] = b * b
                    qab[i, j] = (<double>ref_img[i, j]) * b
                else:
                    qm[i, j] = 0.0
                    qb[i, j] = 0.0
                    qbb[i, j] = 0.0
                    qab[i, j] = 0.0

        _box_sums(qm, ii, sm, window, nt)
        _box_sums(qb, ii, sb, window, nt)
        _box_sums(qbb, ii, sbb, window, nt)
        _box_sums(qab, ii, sab, window, nt)

        for i in prange(0, h, num_threads=nt, schedule="static"):
            for j in range(w):
                if ref_ok[i, j] != 0 and sm[i, j] >= n - 0.5:
                    mean_a = ref_sum[i, j] / n
                    mean_b = sb[i, j] / n
                    var_a = ref_sumsq[i, j] / n - mean_a * mean_a
                    var_b = sbb[i, j] / n - mean_b * mean_b
                    if var_a >= _VAR_EPS and var_b >= _VAR_EPS:
                        cov = sab[i, j] / n - mean_a * mean_b
                        zncc = cov / sqrt(var_a * var_b)
                        if zncc < -1.0:
                            zncc = -1.0
                        if zncc > 1.0:
                            zncc = 1.0
                        out_cost[i, j] = <float>((1.0 - zncc) * 0.5)
                    else:
                        out_cost[i, j] = <float>NAN
                else:
                    out_cost[i, j] = <float>NAN


def wta(const float[:, :, ::1] cost_vol, const double[:, ::1] planes, const u8[::1] labels,
        const i32[::1] sweep_idx, const double[:, :, ::1] rays, float[:, ::1] out_depth,
        float[:, ::1] out_best, float[:, ::1] out_second, int threads=0):
    """See numpy_backend.wta."""
    cdef Py_ssize_t p = cost_vol.shape[0]
    cdef Py_ssize_t h = cost_vol.shape[1]
    cdef Py_ssize_t w = cost_vol.shape[2]
    cdef int nt = _nthreads(threads)

    cdef Py_ssize_t i, j, k, widx
    cdef double best, second, cd, t, ndotr
    cdef float cf
    cdef int lab_w, idx_w, di
    cdef bint valid, dvalid

    with nogil:
        for i in prange(0, h, num_threads=nt, schedule="static"):
            for j in range(w):
                best = INFINITY
                widx = 0
                for k in range(p):
                    cf = cost_vol[k, i, j]
                    if isnan(cf):
                        continue
                    cd = <double>cf
                    if cd < best:
                        best = cd
                        widx = k
                valid = best < INFINITY
                if not valid:
                    out_depth[i, j] = 0.0
                    out_best[i, j] = 1.0
                    out_second[i, j] = 1.0
                    continue
                lab_w = labels[widx]
                idx_w = sweep_idx[widx]
                second = INFINITY
                for k in range(p):
                    di = sweep_idx[k] - idx_w
                    if labels[k] == lab_w and -1 <= di <= 1:
                        continue
                    cf = cost_vol[k, i, j]
                    if isnan(cf):
                        continue
                    cd = <double>cf
                    if cd < second:
                        second = cd
                if second == INFINITY:
                    second = 1.0
                ndotr = (planes[widx, 0] * rays[i, j, 0] + planes[widx, 1] * rays[i, j, 1]) \
                        + planes[widx, 2] * rays[i, j, 2]
                t = planes[widx, 3] / ndotr
                dvalid = (t == t) and (t != INFINITY) and (t != -INFINITY) and (t > 0.0)
                if dvalid:
                    out_depth[i, j] = <float>t
                else:
                    out_depth[i, j] = 0.0
                out_best[i, j] = <float>best
                out_second[i, j] = <float>second


def integrate_blocks(double[:, ::1] tsdf, u16[:, ::1] weight, i32[::1] obs,
                     const i32[:, ::1] coords, const i64[::1] rows, const float[:, ::1] depth,
                     const double[::1] pose, const double[::1] cam, double voxel_size,
                     double mu, int w_max, int threads=0):
    """See numpy_backend.integrate_blocks."""
    cdef Py_ssize_t nv = rows.shape[0]
    cdef Py_ssize_t img_h = depth.shape[0]
    cdef Py_ssize_t img_w = depth.shape[1]
    cdef int nt = _nthreads(threads)

    cdef double r00 = pose[0], r01 = pose[1], r02 = pose[2]
    cdef double r10 = pose[3], r11 = pose[4], r12 = pose[5]
    cdef double r20 = pose[6], r21 = pose[7], r22 = pose[8]
    cdef double t0 = pose[9], t1 = pose[10], t2 = pose[11]
    cdef double xi = cam[0], fx = cam[1], fy = cam[2], cx = cam[3], cy = cam[4]
    cdef double wmaxf = <double>w_max

    cdef Py_ssize_t vi, lin, r
    cdef int bx, by, bz, ix, iy, iz, pu, pv, flag
    cdef double px, py, pz, xc, yc, zc
    cdef double rho, denom, scale, u, v, dmeas, eta, sval, w_old, d_old, wn

    with nogil:
        for vi in prange(0, nv, num_threads=nt, schedule="static"):
            r = rows[vi]
            bx = coords[r, 0]
            by = coords[r, 1]
            bz = coords[r, 2]
            flag = 0
            for lin in range(512):
                ix = <int>(lin >> 6)
                iy = <int>((lin >> 3) & 7)
                iz = <int>(lin & 7)
                px = ((<double>bx * 8.0 + <double>ix) + 0.5) * voxel_size
                py = ((<double>by * 8.0 + <double>iy) + 0.5) * voxel_size
                pz = ((<double>bz * 8.0 + <double>iz) + 0.5) * voxel_size
                xc = ((px * r00 + py * r01) + pz * r02) + t0
                yc = ((px * r10 + py * r11) + pz * r12) + t1
                zc = ((px * r20 + py * r21) + pz * r22) + t2
                rho = sqrt((xc * xc + yc * yc) + zc * zc)
                if rho <= _RAY_EPS:
                    continue
                denom = zc / rho + xi
                if denom <= _DENOM_EPS:
                    continue
                scale = 1.0 / (rho * denom)
                u = (fx * xc) * scale + cx
                v = (fy * yc) * scale + cy
                pu = <int>floor(u)
                pv = <int>floor(v)
                if pu < 0 or pu >= img_w or pv < 0 or pv >= img_h:
                    continue
                dmeas = <double>depth[pv, pu]
                if dmeas <= 0.0:
                    continue
                eta = dmeas - rho
                if eta < -mu:
                    continue
                sval = eta / mu
                if sval > 1.0:
                    sval = 1.0
                w_old = <double>weight[r, lin]
                d_old = tsdf[r, lin]
                tsdf[r, lin] = (w_old * d_old + sval) / (w_old + 1.0)
                wn = w_old + 1.0
                if wn > wmaxf:
                    wn = wmaxf
                weight[r, lin] = <u16>wn
                flag = 1
            obs[r] += flag


cdef inline Py_ssize_t _lower_bound(const i64[::1] arr, i64 key) noexcept nogil:
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = arr.shape[0]
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline double _sample_one(const double[:, ::1] tsdf, const u16[:, ::1] weight,
                               const i64[::1] sorted_keys, const i64[::1] sorted_rows,
                               double voxel_size, double px, double py,
                               double pz) noexcept nogil:
    """Trilinear TSDF sample at one world point; NAN when no observed corner."""
    cdef double qx = px / voxel_size - 0.5
    cdef double qy = py / voxel_size - 0.5
    cdef double qz = pz / voxel_size - 0.5
    cdef double q0x = floor(qx)
    cdef double q0y = floor(qy)
    cdef double q0z = floor(qz)
    cdef i64 v0x = <i64>q0x
    cdef i64 v0y = <i64>q0y
    cdef i64 v0z = <i64>q0z
    cdef double fx = qx - q0x
    cdef double fy = qy - q0y
    cdef double fz = qz - q0z
    cdef double num = 0.0
    cdef double den = 0.0
    cdef int corner, ox, oy, oz
    cdef i64 vx, vy, vz, bx, by, bz, key
    cdef Py_ssize_t idx, row, lin, n
    cdef double wtx, wty, wtz, wt, wc, dc, occ

    n = sorted_keys.shape[0]
    for corner in range(8):
        ox = (corner >> 2) & 1
        oy = (corner >> 1) & 1
        oz = corner & 1
        vx = v0x + ox
        vy = v0y + oy
        vz = v0z + oz
        bx = vx >> 3
        by = vy >> 3
        bz = vz >> 3
        key = ((bx + _KEY_OFFSET) << 42) | ((by + _KEY_OFFSET) << 21) | (bz + _KEY_OFFSET)
        idx = _lower_bound(sorted_keys, key)
        wc = 0.0
        dc = 0.0
        if idx < n and sorted_keys[idx] == key:
            row = sorted_rows[idx]
            lin = ((vx - (bx << 3)) * 8 + (vy - (by << 3))) * 8 + (vz - (bz << 3))
            wc = <double>weight[row, lin]
            dc = tsdf[row, lin]
        wtx = fx if ox else 1.0 - fx
        wty = fy if oy else 1.0 - fy
        wtz = fz if oz else 1.0 - fz
        wt = (wtx * wty) * wtz
        occ = 1.0 if wc > 0.0 else 0.0
        num = num + (wt * occ) * dc
        den = den + wt * occ
    if den > 1e-9:
        return num / den
    return NAN


def raycast_depth(const double[:, ::1] tsdf, const u16[:, ::1] weight,
                  const i64[::1] sorted_keys, const i64[::1] sorted_rows,
                  const double[:, :, ::1] rays, const double[::1] pose, double voxel_size,
                  double z_min, double z_max, double step,
                  float[:, ::1] out_depth, int threads=0):
    """See numpy_backend.raycast_depth."""
    cdef Py_ssize_t h = out_depth.shape[0]
    cdef Py_ssize_t w = out_depth.shape[1]
    cdef int nt = _nthreads(threads)

    cdef double r00 = pose[0], r01 = pose[1], r02 = pose[2]
    cdef double r10 = pose[3], r11 = pose[4], r12 = pose[5]
    cdef double r20 = pose[6], r21 = pose[7], r22 = pose[8]
    cdef double ox = pose[9], oy = pose[10], oz = pose[11]

    cdef int n_steps = <int>floor((z_max - z_min) / step) + 1

    cdef Py_ssize_t i, j
    cdef int k
    cdef bint ok, prev_ok
    cdef double rx, ry, rz, dx, dy, dz, t, px, py, pz
    cdef double val, prev_val, res, delta, fr

    with nogil:
        for i in prange(0, h, num_threads=nt, schedule="static"):
            for j in range(w):
                rx = rays[i, j, 0]
                ry = rays[i, j, 1]
                rz = rays[i, j, 2]
                dx = (rx * r00 + ry * r01) + rz * r02
                dy = (rx * r10 + ry * r11) + rz * r12
                dz = (rx * r20 + ry * r21) + rz * r22
                prev_val = 0.0
                prev_ok = 0
                res = 0.0
                for k in range(n_steps):
                    t = z_min + k * step
                    px = ox + t * dx
                    py = oy + t * dy
                    pz = oz + t * dz
                    val = _sample_one(tsdf, weight, sorted_keys, sorted_rows,
                                      voxel_size, px, py, pz)
                    ok = val == val
                    if prev_ok and ok and prev_val > 0.0 and val <= 0.0:
                        delta = prev_val - val
                        if delta > 1e-12:
                            fr = prev_val / delta
                        else:
                            fr = 0.0
                        res = (t - step) + step * fr
                        break
                    prev_val = val
                    prev_ok = ok
                out_depth[i, j] = <float>res
