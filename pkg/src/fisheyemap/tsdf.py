"""Truncated signed distance fusion over sparse 8x8x8 voxel blocks.

Blocks live in a hash keyed by integer block coordinates. Only blocks whose
center is inside a vehicle-centered axis-aligned local region stay active;
prune_and_swap archives blocks that leave the region and restores archived
blocks that re-enter it, so nothing is ever lost. The TSDF value of a voxel
is the running average of clamped signed distance samples min(1, eta / mu),
updated only when eta = measured_range - voxel_range >= -mu, with the weight
capped at w_max.

Depth maps store range along the unit pixel ray (the one shared convention).
"""

from __future__ import annotations

import struct

import numpy as np

from . import kernels
from .geometry import FisheyeCamera, Pose, camera_rays
from .kernels.common import BLOCK, BLOCK_VOLUME, flat_cam, flat_pose, intra_offsets, pack_keys
from .planesweep import DepthMap

_GROW = 4096


def _flat_cam_of(cam: FisheyeCamera) -> np.ndarray:
    return flat_cam(cam.xi, cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)


class TsdfVolume:
    """Sparse TSDF with local-map swapping.

    voxel_size and mu are meters; local_box_size is the (x, y, z) extent of
    the active region; w_max caps per-voxel observation weights.
    """

    def __init__(self, voxel_size: float = 0.05, mu: float = 0.2,
                 w_max: int = 100, local_box_size=(60.0, 60.0, 3.0),
                 local_center=(0.0, 0.0, 0.0)):
        if voxel_size <= 0 or mu <= 0:
            raise ValueError("voxel_size and mu must be positive")
        if w_max < 1 or w_max > 65535:
            raise ValueError("w_max must be in [1, 65535]")
        self.voxel_size = float(voxel_size)
        self.mu = float(mu)
        self.w_max = int(w_max)
        self.local_box_size = np.asarray(local_box_size, dtype=np.float64).copy()
        self.local_center = np.asarray(local_center, dtype=np.float64).copy()

        self._tsdf = np.zeros((0, BLOCK_VOLUME), dtype=np.float64)
        self._weight = np.zeros((0, BLOCK_VOLUME), dtype=np.uint16)
        self._obs = np.zeros(0, dtype=np.int32)
        self._coords = np.zeros((0, 3), dtype=np.int32)
        self._n = 0
        self._index: dict[tuple[int, int, int], int] = {}
        self._inactive: dict[tuple[int, int, int], tuple] = {}
        self._sorted_keys = np.zeros(0, dtype=np.int64)
        self._sorted_rows = np.zeros(0, dtype=np.int64)
        self._index_dirty = False

    # -- bookkeeping -------------------------------------------------------

    @property
    def block_edge_m(self) -> float:
        return BLOCK * self.voxel_size

    @property
    def n_active(self) -> int:
        return self._n

    @property
    def n_inactive(self) -> int:
        return len(self._inactive)

    def block_centers(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords, dtype=np.float64) + 0.5) * self.block_edge_m

    def _in_local_box(self, centers: np.ndarray) -> np.ndarray:
        half = 0.5 * self.local_box_size
        return np.all(np.abs(centers - self.local_center) <= half, axis=1)

    def _ensure_capacity(self, extra: int) -> None:
        need = self._n + extra
        cap = self._tsdf.shape[0]
        if need <= cap:
            return
        new_cap = max(need, cap + _GROW, cap * 2)
        for name, fill in (("_tsdf", 0.0), ("_weight", 0), ("_obs", 0)):
            old = getattr(self, name)
            shape = (new_cap,) + old.shape[1:]
            arr = np.zeros(shape, dtype=old.dtype)
            arr[: self._n] = old[: self._n]
            setattr(self, name, arr)
        coords = np.zeros((new_cap, 3), dtype=np.int32)
        coords[: self._n] = self._coords[: self._n]
        self._coords = coords

    def _add_block(self, key: tuple[int, int, int],
                   data: tuple | None = None) -> int:
        self._ensure_capacity(1)
        row = self._n
        self._coords[row] = key
        if data is None:
            self._tsdf[row] = 0.0
            self._weight[row] = 0
            self._obs[row] = 0
        else:
            self._tsdf[row], self._weight[row], self._obs[row] = data
        self._index[key] = row
        self._n += 1
        self._index_dirty = True
        return row

    def _refresh_sorted(self) -> None:
        if not self._index_dirty:
            return
        keys = pack_keys(self._coords[: self._n])
        order = np.argsort(keys, kind="stable")
        self._sorted_keys = keys[order]
        self._sorted_rows = order.astype(np.int64)
        self._index_dirty = False

    # -- allocation --------------------------------------------------------

    def _segment_blocks(self, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
        """Exact set of block coords touched by the segments p0[i] -> p1[i].

        For each segment, candidate ray parameters are the endpoints plus
        every crossing of a block boundary plane (at most two per axis since
        the segments are no longer than ~one block edge times a few);
        midpoints of consecutive parameters land strictly inside each
        traversed block.
        """
        edge = self.block_edge_m
        s = p0.shape[0]
        delta = p1 - p0
        # boundary crossings per axis, padded to 4 candidates
        cand = [np.zeros(s), np.ones(s)]
        for a in range(3):
            lo = np.minimum(p0[:, a], p1[:, a])
            hi = np.maximum(p0[:, a], p1[:, a])
            k0 = np.floor(lo / edge) + 1.0
            k1 = np.floor(hi / edge)
            n_cross = np.maximum(0, (k1 - k0 + 1.0)).astype(np.int64)
            max_cross = int(n_cross.max()) if s else 0
            for j in range(max_cross):
                k = k0 + j
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = (k * edge - p0[:, a]) / delta[:, a]
                t = np.where((j < n_cross) & np.isfinite(t), t, np.nan)
                cand.append(t)
        tc = np.stack(cand, axis=1)
        tc = np.where((tc >= 0.0) & (tc <= 1.0), tc, np.nan)
        tc.sort(axis=1)  # NaNs go last
        mids = 0.5 * (tc[:, :-1] + tc[:, 1:])  # NaN where either is NaN
        pts = p0[:, None, :] + mids[..., None] * delta[:, None, :]
        good = np.isfinite(mids).ravel()
        pts = pts.reshape(-1, 3)[good]
        if pts.size == 0:
            return np.zeros((0, 3), dtype=np.int64)
        blocks = np.floor(pts / edge).astype(np.int64)
        return np.unique(blocks, axis=0)

    def allocate(self, d: DepthMap, cam: FisheyeCamera, world_to_cam: Pose) -> np.ndarray:
        """Create blocks along [depth - mu, depth + mu] of every valid ray.

        Only blocks whose center lies inside the local box are created;
        archived blocks re-entering through allocation are swapped back in
        unchanged. Returns the newly created block coords, (N, 3) int.
        """
        depth = d.depth
        valid = depth > 0.0
        if not np.any(valid):
            return np.zeros((0, 3), dtype=np.int64)
        cam_to_world = world_to_cam.inverse()
        rays = camera_rays(cam)[valid]
        dirs = rays @ cam_to_world.rotation.T
        o = cam_to_world.translation
        dv = depth[valid].astype(np.float64)
        t0 = np.maximum(dv - self.mu, 1e-6)
        t1 = dv + self.mu
        p0 = o[None, :] + t0[:, None] * dirs
        p1 = o[None, :] + t1[:, None] * dirs

        blocks = self._segment_blocks(p0, p1)
        if blocks.size == 0:
            return np.zeros((0, 3), dtype=np.int64)
        inside = self._in_local_box(self.block_centers(blocks))
        blocks = blocks[inside]

        created = []
        for bx, by, bz in blocks:
            key = (int(bx), int(by), int(bz))
            if key in self._index:
                continue
            if key in self._inactive:
                self._add_block(key, self._inactive.pop(key))
                continue
            self._add_block(key)
            created.append(key)
        return np.array(created, dtype=np.int64).reshape(-1, 3)

    # -- integration -------------------------------------------------------

    def integrate(self, d: DepthMap, cam: FisheyeCamera, world_to_cam: Pose,
                  threads: int = 0) -> int:
        """Fuse one depth map; returns the number of blocks visited."""
        depth = np.ascontiguousarray(d.depth, dtype=np.float32)
        d_max = float(depth.max())
        if d_max <= 0.0 or self._n == 0:
            return 0
        centers = self.block_centers(self._coords[: self._n])
        cam_center = world_to_cam.inverse().translation
        r = np.linalg.norm(centers - cam_center, axis=1)
        half_diag = 0.5 * np.sqrt(3.0) * self.block_edge_m
        rows = np.nonzero(r <= d_max + self.mu + half_diag)[0].astype(np.int64)
        if rows.size == 0:
            return 0
        kernels.integrate_blocks(
            self._tsdf, self._weight, self._obs, self._coords[: self._n].astype(np.int32),
            rows, depth, flat_pose(world_to_cam.rotation, world_to_cam.translation),
            _flat_cam_of(cam), self.voxel_size, self.mu, self.w_max, threads)
        return int(rows.size)

    # -- pruning / swapping ------------------------------------------------

    def prune_and_swap(self, vehicle_position) -> tuple[int, int]:
        """Re-center the local box; archive leavers, restore re-entrants.

        Returns (n_swapped_out, n_swapped_in).
        """
        self.local_center = np.asarray(vehicle_position, dtype=np.float64).copy()
        n_out = 0
        if self._n:
            centers = self.block_centers(self._coords[: self._n])
            keep = self._in_local_box(centers)
            if not np.all(keep):
                out_rows = np.nonzero(~keep)[0]
                for row in out_rows:
                    key = tuple(int(v) for v in self._coords[row])
                    self._inactive[key] = (self._tsdf[row].copy(),
                                           self._weight[row].copy(),
                                           int(self._obs[row]))
                keep_rows = np.nonzero(keep)[0]
                n_out = int(out_rows.size)
                self._compact(keep_rows)

        n_in = 0
        if self._inactive:
            keys = np.array(sorted(self._inactive.keys()), dtype=np.int64).reshape(-1, 3)
            inside = self._in_local_box(self.block_centers(keys))
            for bx, by, bz in keys[inside]:
                key = (int(bx), int(by), int(bz))
                self._add_block(key, self._inactive.pop(key))
                n_in += 1
        return n_out, n_in

    def _compact(self, keep_rows: np.ndarray) -> None:
        n_new = int(keep_rows.size)
        self._tsdf[:n_new] = self._tsdf[keep_rows]
        self._weight[:n_new] = self._weight[keep_rows]
        self._obs[:n_new] = self._obs[keep_rows]
        self._coords[:n_new] = self._coords[keep_rows]
        self._n = n_new
        self._index = {tuple(int(v) for v in self._coords[i]): i for i in range(n_new)}
        self._index_dirty = True

    # -- rendering / extraction --------------------------------------------

    def raycast(self, cam: FisheyeCamera, world_to_cam: Pose, z_min: float,
                z_max: float, step: float | None = None, threads: int = 0) -> DepthMap:
        """March pixel rays through the active volume; see kernel docstring."""
        if step is None:
            step = 0.75 * self.mu
        self._refresh_sorted()
        out = DepthMap.empty(cam.height, cam.width)
        out.best_cost[:] = 0.0
        if self._n:
            cam_to_world = world_to_cam.inverse()
            kernels.raycast_depth(
                self._tsdf[: self._n], self._weight[: self._n],
                self._sorted_keys, self._sorted_rows, camera_rays(cam),
                flat_pose(cam_to_world.rotation, cam_to_world.translation),
                self.voxel_size, z_min, z_max, step, out.depth, threads)
        return out

    def _gather_all_blocks(self, min_obs: int):
        """Eligible blocks (active + archived) in deterministic key order."""
        rows = [i for i in range(self._n) if self._obs[i] >= min_obs]
        entries = []
        for i in rows:
            key = tuple(int(v) for v in self._coords[i])
            entries.append((key, self._tsdf[i], self._weight[i]))
        for key, (t, w, obs) in self._inactive.items():
            if obs >= min_obs:
                entries.append((key, t, w))
        entries.sort(key=lambda e: e[0])
        return entries

    def extract_points(self, min_block_observations: int = 3,
                       min_voxel_weight: int = 1) -> np.ndarray:
        """Surface points from zero crossings between axis-neighbor voxels.

        Blocks (active or archived) need observation_count >=
        min_block_observations; both voxels of a crossing pair need weight >=
        min_voxel_weight and strictly opposite TSDF signs. Points are placed
        by linear interpolation along the voxel-center segment. Cross-block
        pairs are included when both blocks are eligible. Output order is
        deterministic (sorted blocks, fixed in-block order).
        """
        entries = self._gather_all_blocks(min_block_observations)
        if not entries:
            return np.zeros((0, 3), dtype=np.float64)
        keys = np.array([e[0] for e in entries], dtype=np.int64)
        tsdf = np.stack([e[1] for e in entries])
        weight = np.stack([e[2] for e in entries])
        packed = pack_keys(keys)

        intra = intra_offsets()  # (512, 3), row r = (r>>6, (r>>3)&7, r&7)
        lin = np.arange(BLOCK_VOLUME, dtype=np.int64)
        vs = self.voxel_size
        base = (keys[:, None, :] * BLOCK + intra[None]).astype(np.float64)
        centers = (base + 0.5) * vs  # (B, 512, 3)

        ok_w = weight >= min_voxel_weight
        pieces = []

        axis_spec = (
            (0, 64, (lin >> 6) < 7),
            (1, 8, ((lin >> 3) & 7) < 7),
            (2, 1, (lin & 7) < 7),
        )
        for axis, stride, inner in axis_spec:
            la = lin[inner]
            lb = la + stride
            da = tsdf[:, la]
            db = tsdf[:, lb]
            good = ok_w[:, la] & ok_w[:, lb] & \
                (((da > 0) & (db < 0)) | ((da < 0) & (db > 0)))
            if np.any(good):
                t = da[good] / (da[good] - db[good])
                pa = centers[:, la, :][good]
                step = np.zeros(3)
                step[axis] = vs
                pieces.append(pa + t[:, None] * step[None, :])

            # boundary pairs into the +axis neighbor block
            face_a = lin[intra[:, axis] == 7]
            nb_keys = keys.copy()
            nb_keys[:, axis] += 1
            nb_packed = pack_keys(nb_keys)
            pos = np.searchsorted(packed, nb_packed)
            pos_c = np.clip(pos, 0, len(packed) - 1)
            has_nb = packed[pos_c] == nb_packed
            if np.any(has_nb):
                rows_a = np.nonzero(has_nb)[0]
                rows_b = pos_c[has_nb]
                face_b = face_a - 7 * stride
                da = tsdf[rows_a][:, face_a]
                db = tsdf[rows_b][:, face_b]
                good = ok_w[rows_a][:, face_a] & ok_w[rows_b][:, face_b] & \
                    (((da > 0) & (db < 0)) | ((da < 0) & (db > 0)))
                if np.any(good):
                    t = da[good] / (da[good] - db[good])
                    pa = centers[rows_a][:, face_a, :][good]
                    step = np.zeros(3)
                    step[axis] = vs
                    pieces.append(pa + t[:, None] * step[None, :])

        if not pieces:
            return np.zeros((0, 3), dtype=np.float64)
        return np.concatenate(pieces, axis=0)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Write every block (active then archived) as binary records.

        Record layout: bx, by, bz as little-endian int32, then 512 pairs of
        (float32 tsdf, uint16 weight), voxels in fixed in-block order.
        """
        entries = self._gather_all_blocks(min_obs=-(1 << 30))
        with open(path, "wb") as f:
            for key, t, w in entries:
                f.write(struct.pack("<3i", *key))
                rec = np.empty(BLOCK_VOLUME, dtype=[("t", "<f4"), ("w", "<u2")])
                rec["t"] = t.astype(np.float32)
                rec["w"] = w
                f.write(rec.tobytes())

    @classmethod
    def load(cls, path, voxel_size: float = 0.05, mu: float = 0.2,
             w_max: int = 100, local_box_size=(60.0, 60.0, 3.0)) -> "TsdfVolume":
        """Read a snapshot; all blocks come back active.

        Snapshots carry no observation counts, so each block's count is
        reconstructed as its maximum voxel weight (a lower bound on how many
        frames touched it).
        """
        vol = cls(voxel_size=voxel_size, mu=mu, w_max=w_max,
                  local_box_size=local_box_size)
        rec_size = 12 + BLOCK_VOLUME * 6
        with open(path, "rb") as f:
            blob = f.read()
        if len(blob) % rec_size:
            raise ValueError(f"{path}: truncated snapshot (record size {rec_size})")
        n = len(blob) // rec_size
        for i in range(n):
            off = i * rec_size
            key = struct.unpack_from("<3i", blob, off)
            rec = np.frombuffer(blob, dtype=[("t", "<f4"), ("w", "<u2")],
                                count=BLOCK_VOLUME, offset=off + 12)
            t = rec["t"].astype(np.float64)
            w = rec["w"].copy()
            obs = int(w.max()) if w.size else 0
            vol._add_block((int(key[0]), int(key[1]), int(key[2])), (t, w, obs))
        return vol
