"""Multi-view plane-sweep stereo for fisheye cameras.

Depth hypotheses are a family of 3D planes in the reference camera frame,
swept in two directions: fronto-parallel planes spaced uniformly in inverse
depth, and planes parallel to a ground estimate inside a narrow offset band.
Each plane induces a warp from the reference view into every support view;
patch dissimilarity is (1 - ZNCC) / 2 averaged over views, and a per-pixel
winner-take-all over all planes yields depth plus best/runner-up costs.

Depth is always the range along the pixel's unit ray, 0 where invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import CameraRig, FisheyeCamera, Pose, camera_rays
from .kernels.common import box_sums, flat_cam, flat_pose, window_interior_mask

FRONTO = 0
GROUND = 1


@dataclass(frozen=True)
class SweepConfig:
    n_fronto: int = 64
    n_ground: int = 30
    z_min: float = 2.0
    z_max: float = 60.0
    window_full: int = 9
    window_low: int = 7
    ground_band_halfwidth: float = 0.5
    crop_w: int = 572
    crop_h: int = 332
    best_k: int = 0  # 0 = average all valid views

    def __post_init__(self) -> None:
        if self.window_full % 2 == 0 or self.window_low % 2 == 0:
            raise ValueError("matching windows must be odd")
        if not 0 < self.z_min < self.z_max:
            raise ValueError("need 0 < z_min < z_max")
        if self.n_fronto < 0 or self.n_ground < 0 or self.n_fronto + self.n_ground < 1:
            raise ValueError("need at least one plane")


@dataclass(frozen=True)
class PlaneSet:
    """Plane hypotheses n . X = d in the reference camera frame.

    Normals are unit length and oriented so rays leaving the camera toward
    the plane satisfy n . r > 0. ``labels`` tags each plane FRONTO or GROUND;
    ``sweep_index`` is its position within its own sweep. ``z_min``/``z_max``
    bound the admissible per-pixel intersection range (z_min, z_max].
    """

    normals: np.ndarray
    offsets: np.ndarray
    labels: np.ndarray
    sweep_index: np.ndarray
    z_min: float
    z_max: float

    def __post_init__(self) -> None:
        n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(self.offsets, dtype=np.float64).reshape(-1)
        lab = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        idx = np.asarray(self.sweep_index, dtype=np.int32).reshape(-1)
        if not (len(n) == len(d) == len(lab) == len(idx)):
            raise ValueError("plane arrays must have equal length")
        norms = np.linalg.norm(n, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("plane normals must be unit length")
        for sweep in (FRONTO, GROUND):
            offs = d[lab == sweep]
            if len(offs) > 1 and not np.all(np.diff(offs) > 0):
                raise ValueError("offsets must be strictly increasing per sweep")
        for arr in (n, d, lab, idx):
            arr.setflags(write=False)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "offsets", d)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "sweep_index", idx)

    def __len__(self) -> int:
        return len(self.offsets)

    def as_kernel_array(self) -> np.ndarray:
        out = np.empty((len(self), 4), dtype=np.float64)
        out[:, :3] = self.normals
        out[:, 3] = self.offsets
        return out


@dataclass
class DepthMap:
    """Per-pixel range along the unit ray (0 = invalid) plus match costs."""

    depth: np.ndarray
    best_cost: np.ndarray
    second_cost: np.ndarray

    def __post_init__(self) -> None:
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.best_cost = np.asarray(self.best_cost, dtype=np.float32)
        self.second_cost = np.asarray(self.second_cost, dtype=np.float32)
        if self.depth.ndim != 2:
            raise ValueError("depth must be 2-D")
        if self.best_cost.shape != self.depth.shape or self.second_cost.shape != self.depth.shape:
            raise ValueError("cost maps must match the depth shape")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0.0

    def copy(self) -> "DepthMap":
        return DepthMap(self.depth.copy(), self.best_cost.copy(), self.second_cost.copy())

    @staticmethod
    def empty(height: int, width: int) -> "DepthMap":
        return DepthMap(
            np.zeros((height, width), np.float32),
            np.ones((height, width), np.float32),
            np.ones((height, width), np.float32),
        )


def generate_planes(cfg: SweepConfig, ground_in_ref: tuple[np.ndarray, float] | None = None) -> PlaneSet:
    """Build the two sweep families.

    Fronto planes have n = (0, 0, 1) with offsets uniform in inverse depth
    over [z_min, z_max]. Ground planes share the normal of ``ground_in_ref``
    (a (normal, offset) pair in the reference frame) with offsets uniform in
    +-ground_band_halfwidth around its offset. Planes are flipped as needed
    so offsets are non-negative where possible (same plane, canonical side).
    """
    normals = []
    offsets = []
    labels = []
    sweep_index = []

    if cfg.n_fronto > 0:
        if cfg.n_fronto == 1:
            inv = np.array([1.0 / cfg.z_min])
        else:
            inv = np.linspace(1.0 / cfg.z_min, 1.0 / cfg.z_max, cfg.n_fronto)
        d = 1.0 / inv
        for i in range(cfg.n_fronto):
            normals.append((0.0, 0.0, 1.0))
            offsets.append(d[i])
            labels.append(FRONTO)
            sweep_index.append(i)

    if cfg.n_ground > 0:
        if ground_in_ref is None:
            raise ValueError("ground sweep requested but no ground plane estimate given")
        gn = np.asarray(ground_in_ref[0], dtype=np.float64).reshape(3)
        gd = float(ground_in_ref[1])
        nrm = np.linalg.norm(gn)
        if nrm < 1e-12:
            raise ValueError("ground normal must be nonzero")
        gn = gn / nrm
        gd = gd / nrm
        if gd < 0:
            gn, gd = -gn, -gd
        if cfg.n_ground == 1:
            band = np.array([gd])
        else:
            band = np.linspace(gd - cfg.ground_band_halfwidth,
                               gd + cfg.ground_band_halfwidth, cfg.n_ground)
        for i in range(cfg.n_ground):
            normals.append(tuple(gn))
            offsets.append(band[i])
            labels.append(GROUND)
            sweep_index.append(i)

    return PlaneSet(
        np.array(normals, dtype=np.float64),
        np.array(offsets, dtype=np.float64),
        np.array(labels, dtype=np.uint8),
        np.array(sweep_index, dtype=np.int32),
        cfg.z_min,
        cfg.z_max,
    )


def warp_pixel(plane: tuple[np.ndarray, float], ref_cam: FisheyeCamera,
               src_cam: FisheyeCamera, ref_to_src: Pose, p: tuple[float, float],
               max_range: float | None = None) -> tuple[float, float] | None:
    """Map one reference pixel into a support view through one plane.

    Intersects the back-projected ray with the plane; returns None when the
    intersection is not in front of the camera, beyond ``max_range``, fails
    to project, or lands outside the support image.
    """
    ray, ok = ref_cam.back_project(np.asarray(p, dtype=np.float64))
    if not bool(ok):
        return None
    n = np.asarray(plane[0], dtype=np.float64).reshape(3)
    d = float(plane[1])
    ndotr = float(n @ ray)
    if abs(ndotr) < 1e-12:
        return None
    t = d / ndotr
    if t <= 0.0 or (max_range is not None and t > max_range):
        return None
    X = ref_to_src.apply(t * ray)
    uv, ok = src_cam.project(X)
    if not bool(ok):
        return None
    return float(uv[0]), float(uv[1])


def zncc_cost(patch_a: np.ndarray, patch_b: np.ndarray) -> float | None:
    """(1 - ZNCC) / 2 between two equal-size patches; None if textureless."""
    a = np.asarray(patch_a, dtype=np.float64).ravel()
    b = np.asarray(patch_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("patches must have equal size")
    n = a.size
    mean_a = a.sum() / n
    mean_b = b.sum() / n
    var_a = (a * a).sum() / n - mean_a * mean_a
    var_b = (b * b).sum() / n - mean_b * mean_b
    if var_a < kernels.common.ZNCC_VAR_EPS or var_b < kernels.common.ZNCC_VAR_EPS:
        return None
    cov = (a * b).sum() / n - mean_a * mean_b
    zncc = float(np.clip(cov / np.sqrt(var_a * var_b), -1.0, 1.0))
    return (1.0 - zncc) * 0.5


def _aggregate_views(view_costs: np.ndarray, best_k: int) -> np.ndarray:
    """Mean per-pixel cost over valid views, NaN where no view is valid.

    View costs are sorted per pixel before summing, which makes the result
    independent of support-view ordering. With best_k > 0 only the k
    cheapest valid views enter the mean.
    """
    v = view_costs.shape[0]
    srt = np.sort(view_costs.astype(np.float64), axis=0)  # NaNs sort last
    nv = np.sum(~np.isnan(view_costs), axis=0)
    k = nv if best_k <= 0 else np.minimum(best_k, nv)
    csum = np.cumsum(np.where(np.isnan(srt), 0.0, srt), axis=0)
    idx = np.maximum(k - 1, 0)
    total = np.take_along_axis(csum, idx[None, ...], axis=0)[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / k
    return np.where(k > 0, mean, np.nan)


def sweep(ref_image: np.ndarray,
          support: list[tuple[np.ndarray, FisheyeCamera, Pose]],
          ref_cam: FisheyeCamera, planes: PlaneSet, window: int,
          best_k: int = 0, threads: int = 0) -> DepthMap:
    """Plane-sweep the reference image against the support views.

    ``support`` holds (image, camera, ref_to_src pose) triples. Per plane the
    per-view ZNCC cost maps are averaged (see _aggregate_views); the
    winner-take-all over planes produces the DepthMap. Runner-up cost skips
    the winner's index neighbours within its own sweep direction so the
    uniqueness ratio is not poisoned by near-identical hypotheses.
    """
    if not support:
        raise ValueError("need at least one support view")
    ref = np.ascontiguousarray(ref_image, dtype=np.float32)
    h, w = ref.shape
    if (h, w) != (ref_cam.height, ref_cam.width):
        raise ValueError("reference image does not match camera size")

    rays = camera_rays(ref_cam)
    a64 = ref.astype(np.float64)
    ref_sum = box_sums(a64, window)
    ref_sumsq = box_sums(a64 * a64, window)
    ref_ok = window_interior_mask(h, w, window)

    views = []
    for img, cam, pose in support:
        views.append((
            np.ascontiguousarray(img, dtype=np.float32),
            flat_cam(cam.xi, cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height),
            flat_pose(pose.rotation, pose.translation),
        ))

    p = len(planes)
    plane_arr = planes.as_kernel_array()
    cost_vol = np.empty((p, h, w), dtype=np.float32)
    view_buf = np.empty((len(views), h, w), dtype=np.float32)
    for pi in range(p):
        for vi, (img, camv, posev) in enumerate(views):
            kernels.plane_view_cost(rays, ref, ref_sum, ref_sumsq, ref_ok,
                                    plane_arr[pi], posev, camv, img, window,
                                    planes.z_min, planes.z_max, view_buf[vi],
                                    threads)
        cost_vol[pi] = _aggregate_views(view_buf, best_k).astype(np.float32)

    out = DepthMap.empty(h, w)
    kernels.wta(cost_vol, plane_arr, planes.labels, planes.sweep_index, rays,
                out.depth, out.best_cost, out.second_cost, threads)
    return out


def downsample_image(img: np.ndarray) -> np.ndarray:
    """2x2 box-filter downsample; needs even dimensions."""
    a = np.asarray(img, dtype=np.float32)
    h, w = a.shape
    if h % 2 or w % 2:
        raise ValueError("image dimensions must be even for 2x downsampling")
    return ((a[0::2, 0::2] + a[0::2, 1::2]) + (a[1::2, 0::2] + a[1::2, 1::2])) * np.float32(0.25)


def upsample_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor 2x upsample to (out_h, out_w)."""
    up = np.repeat(np.repeat(arr, 2, axis=0), 2, axis=1)
    return np.ascontiguousarray(up[:out_h, :out_w])


def crop_window(cam: FisheyeCamera, crop_w: int, crop_h: int) -> tuple[int, int, int, int]:
    """Centered crop rectangle (x0, y0, w, h), clamped to the image."""
    cw = min(crop_w, cam.width)
    ch = min(crop_h, cam.height)
    return (cam.width - cw) // 2, (cam.height - ch) // 2, cw, ch


def multiscale_depth(images: list[np.ndarray], rig: CameraRig, cfg: SweepConfig,
                     ground_in_ref: tuple[np.ndarray, float] | None = None,
                     mode: str = "multiscale", threads: int = 0) -> DepthMap:
    """Depth for the rig's reference view at one of three operating points.

    mode "full": one sweep at full resolution (window_full).
    mode "half": sweep on 2x-downsampled images (window_low), then
    nearest-neighbor upsample of depth and costs back to full resolution.
    mode "multiscale": the half pass plus a full-resolution sweep restricted
    to a centered crop of the reference view (support views stay full size),
    fused so the crop estimate wins inside the crop wherever it is valid.
    """
    if mode not in ("full", "half", "multiscale"):
        raise ValueError(f"unknown mode {mode!r}")
    ref_i = rig.reference_index
    ref_cam = rig.cameras[ref_i]
    ref_img = np.asarray(images[ref_i], dtype=np.float32)
    planes = generate_planes(cfg, ground_in_ref)

    support_full = [
        (np.asarray(images[i], dtype=np.float32), rig.cameras[i], rig.ref_to_cam(i))
        for i in range(len(rig.cameras)) if i != ref_i
    ]

    if mode == "full":
        return sweep(ref_img, support_full, ref_cam, planes, cfg.window_full,
                     cfg.best_k, threads)

    support_low = [
        (downsample_image(img), cam.downsampled(2), pose)
        for img, cam, pose in support_full
    ]
    low = sweep(downsample_image(ref_img), support_low, ref_cam.downsampled(2),
                planes, cfg.window_low, cfg.best_k, threads)
    fused = DepthMap(
        upsample_nearest(low.depth, ref_cam.height, ref_cam.width),
        upsample_nearest(low.best_cost, ref_cam.height, ref_cam.width),
        upsample_nearest(low.second_cost, ref_cam.height, ref_cam.width),
    )
    if mode == "half":
        return fused

    x0, y0, cw, ch = crop_window(ref_cam, cfg.crop_w, cfg.crop_h)
    crop_cam = ref_cam.cropped(x0, y0, cw, ch)
    crop = sweep(ref_img[y0:y0 + ch, x0:x0 + cw], support_full, crop_cam,
                 planes, cfg.window_full, cfg.best_k, threads)
    win = crop.valid
    for src, dst in ((crop.depth, fused.depth),
                     (crop.best_cost, fused.best_cost),
                     (crop.second_cost, fused.second_cost)):
        region = dst[y0:y0 + ch, x0:x0 + cw]
        region[win] = src[win]
    return fused
