"""Deterministic synthetic scenes and a fisheye ray-casting renderer.

Stands in for a camera rig on a vehicle: renders grayscale images, exact
per-pixel ground-truth depth (range along the unit pixel ray), ground-truth
2D boxes for scripted moving objects, and a scripted trajectory. Everything
is a pure function of (scene, rig, pose, time, seed) so regeneration is
byte-identical.

World frame: z up, ground plane at z = 0. Body frame: x forward, y left,
z up, origin on the ground under the vehicle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraRig, Pose, camera_rays
from .masking import DetectionBox

_GOLD1 = np.uint64(0x9E3779B97F4A7C15)
_GOLD2 = np.uint64(0xC2B2AE3D27D4EB4F)
_GOLD3 = np.uint64(0x165667B19E3779F9)
_MIX1 = np.uint64(0xFF51AFD7ED558CCD)
_MIX2 = np.uint64(0xC4CEB9FE1A85EC53)


def _hash01(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic lattice hash -> float64 in [0, 1)."""
    with np.errstate(over="ignore"):
        h = ix.astype(np.uint64) * _GOLD1
        h ^= iy.astype(np.uint64) * _GOLD2
        h ^= np.uint64(salt & 0xFFFFFFFFFFFFFFFF) * _GOLD3
        h ^= h >> np.uint64(33)
        h *= _MIX1
        h ^= h >> np.uint64(33)
        h *= _MIX2
        h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def _value_noise(u: np.ndarray, v: np.ndarray, cell: float, salt: int) -> np.ndarray:
    """Band-limited value noise: bilinear blend of lattice hashes."""
    su = u / cell
    sv = v / cell
    iu = np.floor(su)
    iv = np.floor(sv)
    fu = _smoothstep(su - iu)
    fv = _smoothstep(sv - iv)
    iu = iu.astype(np.int64)
    iv = iv.astype(np.int64)
    n00 = _hash01(iu, iv, salt)
    n10 = _hash01(iu + 1, iv, salt)
    n01 = _hash01(iu, iv + 1, salt)
    n11 = _hash01(iu + 1, iv + 1, salt)
    top = n00 * (1.0 - fu) + n10 * fu
    bot = n01 * (1.0 - fu) + n11 * fu
    return top * (1.0 - fv) + bot * fv


@dataclass(frozen=True)
class Texture:
    """Procedural surface intensity: base +- contrast around two noise octaves."""

    contrast: float = 0.5
    feature_size: float = 0.5  # meters per noise cell
    base: float = 0.5

    def sample(self, u: np.ndarray, v: np.ndarray, prim_id: int, seed: int) -> np.ndarray:
        if self.contrast <= 0.0:
            return np.full_like(np.asarray(u, dtype=np.float64), self.base)
        salt = (seed * 1000003 + prim_id) & 0xFFFFFFFFFFFFFFFF
        n = 0.65 * _value_noise(u, v, self.feature_size, salt)
        n += 0.35 * _value_noise(u, v, self.feature_size * 0.37, salt + 1)
        out = self.base + self.contrast * (n - 0.5)
        return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class RectPlane:
    """Finite textured rectangle: origin corner plus two edge vectors."""

    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    texture: Texture = field(default_factory=Texture)

    def intersect(self, o: np.ndarray, d: np.ndarray):
        origin = np.asarray(self.origin, dtype=np.float64)
        e1 = np.asarray(self.e1, dtype=np.float64)
        e2 = np.asarray(self.e2, dtype=np.float64)
        n = np.cross(e1, e2)
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            raise ValueError("degenerate rectangle")
        n = n / nn
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((origin - o) @ n) / denom
        rel = o[None, :] + t[:, None] * d - origin
        l1 = np.linalg.norm(e1)
        l2 = np.linalg.norm(e2)
        a = (rel @ (e1 / l1)) / l1
        b = (rel @ (e2 / l2)) / l2
        ok = (np.abs(denom) > 1e-12) & (t > 1e-6) & \
             (a >= 0.0) & (a <= 1.0) & (b >= 0.0) & (b <= 1.0)
        u = a * l1
        v = b * l2
        return t, ok, u, v


@dataclass(frozen=True)
class GroundPlane:
    """Infinite plane z = 0, textured in world (x, y)."""

    texture: Texture = field(default_factory=Texture)

    def intersect(self, o: np.ndarray, d: np.ndarray):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -o[2] / d[:, 2]
        ok = (np.abs(d[:, 2]) > 1e-12) & (t > 1e-6)
        hit = o[None, :] + t[:, None] * d
        return t, ok, hit[:, 0], hit[:, 1]


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    texture: Texture = field(default_factory=Texture)

    def intersect(self, o: np.ndarray, d: np.ndarray):
        c = np.asarray(self.center, dtype=np.float64)
        oc = o - c
        b = d @ oc
        disc = b * b - (oc @ oc - self.radius**2)
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = -b - sq
        t2 = -b + sq
        t = np.where(t > 1e-6, t, t2)
        ok = (disc > 0.0) & (t > 1e-6)
        hit = o[None, :] + t[:, None] * d - c
        u = np.arctan2(hit[:, 1], hit[:, 0]) * self.radius
        v = np.arccos(np.clip(hit[:, 2] / self.radius, -1.0, 1.0)) * self.radius
        return t, ok, u, v


@dataclass(frozen=True)
class MovingBox:
    """Axis-aligned textured box translating at constant velocity."""

    center0: np.ndarray
    size: np.ndarray
    velocity: np.ndarray = (0.0, 0.0, 0.0)
    class_id: int = 2
    texture: Texture = field(default_factory=Texture)

    def center_at(self, t: float) -> np.ndarray:
        return np.asarray(self.center0, dtype=np.float64) + \
            t * np.asarray(self.velocity, dtype=np.float64)

    def bounds_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        c = self.center_at(t)
        half = 0.5 * np.asarray(self.size, dtype=np.float64)
        return c - half, c + half

    def intersect(self, o: np.ndarray, d: np.ndarray, t_now: float = 0.0):
        lo, hi = self.bounds_at(t_now)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
        t1 = (lo[None, :] - o[None, :]) * inv
        t2 = (hi[None, :] - o[None, :]) * inv
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        near_ax = np.argmax(tmin, axis=1)
        tn = np.max(tmin, axis=1)
        tf = np.min(tmax, axis=1)
        ok = (tn <= tf) & (tn > 1e-6)
        hit = o[None, :] + tn[:, None] * d
        rel = hit - lo
        # texture coords: the two in-face axes
        u = np.choose(near_ax, [rel[:, 1], rel[:, 0], rel[:, 0]])
        v = np.choose(near_ax, [rel[:, 2], rel[:, 2], rel[:, 1]])
        return tn, ok, u, v

    def surface_points(self, t_now: float, per_edge: int = 7) -> np.ndarray:
        """Dense world-space samples on all faces (for exact 2D boxes)."""
        lo, hi = self.bounds_at(t_now)
        g = np.linspace(0.0, 1.0, per_edge)
        a, b = np.meshgrid(g, g, indexing="ij")
        a = a.ravel()
        b = b.ravel()
        pts = []
        for axis in range(3):
            for side in (lo, hi):
                p = np.empty((a.size, 3))
                p[:, axis] = side[axis]
                o1, o2 = (axis + 1) % 3, (axis + 2) % 3
                p[:, o1] = lo[o1] + a * (hi[o1] - lo[o1])
                p[:, o2] = lo[o2] + b * (hi[o2] - lo[o2])
                pts.append(p)
        return np.concatenate(pts, axis=0)


@dataclass
class Scene:
    primitives: list = field(default_factory=list)
    movers: list = field(default_factory=list)
    ground: GroundPlane | None = None
    sky: float = 0.85
    noise_sigma: float = 0.01
    texture_seed: int = 0


@dataclass
class FramePacket:
    """One synchronized multi-camera frame.

    ``body_pose`` maps body coordinates into world coordinates (the same
    convention as the trajectory file). ``gt_depth`` per camera stores range
    along the pixel ray, 0 where the ray hits nothing.
    """

    timestamp: float
    images: list
    body_pose: Pose
    gt_depth: list | None = None
    detections: list | None = None


def _all_surfaces(scene: Scene):
    """Stable iteration order: ground, static primitives, movers."""
    out = []
    if scene.ground is not None:
        out.append(("ground", scene.ground))
    for p in scene.primitives:
        out.append(("static", p))
    for m in scene.movers:
        out.append(("mover", m))
    return out


def render_camera(scene: Scene, cam, cam_to_world: Pose, t_now: float):
    """Intensity and range images for one camera; vectorized per primitive."""
    rays = camera_rays(cam).reshape(-1, 3)
    d = rays @ cam_to_world.rotation.T
    o = cam_to_world.translation

    n = d.shape[0]
    best_t = np.full(n, np.inf)
    intensity = np.full(n, scene.sky, dtype=np.float64)
    for pid, (kind, prim) in enumerate(_all_surfaces(scene)):
        if kind == "mover":
            t, ok, u, v = prim.intersect(o, d, t_now)
        else:
            t, ok, u, v = prim.intersect(o, d)
        closer = ok & (t < best_t)
        if not np.any(closer):
            continue
        best_t = np.where(closer, t, best_t)
        tex = prim.texture.sample(u[closer], v[closer], pid, scene.texture_seed)
        intensity[closer] = tex

    depth = np.where(np.isfinite(best_t), best_t, 0.0).astype(np.float32)
    img = intensity.astype(np.float32)
    h, w = cam.height, cam.width
    return img.reshape(h, w), depth.reshape(h, w)


def _mover_box_2d(scene: Scene, rig: CameraRig, body_pose: Pose, t_now: float,
                  mover: MovingBox, margin_px: float = 2.0):
    """Tight projected bounding box of a mover in the reference view, or None.

    Samples the box surface densely, projects, and pads by margin_px, so the
    returned box always contains the projected silhouette.
    """
    ref_i = rig.reference_index
    world_to_cam = rig.cam_from_world(ref_i, body_pose)
    pts = mover.surface_points(t_now)
    pc = world_to_cam.apply(pts)
    uv, ok = rig.cameras[ref_i].project(pc)
    if not np.any(ok):
        return None
    u = uv[ok, 0]
    v = uv[ok, 1]
    x0 = float(np.min(u)) - margin_px
    y0 = float(np.min(v)) - margin_px
    x1 = float(np.max(u)) + margin_px
    y1 = float(np.max(v)) + margin_px
    return x0, y0, x1 - x0, y1 - y0


def render_frame(scene: Scene, rig: CameraRig, body_pose: Pose, t_now: float,
                 frame_id: int = 0, with_noise: bool = True) -> FramePacket:
    """Render all rig cameras at time t_now.

    Image noise (when scene.noise_sigma > 0 and with_noise) is seeded from
    (texture_seed, time, camera) so identical calls give identical bytes.
    """
    images = []
    depths = []
    tkey = int(round(t_now * 1e6))
    for i in range(len(rig.cameras)):
        cam_to_world = body_pose.compose(rig.extrinsics[i].inverse())
        img, dep = render_camera(scene, rig.cameras[i], cam_to_world, t_now)
        if with_noise and scene.noise_sigma > 0.0:
            rng = np.random.default_rng((scene.texture_seed, tkey, i))
            img = img + rng.normal(0.0, scene.noise_sigma, img.shape).astype(np.float32)
            img = np.clip(img, 0.0, 1.0)
        images.append(img)
        depths.append(dep)

    detections = []
    for mover in scene.movers:
        box = _mover_box_2d(scene, rig, body_pose, t_now, mover)
        if box is not None:
            x, y, w, h = box
            detections.append(DetectionBox(frame_id, mover.class_id, x, y, w, h, 1.0))
    return FramePacket(t_now, images, body_pose, depths, detections)


def script_trajectory(length_m: float, speed_mps: float, frame_rate_hz: float,
                      start: np.ndarray = (0.0, 0.0, 0.0),
                      yaw_rate_deg_s: float = 0.0) -> list[tuple[float, Pose]]:
    """Constant-speed path along +x (gently curving when yaw_rate is set).

    Returns (timestamp, body-to-world Pose) pairs spaced speed/frame_rate
    meters apart, floor(length/spacing) + 1 of them, first at the start
    position with identity heading.
    """
    if length_m <= 0 or speed_mps <= 0 or frame_rate_hz <= 0:
        raise ValueError("trajectory parameters must be positive")
    spacing = speed_mps / frame_rate_hz
    # count in exact arithmetic where possible: 100 m / (10 m/s / 25 Hz) = 250
    count = int(np.floor(length_m * frame_rate_hz / speed_mps + 1e-9)) + 1
    start = np.asarray(start, dtype=np.float64)
    out = []
    yaw_step = np.deg2rad(yaw_rate_deg_s) / frame_rate_hz
    pos = start.copy()
    yaw = 0.0
    for i in range(count):
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        out.append((i / frame_rate_hz, Pose(R, pos.copy())))
        pos = pos + spacing * np.array([c, s, 0.0])
        yaw += yaw_step
    return out


def default_rig(width: int = 1024, height: int = 544, xi: float = 1.0,
                focal: float | None = None, n_cameras: int = 5,
                cam_height: float = 1.4, baseline: float = 0.5) -> CameraRig:
    """Forward-looking multi-camera rig spread along the body y axis.

    Camera frames: x right, y down, z forward (optical axis along body +x).
    The reference camera is the middle one. Focal defaults to 220/1024 of
    the width so the FOV matches across resolutions.
    """
    from .geometry import FisheyeCamera

    if focal is None:
        focal = 220.0 * width / 1024.0
    cams = []
    exts = []
    # body->cam rotation: cam x = -body y, cam y = -body z, cam z = body x
    R = np.array([[0.0, -1.0, 0.0],
                  [0.0, 0.0, -1.0],
                  [1.0, 0.0, 0.0]])
    offsets = (np.arange(n_cameras) - (n_cameras - 1) / 2.0) * baseline
    for i in range(n_cameras):
        cams.append(FisheyeCamera(xi=xi, fx=focal, fy=focal,
                                  cx=width / 2.0, cy=height / 2.0,
                                  width=width, height=height))
        # camera center in body coords: lateral offset, fixed height
        c_body = np.array([0.0, offsets[i], cam_height])
        exts.append(Pose(R, -R @ c_body))
    return CameraRig(tuple(cams), tuple(exts), n_cameras // 2)
