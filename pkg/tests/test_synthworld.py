import numpy as np
import pytest

from fisheyemap.geometry import Pose, camera_rays
from fisheyemap.synthworld import (
    GroundPlane, MovingBox, RectPlane, Scene, Sphere, Texture, default_rig,
    render_frame, script_trajectory,
)


def world_rays(rig, body_pose, cam_i):
    """Unit ray directions in world coordinates plus the camera center."""
    cam_to_world = body_pose.compose(rig.extrinsics[cam_i].inverse())
    rays = camera_rays(rig.cameras[cam_i]).reshape(-1, 3)
    return rays @ cam_to_world.rotation.T, cam_to_world.translation


@pytest.fixture(scope="module")
def rig():
    return default_rig(128, 72, n_cameras=3, baseline=0.4)


def test_render_deterministic_bytes(rig):
    scene = Scene(noise_sigma=0.02)
    scene.ground = GroundPlane()
    scene.primitives.append(Sphere((6.0, 0.0, 1.0), 1.0))
    a = render_frame(scene, rig, Pose.identity(), 0.32)
    b = render_frame(scene, rig, Pose.identity(), 0.32)
    for ia, ib in zip(a.images, b.images):
        assert ia.tobytes() == ib.tobytes()
    for da, db in zip(a.gt_depth, b.gt_depth):
        assert da.tobytes() == db.tobytes()


def test_noise_differs_across_cameras_and_times(rig):
    scene = Scene(noise_sigma=0.02)
    scene.ground = GroundPlane()
    p = render_frame(scene, rig, Pose.identity(), 0.0)
    q = render_frame(scene, rig, Pose.identity(), 0.04)
    assert p.images[0].tobytes() != p.images[1].tobytes()
    assert p.images[0].tobytes() != q.images[0].tobytes()
    clean = render_frame(scene, rig, Pose.identity(), 0.0, with_noise=False)
    assert clean.images[0].tobytes() != p.images[0].tobytes()


def test_ground_depth_is_range_to_plane(rig):
    scene = Scene(noise_sigma=0.0)
    scene.ground = GroundPlane()
    pose = Pose.identity()
    packet = render_frame(scene, rig, pose, 0.0, with_noise=False)
    i = rig.reference_index
    gt = packet.gt_depth[i].reshape(-1)
    d, o = world_rays(rig, pose, i)
    hit = gt > 0
    assert hit.any() and not hit.all()
    pz = o[2] + gt[hit] * d[hit, 2]
    assert np.max(np.abs(pz)) < 1e-4
    # rays pointing up never hit
    assert np.all(d[~hit, 2] >= -1e-9)


def test_sphere_depth_puts_points_on_surface(rig):
    scene = Scene(noise_sigma=0.0)
    c = np.array([4.0, 0.5, 1.4])
    scene.primitives.append(Sphere(c, 1.2))
    pose = Pose.identity()
    packet = render_frame(scene, rig, pose, 0.0, with_noise=False)
    i = rig.reference_index
    gt = packet.gt_depth[i].reshape(-1)
    d, o = world_rays(rig, pose, i)
    hit = gt > 0
    assert hit.sum() > 20
    p = o[None, :] + gt[hit, None] * d[hit]
    r = np.linalg.norm(p - c, axis=1)
    assert np.max(np.abs(r - 1.2)) < 1e-4
    # front hemisphere only: every hit is nearer than the center
    assert np.all(gt[hit] < np.linalg.norm(c - o))


def test_occlusion_takes_nearest_surface(rig):
    pose = Pose.identity()
    wall = RectPlane((8.0, -20.0, -20.0), (0.0, 40.0, 0.0), (0.0, 0.0, 40.0))
    ball = Sphere((5.0, 0.0, 1.4), 0.7)

    s_wall = Scene(noise_sigma=0.0)
    s_wall.primitives.append(wall)
    s_ball = Scene(noise_sigma=0.0)
    s_ball.primitives.append(ball)
    s_both = Scene(noise_sigma=0.0)
    s_both.primitives.extend([wall, ball])

    i = rig.reference_index
    g_wall = render_frame(s_wall, rig, pose, 0.0, with_noise=False).gt_depth[i]
    g_ball = render_frame(s_ball, rig, pose, 0.0, with_noise=False).gt_depth[i]
    g_both = render_frame(s_both, rig, pose, 0.0, with_noise=False).gt_depth[i]

    expect = np.where(g_ball > 0, np.minimum(g_ball, np.where(g_wall > 0, g_wall, np.inf)),
                      g_wall)
    assert np.array_equal(g_both, expect.astype(np.float32))


def test_flat_texture_renders_constant(rig):
    scene = Scene(noise_sigma=0.0, sky=0.9)
    scene.primitives.append(
        RectPlane((6.0, -30.0, -30.0), (0.0, 60.0, 0.0), (0.0, 0.0, 60.0),
                  Texture(contrast=0.0, base=0.3)))
    packet = render_frame(scene, rig, Pose.identity(), 0.0, with_noise=False)
    i = rig.reference_index
    img = packet.images[i]
    hit = packet.gt_depth[i] > 0
    assert np.all(img[hit] == np.float32(0.3))
    assert np.all(img[~hit] == np.float32(0.9))


def test_detection_box_contains_silhouette(rig):
    pose = Pose.identity()
    base = Scene(noise_sigma=0.0)
    base.ground = GroundPlane()
    moved = Scene(noise_sigma=0.0)
    moved.ground = GroundPlane()
    box = MovingBox((5.0, 0.0, 0.8), (1.2, 1.2, 1.6), velocity=(0.0, -2.0, 0.0))
    moved.movers.append(box)

    i = rig.reference_index
    for t in (0.0, 0.4):
        p0 = render_frame(base, rig, pose, t, with_noise=False)
        p1 = render_frame(moved, rig, pose, t, with_noise=False)
        assert len(p1.detections) == 1 and not p0.detections
        det = p1.detections[0]
        changed = p1.gt_depth[i] != p0.gt_depth[i]
        ys, xs = np.nonzero(changed)
        assert len(ys) > 10
        assert np.all(xs + 0.5 >= det.x) and np.all(xs + 0.5 <= det.x + det.w)
        assert np.all(ys + 0.5 >= det.y) and np.all(ys + 0.5 <= det.y + det.h)


def test_moving_box_translates():
    box = MovingBox((2.0, 1.0, 0.5), (1.0, 1.0, 1.0), velocity=(0.5, -1.0, 0.0))
    assert np.allclose(box.center_at(0.0), [2.0, 1.0, 0.5])
    assert np.allclose(box.center_at(2.0), [3.0, -1.0, 0.5])
    lo, hi = box.bounds_at(2.0)
    assert np.allclose(hi - lo, box.size)
    pts = box.surface_points(2.0)
    assert np.all(pts >= lo - 1e-12) and np.all(pts <= hi + 1e-12)
    on_face = (np.abs(pts - lo) < 1e-12) | (np.abs(pts - hi) < 1e-12)
    assert np.all(on_face.any(axis=1))


def test_script_trajectory_straight_and_curved():
    straight = script_trajectory(10.0, 5.0, 10.0)
    assert len(straight) == 21
    for ts, pose in straight:
        assert pose.translation[1] == 0.0 and pose.translation[2] == 0.0
        assert np.allclose(pose.rotation, np.eye(3))
    assert straight[-1][1].translation[0] == pytest.approx(10.0)

    curved = script_trajectory(10.0, 5.0, 10.0, yaw_rate_deg_s=9.0)
    # 2 s of travel at 9 deg/s: final heading 18 deg left
    R = curved[-1][1].rotation
    heading = np.degrees(np.arctan2(R[1, 0], R[0, 0]))
    assert heading == pytest.approx(18.0, abs=1e-6)
    assert curved[-1][1].translation[1] != 0.0
