import numpy as np
import pytest

from fisheyemap.evalkit import (
    TOLERANCE_SWEEP, DepthErrorStats, MapQuality, accuracy_completeness,
    depth_error_stats, nn_distances, project_gt_depth, quality_sweep,
)
from fisheyemap.geometry import FisheyeCamera, Pose
from fisheyemap.planesweep import DepthMap
from fisheyemap.synthworld import GroundPlane, Scene, default_rig, render_frame


def brute_force_nn(query, ref):
    """Reference implementation using the same summation order."""
    out = np.empty(len(query))
    for i, q in enumerate(query):
        dx = q[0] - ref[:, 0]
        dy = q[1] - ref[:, 1]
        dz = q[2] - ref[:, 2]
        d2 = (dx * dx + dy * dy) + dz * dz
        out[i] = np.sqrt(d2.min())
    return out


# ---------------------------------------------------------------------------
# depth error stats


def test_depth_error_stats_hand_case():
    est = np.array([[1.0, 2.0, 0.0], [3.0, 0.0, 5.0]], np.float32)
    gt = np.array([[1.5, 2.0, 4.0], [0.0, 1.0, 4.0]], np.float32)
    s = depth_error_stats(est, gt, frame_id=7)
    # joint pixels: (0,0)->0.5, (0,1)->0.0, (1,2)->1.0
    assert s.frame_id == 7
    assert s.valid_evaluated == 3
    assert s.median_abs_err == pytest.approx(0.5)
    assert s.mean_abs_err == pytest.approx(0.5)
    assert not s.empty


def test_depth_error_stats_accepts_depthmaps_and_empty():
    z = np.zeros((4, 4), np.float32)
    d = DepthMap(z, z.copy(), z.copy())
    s = depth_error_stats(d, d)
    assert s.empty and np.isnan(s.median_abs_err)
    with pytest.raises(ValueError, match="mismatch"):
        depth_error_stats(np.zeros((2, 2)), np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# nearest neighbors


def test_nn_distances_match_brute_force_bitwise():
    rng = np.random.default_rng(0)
    for n_ref in (1, 2, 3, 5, 100):
        q = rng.uniform(-3, 3, size=(40, 3))
        r = rng.uniform(-3, 3, size=(n_ref, 3))
        assert np.array_equal(nn_distances(q, r), brute_force_nn(q, r))


def test_nn_distances_edges():
    r = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert nn_distances(np.zeros((0, 3)), r).shape == (0,)
    with pytest.raises(ValueError, match="empty"):
        nn_distances(r, np.zeros((0, 3)))
    d = nn_distances(np.array([[0.25, 0.0, 0.0]]), r)
    assert d[0] == 0.25


# ---------------------------------------------------------------------------
# accuracy / completeness


def test_accuracy_completeness_hand_case():
    gt = np.array([[float(i), 0.0, 0.0] for i in range(10)])
    sc = gt.copy()
    sc[:, 1] = 0.2  # every point exactly 0.2 away
    q = accuracy_completeness(sc, gt, t1=0.1, t2=0.25)
    assert q.accuracy == 0.0 and q.completeness == 1.0
    q2 = accuracy_completeness(sc, gt, t1=0.2, t2=0.1)
    assert q2.accuracy == 1.0 and q2.completeness == 0.0
    ident = accuracy_completeness(gt, gt)
    assert ident.accuracy == 1.0 and ident.completeness == 1.0


def test_accuracy_completeness_empty_conventions():
    gt = np.zeros((5, 3))
    q = accuracy_completeness(np.zeros((0, 3)), gt)
    assert (q.accuracy, q.completeness) == (1.0, 0.0)
    with pytest.raises(ValueError):
        accuracy_completeness(gt, np.zeros((0, 3)))


def test_quality_sweep_monotone_in_tolerance():
    rng = np.random.default_rng(1)
    gt = rng.uniform(0, 2, size=(300, 3))
    sc = gt + rng.normal(0, 0.08, size=gt.shape)
    q = quality_sweep(sc, gt)
    assert set(q) == set(TOLERANCE_SWEEP)
    accs = [q[t].accuracy for t in TOLERANCE_SWEEP]
    comps = [q[t].completeness for t in TOLERANCE_SWEEP]
    assert accs == sorted(accs)
    assert comps == sorted(comps)
    # sweep agrees with the single-pair function
    one = accuracy_completeness(sc, gt, t1=0.10, t2=0.10)
    assert q[0.10].accuracy == one.accuracy
    assert q[0.10].completeness == one.completeness


def test_map_quality_validation():
    with pytest.raises(ValueError):
        MapQuality(1.2, 0.5, 0.1, 0.25)
    with pytest.raises(ValueError):
        MapQuality(0.5, -0.1, 0.1, 0.25)


# ---------------------------------------------------------------------------
# gt cloud -> depth map projection


def test_project_gt_depth_single_point_and_zbuffer():
    cam = FisheyeCamera(xi=0.0, fx=40.0, fy=40.0, cx=16.0, cy=16.0,
                        width=32, height=32)
    # two points on the same ray: nearest wins
    cloud = np.array([[0.2, 0.1, 4.0], [0.1, 0.05, 2.0]])
    d = project_gt_depth(cloud, cam, Pose.identity())
    u = 40.0 * 0.05 + 16.0  # = 18, same pixel for both points
    v = 40.0 * 0.025 + 16.0
    px, py = int(u), int(v)
    assert d.depth[py, px] == pytest.approx(np.linalg.norm([0.1, 0.05, 2.0]),
                                            rel=1e-6)
    assert (d.depth > 0).sum() == 1
    # point behind the camera never lands
    d2 = project_gt_depth(np.array([[0.0, 0.0, -3.0]]), cam, Pose.identity())
    assert not d2.valid.any()


def test_project_gt_depth_matches_renderer():
    rig = default_rig(128, 72, n_cameras=1, baseline=0.0)
    cam = rig.cameras[0]
    scene = Scene(noise_sigma=0.0)
    scene.ground = GroundPlane()
    pose = Pose.identity()
    packet = render_frame(scene, rig, pose, 0.0, with_noise=False)
    gt = packet.gt_depth[0]
    w2c = rig.cam_from_world(0, pose)
    # sample the rendered ground as a world cloud, reproject it
    rays = np.argwhere(gt > 0)
    cam_to_world = w2c.inverse()
    from fisheyemap.geometry import camera_rays
    dirs = camera_rays(cam).reshape(-1, 3) @ cam_to_world.rotation.T
    flat = gt.reshape(-1)
    hit = flat > 0
    cloud = cam_to_world.translation + dirs[hit] * flat[hit, None]
    d = project_gt_depth(cloud, cam, w2c)
    both = (d.depth > 0) & (gt > 0)
    assert both.sum() > 0.9 * hit.sum()
    err = np.abs(d.depth[both] - gt[both])
    assert np.percentile(err, 99) < 1e-3
