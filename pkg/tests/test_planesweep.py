import numpy as np
import pytest

from fisheyemap.planesweep import (
    FRONTO, GROUND, DepthMap, PlaneSet, SweepConfig, crop_window,
    downsample_image, generate_planes, multiscale_depth, sweep,
    upsample_nearest, zncc_cost,
)
from fisheyemap.synthworld import (
    RectPlane, Scene, Texture, default_rig, render_frame,
)
from fisheyemap.geometry import Pose


# ---------------------------------------------------------------------------
# Plane generation


def test_fronto_planes_uniform_in_inverse_depth():
    cfg = SweepConfig(n_fronto=16, n_ground=0, z_min=2.0, z_max=32.0)
    ps = generate_planes(cfg)
    assert len(ps) == 16
    assert np.all(ps.labels == FRONTO)
    assert np.allclose(ps.normals, [0.0, 0.0, 1.0], atol=0)
    inv = 1.0 / ps.offsets
    steps = np.diff(inv)
    assert np.allclose(steps, steps[0], atol=1e-12)
    assert abs(ps.offsets[0] - 2.0) < 1e-12 and abs(ps.offsets[-1] - 32.0) < 1e-9


def test_ground_planes_band_and_flip():
    cfg = SweepConfig(n_fronto=4, n_ground=5, z_min=1.0, z_max=30.0,
                      ground_band_halfwidth=0.5)
    # ground estimate handed in with a negative offset: must be flipped
    n = np.array([0.0, -1.0, 0.0])
    ps = generate_planes(cfg, ground_in_ref=(n, -1.4))
    g = ps.labels == GROUND
    assert g.sum() == 5
    assert np.all(ps.offsets[g] >= 0)
    assert np.allclose(ps.normals[g], [0.0, 1.0, 0.0], atol=0)
    assert np.allclose(ps.offsets[g], np.linspace(0.9, 1.9, 5), atol=1e-12)
    assert np.array_equal(ps.sweep_index[g], np.arange(5))


def test_planeset_validation():
    with pytest.raises(ValueError, match="unit"):
        PlaneSet(normals=[[0.0, 0.0, 2.0]], offsets=[1.0], labels=[0],
                 sweep_index=[0], z_min=1.0, z_max=2.0)
    with pytest.raises(ValueError, match="increasing"):
        PlaneSet(normals=[[0.0, 0.0, 1.0]] * 2, offsets=[2.0, 1.0],
                 labels=[0, 0], sweep_index=[0, 1], z_min=1.0, z_max=2.0)


# ---------------------------------------------------------------------------
# ZNCC


def test_zncc_cost_affine_invariance():
    rng = np.random.default_rng(0)
    a = rng.random((7, 7))
    assert zncc_cost(a, 3.0 * a + 0.7) == pytest.approx(0.0, abs=1e-12)
    assert zncc_cost(a, -a) == pytest.approx(1.0, abs=1e-12)


def test_zncc_cost_flat_patch_rejected():
    a = np.full((5, 5), 0.3)
    b = np.random.default_rng(1).random((5, 5))
    assert zncc_cost(a, b) is None
    assert zncc_cost(b, a) is None


# ---------------------------------------------------------------------------
# Sweep on a rendered fronto plane


@pytest.fixture(scope="module")
def fronto_setup():
    rig = default_rig(256, 144, n_cameras=3, baseline=0.8)
    # spacing chosen so adjacent hypotheses sit ~0.75 px apart in the
    # support views (fx * baseline * inverse-depth step) -- unambiguous WTA
    cfg = SweepConfig(n_fronto=12, n_ground=0, z_min=4.0, z_max=16.0,
                      window_full=7, window_low=5, crop_w=64, crop_h=40)
    planes = generate_planes(cfg)
    d_true = planes.offsets[4]
    # ~7 px per feature at the wall distance; sub-pixel texture aliases
    tex = Texture(contrast=0.8, feature_size=1.5)
    scene = Scene(noise_sigma=0.0)
    scene.primitives.append(RectPlane((d_true, -60.0, -60.0), (0.0, 120.0, 0.0),
                                      (0.0, 0.0, 120.0), tex))
    packet = render_frame(scene, rig, Pose.identity(), 0.0, with_noise=False)
    return rig, cfg, planes, d_true, packet


def test_sweep_recovers_exact_plane(fronto_setup):
    rig, cfg, planes, d_true, packet = fronto_setup
    ref_i = rig.reference_index
    support = [(packet.images[i], rig.cameras[i], rig.ref_to_cam(i))
               for i in range(3) if i != ref_i]
    d = sweep(packet.images[ref_i], support, rig.cameras[ref_i], planes,
              window=7)
    gt = packet.gt_depth[ref_i]
    # judge pixels whose true range sits well inside the swept band; at the
    # rim of the in-range disk the wall is foreshortened below pixel size
    valid = d.valid & (gt > 0) & (gt < 9.0)
    assert valid.sum() > 1000
    err = np.abs(d.depth[valid] - gt[valid])
    assert np.mean(err < 1e-3) >= 0.99


def test_sweep_view_order_invariant(fronto_setup):
    rig, cfg, planes, d_true, packet = fronto_setup
    ref_i = rig.reference_index
    views = [(packet.images[i], rig.cameras[i], rig.ref_to_cam(i))
             for i in range(3) if i != ref_i]
    a = sweep(packet.images[ref_i], views, rig.cameras[ref_i], planes, 7)
    b = sweep(packet.images[ref_i], views[::-1], rig.cameras[ref_i], planes, 7)
    assert np.array_equal(a.depth, b.depth)
    assert np.array_equal(a.best_cost, b.best_cost)
    assert np.array_equal(a.second_cost, b.second_cost)


def test_depthmap_costs_and_range_invariants(fronto_setup):
    rig, cfg, planes, d_true, packet = fronto_setup
    d = multiscale_depth(list(packet.images), rig, cfg, None, "multiscale")
    v = d.valid
    assert v.any()
    assert d.depth[v].min() > cfg.z_min
    assert d.depth[v].max() <= cfg.z_max + 1e-5
    assert np.all(d.best_cost[v] <= d.second_cost[v] + 1e-7)
    assert np.all(d.depth[~v] == 0.0)


def test_multiscale_crop_wins_inside(fronto_setup):
    rig, cfg, planes, d_true, packet = fronto_setup
    images = list(packet.images)
    half = multiscale_depth(images, rig, cfg, None, "half")
    multi = multiscale_depth(images, rig, cfg, None, "multiscale")
    full = multiscale_depth(images, rig, cfg, None, "full")
    ref_cam = rig.cameras[rig.reference_index]
    x0, y0, cw, ch = crop_window(ref_cam, cfg.crop_w, cfg.crop_h)
    inside = np.zeros(half.depth.shape, dtype=bool)
    inside[y0:y0 + ch, x0:x0 + cw] = True
    # outside the crop, multiscale equals the upsampled half-res result
    assert np.array_equal(multi.depth[~inside], half.depth[~inside])
    # inside, wherever the full-res crop sweep was valid, it wins
    crop_valid = inside & (multi.depth != half.depth)
    assert crop_valid.any()


def test_mode_validation(fronto_setup):
    rig, cfg, planes, d_true, packet = fronto_setup
    with pytest.raises(ValueError, match="mode"):
        multiscale_depth(list(packet.images), rig, cfg, None, "quarter")


# ---------------------------------------------------------------------------
# Resampling helpers


def test_downsample_image_box_filter():
    img = np.array([[1.0, 3.0, 5.0, 7.0],
                    [1.0, 3.0, 5.0, 7.0]], dtype=np.float32)
    out = downsample_image(img)
    assert out.shape == (1, 2)
    assert np.allclose(out, [[2.0, 6.0]])
    with pytest.raises(ValueError):
        downsample_image(np.zeros((3, 4), dtype=np.float32))


def test_upsample_nearest_exact():
    arr = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    up = upsample_nearest(arr, 4, 3)
    assert up.shape == (4, 3)
    assert up[0].tolist() == [1.0, 1.0, 2.0]
    assert up[3].tolist() == [3.0, 3.0, 4.0]


def test_crop_window_centered_and_clamped():
    from fisheyemap.geometry import FisheyeCamera
    cam = FisheyeCamera(xi=1.0, fx=100, fy=100, cx=64, cy=32,
                        width=128, height=64)
    assert crop_window(cam, 60, 30) == (34, 17, 60, 30)
    assert crop_window(cam, 500, 500) == (0, 0, 128, 64)
