"""3D lifting, Umeyama, RANSAC, cloud fusion, and the ICP baseline."""

import math

import numpy as np
import pytest

from zspose.errors import DegenerateConfiguration, InvalidDepth, NoConsensus
from zspose.features import GridPoint
from zspose.geom import (
    CameraIntrinsics,
    RigidTransformSE3,
    RigidTransformSim3,
    Rotation3,
    geodesic_rotation_error,
)
from zspose.io import CropRect, DepthImage
from zspose.solver import (
    IcpResult,
    PointCloud,
    PointPair3D,
    PoseEstimate,
    RansacConfig,
    fuse_target_cloud,
    grid_to_pixel,
    icp_sim3,
    ransac_pose,
    umeyama,
    unproject,
)
from zspose.synth import (
    SynthRenderConfig,
    default_intrinsics,
    gen_category,
    render_view,
    ring_camera,
    sample_instance,
)


def _pairs(src, dst):
    return [PointPair3D(np.asarray(s, float), np.asarray(d, float)) for s, d in zip(src, dst)]


def _random_sim3(rng) -> RigidTransformSim3:
    rot = Rotation3.from_axis_angle(rng.normal(size=3), rng.uniform(0.1, math.pi - 0.1))
    return RigidTransformSim3(rot, rng.normal(size=3), rng.uniform(0.5, 2.0))


# --------------------------------------------------------------- grid_to_pixel


def test_grid_to_pixel_full_crop_first_cell():
    crop = CropRect(0, 0, 224, 224)
    assert grid_to_pixel(GridPoint(0, 0), crop, (28, 28)) == (4.0, 4.0)


def test_grid_to_pixel_full_crop_last_cell():
    crop = CropRect(0, 0, 224, 224)
    assert grid_to_pixel(GridPoint(27, 27), crop, (28, 28)) == (220.0, 220.0)


def test_grid_to_pixel_offset_crop():
    crop = CropRect(100, 50, 448, 448)
    assert grid_to_pixel(GridPoint(14, 7), crop, (28, 28)) == (220.0, 282.0)


# ------------------------------------------------------------------ unproject


INTR = CameraIntrinsics(fx=100.0, fy=100.0, cx=0.0, cy=0.0, width=640, height=480)


def test_unproject_principal_point():
    intr = CameraIntrinsics(fx=50.0, fy=50.0, cx=32.0, cy=24.0, width=64, height=48)
    np.testing.assert_allclose(unproject((32.0, 24.0), 2.0, intr), [0.0, 0.0, 2.0])


def test_unproject_unit_tangent():
    np.testing.assert_allclose(unproject((100.0, 0.0), 1.0, INTR), [1.0, 0.0, 1.0])


def test_unproject_rejects_bad_depth():
    for depth in (0.0, -1.0, math.nan, math.inf):
        with pytest.raises(InvalidDepth):
            unproject((1.0, 1.0), depth, INTR)


def test_unproject_project_round_trip():
    intr = CameraIntrinsics(fx=210.0, fy=195.0, cx=111.5, cy=84.25, width=224, height=168)
    rng = np.random.default_rng(8)
    for _ in range(200):
        px = rng.uniform(0, intr.width), rng.uniform(0, intr.height)
        z = rng.uniform(0.1, 20.0)
        p = unproject(px, z, intr)
        # forward pinhole projection, written out independently
        back = (intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy)
        np.testing.assert_allclose(back, px, atol=1e-9)
        assert p[2] == z


# -------------------------------------------------------------------- umeyama


def test_umeyama_identity():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(6, 3))
    est = umeyama(_pairs(src, src))
    assert geodesic_rotation_error(est.rotation, Rotation3.identity()) < 1e-9
    np.testing.assert_allclose(est.translation, 0.0, atol=1e-9)
    assert est.scale == pytest.approx(1.0, abs=1e-9)


def test_umeyama_recovers_constructed_sim3():
    rng = np.random.default_rng(9)
    src = rng.normal(size=(10, 3))
    rot = Rotation3.from_axis_angle([0.0, 0.0, 1.0], math.radians(30.0))
    t = np.array([1.0, -2.0, 0.5])
    dst = 2.5 * src @ rot.matrix.T + t
    est = umeyama(_pairs(src, dst))
    assert geodesic_rotation_error(est.rotation, rot) < 1e-9
    np.testing.assert_allclose(est.translation, t, atol=1e-9)
    assert est.scale == pytest.approx(2.5, abs=1e-9)


def test_umeyama_planar_mirror_stays_proper():
    """A reflected planar fit must come back as a proper rotation, and at
    least as good as anything a dense rotation-grid search can find."""
    src = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]) - 0.5
    mirror = np.diag([1.0, -1.0, 1.0])
    dst = 1.3 * src @ mirror.T + np.array([0.2, 0.1, -0.3])
    est = umeyama(_pairs(src, dst))
    assert np.linalg.det(est.rotation.matrix) == pytest.approx(1.0, abs=1e-9)
    assert np.max(np.linalg.norm(dst - est.apply(src), axis=1)) < 1e-9

    # brute force over a rotation grid, solving scale/translation in closed
    # form per rotation; the SVD answer may never be beaten
    s0 = src - src.mean(axis=0)
    d0 = dst - dst.mean(axis=0)
    den = float((s0**2).sum())
    i = np.arange(150) + 0.5
    phi = math.pi * (3 - math.sqrt(5)) * i
    z = 1 - 2 * i / 150
    r = np.sqrt(1 - z * z)
    axes = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    best = math.inf
    for axis in axes:
        for ang in np.linspace(0.0, math.pi, 91):
            rot = Rotation3.from_axis_angle(axis, ang).matrix
            lam = float((d0 * (s0 @ rot.T)).sum()) / den
            if lam <= 0:
                continue
            best = min(best, float(((d0 - lam * (s0 @ rot.T)) ** 2).sum()))
    mine = float(((d0 - est.scale * (s0 @ est.rotation.matrix.T)) ** 2).sum())
    assert mine <= best + 1e-9


def test_umeyama_degenerate_inputs():
    line = np.stack([np.linspace(0, 1, 5)] * 3, axis=1)  # collinear
    with pytest.raises(DegenerateConfiguration):
        umeyama(_pairs(line, line + 1.0))
    two = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    with pytest.raises(DegenerateConfiguration):
        umeyama(_pairs(two, two))


def test_umeyama_perturbations_never_improve():
    rng = np.random.default_rng(17)
    src = rng.normal(size=(12, 3))
    dst = _random_sim3(rng).apply(src) + 0.05 * rng.normal(size=src.shape)
    est = umeyama(_pairs(src, dst))

    def sse(rot_m, scale):
        t = dst.mean(axis=0) - scale * rot_m @ src.mean(axis=0)
        return float(((dst - (scale * src @ rot_m.T + t)) ** 2).sum())

    base = sse(est.rotation.matrix, est.scale)
    for i in range(20):
        axis = rng.normal(size=3)
        sign = 1.0 if i % 2 else -1.0
        bumped = Rotation3.from_axis_angle(axis, math.radians(0.5)).matrix @ est.rotation.matrix
        assert sse(bumped, est.scale) >= base - 1e-12
        assert sse(est.rotation.matrix, est.scale * (1.0 + sign * 0.01)) >= base - 1e-12


def test_umeyama_rotation_equivariance():
    rng = np.random.default_rng(18)
    src = rng.normal(size=(9, 3))
    dst = _random_sim3(rng).apply(src)
    base = umeyama(_pairs(src, dst))
    q = Rotation3.from_axis_angle(rng.normal(size=3), 1.1)
    rotated = umeyama(_pairs(src @ q.matrix.T, dst))
    np.testing.assert_allclose(
        rotated.rotation.matrix, base.rotation.matrix @ q.matrix.T, atol=1e-9
    )


# ---------------------------------------------------------------- ransac_pose


def test_ransac_outlier_free_consensus():
    rng = np.random.default_rng(30)
    src = rng.normal(size=(40, 3))
    truth = _random_sim3(rng)
    est = ransac_pose(_pairs(src, truth.apply(src)), RansacConfig(seed=1))
    assert est.inlier_count == 40
    assert geodesic_rotation_error(est.transform.rotation, truth.rotation) < 1e-6
    assert est.rms_residual < 1e-9


def test_ransac_no_consensus_on_inconsistent_pairs():
    rng = np.random.default_rng(123)
    bad = []
    for _ in range(4):
        rot = Rotation3.from_axis_angle(rng.normal(size=3), rng.uniform(0.5, 2.0))
        s = rng.normal(size=3)
        d = rot.matrix @ s * rng.uniform(0.5, 2.0) + rng.normal(size=3)
        bad.append(PointPair3D(s, d))
    with pytest.raises(NoConsensus):
        ransac_pose(bad, RansacConfig(inlier_thresh=1e-6))


def test_ransac_bit_reproducible():
    rng = np.random.default_rng(31)
    src = rng.normal(size=(30, 3))
    dst = _random_sim3(rng).apply(src)
    dst[:9] = rng.uniform(-4, 4, size=(9, 3))
    cfg = RansacConfig(seed=7)
    a = ransac_pose(_pairs(src, dst), cfg)
    b = ransac_pose(_pairs(src, dst), cfg)
    assert np.array_equal(a.inlier_indices, b.inlier_indices)
    assert a.rms_residual == b.rms_residual
    np.testing.assert_array_equal(a.transform.matrix(), b.transform.matrix())


def test_ransac_inliers_monotone_in_threshold():
    rng = np.random.default_rng(32)
    src = rng.normal(size=(40, 3))
    dst = _random_sim3(rng).apply(src) + 0.05 * rng.normal(size=(40, 3))
    counts = [
        ransac_pose(_pairs(src, dst), RansacConfig(inlier_thresh=th, seed=5)).inlier_count
        for th in (0.05, 0.1, 0.2, 0.4)
    ]
    assert counts == sorted(counts)


def test_ransac_config_validation():
    with pytest.raises(ValueError):
        RansacConfig(sample_size=2)
    with pytest.raises(ValueError):
        RansacConfig(inlier_thresh=0.0)
    rng = np.random.default_rng(0)
    src = rng.normal(size=(3, 3))
    with pytest.raises(DegenerateConfiguration):
        ransac_pose(_pairs(src, src), RansacConfig())  # below min_pairs


# --------------------------------------------------------- fuse_target_cloud


def test_fuse_flat_plane():
    depth = DepthImage(np.ones((8, 8)), np.ones((8, 8), dtype=bool))
    intr = CameraIntrinsics(fx=10.0, fy=10.0, cx=3.5, cy=3.5, width=8, height=8)
    cloud = fuse_target_cloud([(depth, intr, RigidTransformSE3.identity())])
    assert cloud.points.shape == (64, 3)
    np.testing.assert_allclose(cloud.points[:, 2], 1.0)


def test_fuse_empty_foreground():
    depth = DepthImage(np.ones((4, 4)), np.zeros((4, 4), dtype=bool))
    intr = CameraIntrinsics(fx=10.0, fy=10.0, cx=1.5, cy=1.5, width=4, height=4)
    cloud = fuse_target_cloud([(depth, intr, RigidTransformSE3.identity())])
    assert cloud.points.shape == (0, 3)


def test_fuse_matches_per_view_oracle():
    cfg = SynthRenderConfig()
    proto = gen_category(cfg.parts, cfg.dim, seed=12)
    inst = sample_instance(proto, np.random.default_rng(12), pose_tilt=cfg.pose_tilt)
    intr = default_intrinsics(cfg)
    views = []
    for j, az in enumerate((0.0, 1.2)):
        v = render_view(
            inst, intr, ring_camera(np.zeros(3), cfg.ring_radius, cfg.ring_elevation, az), cfg, seed=j
        )
        views.append((v.bundle.depth, v.bundle.intrinsics, v.bundle.extrinsics))

    stride = 3
    fused = fuse_target_cloud(views, stride=stride)

    expected = []
    for depth, vintr, extr in views:
        inv = extr.to_sim3()
        inv = RigidTransformSim3(
            Rotation3(inv.rotation.matrix.T),
            -(inv.rotation.matrix.T @ inv.translation),
            1.0,
        )
        rows, cols = np.nonzero(depth.valid)
        for i, (r, c) in enumerate(zip(rows, cols)):
            if i % stride:
                continue
            p = unproject((c + 0.5, r + 0.5), float(depth.values[r, c]), vintr)
            expected.append(inv.apply(p))
    np.testing.assert_allclose(fused.points, np.asarray(expected), atol=1e-6)


# ------------------------------------------------------------------- icp_sim3


def test_icp_self_identity():
    rng = np.random.default_rng(40)
    pts = rng.normal(size=(120, 3))
    out = icp_sim3(PointCloud(pts), PointCloud(pts))
    assert isinstance(out, IcpResult)
    assert geodesic_rotation_error(out.estimate.transform.rotation, Rotation3.identity()) < 1e-9
    assert out.estimate.rms_residual < 1e-12


def test_icp_converges_from_near_init():
    rng = np.random.default_rng(77)
    src = rng.normal(size=(300, 3))
    truth = RigidTransformSim3(
        Rotation3.from_axis_angle(rng.normal(size=3), 0.9), np.array([0.3, -0.2, 0.5]), 1.4
    )
    dst = truth.apply(src)
    bump = Rotation3.from_axis_angle(rng.normal(size=3), math.radians(10.0))
    init = RigidTransformSim3(
        Rotation3(bump.matrix @ truth.rotation.matrix), truth.translation + 0.1, 1.4 * 1.1
    )
    out = icp_sim3(PointCloud(src), PointCloud(dst), init=init)
    assert geodesic_rotation_error(out.estimate.transform.rotation, truth.rotation) < 1e-3
    assert out.estimate.transform.scale == pytest.approx(1.4, rel=1e-3)


def test_icp_symmetric_shape_locks_onto_alias():
    """A half-turn-symmetric shape rotated by 180 deg: identity init settles
    into the wrong-but-zero-residual alignment."""
    xs = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    ys = np.array([-0.4, 0.0, 0.4])
    pts = np.array([[x, y, 0.3 * (x * x + y * y)] for x in xs for y in ys])
    half_turn = Rotation3.from_axis_angle([0.0, 0.0, 1.0], math.pi)
    dst = pts @ half_turn.matrix.T
    out = icp_sim3(PointCloud(pts), PointCloud(dst))
    assert out.estimate.rms_residual < 1e-9
    assert geodesic_rotation_error(out.estimate.transform.rotation, half_turn) > 3.0


def test_icp_rms_non_increasing_over_iterations():
    rng = np.random.default_rng(78)
    src = rng.normal(size=(200, 3))
    truth = _random_sim3(rng)
    dst = truth.apply(src)
    bump = Rotation3.from_axis_angle(rng.normal(size=3), math.radians(15.0))
    init = RigidTransformSim3(
        Rotation3(bump.matrix @ truth.rotation.matrix), truth.translation, truth.scale
    )
    series = [
        icp_sim3(
            PointCloud(src), PointCloud(dst), init=init, max_iter=m, tol=0.0
        ).estimate.rms_residual
        for m in range(1, 7)
    ]
    for earlier, later in zip(series, series[1:]):
        assert later <= earlier + 1e-12


def test_icp_needs_three_points():
    two = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
    with pytest.raises(DegenerateConfiguration):
        icp_sim3(two, two)
