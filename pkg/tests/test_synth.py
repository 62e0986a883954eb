"""Synthetic benchmark generator: prototypes, renders, on-disk datasets.

The renderer's forward model doubles as the oracle here — tests project
known part positions themselves and compare against what the emitted
bundles say.
"""
import math
from pathlib import Path

import numpy as np
import pytest

from conftest import SMALL_CFG, build_benchmark
from zspose.errors import NoVisibleParts, SamplingExhausted
from zspose.features import GridPoint, select_correspondences_cyclical
from zspose.geom import CameraIntrinsics, RigidTransformSE3, Rotation3, compose, invert
from zspose.io import Dataset
from zspose.pipeline import PipelineConfig
from zspose.evaluation import evaluate_pairs, relative_gt_pose
from zspose.solver import grid_to_pixel, unproject
from zspose.synth import (
    SynthRenderConfig,
    default_intrinsics,
    gen_benchmark,
    gen_category,
    render_view,
    ring_camera,
    sample_instance,
)

# ---------------------------------------------------------------- prototypes


def test_gen_category_cosine_bound():
    proto = gen_category(4, 64, seed=12)
    assert proto.parts == 4
    cos = proto.part_descriptors.astype(np.float64) @ proto.part_descriptors.T
    np.fill_diagonal(cos, -1.0)
    assert cos.max() < 0.5
    assert np.allclose(np.linalg.norm(proto.part_descriptors, axis=1), 1.0, atol=1e-6)


def test_gen_category_cosine_bound_at_default_size():
    for seed in range(3):
        proto = gen_category(24, 32, seed=seed)
        cos = proto.part_descriptors.astype(np.float64) @ proto.part_descriptors.T
        np.fill_diagonal(cos, -1.0)
        assert cos.max() < 0.5


def test_gen_category_deterministic():
    a = gen_category(10, 32, seed=77)
    b = gen_category(10, 32, seed=77)
    assert np.array_equal(a.part_descriptors, b.part_descriptors)
    assert np.array_equal(a.part_positions, b.part_positions)
    assert np.array_equal(a.sat_dirs, b.sat_dirs)
    assert np.array_equal(a.sat_desc_dirs, b.sat_desc_dirs)


def test_gen_category_exhaustion():
    # 100 pairwise-sub-0.5-cosine vectors do not fit in 8 dimensions
    # within the 10*p*d draw budget
    with pytest.raises(SamplingExhausted):
        gen_category(100, 8, seed=0)


def test_gen_category_validation():
    with pytest.raises(ValueError):
        gen_category(3, 32, seed=0)
    with pytest.raises(ValueError):
        gen_category(10, 32, seed=0, symmetry=0)


def test_positions_noncoplanar():
    for seed in (0, 1, 2):
        pos = gen_category(16, 32, seed=seed).part_positions
        centered = pos - pos.mean(axis=0)
        assert np.linalg.svd(centered, compute_uv=False)[2] > 1e-6


def test_positions_yaw_symmetric():
    """Two full rings of 8: the position set maps onto itself under a
    2*pi/8 yaw (this is what makes geometry-only alignment ambiguous)."""
    pos = gen_category(16, 32, seed=5, symmetry=8).part_positions
    rz = Rotation3.from_axis_angle(np.array([0.0, 0.0, 1.0]), 2.0 * math.pi / 8).matrix
    rotated = pos @ rz.T
    dists = np.linalg.norm(rotated[:, None, :] - pos[None, :, :], axis=2)
    assert dists.min(axis=1).max() < 1e-9


def test_small_category_scatters_instead_of_single_ring():
    # parts <= symmetry cannot fill two rings; layout falls back to
    # scattered azimuths and must still be non-coplanar
    pos = gen_category(4, 64, seed=12, symmetry=8).part_positions
    centered = pos - pos.mean(axis=0)
    assert np.linalg.svd(centered, compute_uv=False)[2] > 1e-6


# ------------------------------------------------------------------- renders


def _instance_and_camera(cfg, seed):
    proto = gen_category(
        cfg.parts, cfg.dim, seed=seed, satellites=cfg.satellites, symmetry=cfg.symmetry
    )
    rng = np.random.default_rng(seed)
    inst = sample_instance(proto, rng, 0.0, cfg.scale_range, cfg.pose_tilt)
    cam = ring_camera(
        inst.part_world.mean(axis=0), cfg.ring_radius, cfg.ring_elevation, 0.0
    )
    return inst, cam


def test_render_same_seed_bit_identical():
    cfg = SynthRenderConfig()
    inst, cam = _instance_and_camera(cfg, 3)
    intr = default_intrinsics(cfg)
    a = render_view(inst, intr, cam, cfg, seed=9)
    b = render_view(inst, intr, cam, cfg, seed=9)
    assert a.bundle.features.data.tobytes() == b.bundle.features.data.tobytes()
    assert np.array_equal(a.bundle.features.foreground, b.bundle.features.foreground)
    assert np.array_equal(a.bundle.features.saliency, b.bundle.features.saliency)
    assert a.bundle.depth.values.tobytes() == b.bundle.depth.values.tobytes()
    assert np.array_equal(a.bundle.depth.valid, b.bundle.depth.valid)
    assert a.bundle.crop == b.bundle.crop
    assert np.array_equal(a.part_ids, b.part_ids)
    # different seed re-rolls at least the background texture
    c = render_view(inst, intr, cam, cfg, seed=10)
    assert a.bundle.features.data.tobytes() != c.bundle.features.data.tobytes()


def test_render_unprojects_back_to_part_positions():
    """Zero noise, no satellites: every saliency-1 cell holds exactly one
    part center, and unprojecting the cell center through the emitted depth
    must land within half a cell's footprint of that part's camera-frame
    position (the cell-center quantization bound)."""
    cfg = SynthRenderConfig(satellites=0)
    proto = gen_category(cfg.parts, cfg.dim, seed=7, satellites=0)
    rng = np.random.default_rng(7)
    inst = sample_instance(proto, rng, 0.0, cfg.scale_range, cfg.pose_tilt)
    intr = default_intrinsics(cfg)
    cam = ring_camera(inst.part_world.mean(axis=0), cfg.ring_radius, cfg.ring_elevation, 0.0)
    view = render_view(inst, intr, cam, cfg, seed=11)
    b = view.bundle

    hit_cells = np.argwhere(b.features.saliency == 1.0)
    assert len(hit_cells) == view.visible_parts.sum() > 0
    for r, c in hit_cells:
        part = int(view.part_ids[r, c])
        assert part >= 0
        expected = cam.apply(inst.part_world[part][None, :])[0]
        x, y = grid_to_pixel(GridPoint(int(r), int(c)), b.crop, (cfg.cells, cfg.cells))
        got = unproject((x, y), float(b.depth.values[int(y), int(x)]), intr)
        err = got - expected
        half_x = 0.5 * (b.crop.w / cfg.cells) * expected[2] / intr.fx
        half_y = 0.5 * (b.crop.h / cfg.cells) * expected[2] / intr.fy
        assert abs(err[0]) <= half_x + 1e-9
        assert abs(err[1]) <= half_y + 1e-9
        assert abs(err[2]) < 1e-6  # depth itself is exact at sigma_d = 0


def test_render_no_visible_parts():
    # camera placed at the shape centroid: every outward part normal points
    # away from it, so the front-facing occlusion rule hides everything
    cfg = SynthRenderConfig()
    inst, _ = _instance_and_camera(cfg, 3)
    centered = RigidTransformSE3(
        Rotation3.identity(), -inst.part_world.mean(axis=0)
    )
    with pytest.raises(NoVisibleParts):
        render_view(inst, default_intrinsics(cfg), centered, cfg, seed=0)


def test_render_rejects_image_smaller_than_grid():
    cfg = SynthRenderConfig()  # 32 cells
    inst, cam = _instance_and_camera(cfg, 3)
    tiny = CameraIntrinsics(fx=20.0, fy=20.0, cx=7.5, cy=7.5, width=16, height=16)
    with pytest.raises(ValueError):
        render_view(inst, tiny, cam, cfg, seed=0)


def test_relative_gt_pose_matches_camera_chain():
    """Two frames of the *same* instance share a canonical alignment, so the
    ground-truth relative pose must collapse to the camera chain."""
    cfg = SynthRenderConfig()
    inst, _ = _instance_and_camera(cfg, 6)
    center = inst.part_world.mean(axis=0)
    cam_i = ring_camera(center, cfg.ring_radius, 0.3, 0.5)
    cam_j = ring_camera(center, cfg.ring_radius, 0.25, 2.1)
    t0 = inst.canonical_pose

    gt = relative_gt_pose(t0, t0, cam_i, cam_j)
    chain = compose(cam_j.to_sim3(), invert(cam_i.to_sim3()))
    assert np.allclose(gt.rotation.matrix, chain.rotation.matrix, atol=1e-9)
    assert np.allclose(gt.translation, chain.translation, atol=1e-9)
    assert gt.scale == pytest.approx(chain.scale, abs=1e-9)

    # and functionally: it maps view-i camera points onto view-j camera points
    pts = cam_i.apply(inst.part_world)
    assert np.allclose(gt.apply(pts), cam_j.apply(inst.part_world), atol=1e-9)


def test_cross_instance_matches_pair_same_parts():
    """Zero descriptor noise, two different instances (scale and pose gap):
    cyclical selection must only ever pair cells planted from the same part.
    Verified against the renderer's part-to-cell maps."""
    cfg = SynthRenderConfig()
    intr = default_intrinsics(cfg)
    checked = 0
    for s in range(30):
        proto = gen_category(cfg.parts, cfg.dim, seed=100 + s)
        rng = np.random.default_rng(200 + s)
        inst_a = sample_instance(proto, rng, 0.0, cfg.scale_range, cfg.pose_tilt)
        inst_b = sample_instance(proto, rng, 0.0, cfg.scale_range, cfg.pose_tilt)
        cam_a = ring_camera(
            inst_a.part_world.mean(axis=0), cfg.ring_radius, 0.3, float(rng.uniform(0, 2 * math.pi))
        )
        cam_b = ring_camera(
            inst_b.part_world.mean(axis=0), cfg.ring_radius, 0.35, float(rng.uniform(0, 2 * math.pi))
        )
        va = render_view(inst_a, intr, cam_a, cfg, seed=300 + s)
        vb = render_view(inst_b, intr, cam_b, cfg, seed=400 + s)
        shared = int(np.sum(va.visible_parts & vb.visible_parts))
        if shared < 5:
            continue  # cameras ended up on opposite sides; no planted overlap
        out = select_correspondences_cyclical(va.bundle.features, vb.bundle.features, k=shared)
        for item in out:
            pa = int(va.part_ids[item.ref_point.row, item.ref_point.col])
            pb = int(vb.part_ids[item.tgt_point.row, item.tgt_point.col])
            assert pa >= 0 and pb >= 0  # selections stay on rendered cells
            # the selected cells are part hits, not dilation-ring margin
            assert va.bundle.features.saliency[item.ref_point.row, item.ref_point.col] == 1.0
            assert vb.bundle.features.saliency[item.tgt_point.row, item.tgt_point.col] == 1.0
            assert pa == pb
        checked += 1
    assert checked >= 10  # enough qualifying camera draws to mean something


# ------------------------------------------------------------------ datasets


def test_benchmark_structure(tmp_path):
    pairs = gen_benchmark(
        tmp_path, categories=1, pairs_per_category=1, n_views=5, cfg=SMALL_CFG, seed=0
    )
    assert len(pairs) == 1
    assert len(list(tmp_path.glob("**/manifest.json"))) == 2
    assert len(list(tmp_path.glob("**/*.zpf"))) == 6
    assert len(list(tmp_path.glob("**/*.zdf"))) == 6
    assert (tmp_path / "pairs.jsonl").read_text("utf-8").count("\n") == 1

    spec = pairs[0]
    ds = Dataset(tmp_path)
    ref_seq = ds.sequence(spec.category, spec.ref_sequence)
    tgt_seq = ds.sequence(spec.category, spec.tgt_sequence)
    assert ref_seq.frame_ids() == [spec.ref_frame]
    assert tgt_seq.frame_ids() == list(spec.tgt_frames)
    assert ref_seq.manifest.canonical_alignment is not None
    for fid in spec.tgt_frames:
        bundle = tgt_seq.frame(fid)
        assert bundle.features.data.shape == (16, 16, 16)


def test_benchmark_byte_identical_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    gen_benchmark(a, categories=1, pairs_per_category=2, n_views=3, cfg=SMALL_CFG, seed=4)
    gen_benchmark(b, categories=1, pairs_per_category=2, n_views=3, cfg=SMALL_CFG, seed=4)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 0
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_benchmark_seed_changes_content(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    gen_benchmark(a, categories=1, pairs_per_category=1, n_views=1, cfg=SMALL_CFG, seed=4)
    gen_benchmark(b, categories=1, pairs_per_category=1, n_views=1, cfg=SMALL_CFG, seed=5)
    za = sorted(a.rglob("*.zpf"))[0]
    zb = sorted(b.rglob("*.zpf"))[0]
    assert za.read_bytes() != zb.read_bytes()


def test_error_degrades_monotonically_with_feature_noise(tmp_path):
    """Mean rotation error is non-decreasing in descriptor noise (0.5 deg
    slack absorbs benchmark sampling jitter)."""
    means = []
    for i, sigma_f in enumerate((0.0, 0.05, 0.1, 0.2)):
        cfg = SynthRenderConfig(feat_noise=sigma_f, shape_sigma=0.02, depth_noise=0.01)
        pairs, ds = build_benchmark(
            tmp_path / f"lvl{i}", cfg, categories=2, pairs=30, seed=0
        )
        report = evaluate_pairs(pairs, ds, PipelineConfig())
        means.append(float(np.mean([r.rotation_error_deg for r in report.records])))
    for lo, hi in zip(means, means[1:]):
        assert hi >= lo - 0.5, means
