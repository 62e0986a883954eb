"""Synthetic benchmark generator with exact ground truth.

A category is a rigid constellation of parts. Each part carries a unit
descriptor (pairwise dissimilar within the category) and a small cluster of
satellite sub-points whose descriptors are fixed perturbations of the part's,
consistent across views, the way dense semantic features stay stable on an
extended surface patch. Instances jitter the part layout, rescale it, and
place it in their own world frame via a similarity pose that doubles as the
ground-truth canonical alignment label.

Rendering projects visible points into a padded crop, quantizes them onto
the feature-grid lattice, and emits the same bundle layout the real data
path loads from disk: raw descriptors, foreground mask, saliency, and a
full-resolution depth map whose value at a cell's center pixel is that
cell's point depth, so unprojecting a cell center recovers the 3-D point up
to in-cell quantization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import binary_dilation, convolve

from .errors import NoVisibleParts, SamplingExhausted
from .features import FeatureGrid, normalize_grid
from .geom import CameraIntrinsics, RigidTransformSE3, RigidTransformSim3, Rotation3
from .io import (
    CropRect,
    DepthImage,
    FrameBundle,
    FrameRecord,
    SequenceManifest,
    write_depth_file,
    write_feature_file,
    write_sequence_manifest,
)

_MIN_DEPTH = 1e-3


@dataclass(frozen=True)
class SynthRenderConfig:
    """Geometry and noise knobs for the synthetic benchmark."""

    cells: int = 32
    dim: int = 32
    parts: int = 24
    satellites: int = 8
    symmetry: int = 8
    sat_radius: float = 0.08
    sat_desc_scale: float = 0.3
    feat_noise: float = 0.0
    depth_noise: float = 0.0
    shape_sigma: float = 0.0
    sat_tilt: float = 0.0
    crop_pad: float = 0.1
    scale_range: tuple[float, float] = (0.85, 1.15)
    pose_tilt: float = 0.15  # radians; captures share an up axis, like handheld orbits
    image_size: int = 160
    focal: float = 150.0
    ring_radius: float = 4.0
    ring_elevation: float = 0.3
    ref_elevation: tuple[float, float] = (0.2, 0.4)


@dataclass(frozen=True)
class CategoryPrototype:
    """Canonical part constellation shared by every instance of a category.

    part_descriptors: (P, D) unit vectors, pairwise cosine < 0.5.
    part_positions: (P, 3) canonical positions, non-coplanar.
    sat_dirs: (S, 3) unit offsets of the satellite sub-points, canonical frame.
    sat_desc_dirs: (S, D) descriptor perturbation directions, category-fixed.
    """

    part_descriptors: np.ndarray
    part_positions: np.ndarray
    sat_dirs: np.ndarray
    sat_desc_dirs: np.ndarray
    sat_radius: float
    sat_desc_scale: float

    @property
    def parts(self) -> int:
        return len(self.part_descriptors)

    @property
    def satellites(self) -> int:
        return len(self.sat_dirs)

    def point_descriptor(self, part: int, sat: Optional[int]) -> np.ndarray:
        """Descriptor of a part center (sat None) or one of its satellites."""
        d = self.part_descriptors[part].astype(np.float64)
        if sat is not None:
            d = d + self.sat_desc_scale * self.sat_desc_dirs[sat]
            d = d / np.linalg.norm(d)
        return d


@dataclass(frozen=True)
class InstanceSpec:
    """One concrete object: jittered, scaled, posed prototype.

    ``canonical_pose`` maps canonical coordinates into this instance's world
    frame and is exactly the label the evaluator uses for ground truth.
    ``part_world`` (P, 3) and ``sat_world`` (P, S, 3) are the resolved world
    positions (shape jitter moves a part and its satellites together).
    """

    prototype: CategoryPrototype
    shape_sigma: float
    scale: float
    canonical_pose: RigidTransformSim3
    part_world: np.ndarray
    sat_world: np.ndarray


@dataclass(frozen=True)
class RenderedView:
    """A rendered frame plus the oracle maps tests verify against."""

    bundle: FrameBundle
    raw_features: FeatureGrid
    part_ids: np.ndarray  # (cells, cells) int32, -1 off the rendered points
    visible_parts: np.ndarray  # (P,) bool


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_rotation(rng: np.random.Generator) -> Rotation3:
    """Uniform rotation via a normalized quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    m = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return Rotation3(m)


def gen_category(
    parts: int,
    dim: int,
    seed: int,
    satellites: int = 8,
    sat_radius: float = 0.08,
    sat_desc_scale: float = 0.3,
    symmetry: int = 8,
) -> CategoryPrototype:
    """Sample a category prototype.

    Part descriptors are rejection-sampled unit vectors with pairwise cosine
    below 0.5; the draw budget is 10 * parts * dim, after which
    SamplingExhausted signals an infeasible (parts, dim) combination.

    Part positions sit on horizontal rings of ``symmetry`` equally spaced
    slots about the z axis, so the position set maps onto itself under a yaw
    of 2*pi/symmetry: geometry-only alignment is k-fold ambiguous the way
    bottles, cups, and bowls are, and only the pairwise-distinct descriptors
    break the tie. ``symmetry=1`` scatters parts at independent azimuths
    instead, as do categories with too few parts to fill more than one ring.
    Rings are resampled until the layout is non-coplanar.
    """
    if parts < 4:
        raise ValueError("need at least 4 parts for a non-coplanar shape")
    if symmetry < 1:
        raise ValueError("symmetry must be >= 1")
    if parts <= symmetry:
        symmetry = 1  # one ring is always coplanar; scatter small categories
    rng = np.random.Generator(np.random.PCG64(seed))

    budget = 10 * parts * dim
    descs: list[np.ndarray] = []
    while len(descs) < parts:
        if budget <= 0:
            raise SamplingExhausted(
                f"could not place {parts} descriptors with pairwise cosine < 0.5 "
                f"in {10 * parts * dim} draws (dim {dim})"
            )
        budget -= 1
        cand = _unit_rows(rng, 1, dim)[0]
        if all(float(cand @ d) < 0.5 for d in descs):
            descs.append(cand)

    n_rings = -(-parts // symmetry)
    while True:
        ring_r = rng.uniform(0.5, 1.0, size=n_rings)
        ring_z = rng.uniform(-0.6, 0.6, size=n_rings)
        ring_phase = rng.uniform(0.0, 2.0 * math.pi, size=n_rings)
        rows = []
        for i in range(n_rings):
            for s in range(min(symmetry, parts - len(rows))):
                th = ring_phase[i] + 2.0 * math.pi * s / symmetry
                rows.append(
                    [ring_r[i] * math.cos(th), ring_r[i] * math.sin(th), ring_z[i]]
                )
        positions = np.array(rows)
        centered = positions - positions.mean(axis=0)
        if np.linalg.svd(centered, compute_uv=False)[2] > 0.1:
            break

    return CategoryPrototype(
        part_descriptors=np.stack(descs).astype(np.float32),
        part_positions=positions,
        sat_dirs=_unit_rows(rng, satellites, 3),
        sat_desc_dirs=_unit_rows(rng, satellites, dim),
        sat_radius=sat_radius,
        sat_desc_scale=sat_desc_scale,
    )


def sample_instance(
    proto: CategoryPrototype,
    rng: np.random.Generator,
    shape_sigma: float = 0.0,
    scale_range: tuple[float, float] = (0.85, 1.15),
    pose_tilt: Optional[float] = None,
    sat_tilt: float = 0.0,
) -> InstanceSpec:
    """Draw an instance: per-part jitter, a scale, and a random world pose.

    With ``pose_tilt`` set, the pose rotation is a uniform yaw about +z
    composed with a tilt of at most that angle — different captures of an
    upright object — so a target view ring can actually cover the reference
    viewpoint. ``None`` gives a uniform random rotation.

    ``sat_tilt`` rotates each part's satellite shell by a random angle up to
    that bound, independently per part and per instance. Part centers stay
    category-consistent while the fine-scale geometry around them does not —
    two instances then agree only at the part level, the way two objects of
    a category share layout but not surface detail. Semantic identity of each
    satellite travels with its index, so descriptor matches stay correct even
    though the matched 3D offsets differ between the instances.
    """
    scale = float(rng.uniform(*scale_range))
    if pose_tilt is None:
        rot = random_rotation(rng)
    else:
        yaw = rng.uniform(0.0, 2.0 * math.pi)
        axis = _unit_rows(rng, 1, 3)[0]
        tilt = Rotation3.from_axis_angle(axis, float(rng.uniform(0.0, pose_tilt)))
        rot = Rotation3(
            Rotation3.from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw).matrix @ tilt.matrix
        )
    pose = RigidTransformSim3(rot, rng.uniform(-0.4, 0.4, size=3), scale)
    jitter = rng.normal(0.0, shape_sigma, size=proto.part_positions.shape) if shape_sigma > 0 else 0.0
    centers = proto.part_positions + jitter
    offsets = np.broadcast_to(
        proto.sat_radius * proto.sat_dirs[None, :, :],
        (centers.shape[0], proto.sat_dirs.shape[0], 3),
    )
    if sat_tilt > 0.0:
        spun = np.empty(offsets.shape)
        for p in range(centers.shape[0]):
            axis = _unit_rows(rng, 1, 3)[0]
            ang = float(rng.uniform(0.0, sat_tilt))
            spun[p] = offsets[p] @ Rotation3.from_axis_angle(axis, ang).matrix.T
        offsets = spun
    sats = centers[:, None, :] + offsets
    return InstanceSpec(
        prototype=proto,
        shape_sigma=shape_sigma,
        scale=scale,
        canonical_pose=pose,
        part_world=pose.apply(centers),
        sat_world=pose.apply(sats.reshape(-1, 3)).reshape(sats.shape),
    )


def look_at_camera(position: np.ndarray, target: np.ndarray) -> RigidTransformSE3:
    """World-to-view extrinsics for a camera at ``position`` looking at
    ``target``, world +z up, camera +z forward."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(up, fwd)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise ValueError("camera axis is parallel to the up vector")
    right /= norm
    down = np.cross(fwd, right)
    rot = Rotation3(np.stack([right, down, fwd]))
    return RigidTransformSE3(rot, -(rot.matrix @ position))


def ring_camera(
    center: np.ndarray, radius: float, elevation: float, azimuth: float
) -> RigidTransformSE3:
    """Camera on a view ring around ``center``, looking inward."""
    center = np.asarray(center, dtype=np.float64)
    offset = radius * np.array(
        [
            math.cos(elevation) * math.cos(azimuth),
            math.cos(elevation) * math.sin(azimuth),
            math.sin(elevation),
        ]
    )
    return look_at_camera(center + offset, center)


def default_intrinsics(cfg: SynthRenderConfig) -> CameraIntrinsics:
    s = cfg.image_size
    return CameraIntrinsics(
        fx=cfg.focal, fy=cfg.focal, cx=(s - 1) / 2.0, cy=(s - 1) / 2.0, width=s, height=s
    )


def _pixel_cell_index(n_pixels: int, origin: int, extent: int, cells: int) -> np.ndarray:
    """Cell index of each crop pixel, assigning a pixel to the cell its
    center falls in (so sampling a cell's center pixel always reads back
    that cell's value)."""
    px = np.arange(n_pixels)
    return ((2 * px + 1) * cells) // (2 * extent)


def render_view(
    inst: InstanceSpec,
    intr: CameraIntrinsics,
    extr: RigidTransformSE3,
    cfg: SynthRenderConfig,
    seed: int = 0,
) -> RenderedView:
    """Render one view of an instance onto the feature-grid lattice.

    Points pass a front-facing test on the part's outward normal (positions
    relative to the shape centroid; satellites share their parent's facing).
    Visible points land in grid cells, nearest depth winning collisions.
    Hit cells take their point's descriptor plus feat_noise (renormalized),
    saliency 1; a one-cell dilation ring gets fresh random descriptors,
    neighbor-interpolated depth, saliency 0.5; remaining cells are random
    background, saliency 0. Deterministic per seed: equal seeds give
    bit-identical bundles.
    """
    if intr.width < cfg.cells or intr.height < cfg.cells:
        raise ValueError("image must be at least one pixel per grid cell")
    rng = np.random.Generator(np.random.PCG64(seed))
    proto = inst.prototype
    p_count, s_count = proto.parts, proto.satellites

    centroid = inst.part_world.mean(axis=0)
    normals = inst.part_world - centroid
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    cam_center = -(extr.rotation.matrix.T @ extr.translation)
    facing = np.einsum("ij,ij->i", normals, cam_center - inst.part_world) > 0.0

    pts = np.concatenate([inst.part_world, inst.sat_world.reshape(-1, 3)])
    parent = np.concatenate(
        [np.arange(p_count), np.repeat(np.arange(p_count), s_count)]
    ).astype(np.int32)
    sat_of = np.concatenate(
        [np.full(p_count, -1), np.tile(np.arange(s_count), p_count)]
    ).astype(np.int32)

    cam = extr.apply(pts)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = intr.fx * cam[:, 0] / z + intr.cx
        py = intr.fy * cam[:, 1] / z + intr.cy
    vis = (
        facing[parent]
        & (z > _MIN_DEPTH)
        & (px >= 0)
        & (px < intr.width)
        & (py >= 0)
        & (py < intr.height)
    )
    if not vis.any():
        raise NoVisibleParts("no rendered point is visible from this camera")

    # padded crop around the visible points, at least one pixel per cell
    x0 = int(math.floor(px[vis].min()))
    x1 = int(math.ceil(px[vis].max())) + 1
    y0 = int(math.floor(py[vis].min()))
    y1 = int(math.ceil(py[vis].max())) + 1
    pad = max(2, round(cfg.crop_pad * max(x1 - x0, y1 - y0)))
    x0, x1 = max(0, x0 - pad), min(intr.width, x1 + pad)
    y0, y1 = max(0, y0 - pad), min(intr.height, y1 + pad)
    if x1 - x0 < cfg.cells:
        x1 = min(intr.width, x0 + cfg.cells)
        x0 = max(0, x1 - cfg.cells)
    if y1 - y0 < cfg.cells:
        y1 = min(intr.height, y0 + cfg.cells)
        y0 = max(0, y1 - cfg.cells)
    crop = CropRect(x=x0, y=y0, w=x1 - x0, h=y1 - y0)

    cells = cfg.cells
    cols = np.floor((px - x0) * cells / crop.w).astype(np.int64)
    rows = np.floor((py - y0) * cells / crop.h).astype(np.int64)

    # nearest point wins a contested cell; ties go to the lower point index
    cell_point = np.full((cells, cells), -1, dtype=np.int64)
    cell_depth = np.zeros((cells, cells))
    order = np.lexsort((np.arange(len(pts)), z))
    for i in order[::-1]:
        if vis[i]:
            cell_point[rows[i], cols[i]] = i
            cell_depth[rows[i], cols[i]] = z[i]

    hit = cell_point >= 0
    ring = binary_dilation(hit, structure=np.ones((3, 3), dtype=bool)) & ~hit
    foreground = hit | ring

    # base layer: every cell gets a fresh random unit descriptor (consumed
    # in one fixed-size draw so rng alignment never depends on content)
    data = _unit_rows(rng, cells * cells, cfg.dim).reshape(cells, cells, cfg.dim)

    hit_rc = np.argwhere(hit)
    clean = np.stack(
        [
            proto.point_descriptor(
                int(parent[cell_point[r, c]]),
                None if sat_of[cell_point[r, c]] < 0 else int(sat_of[cell_point[r, c]]),
            )
            for r, c in hit_rc
        ]
    )
    if cfg.feat_noise > 0:
        clean = clean + rng.normal(0.0, cfg.feat_noise, size=clean.shape)
        clean /= np.linalg.norm(clean, axis=1, keepdims=True)
    data[hit_rc[:, 0], hit_rc[:, 1]] = clean

    # ring cells read as the blurred margin of their part: the owning part's
    # descriptor plus a fresh per-view perturbation, never a bare random
    # vector (random ring cells would mint spurious low-count match sets
    # that a sum-of-similarities view score ranks above dense real ones)
    part_ids = np.full((cells, cells), -1, dtype=np.int32)
    part_ids[hit] = parent[cell_point[hit]]
    ring_rc = np.argwhere(ring)
    ring_unit = _unit_rows(rng, len(ring_rc), cfg.dim)
    for (r, c), u in zip(ring_rc, ring_unit):
        neigh = [
            (rr, cc)
            for rr in range(max(0, r - 1), min(cells, r + 2))
            for cc in range(max(0, c - 1), min(cells, c + 2))
            if hit[rr, cc]
        ]
        owner = int(part_ids[min(neigh)])
        part_ids[r, c] = owner
        d = proto.part_descriptors[owner] + cfg.sat_desc_scale * u
        data[r, c] = d / np.linalg.norm(d)

    saliency = np.zeros((cells, cells), dtype=np.float32)
    saliency[hit] = 1.0
    saliency[ring] = 0.5

    if cfg.depth_noise > 0:
        noise = rng.normal(0.0, cfg.depth_noise, size=int(hit.sum()))
        cell_depth[hit] = np.maximum(cell_depth[hit] + noise, _MIN_DEPTH)

    # ring depth: mean of the 8-neighboring hit cells
    kernel = np.ones((3, 3))
    depth_sum = convolve(np.where(hit, cell_depth, 0.0), kernel, mode="constant")
    depth_cnt = convolve(hit.astype(np.float64), kernel, mode="constant")
    cell_depth[ring] = depth_sum[ring] / depth_cnt[ring]

    # paint the full-resolution depth image through the pixel-to-cell map
    depth_vals = np.zeros((intr.height, intr.width), dtype=np.float32)
    depth_valid = np.zeros((intr.height, intr.width), dtype=bool)
    col_of = _pixel_cell_index(crop.w, x0, crop.w, cells)
    row_of = _pixel_cell_index(crop.h, y0, crop.h, cells)
    depth_vals[y0:y1, x0:x1] = cell_depth[np.ix_(row_of, col_of)].astype(np.float32)
    depth_valid[y0:y1, x0:x1] = foreground[np.ix_(row_of, col_of)]
    depth_vals[~depth_valid] = 0.0

    raw = FeatureGrid(data.astype(np.float32), foreground, saliency)
    bundle = FrameBundle(
        frame_id="",
        features=normalize_grid(raw),
        depth=DepthImage(depth_vals, depth_valid),
        intrinsics=intr,
        extrinsics=extr,
        crop=crop,
    )
    visible_parts = np.zeros(p_count, dtype=bool)
    visible_parts[np.unique(parent[np.flatnonzero(vis)])] = True
    return RenderedView(
        bundle=bundle, raw_features=raw, part_ids=part_ids, visible_parts=visible_parts
    )


def _frame_seed(root_seed: int, category: int, pair: int, frame: int) -> int:
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=(category, pair, frame))
    return int(ss.generate_state(1)[0])


def gen_benchmark(
    out_dir,
    categories: int = 5,
    pairs_per_category: int = 100,
    n_views: int = 5,
    cfg: SynthRenderConfig = SynthRenderConfig(),
    seed: int = 0,
) -> list:
    """Write a complete benchmark dataset under ``out_dir``.

    Per pair: a reference sequence with one frame at a random viewpoint and
    a target sequence with ``n_views`` frames on an azimuth ring, both with
    canonical-alignment labels. Layout:

        out_dir/pairs.jsonl
        out_dir/<category>/<sequence>/manifest.json + <frame>.zpf/.zdf

    Returns the pair specs (also serialized to pairs.jsonl). Byte-identical
    across runs for a fixed seed and config.
    """
    from .evaluation import PairSpec, write_pairs_jsonl

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    intr = default_intrinsics(cfg)
    pairs: list[PairSpec] = []

    for ci in range(categories):
        cat = f"cat{ci:02d}"
        proto = gen_category(
            cfg.parts,
            cfg.dim,
            seed=_frame_seed(seed, ci, 0, 10_000),
            satellites=cfg.satellites,
            sat_radius=cfg.sat_radius,
            sat_desc_scale=cfg.sat_desc_scale,
            symmetry=cfg.symmetry,
        )
        for pi in range(pairs_per_category):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(ci, pi)))
            )
            inst_a = sample_instance(
                proto, rng, cfg.shape_sigma, cfg.scale_range, cfg.pose_tilt, cfg.sat_tilt
            )
            inst_b = sample_instance(
                proto, rng, cfg.shape_sigma, cfg.scale_range, cfg.pose_tilt, cfg.sat_tilt
            )

            ref_az = float(rng.uniform(0.0, 2.0 * math.pi))
            ref_el = float(rng.uniform(*cfg.ref_elevation))
            ref_cam = ring_camera(
                inst_a.part_world.mean(axis=0), cfg.ring_radius, ref_el, ref_az
            )
            tgt_cams = [
                ring_camera(
                    inst_b.part_world.mean(axis=0),
                    cfg.ring_radius,
                    cfg.ring_elevation,
                    2.0 * math.pi * v / n_views,
                )
                for v in range(n_views)
            ]

            seq_a = f"{cat}_p{pi:03d}a"
            seq_b = f"{cat}_p{pi:03d}b"
            _write_sequence(
                out / cat / seq_a,
                cat,
                seq_a,
                inst_a,
                [ref_cam],
                intr,
                cfg,
                [_frame_seed(seed, ci, pi, 0)],
            )
            _write_sequence(
                out / cat / seq_b,
                cat,
                seq_b,
                inst_b,
                tgt_cams,
                intr,
                cfg,
                [_frame_seed(seed, ci, pi, 1 + v) for v in range(n_views)],
            )
            pairs.append(
                PairSpec(
                    pair_id=f"{cat}-{pi:03d}",
                    category=cat,
                    ref_sequence=seq_a,
                    ref_frame="f000",
                    tgt_sequence=seq_b,
                    tgt_frames=tuple(f"f{v:03d}" for v in range(n_views)),
                )
            )

    write_pairs_jsonl(out / "pairs.jsonl", pairs)
    return pairs


def _write_sequence(
    seq_dir: Path,
    category: str,
    sequence_id: str,
    inst: InstanceSpec,
    cams: list[RigidTransformSE3],
    intr: CameraIntrinsics,
    cfg: SynthRenderConfig,
    seeds: list[int],
) -> None:
    seq_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for v, (cam, s) in enumerate(zip(cams, seeds)):
        fid = f"f{v:03d}"
        rendered = render_view(inst, intr, cam, cfg, seed=s)
        write_feature_file(seq_dir / f"{fid}.zpf", rendered.raw_features)
        write_depth_file(seq_dir / f"{fid}.zdf", rendered.bundle.depth)
        records.append(
            FrameRecord(
                frame_id=fid,
                feature_path=Path(f"{fid}.zpf"),
                depth_path=Path(f"{fid}.zdf"),
                intrinsics=intr,
                extrinsics=cam,
                crop=rendered.bundle.crop,
            )
        )
    write_sequence_manifest(
        seq_dir / "manifest.json",
        SequenceManifest(
            category=category,
            sequence_id=sequence_id,
            frames=tuple(records),
            canonical_alignment=inst.canonical_pose,
        ),
    )
