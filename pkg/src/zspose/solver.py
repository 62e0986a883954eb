"""Similarity-transform solvers: closed-form alignment, RANSAC, ICP.

Pixel convention used throughout: continuous image coordinates where pixel
(row r, col c) covers [c, c+1) x [r, r+1) with its center at (c+0.5, r+0.5);
intrinsics cx/cy live in the same continuous frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateConfiguration, InvalidDepth, NoConsensus
from .features import GridPoint
from .geom import (
    CameraIntrinsics,
    RigidTransformSE3,
    RigidTransformSim3,
    Rotation3,
)
from .io import CropRect, DepthImage

# relative cutoff on the second singular value of the centered source points,
# below which the configuration is treated as collinear
_RANK_TOL = 1e-9


@dataclass(frozen=True)
class PointPair3D:
    """A 3-D correspondence: src in the reference frame, dst in the target."""

    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        for name in ("src", "dst"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            v.setflags(write=False)
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class RansacConfig:
    max_iters: int = 1000
    sample_size: int = 4
    inlier_thresh: float = 0.2
    min_pairs: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.sample_size < 3:
            raise ValueError("sample_size must be >= 3 to constrain a similarity")
        if self.min_pairs < self.sample_size:
            raise ValueError("min_pairs must be >= sample_size")
        if self.max_iters < 1 or self.inlier_thresh <= 0:
            raise ValueError("max_iters must be >= 1 and inlier_thresh positive")


@dataclass(frozen=True)
class PoseEstimate:
    transform: RigidTransformSim3
    inlier_count: int
    inlier_indices: np.ndarray
    rms_residual: float


@dataclass(frozen=True)
class IcpResult:
    estimate: PoseEstimate
    iterations: int


@dataclass(frozen=True)
class PointCloud:
    """Row-wise 3-D points with an optional per-point source-view index."""

    points: np.ndarray
    view_index: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (n, 3), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.view_index is not None:
            vi = np.ascontiguousarray(self.view_index, dtype=np.int32)
            if vi.shape != (len(pts),):
                raise ValueError("view_index must be one entry per point")
            vi.setflags(write=False)
            object.__setattr__(self, "view_index", vi)

    def __len__(self) -> int:
        return len(self.points)


def grid_to_pixel(
    p: GridPoint, crop: CropRect, grid_cells: tuple[int, int]
) -> tuple[float, float]:
    """Continuous image coordinates of a grid cell's center within its crop."""
    h, w = grid_cells
    x = crop.x + (p.col + 0.5) * crop.w / w
    y = crop.y + (p.row + 0.5) * crop.h / h
    return x, y


def unproject(pixel: tuple[float, float], depth: float, intr: CameraIntrinsics) -> np.ndarray:
    """Back-project one pixel at the given depth into camera coordinates."""
    if not (math.isfinite(depth) and depth > 0):
        raise InvalidDepth(f"cannot unproject through depth {depth}")
    x, y = pixel
    return np.array(
        [(x - intr.cx) / intr.fx * depth, (y - intr.cy) / intr.fy * depth, depth]
    )


def _pairs_to_arrays(pairs: Sequence[PointPair3D]) -> tuple[np.ndarray, np.ndarray]:
    if len(pairs) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.stack([p.src for p in pairs]), np.stack([p.dst for p in pairs])


def _umeyama_arrays(src: np.ndarray, dst: np.ndarray) -> RigidTransformSim3:
    n = len(src)
    if n < 3:
        raise DegenerateConfiguration(f"need at least 3 pairs, got {n}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cs = src - mu_s
    cd = dst - mu_d

    sv = np.linalg.svd(cs, compute_uv=False)
    if sv[1] <= _RANK_TOL * max(sv[0], 1e-300):
        raise DegenerateConfiguration("source points are collinear or coincident")

    cov = cd.T @ cs / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = Rotation3(u @ np.diag(sign) @ vt)

    var_src = float((cs**2).sum()) / n
    scale = float((d * sign).sum()) / var_src
    if not scale > 0:
        raise DegenerateConfiguration("point sets do not determine a positive scale")
    t = mu_d - scale * (rot.matrix @ mu_s)
    return RigidTransformSim3(rot, t, scale)


def umeyama(pairs: Sequence[PointPair3D]) -> RigidTransformSim3:
    """Least-squares similarity transform mapping src points onto dst points.

    Closed-form SVD solution with the sign-corrected middle factor, so the
    rotation is always proper (det +1) even for reflection-like inputs such
    as planar point sets mirrored across a plane. Raises
    DegenerateConfiguration for < 3 pairs or collinear source points.
    """
    return _umeyama_arrays(*_pairs_to_arrays(pairs))


def _umeyama_batch(
    src: np.ndarray, dst: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized umeyama over (T, s, 3) stacks.

    Returns rotations (T, 3, 3), translations (T, 3), scales (T,), and a
    validity mask; degenerate samples are flagged instead of raising so a
    caller can skip them.
    """
    t_count, s_count = src.shape[0], src.shape[1]
    mu_s = src.mean(axis=1)
    mu_d = dst.mean(axis=1)
    cs = src - mu_s[:, None, :]
    cd = dst - mu_d[:, None, :]

    sv = np.linalg.svd(cs, compute_uv=False)
    ok = sv[:, 1] > _RANK_TOL * np.maximum(sv[:, 0], 1e-300)

    cov = np.einsum("tsi,tsj->tij", cd, cs) / s_count
    # protect the batched SVD from NaN/inf rows in flagged-degenerate trials
    cov = np.where(np.isfinite(cov), cov, 0.0)
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones((t_count, 3))
    sign[:, 2] = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    sign[sign[:, 2] == 0, 2] = 1.0

    rot = np.einsum("tik,tk,tkj->tij", u, sign, vt)
    var_src = (cs**2).sum(axis=(1, 2)) / s_count
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = (d * sign).sum(axis=1) / var_src
    ok &= np.isfinite(scale) & (scale > 0)
    scale = np.where(ok, scale, 1.0)
    trans = mu_d - scale[:, None] * np.einsum("tij,tj->ti", rot, mu_s)
    return rot, trans, scale, ok


def _residuals(
    src: np.ndarray, dst: np.ndarray, transform: RigidTransformSim3
) -> np.ndarray:
    return np.linalg.norm(dst - transform.apply(src), axis=1)


def ransac_pose(pairs: Sequence[PointPair3D], cfg: RansacConfig) -> PoseEstimate:
    """Robust similarity fit over correspondences with uniform random samples.

    Every trial draws sample_size distinct pairs, fits a similarity, and
    counts pairs with residual below inlier_thresh. The best trial (most
    inliers, ties by lower inlier RMS then earlier trial) is refit on its
    full inlier set, and the reported inliers and RMS are recomputed under
    that refit. Runs all max_iters trials; deterministic and bit-reproducible
    for a fixed seed. Raises NoConsensus when no trial reaches sample_size
    inliers.
    """
    src, dst = _pairs_to_arrays(pairs)
    n = len(src)
    if n < cfg.min_pairs:
        raise DegenerateConfiguration(f"need at least {cfg.min_pairs} pairs, got {n}")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    draws = rng.random((cfg.max_iters, n))
    samples = np.argpartition(draws, cfg.sample_size - 1, axis=1)[:, : cfg.sample_size]

    rot, trans, scale, ok = _umeyama_batch(src[samples], dst[samples])
    pred = scale[:, None, None] * np.einsum("tij,nj->tni", rot, src) + trans[:, None, :]
    resid = np.linalg.norm(dst[None, :, :] - pred, axis=2)
    inliers = (resid < cfg.inlier_thresh) & ok[:, None]
    counts = inliers.sum(axis=1)

    with np.errstate(invalid="ignore"):
        rms = np.sqrt(
            np.where(inliers, resid**2, 0.0).sum(axis=1) / np.maximum(counts, 1)
        )
    rms[counts == 0] = np.inf

    best = int(np.lexsort((np.arange(cfg.max_iters), rms, -counts))[0])
    if counts[best] < cfg.sample_size:
        raise NoConsensus(
            f"no sample reached {cfg.sample_size} inliers over {cfg.max_iters} trials"
        )

    best_idx = np.flatnonzero(inliers[best])
    try:
        transform = _umeyama_arrays(src[best_idx], dst[best_idx])
    except DegenerateConfiguration:
        # refit can only degenerate if the inlier set itself is near-collinear;
        # fall back to the winning trial's model
        transform = RigidTransformSim3(
            Rotation3(rot[best]), trans[best], float(scale[best])
        )

    final_resid = _residuals(src, dst, transform)
    final_idx = np.flatnonzero(final_resid < cfg.inlier_thresh)
    final_rms = (
        float(np.sqrt(np.mean(final_resid[final_idx] ** 2))) if len(final_idx) else math.inf
    )
    return PoseEstimate(
        transform=transform,
        inlier_count=len(final_idx),
        inlier_indices=final_idx,
        rms_residual=final_rms,
    )


def fuse_target_cloud(
    views: Sequence[tuple[DepthImage, CameraIntrinsics, RigidTransformSE3]],
    stride: int = 1,
) -> PointCloud:
    """Union of every view's valid depth pixels, unprojected into world space.

    ``stride`` keeps every stride-th valid pixel (row-major) per view, for
    cheap decimation. Extrinsics are world-to-view, so points go through the
    inverse. Tagged with the source-view index.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    pts = []
    idx = []
    for vi, (depth, intr, extr) in enumerate(views):
        rows, cols = np.nonzero(depth.valid)
        rows, cols = rows[::stride], cols[::stride]
        if len(rows) == 0:
            continue
        z = depth.values[rows, cols].astype(np.float64)
        x = (cols + 0.5 - intr.cx) / intr.fx * z
        y = (rows + 0.5 - intr.cy) / intr.fy * z
        cam = np.stack([x, y, z], axis=1)
        world = (cam - extr.translation) @ extr.rotation.matrix
        pts.append(world)
        idx.append(np.full(len(world), vi, dtype=np.int32))
    if not pts:
        return PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.int32))
    return PointCloud(np.concatenate(pts), np.concatenate(idx))


def icp_sim3(
    src: PointCloud,
    dst: PointCloud,
    init: Optional[RigidTransformSim3] = None,
    max_iter: int = 50,
    tol: float = 1e-6,
    subsample: int = 5000,
    seed: int = 0,
) -> IcpResult:
    """Iterative closest point with a similarity refit per iteration.

    Clouds larger than ``subsample`` are randomly thinned (seeded, without
    replacement). Each iteration associates every source point with its
    exact nearest destination point under the current transform, then refits
    the similarity on those associations; the association RMS is
    non-increasing and iteration stops when it changes by less than ``tol``
    or after ``max_iter`` rounds.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    src_pts = src.points
    dst_pts = dst.points
    if len(src_pts) > subsample:
        src_pts = src_pts[np.sort(rng.choice(len(src_pts), subsample, replace=False))]
    if len(dst_pts) > subsample:
        dst_pts = dst_pts[np.sort(rng.choice(len(dst_pts), subsample, replace=False))]
    if len(src_pts) < 3 or len(dst_pts) < 3:
        raise DegenerateConfiguration("clouds must keep at least 3 points each")

    tree = cKDTree(dst_pts)
    transform = init if init is not None else RigidTransformSim3.identity()
    prev_rms = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        _, assoc = tree.query(transform.apply(src_pts))
        if len(np.unique(assoc)) < 3:
            raise DegenerateConfiguration("associations collapsed onto < 3 target points")
        transform = _umeyama_arrays(src_pts, dst_pts[assoc])
        rms = float(np.sqrt(np.mean(_residuals(src_pts, dst_pts[assoc], transform) ** 2)))
        if abs(prev_rms - rms) < tol:
            prev_rms = rms
            break
        prev_rms = rms

    estimate = PoseEstimate(
        transform=transform,
        inlier_count=len(src_pts),
        inlier_indices=np.arange(len(src_pts)),
        rms_residual=prev_rms,
    )
    return IcpResult(estimate=estimate, iterations=iterations)
