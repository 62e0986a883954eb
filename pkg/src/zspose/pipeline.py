"""End-to-end relative pose estimation between a reference frame and a
multi-view target sequence.

Stages: score target views against the reference, pick the winner, match
grid cells, lift matches to 3-D through each frame's depth map, and solve a
robust similarity. The returned transform maps reference-camera coordinates
into the best target view's camera frame, which is also the frame the
ground-truth label composition lives in.

When matching or the solver cannot produce a pose (too few lifted pairs, no
RANSAC consensus), the result degrades to the best-view identity prediction
with ``fallback`` set, rather than raising: a pair that got as far as view
selection always yields a usable (if coarse) answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import NoConsensus
from .features import (
    CorrespondenceSet,
    GridPoint,
    dual_softmax_match,
    select_correspondences_cyclical,
    select_correspondences_mutual_nn,
    sinkhorn_match,
)
from .geom import RigidTransformSE3, RigidTransformSim3, compose, invert
from .io import FrameBundle, inpaint_depth
from .solver import PointPair3D, PoseEstimate, RansacConfig, grid_to_pixel, ransac_pose, unproject
from .viewsel import DEFAULT_CYC_IOU_TAU, ViewScore, ViewStrategy, best_of, score_views


class Matcher(str, Enum):
    CYCLICAL = "cyclical"
    MUTUAL_NN = "mutual-nn"
    SINKHORN = "sinkhorn"
    DUAL_SOFTMAX = "dual-softmax"


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 50
    matcher: Matcher = Matcher.CYCLICAL
    view_strategy: ViewStrategy = ViewStrategy.CORRESPOND_SIM
    ransac: RansacConfig = field(default_factory=RansacConfig)
    best_view_only: bool = False
    cyc_iou_tau: float = DEFAULT_CYC_IOU_TAU
    sinkhorn_epsilon: float = 0.1
    sinkhorn_iters: int = 100
    softmax_temperature: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if not self.best_view_only and self.k < self.ransac.sample_size:
            raise ValueError(
                f"k={self.k} cannot seed RANSAC samples of size {self.ransac.sample_size}"
            )


@dataclass(frozen=True)
class PipelineResult:
    estimate: PoseEstimate
    best_view: int
    view_scores: tuple[ViewScore, ...]
    correspondences: Optional[CorrespondenceSet]
    fallback: bool


def _identity_estimate() -> PoseEstimate:
    return PoseEstimate(
        transform=RigidTransformSim3.identity(),
        inlier_count=0,
        inlier_indices=np.zeros(0, dtype=np.int64),
        rms_residual=math.inf,
    )


class _DepthSampler:
    """Per-frame depth lookup that inpaints holes lazily, at most once."""

    def __init__(self, bundle: FrameBundle):
        self._bundle = bundle
        self._filled = None

    def lift(self, p: GridPoint) -> np.ndarray:
        b = self._bundle
        h, w = b.features.cells
        x, y = grid_to_pixel(p, b.crop, (h, w))
        col = min(int(math.floor(x)), b.intrinsics.width - 1)
        row = min(int(math.floor(y)), b.intrinsics.height - 1)
        depth = b.depth
        if not depth.valid[row, col]:
            if self._filled is None:
                self._filled = inpaint_depth(depth)
            depth = self._filled
        return unproject((x, y), float(depth.values[row, col]), b.intrinsics)


def _match(
    ref: FrameBundle, tgt: FrameBundle, cfg: PipelineConfig, reuse: Optional[CorrespondenceSet]
) -> CorrespondenceSet:
    if cfg.matcher is Matcher.CYCLICAL:
        if reuse is not None:
            return reuse
        return select_correspondences_cyclical(ref.features, tgt.features, cfg.k, seed=cfg.seed)
    if cfg.matcher is Matcher.MUTUAL_NN:
        return select_correspondences_mutual_nn(ref.features, tgt.features)
    if cfg.matcher is Matcher.SINKHORN:
        return sinkhorn_match(
            ref.features,
            tgt.features,
            cfg.k,
            epsilon=cfg.sinkhorn_epsilon,
            iters=cfg.sinkhorn_iters,
            seed=cfg.seed,
        )
    return dual_softmax_match(
        ref.features, tgt.features, cfg.k, temperature=cfg.softmax_temperature, seed=cfg.seed
    )


def estimate_pose(
    ref: FrameBundle,
    targets: Sequence[FrameBundle],
    cfg: PipelineConfig = PipelineConfig(),
) -> PipelineResult:
    """Estimate the similarity mapping ref-camera points into the best
    target view's camera frame.

    Raises EmptyForeground for an unusable reference and AllViewsUnusable
    when no target view can be scored; downstream failures fall back to the
    identity prediction instead (``fallback=True``).
    """
    scores = score_views(
        ref.features,
        [t.features for t in targets],
        cfg.k,
        strategy=cfg.view_strategy,
        tau=cfg.cyc_iou_tau,
        seed=cfg.seed,
    )
    best = best_of(scores)
    j = best.view_index

    if cfg.best_view_only:
        return PipelineResult(_identity_estimate(), j, tuple(scores), None, False)

    corrs = _match(ref, targets[j], cfg, best.correspondences)

    ref_lift = _DepthSampler(ref)
    tgt_lift = _DepthSampler(targets[j])
    pairs = [
        PointPair3D(ref_lift.lift(c.ref_point), tgt_lift.lift(c.tgt_point)) for c in corrs
    ]

    if len(pairs) < cfg.ransac.min_pairs:
        return PipelineResult(_identity_estimate(), j, tuple(scores), corrs, True)
    try:
        estimate = ransac_pose(pairs, cfg.ransac)
    except NoConsensus:
        return PipelineResult(_identity_estimate(), j, tuple(scores), corrs, True)
    return PipelineResult(estimate, j, tuple(scores), corrs, False)


def propagate_to_sequence(
    estimate: RigidTransformSim3,
    views: Sequence[RigidTransformSE3],
    best_view: int,
) -> list[RigidTransformSim3]:
    """Re-anchor a pose solved against one view to every view of the
    sequence: the prediction for view i is cam_i ∘ cam_best⁻¹ ∘ estimate."""
    anchor_inv = invert(views[best_view].to_sim3())
    return [compose(compose(v.to_sim3(), anchor_inv), estimate) for v in views]
