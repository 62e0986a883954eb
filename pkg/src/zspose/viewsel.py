"""Choosing the target view to align against.

Four strategies, all scored per view with the winner taken by argmax
(ties: the earlier view index):

  correspond-sim    sum of negated descriptor distances over the primary
                    matcher's correspondences (the default)
  global-sim        cosine between foreground-mean-pooled descriptors
  saliency-iou      IoU of the foreground masks after aligning their
                    bounding-box centers
  cyclical-dist-iou IoU between the target foreground and the target cells
                    reached by reference cells with round-trip distance
                    under a threshold
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import AllViewsUnusable, EmptyForeground
from .features import (
    CorrespondenceSet,
    FeatureGrid,
    cyclical_distance_map,
    select_correspondences_cyclical,
)

DEFAULT_CYC_IOU_TAU = 2.0


class ViewStrategy(str, Enum):
    CORRESPOND_SIM = "correspond-sim"
    GLOBAL_SIM = "global-sim"
    SALIENCY_IOU = "saliency-iou"
    CYCLICAL_DIST_IOU = "cyclical-dist-iou"


@dataclass(frozen=True)
class ViewScore:
    view_index: int
    score: float
    correspondences: Optional[CorrespondenceSet] = None


def correspondence_score(corrs: CorrespondenceSet) -> float:
    """Sum of negated descriptor distances; -inf for an empty set so an
    unmatched view can never win."""
    if len(corrs) == 0:
        return -math.inf
    return -sum(c.feat_dist for c in corrs)


def _mean_pooled(grid: FeatureGrid) -> Optional[np.ndarray]:
    fg = grid.foreground
    if not fg.any():
        return None
    pooled = grid.data[fg].astype(np.float64).mean(axis=0)
    norm = np.linalg.norm(pooled)
    if norm <= 1e-12:
        return None
    return pooled / norm


def _half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _centered_cells(mask: np.ndarray) -> set[tuple[int, int]]:
    """Foreground cells shifted so the bbox center (half-up rounded) is the
    origin, making the IoU translation-invariant."""
    rows, cols = np.nonzero(mask)
    cr = _half_up((int(rows.min()) + int(rows.max())) / 2.0)
    cc = _half_up((int(cols.min()) + int(cols.max())) / 2.0)
    return {(int(r) - cr, int(c) - cc) for r, c in zip(rows, cols)}


def _iou(a: set, b: set) -> float:
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def score_views(
    ref: FeatureGrid,
    targets: Sequence[FeatureGrid],
    k: int,
    strategy: ViewStrategy = ViewStrategy.CORRESPOND_SIM,
    tau: float = DEFAULT_CYC_IOU_TAU,
    seed: int = 0,
) -> list[ViewScore]:
    """Score every target view against the reference.

    Views that cannot be scored (empty foreground) come back with -inf
    rather than raising, so one bad view does not break selection. An empty
    reference foreground is the caller's data problem and raises.
    """
    if not ref.foreground.any():
        raise EmptyForeground("reference grid has no foreground cells")
    if len(targets) == 0:
        raise ValueError("need at least one target view")
    strategy = ViewStrategy(strategy)

    scores: list[ViewScore] = []
    for j, tgt in enumerate(targets):
        corrs: Optional[CorrespondenceSet] = None
        if not tgt.foreground.any():
            scores.append(ViewScore(j, -math.inf))
            continue

        if strategy is ViewStrategy.CORRESPOND_SIM:
            corrs = select_correspondences_cyclical(ref, tgt, k, seed=seed)
            score = correspondence_score(corrs)
            # a short set must not outrank a dense one just by summing fewer
            # terms: each missing match costs the unit-descriptor diameter,
            # the distance of a pair with no similarity at all
            if math.isfinite(score) and len(corrs) < k:
                score -= 2.0 * (k - len(corrs))
        elif strategy is ViewStrategy.GLOBAL_SIM:
            a = _mean_pooled(ref)
            b = _mean_pooled(tgt)
            score = -math.inf if a is None or b is None else float(a @ b)
        elif strategy is ViewStrategy.SALIENCY_IOU:
            score = _iou(_centered_cells(ref.foreground), _centered_cells(tgt.foreground))
        else:  # CYCLICAL_DIST_IOU
            cmap = cyclical_distance_map(ref, tgt)
            rows, cols = np.nonzero(cmap.values < tau)
            hit = {
                (int(cmap.forward[r, c, 0]), int(cmap.forward[r, c, 1]))
                for r, c in zip(rows, cols)
            }
            fg = {(int(r), int(c)) for r, c in zip(*np.nonzero(tgt.foreground))}
            score = _iou(hit, fg)
        scores.append(ViewScore(j, score, corrs))
    return scores


def best_of(scores: Sequence[ViewScore]) -> ViewScore:
    """Argmax over already-computed scores; ties go to the earlier view.

    Raises AllViewsUnusable when every view scored -inf.
    """
    best = scores[0]
    for vs in scores[1:]:
        if vs.score > best.score:
            best = vs
    if best.score == -math.inf:
        raise AllViewsUnusable(f"all {len(scores)} target views scored unusable")
    return best


def select_best_view(
    ref: FeatureGrid,
    targets: Sequence[FeatureGrid],
    k: int,
    strategy: ViewStrategy = ViewStrategy.CORRESPOND_SIM,
    tau: float = DEFAULT_CYC_IOU_TAU,
    seed: int = 0,
) -> ViewScore:
    """Score all views and return the winner (see :func:`best_of`)."""
    return best_of(score_views(ref, targets, k, strategy=strategy, tau=tau, seed=seed))
