"""Feature grids and correspondence selection between two views.

A feature grid is a coarse H' x W' lattice of descriptors over an object
crop, with a foreground mask and a per-cell saliency. Matchers operate on
unit-normalized descriptors (see :func:`normalize_grid`); callers are
expected to normalize once at load time.

The primary matcher scores each reference cell by a round-trip consistency
test: find its nearest descriptor in the target, then that cell's nearest
descriptor back in the reference, and measure how far the round trip landed
from where it started (in grid-cell units). Cells whose round trip leaves
the foreground at any hop are marked unusable (+inf).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimMismatch, EmptyForeground, NumericalUnderflow

ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class GridPoint:
    row: int
    col: int


@dataclass(frozen=True)
class FeatureGrid:
    """Per-cell descriptors (H', W', D) with foreground mask and saliency.

    ``data`` is float32, matching the on-disk layout. ``foreground`` and
    ``saliency`` are (H', W'). Arrays are stored read-only.
    """

    data: np.ndarray
    foreground: np.ndarray
    saliency: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"grid data must be (H', W', D), got {data.shape}")
        fg = np.ascontiguousarray(self.foreground, dtype=bool)
        sal = np.ascontiguousarray(self.saliency, dtype=np.float32)
        if fg.shape != data.shape[:2] or sal.shape != data.shape[:2]:
            raise ValueError("foreground/saliency shape must match grid cells")
        for a in (data, fg, sal):
            a.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "foreground", fg)
        object.__setattr__(self, "saliency", sal)

    @property
    def cells(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Correspondence:
    """A matched cell pair with its descriptor and round-trip distances."""

    ref_point: GridPoint
    tgt_point: GridPoint
    feat_dist: float
    cyc_dist: float


@dataclass(frozen=True)
class CorrespondenceSet:
    """Ordered correspondences plus a flag set when fewer than the requested
    count survived selection."""

    items: tuple[Correspondence, ...]
    short: bool = False

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]


@dataclass(frozen=True)
class CyclicalDistanceMap:
    """Round-trip consistency per reference cell.

    values: (H', W') float64, +inf where the cell is off-foreground or the
        round trip left the foreground.
    forward: (H', W', 2) int32, the target cell each reference cell matched
        to (-1 where unusable).
    forward_dist: (H', W') float64 descriptor L2 distance of that match
        (+inf where the reference cell itself is off-foreground).
    """

    values: np.ndarray
    forward: np.ndarray
    forward_dist: np.ndarray


def normalize_grid(grid: FeatureGrid) -> FeatureGrid:
    """Unit-normalize every cell descriptor.

    Cells with vanishing norm cannot be normalized; they are zeroed and
    dropped from the foreground so no matcher ever selects them.
    """
    data = np.asarray(grid.data, dtype=np.float32)
    norms = np.linalg.norm(data, axis=-1)
    ok = norms > ZERO_NORM_EPS
    out = np.zeros_like(data)
    np.divide(data, norms[..., None], out=out, where=ok[..., None])
    return FeatureGrid(out, grid.foreground & ok, grid.saliency)


def _check_compatible(ref: FeatureGrid, tgt: FeatureGrid):
    if ref.dim != tgt.dim:
        raise DimMismatch(f"descriptor dims differ: ref {ref.dim} vs tgt {tgt.dim}")


def _require_foreground(grid: FeatureGrid, name: str) -> np.ndarray:
    idx = np.flatnonzero(grid.foreground.ravel())
    if idx.size == 0:
        raise EmptyForeground(f"{name} grid has no foreground cells")
    return idx


def _flat_desc(grid: FeatureGrid) -> np.ndarray:
    return grid.data.reshape(-1, grid.dim).astype(np.float64)


def _nn_flat(queries: np.ndarray, pool: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index into ``pool`` of the L2-nearest row for each query, plus the
    distance. Ties resolve to the lowest index (row-major cell order)."""
    d2 = (
        np.sum(queries**2, axis=1)[:, None]
        + np.sum(pool**2, axis=1)[None, :]
        - 2.0 * (queries @ pool.T)
    )
    idx = np.argmin(d2, axis=1)
    dist = np.sqrt(np.maximum(d2[np.arange(len(queries)), idx], 0.0))
    return idx, dist


def nearest_neighbor(query: np.ndarray, grid: FeatureGrid) -> GridPoint:
    """Foreground cell of ``grid`` minimizing descriptor L2 distance.

    Ties resolve to the smaller row, then column. Raises EmptyForeground if
    the grid has no foreground.
    """
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if query.shape[1] != grid.dim:
        raise DimMismatch(f"query dim {query.shape[1]} vs grid dim {grid.dim}")
    fg_idx = _require_foreground(grid, "target")
    pool = _flat_desc(grid)[fg_idx]
    j, _ = _nn_flat(query, pool)
    flat = int(fg_idx[j[0]])
    w = grid.cells[1]
    return GridPoint(flat // w, flat % w)


def cyclical_distance_map(ref: FeatureGrid, tgt: FeatureGrid) -> CyclicalDistanceMap:
    """Round-trip distance of every reference foreground cell.

    Nearest-neighbor hops search every cell (not just foreground); a hop
    that lands off-foreground marks the starting cell +inf. Cells off the
    reference foreground are +inf with no recorded match.
    """
    _check_compatible(ref, tgt)
    h, w = ref.cells
    values = np.full((h, w), np.inf)
    forward = np.full((h, w, 2), -1, dtype=np.int32)
    forward_dist = np.full((h, w), np.inf)

    ref_idx = np.flatnonzero(ref.foreground.ravel())
    if ref_idx.size == 0:
        return CyclicalDistanceMap(values, forward, forward_dist)

    ref_flat = _flat_desc(ref)
    tgt_flat = _flat_desc(tgt)
    tw = tgt.cells[1]

    v_flat, v_dist = _nn_flat(ref_flat[ref_idx], tgt_flat)
    rows, cols = ref_idx // w, ref_idx % w
    forward[rows, cols, 0] = v_flat // tw
    forward[rows, cols, 1] = v_flat % tw
    forward_dist[rows, cols] = v_dist

    on_fg = tgt.foreground.ravel()[v_flat]
    if not np.any(on_fg):
        return CyclicalDistanceMap(values, forward, forward_dist)

    back_flat, _ = _nn_flat(tgt_flat[v_flat[on_fg]], ref_flat)
    back_ok = ref.foreground.ravel()[back_flat]

    src = ref_idx[on_fg][back_ok]
    ret = back_flat[back_ok]
    dr = (src // w) - (ret // w)
    dc = (src % w) - (ret % w)
    values[src // w, src % w] = np.sqrt((dr * dr + dc * dc).astype(np.float64))
    return CyclicalDistanceMap(values, forward, forward_dist)


def _candidates_from_map(
    ref: FeatureGrid, cmap: CyclicalDistanceMap, limit: int
) -> list[Correspondence]:
    """Finite-distance cells ordered by (round-trip dist, descriptor dist,
    row-major), truncated to ``limit``."""
    rows, cols = np.nonzero(np.isfinite(cmap.values))
    if rows.size == 0:
        return []
    cyc = cmap.values[rows, cols]
    fd = cmap.forward_dist[rows, cols]
    order = np.lexsort((cols, rows, fd, cyc))[:limit]
    out = []
    for i in order:
        r, c = int(rows[i]), int(cols[i])
        vr, vc = cmap.forward[r, c]
        out.append(
            Correspondence(
                GridPoint(r, c), GridPoint(int(vr), int(vc)), float(fd[i]), float(cyc[i])
            )
        )
    return out


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns assignments.

    Duplicate-heavy inputs can exhaust distinct seeds early, in which case
    fewer than k clusters come back. Capped at 100 iterations, stops when
    assignments are stable.
    """
    n = len(x)
    centers = [int(rng.integers(n))]
    d2 = np.sum((x - x[centers[0]]) ** 2, axis=1)
    while len(centers) < k:
        total = d2.sum()
        if total <= 0.0:
            break  # every remaining point duplicates a chosen center
        centers.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, np.sum((x - x[centers[-1]]) ** 2, axis=1))
    c = x[centers].copy()

    assign = np.full(n, -1)
    for _ in range(100):
        d = (
            np.sum(x**2, axis=1)[:, None]
            + np.sum(c**2, axis=1)[None, :]
            - 2.0 * (x @ c.T)
        )
        new_assign = np.argmin(d, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(len(c)):
            members = x[assign == j]
            if len(members):
                c[j] = members.mean(axis=0)
    return assign


def kmeans_diversify(
    candidates: CorrespondenceSet,
    k: int,
    ref: FeatureGrid,
    seed: int = 0,
) -> CorrespondenceSet:
    """Thin a candidate set to at most k spread-out picks.

    Clusters the candidates' reference descriptors into min(k, n) groups and
    keeps, per non-empty group, the candidate whose reference cell has the
    highest saliency (ties: smaller round-trip distance, then row-major).
    Output preserves the candidates' input order. Deterministic for a fixed
    seed.
    """
    items = tuple(candidates)
    n = len(items)
    if n == 0:
        return CorrespondenceSet((), short=k > 0)
    if k < 1:
        raise ValueError("k must be >= 1")

    desc = np.stack(
        [_flat_desc(ref)[c.ref_point.row * ref.cells[1] + c.ref_point.col] for c in items]
    )
    rng = np.random.Generator(np.random.PCG64(seed))
    assign = _kmeans(desc, min(k, n), rng)

    chosen: list[int] = []
    for j in np.unique(assign):
        members = np.flatnonzero(assign == j)
        best = min(
            members,
            key=lambda i: (
                -float(ref.saliency[items[i].ref_point.row, items[i].ref_point.col]),
                items[i].cyc_dist,
                items[i].ref_point.row,
                items[i].ref_point.col,
            ),
        )
        chosen.append(int(best))
    chosen.sort()
    out = tuple(items[i] for i in chosen)
    return CorrespondenceSet(out, short=len(out) < k)


def select_correspondences_cyclical(
    ref: FeatureGrid, tgt: FeatureGrid, k: int, seed: int = 0
) -> CorrespondenceSet:
    """Primary matcher: round-trip-consistent cells, diversified.

    Ranks reference cells by round-trip distance (descriptor distance, then
    row-major order break ties), keeps the best 2k, and diversifies down to
    at most k via :func:`kmeans_diversify`. The short flag is set when fewer
    than k survive.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_compatible(ref, tgt)
    _require_foreground(ref, "ref")
    _require_foreground(tgt, "tgt")
    cmap = cyclical_distance_map(ref, tgt)
    cands = _candidates_from_map(ref, cmap, 2 * k)
    return kmeans_diversify(CorrespondenceSet(tuple(cands)), k, ref, seed=seed)


def select_correspondences_mutual_nn(ref: FeatureGrid, tgt: FeatureGrid) -> CorrespondenceSet:
    """All pairs that are each other's nearest descriptor.

    Uses the same full-grid nearest-neighbor hops as the round-trip map, so
    a pair only survives if both hops land on foreground. Returned in
    row-major order of the reference cell.
    """
    _check_compatible(ref, tgt)
    ref_idx = _require_foreground(ref, "ref")
    _require_foreground(tgt, "tgt")

    ref_flat = _flat_desc(ref)
    tgt_flat = _flat_desc(tgt)
    w = ref.cells[1]
    tw = tgt.cells[1]

    v_flat, v_dist = _nn_flat(ref_flat[ref_idx], tgt_flat)
    on_fg = tgt.foreground.ravel()[v_flat]
    back_flat, _ = _nn_flat(tgt_flat[v_flat[on_fg]], ref_flat)
    mutual = back_flat == ref_idx[on_fg]

    out = []
    for u, v, d in zip(ref_idx[on_fg][mutual], v_flat[on_fg][mutual], v_dist[on_fg][mutual]):
        out.append(
            Correspondence(
                GridPoint(int(u) // w, int(u) % w),
                GridPoint(int(v) // tw, int(v) % tw),
                float(d),
                0.0,
            )
        )
    return CorrespondenceSet(tuple(out))


def _foreground_similarity(
    ref: FeatureGrid, tgt: FeatureGrid
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cosine similarity between foreground cells; assumes normalized grids."""
    _check_compatible(ref, tgt)
    ref_idx = _require_foreground(ref, "ref")
    tgt_idx = _require_foreground(tgt, "tgt")
    sim = _flat_desc(ref)[ref_idx] @ _flat_desc(tgt)[tgt_idx].T
    return sim, ref_idx, tgt_idx


def _top_pairs_to_set(
    score: np.ndarray,
    ref: FeatureGrid,
    tgt: FeatureGrid,
    ref_idx: np.ndarray,
    tgt_idx: np.ndarray,
    k: int,
    seed: int,
) -> CorrespondenceSet:
    """Take the k highest-scoring (ref, tgt) pairs and diversify.

    Ties resolve row-major on the reference cell, then the target cell,
    which is exactly the flattened index order of ``score``.
    """
    flat = score.ravel()
    order = np.argsort(-flat, kind="stable")[:k]
    m = score.shape[1]
    w, tw = ref.cells[1], tgt.cells[1]
    ref_flat = _flat_desc(ref)
    tgt_flat = _flat_desc(tgt)
    items = []
    for o in order:
        u = int(ref_idx[o // m])
        v = int(tgt_idx[o % m])
        d = float(np.linalg.norm(ref_flat[u] - tgt_flat[v]))
        items.append(
            Correspondence(GridPoint(u // w, u % w), GridPoint(v // tw, v % tw), d, math.inf)
        )
    return kmeans_diversify(CorrespondenceSet(tuple(items)), k, ref, seed=seed)


def sinkhorn_plan(sim: np.ndarray, epsilon: float, iters: int) -> np.ndarray:
    """Entropic-transport plan for a similarity matrix, uniform marginals.

    Log-domain scalings for ``iters`` row/column sweeps. Raises
    NumericalUnderflow if the scalings leave the finite range (epsilon too
    small for the similarity spread).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n, m = sim.shape
    log_kernel = np.asarray(sim, dtype=np.float64) / epsilon
    log_a = -math.log(n)
    log_b = -math.log(m)
    f = np.zeros(n)
    g = np.zeros(m)
    for _ in range(iters):
        f = log_a - logsumexp(log_kernel + g[None, :], axis=1)
        g = log_b - logsumexp(log_kernel + f[:, None], axis=0)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NumericalUnderflow("transport scaling left the finite range")
    return np.exp(log_kernel + f[:, None] + g[None, :])


def sinkhorn_match(
    ref: FeatureGrid,
    tgt: FeatureGrid,
    k: int,
    epsilon: float = 0.1,
    iters: int = 100,
    seed: int = 0,
) -> CorrespondenceSet:
    """Entropic optimal-transport matcher over foreground cells.

    Runs :func:`sinkhorn_plan` on the cosine similarity matrix, then keeps
    the k highest-mass transport entries and diversifies them.
    """
    sim, ref_idx, tgt_idx = _foreground_similarity(ref, tgt)
    plan = sinkhorn_plan(sim, epsilon, iters)
    return _top_pairs_to_set(plan, ref, tgt, ref_idx, tgt_idx, k, seed)


def dual_softmax_scores(sim: np.ndarray, temperature: float) -> np.ndarray:
    """Row-softmax times column-softmax of ``sim / temperature``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s = np.asarray(sim, dtype=np.float64) / temperature
    rows = np.exp(s - s.max(axis=1, keepdims=True))
    rows /= rows.sum(axis=1, keepdims=True)
    cols = np.exp(s - s.max(axis=0, keepdims=True))
    cols /= cols.sum(axis=0, keepdims=True)
    return rows * cols


def dual_softmax_match(
    ref: FeatureGrid,
    tgt: FeatureGrid,
    k: int,
    temperature: float = 0.1,
    seed: int = 0,
) -> CorrespondenceSet:
    """Product of row-wise and column-wise match softmaxes, top-k, diversified."""
    sim, ref_idx, tgt_idx = _foreground_similarity(ref, tgt)
    scores = dual_softmax_scores(sim, temperature)
    return _top_pairs_to_set(scores, ref, tgt, ref_idx, tgt_idx, k, seed)
