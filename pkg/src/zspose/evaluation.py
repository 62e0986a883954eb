"""Benchmark evaluation: run the pipeline over labeled frame pairs and
report per-category rotation accuracy.

Ground truth for a pair is composed against whichever target view the
pipeline selected; with known extrinsics that choice is equivalent to any
other anchor view. Pairs whose sequences lack a canonical-alignment label
are skipped and counted, never silently dropped. The aggregate row is a
macro average (mean of per-category values); a micro (pair-pooled) variant
is available behind a flag.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import AllViewsUnusable, MissingFile, MissingLabel, SchemaError
from .geom import RigidTransformSim3, geodesic_rotation_error, relative_gt_pose
from .io import Dataset
from .pipeline import PipelineConfig, estimate_pose


@dataclass(frozen=True)
class PairSpec:
    """One evaluation problem: a reference frame against a multi-view
    target sequence of a different capture of the same category."""

    pair_id: str
    category: str
    ref_sequence: str
    ref_frame: str
    tgt_sequence: str
    tgt_frames: tuple[str, ...]

    def __post_init__(self):
        if len(self.tgt_frames) == 0:
            raise SchemaError(f"pair {self.pair_id}: target frame list is empty")
        if self.ref_sequence == self.tgt_sequence and self.ref_frame in self.tgt_frames:
            raise SchemaError(
                f"pair {self.pair_id}: reference frame is one of its own targets"
            )


@dataclass(frozen=True)
class PairResult:
    pair_id: str
    category: str
    rotation_error_deg: float  # geodesic, in [0, 180]
    translation_error: float  # scale-normalized residual; auxiliary metric
    best_view: int
    fallback: bool


@dataclass(frozen=True)
class CategoryReport:
    category: str
    pair_count: int
    median_error_deg: float
    acc30: float
    acc15: float


@dataclass(frozen=True)
class EvalReport:
    per_category: tuple[CategoryReport, ...]
    aggregate: CategoryReport
    records: tuple[PairResult, ...]
    skipped: int
    micro: bool


_PAIR_KEYS = ("pair_id", "category", "ref_sequence", "ref_frame", "tgt_sequence", "tgt_frames")


def load_pairs(path) -> list[PairSpec]:
    """Read newline-delimited JSON pair specs."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"pairs file not found: {path}")
    pairs = []
    for ln, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}:{ln}: invalid JSON: {e}") from e
        if not isinstance(obj, dict) or any(k not in obj for k in _PAIR_KEYS):
            raise SchemaError(f"{path}:{ln}: pair record must have keys {_PAIR_KEYS}")
        frames = obj["tgt_frames"]
        if not isinstance(frames, list) or not all(isinstance(f, str) for f in frames):
            raise SchemaError(f"{path}:{ln}: tgt_frames must be a list of frame ids")
        pairs.append(
            PairSpec(
                pair_id=str(obj["pair_id"]),
                category=str(obj["category"]),
                ref_sequence=str(obj["ref_sequence"]),
                ref_frame=str(obj["ref_frame"]),
                tgt_sequence=str(obj["tgt_sequence"]),
                tgt_frames=tuple(frames),
            )
        )
    return pairs


def write_pairs_jsonl(path, pairs: Sequence[PairSpec]) -> None:
    lines = []
    for p in pairs:
        lines.append(
            json.dumps(
                {
                    "pair_id": p.pair_id,
                    "category": p.category,
                    "ref_sequence": p.ref_sequence,
                    "ref_frame": p.ref_frame,
                    "tgt_sequence": p.tgt_sequence,
                    "tgt_frames": list(p.tgt_frames),
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def lower_median(values: Sequence[float]) -> float:
    """Median as the lower-middle order statistic (no interpolation)."""
    if len(values) == 0:
        raise ValueError("median of empty sequence")
    return sorted(values)[(len(values) - 1) // 2]


def _dataset_for(root) -> Dataset:
    # per-process cache so parallel workers parse each manifest once
    key = str(root)
    ds = _DATASETS.get(key)
    if ds is None:
        ds = _DATASETS[key] = Dataset(root)
    return ds


_DATASETS: dict = {}


def _evaluate_one(
    root, cfg: PipelineConfig, max_views: Optional[int], spec: PairSpec
) -> Optional[PairResult]:
    ds = _dataset_for(root)
    seq_a = ds.sequence(spec.category, spec.ref_sequence)
    seq_b = ds.sequence(spec.category, spec.tgt_sequence)
    t0a = seq_a.manifest.canonical_alignment
    t0b = seq_b.manifest.canonical_alignment
    if t0a is None or t0b is None:
        return None

    ref = seq_a.frame(spec.ref_frame)
    frame_ids = spec.tgt_frames[:max_views] if max_views is not None else spec.tgt_frames
    targets = [seq_b.frame(f) for f in frame_ids]

    try:
        out = estimate_pose(ref, targets, cfg)
        best_view = out.best_view
        pred = out.estimate.transform
        fallback = out.fallback
    except AllViewsUnusable:
        # no view could even be scored; charge the pair the identity
        # prediction against the first view rather than dropping it
        best_view = 0
        pred = RigidTransformSim3.identity()
        fallback = True
    gt = relative_gt_pose(t0a, t0b, ref.extrinsics, targets[best_view].extrinsics)
    rot_err = math.degrees(geodesic_rotation_error(pred.rotation, gt.rotation))
    trans_err = float(
        np.linalg.norm(pred.translation / pred.scale - gt.translation / gt.scale)
    )
    return PairResult(
        pair_id=spec.pair_id,
        category=spec.category,
        rotation_error_deg=rot_err,
        translation_error=trans_err,
        best_view=best_view,
        fallback=fallback,
    )


def _summary(category: str, errors: list[float]) -> CategoryReport:
    n = len(errors)
    return CategoryReport(
        category=category,
        pair_count=n,
        median_error_deg=lower_median(errors),
        acc30=100.0 * sum(e < 30.0 for e in errors) / n,
        acc15=100.0 * sum(e < 15.0 for e in errors) / n,
    )


def summarize(records: Sequence[PairResult], skipped: int = 0, micro: bool = False) -> EvalReport:
    """Aggregate per-pair records into the report structure.

    Order-invariant: categories are sorted by name and metrics do not
    depend on record order.
    """
    if len(records) == 0:
        raise MissingLabel(f"no scorable pairs ({skipped} skipped for missing labels)")
    by_cat: dict[str, list[float]] = {}
    for r in records:
        by_cat.setdefault(r.category, []).append(r.rotation_error_deg)
    cats = tuple(_summary(c, by_cat[c]) for c in sorted(by_cat))

    if micro:
        pooled = _summary("aggregate", [r.rotation_error_deg for r in records])
        aggregate = pooled
    else:
        aggregate = CategoryReport(
            category="aggregate",
            pair_count=len(records),
            median_error_deg=float(np.mean([c.median_error_deg for c in cats])),
            acc30=float(np.mean([c.acc30 for c in cats])),
            acc15=float(np.mean([c.acc15 for c in cats])),
        )
    return EvalReport(
        per_category=cats,
        aggregate=aggregate,
        records=tuple(records),
        skipped=skipped,
        micro=micro,
    )


def evaluate_pairs(
    pairs: Sequence[PairSpec],
    dataset: Dataset,
    cfg: PipelineConfig = PipelineConfig(),
    max_views: Optional[int] = None,
    jobs: int = 1,
    micro: bool = False,
) -> EvalReport:
    """Run the pipeline over every pair and aggregate.

    ``max_views`` truncates each pair's target list to its first N frames.
    ``jobs`` > 1 distributes pairs over processes; results are identical to
    a sequential run because every pair is evaluated with the same config
    and seed, and aggregation is order-independent.
    """
    if len(pairs) == 0:
        raise SchemaError("no pairs to evaluate")
    if max_views is not None and max_views < 1:
        raise ValueError("max_views must be >= 1")
    work = partial(_evaluate_one, dataset.root, cfg, max_views)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, pairs, chunksize=max(1, len(pairs) // (4 * jobs))))
    else:
        outcomes = [work(p) for p in pairs]
    records = [r for r in outcomes if r is not None]
    return summarize(records, skipped=len(outcomes) - len(records), micro=micro)


def error_histogram(records: Sequence[PairResult]) -> str:
    """Per-pair CSV export for external plotting."""
    if len(records) == 0:
        raise ValueError("no records to export")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["category", "pair_id", "rotation_error_deg", "translation_error", "best_view", "fallback"]
    )
    for r in records:
        w.writerow(
            [
                r.category,
                r.pair_id,
                f"{r.rotation_error_deg:.6f}",
                f"{r.translation_error:.6f}",
                r.best_view,
                str(r.fallback).lower(),
            ]
        )
    return buf.getvalue()


def report_to_json(report: EvalReport, config_echo: Optional[dict] = None) -> dict:
    """Report as a JSON-ready dict (schema shared with the CLI)."""

    def row(c: CategoryReport) -> dict:
        return {
            "category": c.category,
            "pair_count": c.pair_count,
            "median_error_deg": c.median_error_deg,
            "acc30": c.acc30,
            "acc15": c.acc15,
        }

    return {
        "aggregate": row(report.aggregate),
        "per_category": [row(c) for c in report.per_category],
        "skipped": report.skipped,
        "micro": report.micro,
        "config": config_echo or {},
    }
