"""Command-line front end.

Subcommands: ``estimate`` (one reference frame against one target
sequence), ``evaluate`` (a pairs file against a dataset root), ``synth``
(write the synthetic benchmark), ``icp`` (depth-only baseline aligning the
reference cloud to the fused target cloud).

Exit codes: 0 success, 1 usage error, 2 data error, 3 estimation failure.
stdout carries only the machine-readable payload; diagnostics and warnings
go to stderr. Every subcommand is bit-reproducible for fixed flags and
seed. A --config JSON file supplies values for any flag not given on the
command line (command line wins, then config, then built-in default).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, EstimationError, SchemaError
from .evaluation import error_histogram, evaluate_pairs, load_pairs, report_to_json
from .geom import RigidTransformSim3, invert
from .io import Dataset, load_sequence, sim3_to_json
from .pipeline import Matcher, PipelineConfig, estimate_pose
from .solver import PointCloud, RansacConfig, fuse_target_cloud, icp_sim3
from .synth import SynthRenderConfig, gen_benchmark
from .viewsel import ViewStrategy, best_of, score_views


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep 1 for usage
        raise _UsageError(f"{self.prog}: {message}")


_PIPELINE_DEFAULTS = {
    "k": 50,
    "matcher": "cyclical",
    "view_select": "correspond-sim",
    "ransac_iters": 1000,
    "inlier_thresh": 0.2,
    "seed": 0,
    "best_view_only": False,
}


def _add_pipeline_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--matcher", choices=[m.value for m in Matcher], default=None)
    sp.add_argument(
        "--view-select", choices=[s.value for s in ViewStrategy], default=None
    )
    sp.add_argument("--ransac-iters", type=int, default=None)
    sp.add_argument("--inlier-thresh", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--best-view-only", action="store_true", default=None)
    sp.add_argument("--config", default=None, help="JSON file of flag defaults")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """command line > --config file > built-in default, per flag."""
    from_file = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise SchemaError(f"config file not found: {path}")
        try:
            from_file = json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(from_file, dict):
            raise SchemaError(f"{path}: config must be a JSON object")
    out = {}
    for key, default in defaults.items():
        cli_val = getattr(args, key, None)
        out[key] = cli_val if cli_val is not None else from_file.get(key, default)
    return out


def _pipeline_config(opts: dict) -> PipelineConfig:
    return PipelineConfig(
        k=opts["k"],
        matcher=Matcher(opts["matcher"]),
        view_strategy=ViewStrategy(opts["view_select"]),
        ransac=RansacConfig(
            max_iters=opts["ransac_iters"],
            inlier_thresh=opts["inlier_thresh"],
            seed=opts["seed"],
        ),
        best_view_only=bool(opts["best_view_only"]),
        seed=opts["seed"],
    )


def _emit(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if out:
        Path(out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)


def _split_frame_ref(value: str) -> tuple[str, str]:
    path, sep, frame = value.rpartition("#")
    if not sep or not path or not frame:
        raise _UsageError("--ref must look like path/to/manifest.json#frame_id")
    return path, frame


def _warn_if_not_unit_scale(bundles, label: str) -> None:
    cloud = fuse_target_cloud(
        [(b.depth, b.intrinsics, b.extrinsics) for b in bundles], stride=7
    )
    if len(cloud) < 3:
        return
    centered = cloud.points - cloud.points.mean(axis=0)
    std = float(np.sqrt((centered**2).sum(axis=1).mean()))
    if std > 3.0 or std < 1.0 / 3.0:
        sys.stderr.write(
            f"warning: {label} cloud std {std:.3g} is far from unit scale; "
            "the default inlier threshold 0.2 assumes unit-std scenes\n"
        )


def _load_ref_and_targets(args) -> tuple:
    ref_path, ref_frame = _split_frame_ref(args.ref)
    ref_seq = load_sequence(ref_path)
    tgt_seq = load_sequence(args.target)
    frame_ids = args.frames.split(",") if args.frames else tgt_seq.frame_ids()
    ref = ref_seq.frame(ref_frame)
    targets = [tgt_seq.frame(f) for f in frame_ids]
    return ref, targets, frame_ids


def cmd_estimate(args) -> int:
    opts = _resolve(args, _PIPELINE_DEFAULTS)
    cfg = _pipeline_config(opts)
    ref, targets, frame_ids = _load_ref_and_targets(args)
    _warn_if_not_unit_scale([ref], "reference")
    _warn_if_not_unit_scale(targets, "target")
    result = estimate_pose(ref, targets, cfg)
    rms = result.estimate.rms_residual
    _emit(
        {
            "transform": sim3_to_json(result.estimate.transform),
            "best_view": frame_ids[result.best_view],
            "inliers": result.estimate.inlier_count,
            "rms": None if not math.isfinite(rms) else rms,
            "fallback": result.fallback,
        },
        args.out,
    )
    return 0


def cmd_evaluate(args) -> int:
    defaults = dict(_PIPELINE_DEFAULTS, views=None, jobs=None, micro=False)
    opts = _resolve(args, defaults)
    cfg = _pipeline_config(opts)
    jobs = opts["jobs"]
    if jobs is None:
        jobs = int(os.environ.get("ZSPOSE_JOBS", 0)) or (os.cpu_count() or 1)
    if jobs < 1:
        raise _UsageError("--jobs must be >= 1")
    if opts["views"] is not None and opts["views"] < 1:
        raise _UsageError("--views must be >= 1")

    pairs = load_pairs(args.pairs)
    report = evaluate_pairs(
        pairs,
        Dataset(args.data),
        cfg,
        max_views=opts["views"],
        jobs=jobs,
        micro=bool(opts["micro"]),
    )
    if args.per_pair_csv:
        Path(args.per_pair_csv).write_text(error_histogram(report.records), "utf-8")
    echo = {k: opts[k] for k in _PIPELINE_DEFAULTS}
    echo["views"] = opts["views"]
    _emit(report_to_json(report, config_echo=echo), args.out)
    return 0


def cmd_synth(args) -> int:
    if args.categories < 1 or args.pairs < 1 or args.views < 1:
        raise _UsageError("--categories, --pairs and --views must all be >= 1")
    cfg = SynthRenderConfig(
        feat_noise=args.noise_feat,
        shape_sigma=args.noise_shape,
        depth_noise=args.noise_depth,
        cells=args.cells,
        parts=args.parts,
        dim=args.dim,
    )
    try:
        pairs = gen_benchmark(
            args.out,
            categories=args.categories,
            pairs_per_category=args.pairs,
            n_views=args.views,
            cfg=cfg,
            seed=args.seed,
        )
    except OSError as e:
        sys.stderr.write(f"error: cannot write dataset: {e}\n")
        return 2
    _emit(
        {
            "out": str(args.out),
            "categories": args.categories,
            "pairs": len(pairs),
            "views": args.views,
            "seed": args.seed,
        },
        None,
    )
    return 0


def cmd_icp(args) -> int:
    defaults = dict(
        _PIPELINE_DEFAULTS, init="identity", subsample=5000, max_iter=50, tol=1e-6
    )
    opts = _resolve(args, defaults)
    ref, targets, frame_ids = _load_ref_and_targets(args)
    _warn_if_not_unit_scale([ref], "reference")
    _warn_if_not_unit_scale(targets, "target")

    src = fuse_target_cloud([(ref.depth, ref.intrinsics, ref.extrinsics)])
    # source points live in the reference camera frame
    src_cam = PointCloud(ref.extrinsics.apply(src.points), src.view_index)
    dst = fuse_target_cloud([(t.depth, t.intrinsics, t.extrinsics) for t in targets])

    best_frame = None
    init = RigidTransformSim3.identity()
    if opts["init"] == "best-view":
        scores = score_views(
            ref.features,
            [t.features for t in targets],
            opts["k"],
            strategy=ViewStrategy(opts["view_select"]),
            seed=opts["seed"],
        )
        j = best_of(scores).view_index
        best_frame = frame_ids[j]
        init = invert(targets[j].extrinsics.to_sim3())

    result = icp_sim3(
        src_cam,
        dst,
        init=init,
        max_iter=opts["max_iter"],
        tol=opts["tol"],
        subsample=opts["subsample"],
        seed=opts["seed"],
    )
    rms = result.estimate.rms_residual
    _emit(
        {
            "transform": sim3_to_json(result.estimate.transform),
            "iterations": result.iterations,
            "rms": None if not math.isfinite(rms) else rms,
            "init": opts["init"],
            "best_view": best_frame,
        },
        args.out,
    )
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="zspose")
    sub = parser.add_subparsers(dest="cmd", required=True)

    est = sub.add_parser("estimate", help="pose of one reference frame vs a target sequence")
    est.add_argument("--ref", required=True, help="manifest.json#frame_id")
    est.add_argument("--target", required=True, help="target sequence manifest.json")
    est.add_argument("--frames", default=None, help="comma-separated target frame ids")
    est.add_argument("--out", default=None)
    _add_pipeline_flags(est)
    est.set_defaults(func=cmd_estimate)

    ev = sub.add_parser("evaluate", help="run a pairs file against a dataset root")
    ev.add_argument("--pairs", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--views", type=int, default=None, help="use only the first N target frames")
    ev.add_argument("--jobs", type=int, default=None, help="parallel workers (or ZSPOSE_JOBS)")
    ev.add_argument("--micro", action="store_true", default=None)
    ev.add_argument("--per-pair-csv", default=None)
    ev.add_argument("--out", default=None)
    _add_pipeline_flags(ev)
    ev.set_defaults(func=cmd_evaluate)

    sy = sub.add_parser("synth", help="write the synthetic benchmark dataset")
    sy.add_argument("--out", required=True)
    sy.add_argument("--categories", type=int, default=5)
    sy.add_argument("--pairs", type=int, default=100)
    sy.add_argument("--views", type=int, default=5)
    sy.add_argument("--noise-feat", type=float, default=0.0)
    sy.add_argument("--noise-shape", type=float, default=0.0)
    sy.add_argument("--noise-depth", type=float, default=0.0)
    sy.add_argument("--cells", type=int, default=SynthRenderConfig.cells)
    sy.add_argument("--parts", type=int, default=SynthRenderConfig.parts)
    sy.add_argument("--dim", type=int, default=SynthRenderConfig.dim)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=cmd_synth)

    icp = sub.add_parser("icp", help="depth-only baseline")
    icp.add_argument("--ref", required=True, help="manifest.json#frame_id")
    icp.add_argument("--target", required=True)
    icp.add_argument("--frames", default=None)
    icp.add_argument("--init", choices=["identity", "best-view"], default=None)
    icp.add_argument("--subsample", type=int, default=None)
    icp.add_argument("--max-iter", type=int, default=None)
    icp.add_argument("--tol", type=float, default=None)
    icp.add_argument("--out", default=None)
    _add_pipeline_flags(icp)
    icp.set_defaults(func=cmd_icp)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as e:
        sys.stderr.write(f"{e}\n")
        return 1
    except ValueError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except BrokenPipeError:
        return 0
    except DataError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    except EstimationError as e:
        sys.stderr.write(f"error: {e}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
