"""Command-line interface: synth, solve, eval, formats.

Exit codes: 0 ok, 2 config error, 3 insufficient data, 4 disconnected
graph, 5 io/parse error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from . import io_formats, pipeline
from .errors import (
    ConfigError,
    DisconnectedGraphError,
    FormatError,
    InsufficientDataError,
    PmsfmError,
    ValidationError,
)
from .synth import SceneSpec


def _default_out() -> str:
    return os.environ.get(pipeline.OUTPUT_DIR_ENV, "")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmsfm",
        description="Globally consistent rigid motion from dense pointmaps: "
                    "synthetic scenes, pairwise PnP-RANSAC, pose averaging, "
                    "and trajectory evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic scene bundle")
    p_synth.add_argument("--spec", help="scene spec file (key-value text)")
    p_synth.add_argument("--out", default=_default_out(),
                         help=f"output directory (default ${pipeline.OUTPUT_DIR_ENV})")
    p_synth.add_argument("--seed", type=int, help="override the scene spec's rng seed")

    p_solve = sub.add_parser("solve", help="recover global poses from a manifest")
    p_solve.add_argument("--config", help="pipeline config file; flags override it")
    p_solve.add_argument("--manifest", help="input manifest")
    p_solve.add_argument("--out", default=None,
                         help=f"output directory (default ${pipeline.OUTPUT_DIR_ENV})")
    p_solve.add_argument("--ransac-max-iterations", type=int, dest="ransac_max_iterations")
    p_solve.add_argument("--ransac-inlier-threshold-px", type=float,
                         dest="ransac_inlier_threshold_px")
    p_solve.add_argument("--ransac-confidence", type=float, dest="ransac_confidence")
    p_solve.add_argument("--ransac-min-sample", type=int, dest="ransac_min_sample")
    p_solve.add_argument("--quality-threshold", type=float, dest="quality_threshold")
    p_solve.add_argument("--pair-policy", choices=("auto", "all", "window"),
                         dest="pair_policy")
    p_solve.add_argument("--window", type=int)
    p_solve.add_argument("--weight-mode", choices=("inlier", "constant"),
                         dest="weight_mode")
    p_solve.add_argument("--staircase", action="store_true", default=None,
                         help="try SO(4)/SO(5) lifts after local descent")
    p_solve.add_argument("--n-keep", type=int, dest="n_keep",
                         help="subsample to this many evenly spaced frames")
    p_solve.add_argument("--seed", type=int, dest="rng_seed")
    p_solve.add_argument("--jobs", type=int, help="pair-solver pool size (0 = cores)")
    p_solve.add_argument("--pair-validity", dest="pair_validity",
                         help="external pair-validity verdict file")

    p_eval = sub.add_parser("eval", help="score estimated poses against a reference")
    p_eval.add_argument("--est", required=True, help="estimated poses document")
    p_eval.add_argument("--gt", required=True, help="reference poses document")
    p_eval.add_argument("--config", help="pipeline config supplying alignment "
                                         "mode and thresholds; flags override")
    p_eval.add_argument("--mode", choices=("rigid", "similarity"), default=None)
    p_eval.add_argument("--thresholds", default=None,
                        help="accuracy thresholds as dist:deg,dist:deg "
                             "(default 0.15:15,0.30:30)")
    p_eval.add_argument("--out", help="also write the report here")

    sub.add_parser("formats", help="print the on-disk format documentation")
    return parser


def _cmd_synth(args) -> int:
    if not args.spec:
        spec = SceneSpec()
    else:
        spec = pipeline.load_scene_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, rng_seed=args.seed)
    if not args.out:
        raise ConfigError(f"synth needs --out or ${pipeline.OUTPUT_DIR_ENV}")
    manifest_path = pipeline.synthesize(spec, args.out)
    print(f"wrote bundle for {spec.n_views} views to {Path(args.out).resolve()}")
    print(f"manifest: {manifest_path}")
    return pipeline.EXIT_OK


def _cmd_solve(args) -> int:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    overrides = {}
    for f in dataclasses.fields(pipeline.PipelineConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    if args.manifest is not None:
        overrides["manifest"] = args.manifest
    if args.out is not None:
        overrides["output_dir"] = args.out
    elif not cfg.output_dir and _default_out():
        overrides["output_dir"] = _default_out()
    cfg = dataclasses.replace(cfg, **overrides)

    result, out = pipeline.run_solve(cfg)
    n = len(result.frame_ids)
    n_rec = int(result.poses.recovered.sum())
    print(f"solved {n_rec}/{n} frames over {len(result.graph.edges)} edges "
          f"(objective {result.objective:.3e})")
    for msg in result.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    print(f"poses:  {out / pipeline.POSES_FILENAME}")
    print(f"graph:  {out / pipeline.GRAPH_FILENAME}")
    print(f"log:    {out / pipeline.RUN_LOG_FILENAME}")
    return pipeline.EXIT_OK


def _parse_thresholds(text: str):
    pairs = []
    for part in text.split(","):
        dist, _, deg = part.partition(":")
        try:
            pairs.append((float(dist), float(deg)))
        except ValueError:
            raise ConfigError(f"thresholds: cannot parse {part!r}") from None
    if len(pairs) != 2:
        raise ConfigError("thresholds: expected exactly two dist:deg pairs")
    return tuple(pairs)


def _cmd_eval(args) -> int:
    mode = args.mode
    kwargs = {}
    if args.config:
        cfg = pipeline.load_config(args.config)
        mode = mode or cfg.align_mode
        kwargs["thresholds"] = cfg.thresholds()
    if args.thresholds:
        kwargs["thresholds"] = _parse_thresholds(args.thresholds)
    report = pipeline.evaluate_pose_files(args.est, args.gt, mode=mode or "rigid",
                                          **kwargs)
    if args.out:
        io_formats.write_report(args.out, report)
    print("rot_error_deg trans_error det_rate_pct acc_15_15_pct acc_30_30_pct")
    print(report.table_row())
    return pipeline.EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "formats":
            print(io_formats.FORMAT_DOC, end="")
            return pipeline.EXIT_OK
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CONFIG
    except InsufficientDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_INSUFFICIENT_DATA
    except DisconnectedGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_DISCONNECTED
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_IO
    except PmsfmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
