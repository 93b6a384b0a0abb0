"""End-to-end orchestration: synthetic scenes to disk, pairwise relative
poses, graph averaging, and evaluation, all over the on-disk formats.

Every stage persists its outputs (depth/pointmaps, pose graph, global
poses, report), so any stage can be re-run or audited in isolation and
externally produced pairwise pointmaps can replace the synthetic ones
via a pairs-mode manifest.
"""

from __future__ import annotations

import dataclasses
import os
import time
import warnings as _warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io_formats
from .errors import (
    AlignmentError,
    ConfigError,
    FormatError,
    InsufficientDataError,
    PmsfmError,
)
from .geometry import CameraIntrinsics, pointmap_from_depth
from .metrics import (
    DEFAULT_THRESHOLDS,
    SequenceReport,
    align_gauge,
    evaluate,
    subsample_frames,
)
from .pose_graph import (
    EdgeFilterConfig,
    GlobalPoses,
    PoseGraph,
    assemble_global,
    build_graph,
    rotation_averaging,
    rotation_objective,
    translation_averaging,
)
from .relative_pose import RansacConfig, estimate_focal, make_intrinsics, pnp_ransac
from .synth import SceneBundle, SceneSpec, SceneView, generate, make_pair_pointmaps

OUTPUT_DIR_ENV = "PMSFM_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INSUFFICIENT_DATA = 3
EXIT_DISCONNECTED = 4
EXIT_IO = 5

POSES_FILENAME = "poses_est.txt"
GRAPH_FILENAME = "graph.txt"
RUN_LOG_FILENAME = "run_log.txt"
REPORT_FILENAME = "report.txt"
MANIFEST_FILENAME = "manifest.txt"
GT_POSES_FILENAME = "gt_poses.txt"


@dataclass(frozen=True)
class PipelineConfig:
    manifest: str = ""
    output_dir: str = ""
    ransac_max_iterations: int = 1024
    ransac_inlier_threshold_px: float = 5.0
    ransac_confidence: float = 0.999
    ransac_min_sample: int = 4
    quality_threshold: float = 0.25
    pair_policy: str = "auto"  # auto | all | window
    window: int = 10
    weight_mode: str = "inlier"  # inlier | constant
    staircase: bool = False
    align_mode: str = "rigid"  # rigid | similarity
    acc1_dist: float = DEFAULT_THRESHOLDS[0][0]
    acc1_deg: float = DEFAULT_THRESHOLDS[0][1]
    acc2_dist: float = DEFAULT_THRESHOLDS[1][0]
    acc2_deg: float = DEFAULT_THRESHOLDS[1][1]
    n_keep: int = 0  # 0 keeps every frame
    rng_seed: int = 0
    jobs: int = 0  # 0 sizes the pool to the logical core count
    pair_validity: str = ""

    def __post_init__(self):
        if self.pair_policy not in ("auto", "all", "window"):
            raise ConfigError(f"pair_policy: unknown policy {self.pair_policy!r}")
        if self.weight_mode not in ("inlier", "constant"):
            raise ConfigError(f"weight_mode: unknown mode {self.weight_mode!r}")
        if self.align_mode not in ("rigid", "similarity"):
            raise ConfigError(f"align_mode: unknown mode {self.align_mode!r}")
        if self.window < 1:
            raise ConfigError("window: must be >= 1")
        if self.n_keep < 0 or self.jobs < 0:
            raise ConfigError("n_keep and jobs must be >= 0")

    def ransac(self) -> RansacConfig:
        return RansacConfig(
            max_iterations=self.ransac_max_iterations,
            inlier_threshold_px=self.ransac_inlier_threshold_px,
            confidence=self.ransac_confidence,
            min_sample=self.ransac_min_sample,
            rng_seed=self.rng_seed,
        )

    def thresholds(self):
        return ((self.acc1_dist, self.acc1_deg), (self.acc2_dist, self.acc2_deg))


# ---------------------------------------------------------------------------
# key-value documents: config, scene spec, manifest, pair validity


def _kv_lines(text: str):
    for n, raw in enumerate(text.splitlines()):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise FormatError(f"line {n + 1}: expected 'key value', got {line!r}")
        yield n + 1, parts[0], parts[1]


def _coerce(name: str, kind, value: str):
    try:
        if kind is bool:
            iv = int(value)
            if iv not in (0, 1):
                raise ValueError("expected 0 or 1")
            return bool(iv)
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {value!r} ({exc})") from None


def config_to_text(cfg: PipelineConfig) -> str:
    out = ["# pmsfm pipeline config v1"]
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, str) and v == "":
            continue  # loader default is the empty string
        if f.type == "bool" or isinstance(v, bool):
            v = int(v)
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{f.name} {v}")
    return "\n".join(out) + "\n"


def config_from_text(text: str) -> PipelineConfig:
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    values = {}
    try:
        for lineno, key, value in _kv_lines(text):
            if key not in fields:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            f = fields[key]
            kind = {"int": int, "float": float, "str": str, "bool": bool}[f.type]
            values[key] = _coerce(key, kind, value)
    except FormatError as exc:
        raise ConfigError(f"malformed config file: {exc}") from None
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    return config_from_text(Path(path).read_text(encoding="utf-8"))


def save_config(path, cfg: PipelineConfig):
    Path(path).write_text(config_to_text(cfg), encoding="utf-8")


_SPEC_SCALARS = {
    "n_points": int, "object_shape": str, "scene_scale": float, "n_views": int,
    "trajectory": str, "depth_noise_sigma": float, "point_noise_sigma": float,
    "outlier_fraction": float, "occlusion_fraction": float, "rng_seed": int,
}


def scene_spec_to_text(spec: SceneSpec) -> str:
    out = ["# pmsfm scene spec v1"]
    for name, kind in _SPEC_SCALARS.items():
        v = getattr(spec, name)
        out.append(f"{name} {repr(v) if kind is float else v}")
    out.append(f"focal_min {repr(spec.focal_range[0])}")
    out.append(f"focal_max {repr(spec.focal_range[1])}")
    out.append(f"image_width {spec.image_size[0]}")
    out.append(f"image_height {spec.image_size[1]}")
    return "\n".join(out) + "\n"


def scene_spec_from_text(text: str) -> SceneSpec:
    values = {}
    extras = {}
    for lineno, key, value in _kv_lines(text):
        if key in _SPEC_SCALARS:
            values[key] = _coerce(key, _SPEC_SCALARS[key], value)
        elif key in ("focal_min", "focal_max"):
            extras[key] = _coerce(key, float, value)
        elif key in ("image_width", "image_height"):
            extras[key] = _coerce(key, int, value)
        else:
            raise ConfigError(f"line {lineno}: unknown scene spec key {key!r}")
    if "focal_min" in extras or "focal_max" in extras:
        values["focal_range"] = (extras.get("focal_min", 110.0),
                                 extras.get("focal_max", 180.0))
    if "image_width" in extras or "image_height" in extras:
        values["image_size"] = (extras.get("image_width", 128),
                                extras.get("image_height", 96))
    return SceneSpec(**values)


def load_scene_spec(path) -> SceneSpec:
    return scene_spec_from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Manifest:
    """Input listing for a solve.

    Views mode references per-view depth files plus the ground-truth
    poses used to emit simulated pair pointmaps; pairs mode references
    externally produced (reference, source) pointmap files per pair.
    """

    mode: str
    n_frames: int
    base_dir: Path
    focal: float = 0.0
    gt_poses: str = ""
    scene_scale: float = 1.0
    outlier_fraction: float = 0.0
    point_noise_sigma: float = 0.0
    rng_seed: int = 0
    views: tuple[tuple[int, str, str], ...] = ()  # (frame, depth, pointmap)
    pairs: tuple[tuple[int, int, str, str], ...] = ()  # (i, j, ref, src)


def manifest_to_text(m: Manifest) -> str:
    out = ["# pmsfm manifest v1", f"mode {m.mode}", f"n_frames {m.n_frames}"]
    if m.mode == "views":
        out += [f"focal {repr(m.focal)}", f"gt_poses {m.gt_poses}",
                f"scene_scale {repr(m.scene_scale)}",
                f"outlier_fraction {repr(m.outlier_fraction)}",
                f"point_noise_sigma {repr(m.point_noise_sigma)}",
                f"rng_seed {m.rng_seed}"]
        for frame, depth, pm in m.views:
            out.append(f"view {frame} {depth} {pm}")
    else:
        for i, j, ref, src in m.pairs:
            out.append(f"pair {i} {j} {ref} {src}")
    return "\n".join(out) + "\n"


def manifest_from_text(text: str, base_dir: Path) -> Manifest:
    mode = None
    scalars = {"n_frames": None}
    views = []
    pairs = []
    floats = {"focal": 0.0, "scene_scale": 1.0, "outlier_fraction": 0.0,
              "point_noise_sigma": 0.0}
    ints = {"rng_seed": 0}
    gt_poses = ""
    for lineno, key, value in _kv_lines(text):
        if key == "mode":
            if value not in ("views", "pairs"):
                raise FormatError(f"line {lineno}: unknown manifest mode {value!r}")
            mode = value
        elif key == "n_frames":
            scalars["n_frames"] = _coerce(key, int, value)
        elif key == "gt_poses":
            gt_poses = value
        elif key in floats:
            floats[key] = _coerce(key, float, value)
        elif key in ints:
            ints[key] = _coerce(key, int, value)
        elif key == "view":
            parts = value.split()
            if len(parts) != 3:
                raise FormatError(f"line {lineno}: expected 'view <k> <depth> <pointmap>'")
            views.append((int(parts[0]), parts[1], parts[2]))
        elif key == "pair":
            parts = value.split()
            if len(parts) != 4:
                raise FormatError(f"line {lineno}: expected 'pair <i> <j> <ref> <src>'")
            pairs.append((int(parts[0]), int(parts[1]), parts[2], parts[3]))
        else:
            raise FormatError(f"line {lineno}: unknown manifest key {key!r}")
    if mode is None or scalars["n_frames"] is None:
        raise FormatError("manifest must declare 'mode' and 'n_frames'")
    return Manifest(mode=mode, n_frames=scalars["n_frames"], base_dir=base_dir,
                    focal=floats["focal"], gt_poses=gt_poses,
                    scene_scale=floats["scene_scale"],
                    outlier_fraction=floats["outlier_fraction"],
                    point_noise_sigma=floats["point_noise_sigma"],
                    rng_seed=ints["rng_seed"],
                    views=tuple(views), pairs=tuple(pairs))


def load_manifest(path) -> Manifest:
    p = Path(path)
    return manifest_from_text(p.read_text(encoding="utf-8"), p.parent)


def load_pair_validity(path) -> dict[tuple[int, int], bool]:
    verdicts = {}
    for lineno, key, value in _kv_lines(Path(path).read_text(encoding="utf-8")):
        if key != "pair":
            raise FormatError(f"line {lineno}: expected 'pair <i> <j> <0|1>'")
        parts = value.split()
        if len(parts) != 3 or parts[2] not in ("0", "1"):
            raise FormatError(f"line {lineno}: expected 'pair <i> <j> <0|1>'")
        verdicts[(int(parts[0]), int(parts[1]))] = parts[2] == "1"
    return verdicts


# ---------------------------------------------------------------------------
# synth stage


def synthesize(spec: SceneSpec, out_dir) -> Path:
    """Generate a bundle and persist it: per-view depth + pointmap
    containers, ground-truth poses, the scene spec, and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = generate(spec)

    views = []
    for k, view in enumerate(bundle.views):
        depth_name = f"view_{k:03d}.dmap"
        pm_name = f"view_{k:03d}.pmap"
        io_formats.write_depthmap(out / depth_name, view.depth)
        io_formats.write_pointmap(out / pm_name,
                                  pointmap_from_depth(view.depth, view.intrinsics))
        views.append((k, depth_name, pm_name))

    gt = GlobalPoses(
        rotations=np.stack([v.pose.rotation for v in bundle.views]),
        translations=np.stack([v.pose.translation for v in bundle.views]),
        recovered=np.ones(bundle.n_views, dtype=bool),
    )
    io_formats.write_poses(out / GT_POSES_FILENAME, gt)
    (out / "scene_spec.txt").write_text(scene_spec_to_text(spec), encoding="utf-8")

    manifest = Manifest(
        mode="views", n_frames=bundle.n_views, base_dir=out,
        focal=bundle.views[0].intrinsics.f, gt_poses=GT_POSES_FILENAME,
        scene_scale=spec.scene_scale, outlier_fraction=spec.outlier_fraction,
        point_noise_sigma=spec.point_noise_sigma, rng_seed=spec.rng_seed,
        views=tuple(views),
    )
    (out / MANIFEST_FILENAME).write_text(manifest_to_text(manifest), encoding="utf-8")
    return out / MANIFEST_FILENAME


# ---------------------------------------------------------------------------
# solve stage


@dataclass
class SolveResult:
    poses: GlobalPoses
    graph: PoseGraph
    frame_ids: list[int]
    objective: float
    warnings: list[str]
    timings: dict[str, float]
    n_pairs_attempted: int = 0
    n_pairs_failed: int = 0


def _candidate_pairs(n: int, policy: str, window: int) -> list[tuple[int, int]]:
    if policy == "auto":
        policy = "window" if n > 60 else "all"
    if policy == "all":
        return [(a, b) for a in range(n) for b in range(a + 1, n)]
    return [(a, b) for a in range(n) for b in range(a + 1, min(n, a + 1 + window))]


def _load_views_bundle(manifest: Manifest, kept: np.ndarray) -> SceneBundle:
    if manifest.focal <= 0:
        raise FormatError("views manifest must declare a positive focal")
    if not manifest.gt_poses:
        raise FormatError("views manifest must reference a gt_poses document")
    gt, gt_ids = io_formats.read_poses(manifest.base_dir / manifest.gt_poses)
    by_id = {fid: k for k, fid in enumerate(gt_ids)}
    files = {frame: depth for frame, depth, _ in manifest.views}

    views = []
    for frame in kept:
        frame = int(frame)
        if frame not in files:
            raise FormatError(f"manifest lists no depth file for frame {frame}")
        if frame not in by_id:
            raise FormatError(f"gt_poses lists no pose for frame {frame}")
        depth = io_formats.read_depthmap(manifest.base_dir / files[frame])
        if views and (depth.width, depth.height) != (views[0].depth.width,
                                                     views[0].depth.height):
            raise FormatError(f"frame {frame} has size {depth.width}x{depth.height},"
                              f" expected {views[0].depth.width}x{views[0].depth.height}")
        intr = CameraIntrinsics(f=manifest.focal, c_x=depth.width / 2.0,
                                c_y=depth.height / 2.0)
        views.append(SceneView(depth=depth, intrinsics=intr,
                               pose=gt.pose(by_id[frame])))
    spec = SceneSpec(
        n_views=max(len(views), 2), scene_scale=manifest.scene_scale,
        outlier_fraction=manifest.outlier_fraction,
        point_noise_sigma=manifest.point_noise_sigma, rng_seed=manifest.rng_seed,
        image_size=(views[0].depth.width, views[0].depth.height),
    )
    return SceneBundle(spec=spec, views=tuple(views))


def _solve_pair_views(bundle: SceneBundle, a: int, b: int,
                      ransac: RansacConfig):
    pair = make_pair_pointmaps(bundle, a, b)
    focal = estimate_focal(pair.view1)
    k = make_intrinsics(pair.view2.width, pair.view2.height, focal)
    res = pnp_ransac(pair.view2, k, ransac)
    return a, b, res, pair.view2.n_valid


def _solve_pair_files(base: Path, a: int, b: int, ref_file: str, src_file: str,
                      ransac: RansacConfig):
    ref = io_formats.read_pointmap(base / ref_file)
    src = io_formats.read_pointmap(base / src_file)
    focal = estimate_focal(ref)
    k = make_intrinsics(src.width, src.height, focal)
    res = pnp_ransac(src, k, ransac)
    return a, b, res, src.n_valid


def solve(cfg: PipelineConfig) -> SolveResult:
    """Run subsample -> pairwise relative poses -> graph -> averaging.

    Failed pairs are logged and skipped; they only abort the run if the
    surviving graph splits. Outputs are written by `run_solve`.
    """
    timings = {}
    warnings_log = []
    t0 = time.perf_counter()

    manifest = load_manifest(cfg.manifest)
    if manifest.n_frames < 2:
        raise InsufficientDataError(
            f"need at least 2 frames, manifest declares {manifest.n_frames}"
        )
    if cfg.n_keep:
        kept = subsample_frames(manifest.n_frames, cfg.n_keep)
    else:
        kept = np.arange(manifest.n_frames)
    if len(kept) < 2:
        raise InsufficientDataError("fewer than 2 frames after subsampling")
    local_of = {int(f): i for i, f in enumerate(kept)}
    n_local = len(kept)

    validity = {}
    if cfg.pair_validity:
        raw = load_pair_validity(cfg.pair_validity)
        for (i, j), ok in raw.items():
            if i in local_of and j in local_of:
                validity[(local_of[i], local_of[j])] = ok

    ransac = cfg.ransac()
    tasks = []
    if manifest.mode == "views":
        bundle = _load_views_bundle(manifest, kept)
        pairs = _candidate_pairs(n_local, cfg.pair_policy, cfg.window)
        for a, b in pairs:
            tasks.append((_solve_pair_views, (bundle, a, b, ransac)))
    else:
        if not manifest.pairs:
            raise InsufficientDataError("pairs manifest lists no pairs")
        for i, j, ref, src in manifest.pairs:
            if i not in local_of or j not in local_of:
                continue
            tasks.append((_solve_pair_files,
                          (manifest.base_dir, local_of[i], local_of[j], ref, src,
                           ransac)))
        if not tasks:
            raise InsufficientDataError("no pairs survive frame subsampling")
    timings["load_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    jobs = cfg.jobs or os.cpu_count() or 1
    results = []
    n_failed = 0

    def run_task(task):
        fn, args = task
        return fn(*args)

    if jobs == 1:
        raw_results = []
        for task in tasks:
            try:
                raw_results.append(run_task(task))
            except (PmsfmError, OSError) as exc:
                raw_results.append(exc)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_task, t) for t in tasks]
            raw_results = []
            for fut in futures:  # manifest order, schedule-independent
                try:
                    raw_results.append(fut.result())
                except (PmsfmError, OSError) as exc:
                    raw_results.append(exc)
    for task, outcome in zip(tasks, raw_results):
        if isinstance(outcome, Exception):
            n_failed += 1
            a, b = task[1][1], task[1][2]
            warnings_log.append(f"pair ({kept[a]},{kept[b]}) skipped: {outcome}")
        else:
            results.append(outcome)
    timings["pairs_s"] = time.perf_counter() - t0

    if not results:
        raise InsufficientDataError("every candidate pair failed")

    t0 = time.perf_counter()
    filter_cfg = EdgeFilterConfig(
        quality_threshold=cfg.quality_threshold,
        weight_mode=cfg.weight_mode,
        pair_validity=validity or None,
    )
    graph = build_graph(results, n_local, filter_cfg)
    if not graph.edges:
        raise InsufficientDataError("no edges survive filtering")
    timings["graph_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always")
        rotations = rotation_averaging(graph, staircase=cfg.staircase)
        timings["rotation_s"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        translations = translation_averaging(graph, rotations)
        timings["translation_s"] = time.perf_counter() - t0
    warnings_log.extend(str(w.message) for w in caught)

    recovered = graph.covered_vertices()
    poses = assemble_global(rotations, translations, recovered)
    objective = rotation_objective(graph, rotations)
    return SolveResult(
        poses=poses, graph=graph, frame_ids=[int(f) for f in kept],
        objective=objective, warnings=warnings_log, timings=timings,
        n_pairs_attempted=len(tasks), n_pairs_failed=n_failed,
    )


def sra_objective_from_outputs(graph: PoseGraph, poses: GlobalPoses) -> float:
    """Re-evaluate the rotation-averaging objective from saved outputs.

    The saved poses are world-to-camera; the averaging variables are
    their transposes (camera-to-world rotations).
    """
    return rotation_objective(graph, np.transpose(poses.rotations, (0, 2, 1)))


def run_log_text(result: SolveResult, cfg: PipelineConfig) -> str:
    out = ["# pmsfm run log",
           f"n_frames_solved {len(result.frame_ids)}",
           "frames_kept " + " ".join(str(f) for f in result.frame_ids),
           f"n_pairs_attempted {result.n_pairs_attempted}",
           f"n_pairs_failed {result.n_pairs_failed}",
           f"n_edges {len(result.graph.edges)}",
           f"n_rescued {sum(1 for e in result.graph.edges if e.rescued)}",
           f"n_recovered {int(np.count_nonzero(result.poses.recovered))}",
           f"objective_sra {repr(result.objective)}",
           f"staircase {int(cfg.staircase)}"]
    for stage, seconds in result.timings.items():
        out.append(f"timing_{stage} {seconds:.6f}")
    for msg in result.warnings:
        out.append(f"# warning: {msg}")
    return "\n".join(out) + "\n"


def run_solve(cfg: PipelineConfig) -> tuple[SolveResult, Path]:
    """Solve and persist poses, graph, and run log into the output dir."""
    if not cfg.manifest:
        raise ConfigError("manifest: no input manifest configured")
    if not cfg.output_dir:
        raise ConfigError("output_dir: no output directory configured")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = solve(cfg)
    io_formats.write_poses(out / POSES_FILENAME, result.poses, result.frame_ids)
    io_formats.write_graph(out / GRAPH_FILENAME, result.graph)
    (out / RUN_LOG_FILENAME).write_text(run_log_text(result, cfg), encoding="utf-8")
    save_config(out / "config_used.txt", cfg)
    return result, out


# ---------------------------------------------------------------------------
# eval stage


def evaluate_pose_files(est_path, gt_path, mode: str = "rigid",
                        thresholds=DEFAULT_THRESHOLDS) -> SequenceReport:
    """Align and score an estimated pose document against a reference.

    Estimated frames are matched to reference frames by frame id; the
    reference may cover a superset (e.g. all frames of the original
    video). If too few frames are commonly recovered for the requested
    alignment, the report degrades to rotation-only metrics.
    """
    est, est_ids = io_formats.read_poses(est_path)
    gt, gt_ids = io_formats.read_poses(gt_path)
    by_id = {fid: k for k, fid in enumerate(gt_ids)}
    missing = [fid for fid in est_ids if fid not in by_id]
    if missing:
        raise FormatError(f"reference poses lack frames {missing}")
    sel = [by_id[fid] for fid in est_ids]
    gt_sub = GlobalPoses(rotations=gt.rotations[sel],
                         translations=gt.translations[sel],
                         recovered=gt.recovered[sel])
    try:
        aligned, _ = align_gauge(est, gt_sub, mode=mode)
        return evaluate(aligned, gt_sub, thresholds=thresholds)
    except AlignmentError:
        return _evaluate_rotation_only(est, gt_sub, thresholds)


def _evaluate_rotation_only(est: GlobalPoses, gt: GlobalPoses,
                            thresholds) -> SequenceReport:
    """Degraded scoring when the translation gauge cannot be fixed:
    rotations are aligned on the first commonly recovered frame and the
    accuracy columns count the rotation criterion alone; translation
    fields are NaN."""
    common = np.flatnonzero(est.recovered & gt.recovered)
    rotations = est.rotations.copy()
    if len(common):
        k0 = int(common[0])
        w = est.rotations[k0].T @ gt.rotations[k0]
        for k in common:
            rotations[k] = est.rotations[k] @ w
    est_aligned = GlobalPoses(rotations=rotations, translations=est.translations,
                              recovered=est.recovered)
    inf_thresholds = tuple((np.inf, deg) for _, deg in thresholds)
    report = evaluate(est_aligned, gt, thresholds=inf_thresholds)
    return dataclasses.replace(report, trans_error=float("nan"),
                               trans_rmse=float("nan"))
