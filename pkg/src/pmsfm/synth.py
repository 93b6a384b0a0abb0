"""Procedural multi-view scene generator for testing the full pipeline.

Scenes are proxy point clouds (no meshes) rendered into per-view depth
maps by 1-pixel z-buffer splatting. Every view also records which point
each pixel shows, so tests can match pixels across views exactly. Points
that fail to win an unmasked pixel in at least two views are pruned and
the scene re-splatted, which makes the >=2-view visibility guarantee
hold by construction.

Pair pointmaps simulate a cross-view prediction network: both maps are
back-projected from the stored depth and the second view's map is
re-expressed in the first view's frame using the ground-truth poses.
Injected outliers are rejection-sampled to reproject far from their
pixel, so robustness tests can assert their exact exclusion; they carry
confidences well below every clean pixel.

One focal length is drawn per scene (all views share it), mirroring a
single-camera video; intrinsics vary across scenes through the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    Pointmap,
    RigidTransform,
    change_frame,
    compose,
    inverse,
    pointmap_from_depth,
)

_OBJECT_SHAPES = ("sphere-cluster", "box-cluster", "blob")
_TRAJECTORIES = ("orbit", "random-hemisphere")

# Sub-stream tags for RNG derivation.
_TAG_POINTS = 1
_TAG_SCENE = 2
_TAG_VIEW = 3
_TAG_NOISE = 4
_TAG_PAIR = 5

# Injected outliers must reproject at least this far (pixels) from their
# pixel in the ground-truth camera, or land behind it.
_OUTLIER_MIN_REPROJ_PX = 15.0


@dataclass(frozen=True)
class SceneSpec:
    """Scene and corruption knobs. ``depth_noise_sigma`` perturbs the
    rendered depth values; since that moves points along their pixel
    rays it is invisible to ray-based estimators, so
    ``point_noise_sigma`` additionally models prediction error as an
    isotropic 3D perturbation of the emitted pair pointmaps. Both are
    fractions of ``scene_scale``."""

    n_points: int = 1500
    object_shape: str = "sphere-cluster"
    scene_scale: float = 1.0
    n_views: int = 20
    trajectory: str = "orbit"
    focal_range: tuple[float, float] = (110.0, 180.0)
    image_size: tuple[int, int] = (128, 96)
    depth_noise_sigma: float = 0.0
    point_noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    occlusion_fraction: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_views < 2:
            raise ValidationError("n_views: need at least 2 views")
        if self.n_points < 1:
            raise ValidationError("n_points: need at least 1 point")
        if self.object_shape not in _OBJECT_SHAPES:
            raise ValidationError(f"object_shape: unknown shape {self.object_shape!r}")
        if self.trajectory not in _TRAJECTORIES:
            raise ValidationError(f"trajectory: unknown trajectory {self.trajectory!r}")
        if not self.scene_scale > 0:
            raise ValidationError("scene_scale: must be positive")
        lo, hi = self.focal_range
        if not (0 < lo <= hi):
            raise ValidationError("focal_range: need 0 < lo <= hi")
        w, h = self.image_size
        if w < 2 or h < 2:
            raise ValidationError("image_size: need at least 2x2 pixels")
        for name in ("depth_noise_sigma", "point_noise_sigma",
                     "outlier_fraction", "occlusion_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v and math.isfinite(v)):
                raise ValidationError(f"{name}: must be a non-negative finite real")
        if self.outlier_fraction > 1.0:
            raise ValidationError("outlier_fraction: must be <= 1")
        if self.occlusion_fraction >= 1.0:
            raise ValidationError("occlusion_fraction: 1.0 would mask every pixel")


@dataclass(frozen=True)
class SceneView:
    depth: DepthMap
    intrinsics: CameraIntrinsics
    pose: RigidTransform  # world-to-camera
    point_ids: np.ndarray | None = None  # (H, W) int32, -1 where uncovered


@dataclass(frozen=True)
class SceneBundle:
    spec: SceneSpec
    views: tuple[SceneView, ...]
    points: np.ndarray | None = None  # (n_points, 3) world frame

    @property
    def n_views(self) -> int:
        return len(self.views)

    def exact_pointmap(self, k: int) -> Pointmap:
        """Pointmap whose entries are the exact (noise-free) coordinates
        of the splatted scene points, in view k's camera frame."""
        if self.points is None or self.views[k].point_ids is None:
            raise ValidationError("bundle carries no point identities")
        view = self.views[k]
        ids = view.point_ids
        mask = (ids >= 0) & view.depth.mask
        pts = np.zeros(ids.shape + (3,))
        pts[mask] = view.pose.apply(self.points[ids[mask]])
        h, w = ids.shape
        return Pointmap(w, h, pts, np.ones((h, w)), mask, frame_id=f"view{k}")

    def point_visibility(self) -> np.ndarray:
        """Number of views in which each scene point occupies an
        unmasked pixel."""
        if self.points is None:
            raise ValidationError("bundle carries no point identities")
        counts = np.zeros(len(self.points), dtype=int)
        for view in self.views:
            ids = view.point_ids[view.depth.mask & (view.point_ids >= 0)]
            counts[np.unique(ids)] += 1
        return counts


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _sample_points(spec: SceneSpec) -> np.ndarray:
    rng = _rng(spec.rng_seed, _TAG_POINTS)
    s = spec.scene_scale
    n = spec.n_points
    if spec.object_shape == "blob":
        pts = rng.normal(scale=0.3 * s, size=(n, 3))
    elif spec.object_shape == "sphere-cluster":
        # A few spheres of varied radii, including one small and one
        # flattened (thin) cluster to make splatting non-trivial.
        n_spheres = 4
        centers = rng.uniform(-0.35 * s, 0.35 * s, size=(n_spheres, 3))
        radii = rng.uniform(0.08 * s, 0.3 * s, size=n_spheres)
        squash = np.ones((n_spheres, 3))
        squash[-1, 2] = 0.15  # thin disk-like cluster
        which = rng.integers(0, n_spheres, size=n)
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = centers[which] + dirs * radii[which, None] * squash[which]
    else:  # box-cluster
        n_boxes = 3
        centers = rng.uniform(-0.3 * s, 0.3 * s, size=(n_boxes, 3))
        half = rng.uniform(0.05 * s, 0.25 * s, size=(n_boxes, 3))
        which = rng.integers(0, n_boxes, size=n)
        face = rng.integers(0, 3, size=n)
        side = rng.choice([-1.0, 1.0], size=n)
        uv = rng.uniform(-1.0, 1.0, size=(n, 3))
        uv[np.arange(n), face] = side
        pts = centers[which] + uv * half[which]
    pts = pts - pts.mean(axis=0)
    radius = np.linalg.norm(pts, axis=1).max()
    if radius > 0:
        pts *= (0.6 * s) / radius
    return pts


def _look_at(position: np.ndarray) -> RigidTransform:
    """World-to-camera pose of a camera at `position` looking at the origin."""
    z = -position / np.linalg.norm(position)
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(np.dot(z, up))) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=0)
    return RigidTransform.from_matrix_parts(r, -r @ position)


@dataclass(frozen=True)
class _ViewParams:
    pose: RigidTransform
    occlusion: tuple[float, float, float] | None  # (ci, cj, radius)


def _view_params(spec: SceneSpec, k: int) -> _ViewParams:
    rng = _rng(spec.rng_seed, _TAG_VIEW, k)
    s = spec.scene_scale
    w, h = spec.image_size
    if spec.trajectory == "orbit":
        azimuth = 2.0 * math.pi * k / spec.n_views
        elevation = 0.3
        radius = 2.5 * s
    else:
        azimuth = float(rng.uniform(0.0, 2.0 * math.pi))
        elevation = float(np.arcsin(rng.uniform(0.15, 0.9)))
        radius = float(rng.uniform(2.2, 2.8)) * s
    position = radius * np.array([
        math.cos(elevation) * math.cos(azimuth),
        math.cos(elevation) * math.sin(azimuth),
        math.sin(elevation),
    ])
    occlusion = None
    if spec.occlusion_fraction > 0:
        disk_r = math.sqrt(spec.occlusion_fraction * w * h / math.pi)
        occlusion = (float(rng.uniform(0, w)), float(rng.uniform(0, h)), disk_r)
    return _ViewParams(pose=_look_at(position), occlusion=occlusion)


def _splat(points: np.ndarray, pose: RigidTransform, k: CameraIntrinsics,
           width: int, height: int,
           occlusion: tuple[float, float, float] | None) -> tuple[np.ndarray, np.ndarray]:
    """Z-buffer the points into (depth, ids); nearest depth wins a pixel,
    ties break on point index. Occluded pixels are cleared."""
    cam = pose.apply(points)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.f * cam[:, 0] / z + k.c_x
        v = k.f * cam[:, 1] / z + k.c_y
    i = np.full(len(points), -1, dtype=np.int64)
    j = np.full(len(points), -1, dtype=np.int64)
    front = z > 0
    i[front] = np.rint(u[front]).astype(np.int64)
    j[front] = np.rint(v[front]).astype(np.int64)
    in_view = front & (i >= 0) & (i < width) & (j >= 0) & (j < height)

    cand = np.flatnonzero(in_view)
    flat = j[cand] * width + i[cand]
    order = np.lexsort((cand, z[cand], flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win_pix = flat_sorted[first]
    win_ids = cand[order][first]

    depth = np.zeros(height * width)
    ids = np.full(height * width, -1, dtype=np.int32)
    depth[win_pix] = z[win_ids]
    ids[win_pix] = win_ids
    depth = depth.reshape(height, width)
    ids = ids.reshape(height, width)

    if occlusion is not None:
        ci, cj, disk_r = occlusion
        ii, jj = np.meshgrid(np.arange(width), np.arange(height))
        occluded = (ii - ci) ** 2 + (jj - cj) ** 2 <= disk_r ** 2
        depth[occluded] = 0.0
        ids[occluded] = -1
    return depth, ids


def generate(spec: SceneSpec) -> SceneBundle:
    """Render a full multi-view bundle; bit-reproducible per seed.

    Camera poses and occlusion disks derive from per-view RNG streams
    (seed, view-index), so views do not depend on generation order.
    Points invisible in fewer than two views are pruned and the scene
    re-splatted until every surviving point is covered; pruning can only
    uncover more points, so the loop terminates.
    """
    points = _sample_points(spec)
    w, h = spec.image_size
    focal = float(_rng(spec.rng_seed, _TAG_SCENE).uniform(*spec.focal_range))
    intrinsics = CameraIntrinsics(f=focal, c_x=w / 2.0, c_y=h / 2.0)
    params = [_view_params(spec, k) for k in range(spec.n_views)]

    keep = np.ones(len(points), dtype=bool)
    splats = None
    while True:
        kept_idx = np.flatnonzero(keep)
        if len(kept_idx) == 0:
            raise ValidationError(
                "infeasible spec: no scene point is visible in two or more views"
            )
        subset = points[kept_idx]
        splats = [_splat(subset, p.pose, intrinsics, w, h, p.occlusion)
                  for p in params]
        counts = np.zeros(len(kept_idx), dtype=int)
        for depth, ids in splats:
            vis = np.unique(ids[ids >= 0])
            counts[vis] += 1
        ok = counts >= 2
        if np.all(ok):
            break
        keep[kept_idx[~ok]] = False

    final_points = points[np.flatnonzero(keep)]
    views = []
    for k, (p, (depth, ids)) in enumerate(zip(params, splats)):
        mask = ids >= 0
        if spec.depth_noise_sigma > 0:
            noise_rng = _rng(spec.rng_seed, _TAG_NOISE, k)
            noise = noise_rng.normal(0.0, spec.depth_noise_sigma * spec.scene_scale,
                                     size=int(np.count_nonzero(mask)))
            depth = depth.copy()
            depth[mask] = np.maximum(depth[mask] + noise, 1e-9 * spec.scene_scale)
        views.append(SceneView(
            depth=DepthMap(width=w, height=h, depth=depth, mask=mask),
            intrinsics=intrinsics,
            pose=p.pose,
            point_ids=ids,
        ))
    return SceneBundle(spec=spec, views=tuple(views), points=final_points)


@dataclass(frozen=True)
class PairPointmaps:
    """Simulated network output for an ordered view pair, both maps in
    the reference view's frame. Outlier masks record which valid pixels
    were corrupted."""

    view1: Pointmap
    view2: Pointmap
    outlier_mask1: np.ndarray = field(repr=False, default=None)
    outlier_mask2: np.ndarray = field(repr=False, default=None)


def _corrupt(pm: Pointmap, fraction: float, noise_sigma: float,
             bbox: tuple[np.ndarray, np.ndarray],
             rng: np.random.Generator, guard=None) -> tuple[Pointmap, np.ndarray]:
    """Add isotropic 3D noise to valid points, then replace a fraction
    of them with uniform bbox samples.

    `guard(points, flat_idx)` marks samples that are genuine outliers for
    this map; rejected samples are redrawn (a few rounds suffice since
    the bbox is much larger than the acceptance region).
    """
    valid_idx = np.flatnonzero(pm.mask.reshape(-1))
    n_out = int(math.floor(fraction * len(valid_idx)))
    points = pm.points.copy()
    if noise_sigma > 0 and len(valid_idx):
        flat = points.reshape(-1, 3)
        flat[valid_idx] += rng.normal(0.0, noise_sigma, size=(len(valid_idx), 3))
    conf = np.ones(pm.height * pm.width)
    conf[valid_idx] = rng.uniform(0.5, 1.0, size=len(valid_idx))
    out_mask = np.zeros(pm.height * pm.width, dtype=bool)
    if n_out > 0:
        chosen = valid_idx[rng.choice(len(valid_idx), size=n_out, replace=False)]
        lo, hi = bbox
        flat = points.reshape(-1, 3)
        samples = rng.uniform(lo, hi, size=(n_out, 3))
        if guard is not None:
            for _ in range(50):
                bad = ~guard(samples, chosen)
                if not np.any(bad):
                    break
                samples[bad] = rng.uniform(lo, hi, size=(int(bad.sum()), 3))
            else:
                good = guard(samples, chosen)  # drop stragglers, keep pairs aligned
                samples = samples[good]
                chosen = chosen[good]
        flat[chosen] = samples
        conf[chosen] = rng.uniform(0.01, 0.05, size=len(chosen))
        out_mask[chosen] = True
    return (
        Pointmap(pm.width, pm.height, points, conf.reshape(pm.height, pm.width),
                 pm.mask, frame_id=pm.frame_id),
        out_mask.reshape(pm.height, pm.width),
    )


def make_pair_pointmaps(bundle: SceneBundle, i: int, j: int,
                        outlier_fraction: float | None = None,
                        point_noise_sigma: float | None = None) -> PairPointmaps:
    """Emit (X1, X2) for the ordered pair (i, j): view i's pointmap in
    its own frame and view j's pointmap re-expressed in view i's frame.

    Both maps derive from the stored (possibly noisy) depth via the
    back-projection relation, then receive isotropic 3D prediction noise
    (``point_noise_sigma``, fraction of scene scale). Corrupted pixels of
    the second map are guaranteed to reproject more than 15 px from
    their pixel (or behind the camera) under the ground-truth relative
    pose, and all corrupted pixels get confidences below every clean
    pixel. Per-map RNG streams are keyed by view id, so the pair (i, i)
    yields two identical maps.
    """
    if outlier_fraction is None:
        outlier_fraction = bundle.spec.outlier_fraction
    if point_noise_sigma is None:
        point_noise_sigma = bundle.spec.point_noise_sigma
    noise_abs = point_noise_sigma * bundle.spec.scene_scale
    view_i, view_j = bundle.views[i], bundle.views[j]
    pm1 = pointmap_from_depth(view_i.depth, view_i.intrinsics)
    pm1 = Pointmap(pm1.width, pm1.height, pm1.points, pm1.confidence, pm1.mask,
                   frame_id=f"view{i}")
    pm2_own = pointmap_from_depth(view_j.depth, view_j.intrinsics)
    pm2 = change_frame(pm2_own, view_j.pose, view_i.pose, frame_id=f"view{i}")

    all_valid = np.concatenate([pm1.points[pm1.mask], pm2.points[pm2.mask]], axis=0)
    if len(all_valid):
        center = all_valid.mean(axis=0)
        half = np.maximum((all_valid.max(axis=0) - all_valid.min(axis=0)) / 2.0,
                          1e-3 * bundle.spec.scene_scale)
        bbox = (center - 1.5 * half, center + 1.5 * half)
    else:
        bbox = (np.zeros(3), np.ones(3))

    rel = compose(view_j.pose, inverse(view_i.pose))  # view-i frame -> view-j frame
    k2 = view_j.intrinsics
    grid_u, grid_v = np.meshgrid(np.arange(pm2.width, dtype=np.float64),
                                 np.arange(pm2.height, dtype=np.float64))
    grid_u = grid_u.reshape(-1)
    grid_v = grid_v.reshape(-1)

    def far_from_pixel(samples: np.ndarray, flat_idx: np.ndarray) -> np.ndarray:
        cam = rel.apply(samples)
        z = cam[:, 2]
        ok = z <= 0  # behind the camera is always an outlier
        front = ~ok
        if np.any(front):
            u = k2.f * cam[front, 0] / z[front] + k2.c_x
            v = k2.f * cam[front, 1] / z[front] + k2.c_y
            err = np.hypot(u - grid_u[flat_idx[front]], v - grid_v[flat_idx[front]])
            ok[front] = err > _OUTLIER_MIN_REPROJ_PX
        return ok

    pm1_c, out1 = _corrupt(pm1, outlier_fraction, noise_abs, bbox,
                           _rng(bundle.spec.rng_seed, _TAG_PAIR, i, j, i))
    pm2_c, out2 = _corrupt(pm2, outlier_fraction, noise_abs, bbox,
                           _rng(bundle.spec.rng_seed, _TAG_PAIR, i, j, j),
                           guard=None if i == j else far_from_pixel)
    return PairPointmaps(view1=pm1_c, view2=pm2_c,
                         outlier_mask1=out1, outlier_mask2=out2)


def with_seed(spec: SceneSpec, seed: int) -> SceneSpec:
    return replace(spec, rng_seed=seed)
