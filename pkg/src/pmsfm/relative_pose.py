"""Intrinsics and relative pose recovery from an aligned pointmap pair.

Three steps: estimate the focal length from the reference view's own
pointmap, place the principal point at the image center, then solve PnP
with RANSAC between the second view's pixel grid and its pointmap
expressed in the reference frame.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import (
    ConvergenceWarning,
    InsufficientDataError,
    NoPoseFoundError,
    ValidationError,
)
from .geometry import (
    CameraIntrinsics,
    Pointmap,
    RigidTransform,
    axis_angle_matrix,
    pixel_grid,
)

_WEISZFELD_ITERS = 50
# IRLS with 1/r weights crawls sublinearly once a residual hits zero;
# 1e-11 relative is still five orders tighter than the accuracy contract.
_WEISZFELD_EPS = 1e-11
_REFINE_ROUNDS = 3


@dataclass(frozen=True)
class RansacConfig:
    """Settings for the PnP-RANSAC solve; all values are design choices,
    the method itself only prescribes robust minimal-sample estimation."""

    max_iterations: int = 1024
    inlier_threshold_px: float = 5.0
    confidence: float = 0.999
    min_sample: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not (0.0 < self.confidence < 1.0):
            raise ValidationError("confidence must lie strictly between 0 and 1")
        if not self.inlier_threshold_px > 0:
            raise ValidationError("inlier_threshold_px must be positive")
        if self.min_sample < 4:
            raise ValidationError("min_sample must be >= 4 (3 for P3P + 1 to disambiguate)")


@dataclass(frozen=True)
class RelativePoseResult:
    """Pose of view 2 with view 1's camera frame acting as world."""

    transform: RigidTransform
    inlier_mask: np.ndarray
    inlier_count: int
    focal: float
    mean_inlier_reproj_err: float


def make_intrinsics(width: int, height: int, f: float) -> CameraIntrinsics:
    """Intrinsics with the principal point at the exact image center."""
    if width <= 0 or height <= 0:
        raise ValidationError("image dimensions must be positive")
    return CameraIntrinsics(f=float(f), c_x=width / 2.0, c_y=height / 2.0)


def estimate_focal(pm: Pointmap, max_iters: int = _WEISZFELD_ITERS) -> float:
    """Recover the focal length from a pointmap in its own camera frame.

    Minimizes the robust objective sum_i ||b_i - f * d_i|| with
    b_i = pixel - center and d_i = (x/z, y/z), by iteratively reweighted
    least squares (Weiszfeld) from a median-of-ratios start. Pixels on
    the principal ray carry no focal information and are dropped.
    """
    c_x, c_y = pm.width / 2.0, pm.height / 2.0
    pts = pm.points.reshape(-1, 3)
    z = pts[:, 2]
    on_axis = (pts[:, 0] == 0.0) & (pts[:, 1] == 0.0)
    usable = pm.mask.reshape(-1) & (z > 0) & ~on_axis
    if int(np.count_nonzero(usable)) < 8:
        raise InsufficientDataError(
            f"focal estimation needs >= 8 usable pixels, got {int(np.count_nonzero(usable))}"
        )

    grid = pixel_grid(pm.width, pm.height).reshape(-1, 2)[usable]
    b = grid - np.array([c_x, c_y])
    d = pts[usable, :2] / z[usable, None]

    ratios = np.linalg.norm(b, axis=1) / np.linalg.norm(d, axis=1)
    f = float(np.median(ratios))
    dot_db = np.einsum("ij,ij->i", d, b)
    dot_dd = np.einsum("ij,ij->i", d, d)

    converged = False
    for _ in range(max_iters):
        residual = np.linalg.norm(b - f * d, axis=1)
        w = 1.0 / np.maximum(residual, 1e-12)
        f_new = float((w * dot_db).sum() / (w * dot_dd).sum())
        if abs(f_new - f) <= _WEISZFELD_EPS * max(1.0, abs(f)):
            f = f_new
            converged = True
            break
        f = f_new
    if not converged:
        warnings.warn("focal IRLS hit its iteration budget; returning best iterate",
                      ConvergenceWarning)
    return f


def _kabsch(world: np.ndarray, cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid fit cam = R @ world + t for matched point sets (N, 3)."""
    w_mean = world.mean(axis=0)
    c_mean = cam.mean(axis=0)
    m = (cam - c_mean).T @ (world - w_mean)
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    if d < 0:
        u = u.copy()
        u[:, -1] *= -1.0
    r = u @ vt
    return r, c_mean - r @ w_mean


def p3p_solve(world_pts: np.ndarray, bearings: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Minimal absolute-pose solutions from 3 points and 3 unit bearings.

    Classical three-point resection: with camera-to-point distances
    s1, s2 = u*s1, s3 = v*s1, the law of cosines in the three point
    triangles gives a linear expression for u in v and a quartic in v.
    The quartic is built by polynomial elimination rather than hardcoded
    coefficients. Returns up to 4 (R, t) candidates with cam = R @ world + t.
    """
    p1, p2, p3 = world_pts
    a2 = float(np.dot(p2 - p3, p2 - p3))
    b2 = float(np.dot(p1 - p3, p1 - p3))
    c2 = float(np.dot(p1 - p2, p1 - p2))
    if min(a2, b2, c2) <= 0.0:
        return []
    # Collinear world points leave a one-parameter pose family; reject.
    if np.linalg.norm(np.cross(p2 - p1, p3 - p1)) ** 2 < 1e-18 * max(a2, b2, c2) ** 2:
        return []

    f1, f2, f3 = bearings
    cos_a = float(np.dot(f2, f3))
    cos_b = float(np.dot(f1, f3))
    cos_g = float(np.dot(f1, f2))

    # Law-of-cosines system, eliminating s1 and u:
    #   u^2 + v^2 - 2uv cos_a = (a2/b2) * q(v)
    #   1 + u^2 - 2u cos_g    = (c2/b2) * q(v)      with q(v) = 1 + v^2 - 2v cos_b
    # Subtracting gives u = u_num(v) / den(v); substituting back into the
    # second equation and clearing den^2 yields a quartic in v.
    big_a = (a2 - c2) / b2
    q = np.array([1.0, -2.0 * cos_b, 1.0])                      # q(v), low->high
    u_num = np.array([big_a + 1.0, -2.0 * big_a * cos_b, big_a - 1.0])
    den = np.array([2.0 * cos_g, -2.0 * cos_a])

    den2 = npoly.polymul(den, den)
    quartic = npoly.polyadd(den2, npoly.polymul(u_num, u_num))
    quartic = npoly.polysub(quartic, 2.0 * cos_g * npoly.polymul(u_num, den))
    quartic = npoly.polysub(quartic, (c2 / b2) * npoly.polymul(q, den2))
    if not np.all(np.isfinite(quartic)) or np.max(np.abs(quartic)) == 0.0:
        return []
    roots = npoly.polyroots(quartic)

    solutions = []
    for v in roots:
        if abs(v.imag) > 1e-8 * max(1.0, abs(v.real)):
            continue
        v = float(v.real)
        if v <= 0:
            continue
        den_v = float(npoly.polyval(v, den))
        if abs(den_v) < 1e-12:
            continue
        u = float(npoly.polyval(v, u_num)) / den_v
        if u <= 0:
            continue
        q_v = 1.0 + v * v - 2.0 * v * cos_b
        if q_v <= 0:
            continue
        s1 = math.sqrt(b2 / q_v)
        cam_pts = np.array([s1 * f1, u * s1 * f2, v * s1 * f3])
        r, t = _kabsch(world_pts, cam_pts)
        solutions.append((r, t))
    return solutions


def _reproj_errors(points: np.ndarray, pixels: np.ndarray, k: CameraIntrinsics,
                   r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Per-point reprojection error in pixels; +inf behind the camera."""
    cam = points @ r.T + t
    z = cam[:, 2]
    errs = np.full(len(points), np.inf)
    front = z > 0
    if np.any(front):
        u = k.f * cam[front, 0] / z[front] + k.c_x
        v = k.f * cam[front, 1] / z[front] + k.c_y
        errs[front] = np.hypot(u - pixels[front, 0], v - pixels[front, 1])
    return errs


def refine_pose(points: np.ndarray, pixels: np.ndarray, k: CameraIntrinsics,
                r0: np.ndarray, t0: np.ndarray,
                max_iters: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Damped Gauss-Newton refinement of reprojection error.

    Left-multiplicative axis-angle update on the rotation; the damping
    factor grows until a step decreases the squared error.
    """
    r, t = r0.copy(), t0.copy()
    lam = 1e-6

    def residuals(rr, tt):
        cam = points @ rr.T + tt
        z = np.maximum(cam[:, 2], 1e-12)
        u = k.f * cam[:, 0] / z + k.c_x
        v = k.f * cam[:, 1] / z + k.c_y
        return np.stack([u - pixels[:, 0], v - pixels[:, 1]], axis=1), cam

    res, cam = residuals(r, t)
    err = float((res ** 2).sum())
    for _ in range(max_iters):
        z = np.maximum(cam[:, 2], 1e-12)
        inv_z = 1.0 / z
        # d(pixel)/d(cam point), rows (du, dv)
        jp = np.zeros((len(points), 2, 3))
        jp[:, 0, 0] = k.f * inv_z
        jp[:, 0, 2] = -k.f * cam[:, 0] * inv_z ** 2
        jp[:, 1, 1] = k.f * inv_z
        jp[:, 1, 2] = -k.f * cam[:, 1] * inv_z ** 2
        # cam = exp(w) (R p) + t: d(cam)/dw = -[R p]_x, d(cam)/dt = I
        w_pts = points @ r.T
        jw = np.zeros((len(points), 3, 3))
        jw[:, 0, 1] = w_pts[:, 2]
        jw[:, 0, 2] = -w_pts[:, 1]
        jw[:, 1, 0] = -w_pts[:, 2]
        jw[:, 1, 2] = w_pts[:, 0]
        jw[:, 2, 0] = w_pts[:, 1]
        jw[:, 2, 1] = -w_pts[:, 0]
        j = np.concatenate([jp @ jw, jp], axis=2).reshape(-1, 6)
        g = j.T @ res.reshape(-1)
        h = j.T @ j

        stepped = False
        for _ in range(8):
            try:
                delta = np.linalg.solve(h + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            r_new = axis_angle_matrix(delta[:3], float(np.linalg.norm(delta[:3]))) @ r
            t_new = t + delta[3:]
            res_new, cam_new = residuals(r_new, t_new)
            err_new = float((res_new ** 2).sum())
            if err_new <= err:
                improved = err - err_new
                r, t, res, cam, err = r_new, t_new, res_new, cam_new, err_new
                lam = max(lam * 0.3, 1e-12)
                stepped = True
                if improved <= 1e-16 * max(err, 1.0) or np.linalg.norm(delta) < 1e-14:
                    return r, t
                break
            lam *= 10.0
        if not stepped:
            break
    return r, t


def pnp_ransac(pm2_in_1: Pointmap, k: CameraIntrinsics,
               cfg: RansacConfig = RansacConfig()) -> RelativePoseResult:
    """Robust world-to-camera pose of view 2 from its pointmap in view 1's frame.

    2D correspondences are view 2's own pixel grid at the pointmap's
    valid pixels. Minimal P3P hypotheses (with a 4th sample point for
    disambiguation) are scored by inlier count with mean inlier
    reprojection error as the tie-break; the winner is refined by damped
    Gauss-Newton and the inlier set is re-extracted under the refined
    pose. Deterministic for a fixed ``cfg.rng_seed``.
    """
    valid = pm2_in_1.mask.reshape(-1)
    n_valid = int(np.count_nonzero(valid))
    if n_valid < cfg.min_sample:
        raise InsufficientDataError(
            f"PnP needs >= {cfg.min_sample} valid pixels, got {n_valid}"
        )
    points = pm2_in_1.points.reshape(-1, 3)[valid]
    pixels = pixel_grid(pm2_in_1.width, pm2_in_1.height).reshape(-1, 2)[valid]

    k_inv = k.inverse_matrix()
    rng = np.random.default_rng(cfg.rng_seed)
    thr = cfg.inlier_threshold_px

    best_count = 0
    best_mean = np.inf
    best_pose = None
    best_inl = None
    needed = cfg.max_iterations

    it = 0
    while it < needed:
        it += 1
        sample = rng.choice(n_valid, size=cfg.min_sample, replace=False)
        sp = points[sample]
        spx = pixels[sample]
        bearings = np.concatenate([spx[:3], np.ones((3, 1))], axis=1) @ k_inv.T
        norms = np.linalg.norm(bearings, axis=1)
        if np.any(norms == 0):
            continue
        bearings /= norms[:, None]

        cand_pose = None
        cand_err = np.inf
        for r, t in p3p_solve(sp[:3], bearings):
            cam = sp @ r.T + t
            behind = int(np.count_nonzero(cam[:, 2] <= 0))
            if behind * 2 > len(sp):
                continue
            errs = _reproj_errors(sp, spx, k, r, t)
            total = float(errs.sum())
            if total < cand_err:
                cand_err = total
                cand_pose = (r, t)
        if cand_pose is None:
            continue

        errs = _reproj_errors(points, pixels, k, *cand_pose)
        inl = errs < thr
        count = int(np.count_nonzero(inl))
        if count == 0:
            continue
        mean_err = float(errs[inl].mean())
        if count > best_count or (count == best_count and mean_err < best_mean):
            best_count, best_mean = count, mean_err
            best_pose, best_inl = cand_pose, inl
            # Adaptive stop: enough iterations to hit an all-inlier
            # minimal sample with the configured confidence.
            w = min(count / n_valid, 1.0 - 1e-12)
            denom = math.log1p(-(w ** cfg.min_sample))
            if denom < 0:
                needed = min(cfg.max_iterations,
                             max(it, int(math.ceil(math.log1p(-cfg.confidence) / denom))))

    if best_pose is None or best_count < cfg.min_sample:
        raise NoPoseFoundError(
            f"no consensus set of >= {cfg.min_sample} inliers after {it} iterations"
        )

    # Local optimization: refine on the inlier set, re-extract inliers,
    # repeat while it keeps paying; never return fewer inliers than the
    # hypothesis that was selected.
    pose, inl, count, mean_err = best_pose, best_inl, best_count, best_mean
    for _ in range(_REFINE_ROUNDS):
        r_ref, t_ref = refine_pose(points[inl], pixels[inl], k, pose[0], pose[1])
        errs = _reproj_errors(points, pixels, k, r_ref, t_ref)
        inl_ref = errs < thr
        count_ref = int(np.count_nonzero(inl_ref))
        if count_ref == 0:
            break
        mean_ref = float(errs[inl_ref].mean())
        if count_ref > count or (count_ref == count and mean_ref < mean_err):
            pose, inl, count, mean_err = (r_ref, t_ref), inl_ref, count_ref, mean_ref
        else:
            break

    full_mask = np.zeros(pm2_in_1.height * pm2_in_1.width, dtype=bool)
    full_mask[np.flatnonzero(valid)[inl]] = True
    return RelativePoseResult(
        transform=RigidTransform.from_matrix_parts(pose[0], pose[1]),
        inlier_mask=full_mask.reshape(pm2_in_1.height, pm2_in_1.width),
        inlier_count=count,
        focal=k.f,
        mean_inlier_reproj_err=mean_err,
    )
