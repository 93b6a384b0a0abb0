"""Sequence connectivity graph and rotation/translation averaging.

Frame conventions: an edge (i, j) carries the rigid transform mapping
frame-j camera coordinates to frame-i camera coordinates. The averaging
variables consistent with that are camera-to-world rotations ``A_k`` and
camera centers ``u_k`` in the frame-0 gauge: a noiseless edge satisfies
``A_j = A_i @ R_ij`` and ``A_i @ t_ij = u_j - u_i``. A PnP result for
the ordered pair (i, j) is the pose of camera j with frame i acting as
world, so the edge measurement is its SE(3) inverse.
``assemble_global`` converts the averaged variables back to
world-to-camera poses.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import expm

from .errors import (
    ConvergenceWarning,
    DisconnectedGraphError,
    InsufficientDataError,
    ValidationError,
)
from .geometry import RigidTransform, inverse, so3_project
from .relative_pose import RelativePoseResult

_SWEEP_TOL = 1e-10
_MAX_SWEEPS = 500
_STAIRCASE_ACCEPT_TOL = 1e-9


@dataclass(frozen=True)
class Edge:
    """Directed measurement: frame-j coordinates -> frame-i coordinates."""

    i: int
    j: int
    rotation: np.ndarray
    translation: np.ndarray
    weight: float
    quality: float
    rescued: bool = False

    def __post_init__(self):
        if self.i == self.j:
            raise ValidationError(f"self-loop edge at frame {self.i}")
        if not self.weight > 0:
            raise ValidationError("edge weight must be positive")
        rt = RigidTransform(self.rotation, self.translation)  # validates SO(3)
        object.__setattr__(self, "rotation", rt.rotation)
        object.__setattr__(self, "translation", rt.translation)


@dataclass(frozen=True)
class PoseGraph:
    n_frames: int
    edges: tuple[Edge, ...]

    def __post_init__(self):
        seen = set()
        for e in self.edges:
            if not (0 <= e.i < self.n_frames and 0 <= e.j < self.n_frames):
                raise ValidationError(f"edge ({e.i},{e.j}) outside 0..{self.n_frames - 1}")
            if (e.i, e.j) in seen:
                raise ValidationError(f"duplicate edge ({e.i},{e.j})")
            seen.add((e.i, e.j))
        object.__setattr__(self, "edges", tuple(self.edges))

    def covered_vertices(self) -> np.ndarray:
        covered = np.zeros(self.n_frames, dtype=bool)
        for e in self.edges:
            covered[e.i] = covered[e.j] = True
        return covered

    def components(self) -> list[list[int]]:
        """Connected components of the undirected support graph,
        restricted to vertices incident to at least one edge."""
        adj: dict[int, set[int]] = {}
        for e in self.edges:
            adj.setdefault(e.i, set()).add(e.j)
            adj.setdefault(e.j, set()).add(e.i)
        comps = []
        visited = set()
        for v in sorted(adj):
            if v in visited:
                continue
            stack, comp = [v], []
            visited.add(v)
            while stack:
                u = stack.pop()
                comp.append(u)
                for w in adj[u]:
                    if w not in visited:
                        visited.add(w)
                        stack.append(w)
            comps.append(sorted(comp))
        return comps


@dataclass(frozen=True)
class GlobalPoses:
    """Per-frame world-to-camera poses plus recovery flags.

    Unrecovered frames carry identity placeholders and are excluded from
    every metric except the detection rate.
    """

    rotations: np.ndarray
    translations: np.ndarray
    recovered: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotations, dtype=np.float64)
        t = np.asarray(self.translations, dtype=np.float64)
        rec = np.asarray(self.recovered, dtype=bool)
        n = len(rec)
        if r.shape != (n, 3, 3) or t.shape != (n, 3):
            raise ValidationError(
                f"expected ({n},3,3) rotations and ({n},3) translations, "
                f"got {r.shape} and {t.shape}"
            )
        for k in range(n):
            RigidTransform(r[k], t[k])  # validates SO(3)
        object.__setattr__(self, "rotations", r)
        object.__setattr__(self, "translations", t)
        object.__setattr__(self, "recovered", rec)

    @property
    def n_frames(self) -> int:
        return len(self.recovered)

    def centers(self) -> np.ndarray:
        """Camera centers c = -R^T t, shape (N, 3)."""
        return -np.einsum("kij,ki->kj", self.rotations, self.translations)

    def pose(self, k: int) -> RigidTransform:
        return RigidTransform(self.rotations[k], self.translations[k])


@dataclass(frozen=True)
class EdgeFilterConfig:
    quality_threshold: float = 0.25
    weight_mode: str = "inlier"  # or "constant"
    max_weight: float = 1.0
    rescue_temporal: bool = True
    pair_validity: dict | None = field(default=None)

    def __post_init__(self):
        if self.weight_mode not in ("inlier", "constant"):
            raise ValidationError(f"unknown weight mode {self.weight_mode!r}")
        if not self.max_weight > 0:
            raise ValidationError("max_weight must be positive")


def build_graph(pair_results: list[tuple[int, int, RelativePoseResult, int]],
                n_frames: int,
                filter_cfg: EdgeFilterConfig = EdgeFilterConfig()) -> PoseGraph:
    """Filter pairwise measurements into a connected pose graph.

    ``pair_results`` entries are (i, j, result, n_valid) with ``result``
    the PnP output for reference view i and ``n_valid`` the pair's valid
    pixel count. Edges keep pairs whose inlier fraction reaches the
    quality threshold; temporal-neighbor edges (i, i+1) are force-included
    (flagged rescued) so a weak but measured neighbor never disconnects
    the sequence. Vertices with no measurement at all are tolerated and
    left for assemble_global to flag; two or more measured components
    raise DisconnectedGraphError.
    """
    validity = filter_cfg.pair_validity or {}
    kept: dict[tuple[int, int], tuple[RelativePoseResult, float, bool]] = {}
    candidates: dict[tuple[int, int], tuple[RelativePoseResult, float]] = {}
    for i, j, res, n_valid in pair_results:
        if i == j:
            raise ValidationError(f"pair ({i},{j}) is a self-pair")
        quality = res.inlier_count / max(n_valid, 1)
        candidates[(i, j)] = (res, quality)
        valid_pair = validity.get((i, j), validity.get((j, i), True))
        if valid_pair and quality >= filter_cfg.quality_threshold:
            kept[(i, j)] = (res, quality, False)

    if filter_cfg.rescue_temporal:
        for (i, j), (res, quality) in candidates.items():
            if abs(i - j) == 1 and (i, j) not in kept and (j, i) not in kept:
                kept[(i, j)] = (res, quality, True)

    if not kept:
        return PoseGraph(n_frames=n_frames, edges=())

    max_inliers = max(res.inlier_count for res, _, _ in kept.values())
    edges = []
    for (i, j), (res, quality, rescued) in sorted(kept.items()):
        rel = inverse(res.transform)  # frame-j coords -> frame-i coords
        if filter_cfg.weight_mode == "inlier":
            weight = filter_cfg.max_weight * res.inlier_count / max(max_inliers, 1)
            weight = max(weight, 1e-12)
        else:
            weight = filter_cfg.max_weight
        edges.append(Edge(i=i, j=j, rotation=rel.rotation, translation=rel.translation,
                          weight=weight, quality=quality, rescued=rescued))

    graph = PoseGraph(n_frames=n_frames, edges=tuple(edges))
    comps = graph.components()
    if len(comps) > 1:
        raise DisconnectedGraphError(
            f"pose graph splits into {len(comps)} components: {comps}",
            components=comps,
        )
    return graph


def rotation_objective(graph: PoseGraph, rotations: np.ndarray) -> float:
    """Weighted chordal objective sum_k w * ||R_j - R_i @ R_ij||_F^2."""
    total = 0.0
    for e in graph.edges:
        diff = rotations[e.j] - rotations[e.i] @ e.rotation
        total += e.weight * float((diff * diff).sum())
    return total


def _check_connected(graph: PoseGraph) -> np.ndarray:
    if not graph.edges:
        raise InsufficientDataError("pose graph has no edges")
    comps = graph.components()
    if len(comps) > 1:
        raise DisconnectedGraphError(
            f"pose graph splits into {len(comps)} components: {comps}",
            components=comps,
        )
    return graph.covered_vertices()


def _chordal_init(graph: PoseGraph, covered: np.ndarray, anchor: int) -> np.ndarray:
    """Solve the unconstrained block-linear relaxation with R_anchor = I
    and project each 3x3 block to SO(3).

    Rows of the rotation matrices decouple: three sparse least-squares
    systems share one matrix and differ only in the anchor's right-hand
    side, so the normal equations are factorized once.
    """
    vertices = [v for v in np.flatnonzero(covered) if v != anchor]
    col = {v: 3 * k for k, v in enumerate(vertices)}
    m = 3 * len(vertices)

    rows, cols, vals = [], [], []
    rhs = np.zeros((0, 3))
    rhs_rows = []
    r = 0
    for e in graph.edges:
        w = np.sqrt(e.weight)
        rt = e.rotation.T
        block_rhs = np.zeros((3, 3))
        if e.j != anchor:
            for a in range(3):
                rows.append(r + a)
                cols.append(col[e.j] + a)
                vals.append(w)
        else:
            block_rhs -= w * np.eye(3)
        if e.i != anchor:
            for a in range(3):
                for b in range(3):
                    rows.append(r + a)
                    cols.append(col[e.i] + b)
                    vals.append(-w * rt[a, b])
        else:
            block_rhs += w * rt
        rhs_rows.append(block_rhs)
        r += 3
    rhs = np.concatenate(rhs_rows, axis=0)

    a = sp.coo_matrix((vals, (rows, cols)), shape=(r, m)).tocsr()
    ata = (a.T @ a).tocsc()
    atb = a.T @ rhs
    try:
        solution = spla.spsolve(ata, atb)
    except RuntimeError:
        solution = np.linalg.lstsq(ata.toarray(), atb, rcond=None)[0]
    solution = np.asarray(solution).reshape(m, 3)

    n = graph.n_frames
    rotations = np.tile(np.eye(3), (n, 1, 1))
    for v in vertices:
        block = solution[col[v]:col[v] + 3, :]
        rotations[v] = so3_project(block.T)
    return rotations


def _block_descent(graph: PoseGraph, rotations: np.ndarray, covered: np.ndarray,
                   embed_dim: int = 3, max_sweeps: int = _MAX_SWEEPS,
                   rel_tol: float = _SWEEP_TOL) -> tuple[np.ndarray, bool]:
    """Block-coordinate descent on the chordal objective in SO(p).

    Each update sets one block to the orthogonal-Procrustes optimum of
    its incident terms, so the objective is non-increasing; a violation
    beyond round-off is a bug and raises AssertionError.
    """
    p = embed_dim
    if p == 3:
        meas = {idx: e.rotation for idx, e in enumerate(graph.edges)}
    else:
        meas = {}
        for idx, e in enumerate(graph.edges):
            m = np.eye(p)
            m[:3, :3] = e.rotation
            meas[idx] = m

    incident: dict[int, list[tuple[int, bool]]] = {}
    for idx, e in enumerate(graph.edges):
        incident.setdefault(e.i, []).append((idx, True))
        incident.setdefault(e.j, []).append((idx, False))

    def objective(rot):
        total = 0.0
        for idx, e in enumerate(graph.edges):
            diff = rot[e.j] - rot[e.i] @ meas[idx]
            total += e.weight * float((diff * diff).sum())
        return total

    rot = rotations.copy()
    obj = objective(rot)
    # All tolerances scale with the problem so weight rescaling cannot
    # change the sweep count (the argmin is scale-invariant).
    weight_scale = sum(e.weight for e in graph.edges)
    converged = False
    for _ in range(max_sweeps):
        for v in np.flatnonzero(covered):
            m = np.zeros((p, p))
            for idx, outgoing in incident.get(v, ()):
                e = graph.edges[idx]
                if outgoing:
                    m += e.weight * rot[e.j] @ meas[idx].T
                else:
                    m += e.weight * rot[e.i] @ meas[idx]
            rot[v] = so3_project(m)
        new_obj = objective(rot)
        if new_obj > obj + 1e-9 * (obj + weight_scale):
            raise AssertionError(
                f"block-descent objective increased: {obj} -> {new_obj}"
            )
        if obj - new_obj <= rel_tol * obj:
            obj = new_obj
            converged = True
            break
        obj = new_obj
    return rot, converged


def _gauge_fix(rotations: np.ndarray, covered: np.ndarray, anchor: int) -> np.ndarray:
    q = rotations[anchor].T
    out = rotations.copy()
    for v in np.flatnonzero(covered):
        out[v] = so3_project(q @ rotations[v])
    out[anchor] = np.eye(3)  # exact, not within round-off
    return out


def _skew(p: int, rng: np.random.Generator) -> np.ndarray:
    m = rng.standard_normal((p, p))
    return (m - m.T) / 2.0


def rotation_averaging(graph: PoseGraph, staircase: bool = False,
                       max_sweeps: int = _MAX_SWEEPS) -> np.ndarray:
    """Absolute rotations minimizing the weighted chordal objective.

    Chordal initialization followed by block-coordinate descent; with
    ``staircase`` the descent is re-run lifted to SO(4) and SO(5)
    (a seeded perturbation lets the lift leave the SO(3) stationary
    point) and the rounded result is kept only when it lowers the SO(3)
    objective. The gauge is fixed so the lowest measured frame carries
    the identity; frames with no edges also carry the identity.
    """
    covered = _check_connected(graph)
    anchor = int(np.flatnonzero(covered)[0])

    rotations = _chordal_init(graph, covered, anchor)
    rotations, converged = _block_descent(graph, rotations, covered,
                                          max_sweeps=max_sweeps)
    if not converged:
        warnings.warn("rotation averaging hit its sweep budget; "
                      "returning best iterate", ConvergenceWarning)
    rotations = _gauge_fix(rotations, covered, anchor)
    best_obj = rotation_objective(graph, rotations)

    if staircase:
        rng = np.random.default_rng(0)
        for p in (4, 5):
            lifted = np.tile(np.eye(p), (graph.n_frames, 1, 1))
            for v in np.flatnonzero(covered):
                lifted[v][:3, :3] = rotations[v]
                lifted[v] = lifted[v] @ expm(1e-2 * _skew(p, rng))
            lifted, _ = _block_descent(graph, lifted, covered, embed_dim=p,
                                       max_sweeps=max_sweeps)
            rounded = np.tile(np.eye(3), (graph.n_frames, 1, 1))
            for v in np.flatnonzero(covered):
                rounded[v] = so3_project(lifted[v][:3, :3])
            rounded, _ = _block_descent(graph, rounded, covered,
                                        max_sweeps=max_sweeps)
            rounded = _gauge_fix(rounded, covered, anchor)
            obj = rotation_objective(graph, rounded)
            if obj < best_obj * (1.0 - _STAIRCASE_ACCEPT_TOL):
                rotations, best_obj = rounded, obj
            else:
                break
    return rotations


def translation_averaging(graph: PoseGraph, rotations: np.ndarray) -> np.ndarray:
    """Positions minimizing sum_k w * ||R_i @ t_ij - (u_j - u_i)||^2.

    One sparse linear least-squares system over the non-anchor measured
    frames, with the anchor eliminated (hard u_anchor = 0). Solved via
    the normal equations; a singular system falls back to a least-norm
    solve with a warning.
    """
    covered = _check_connected(graph)
    anchor = int(np.flatnonzero(covered)[0])
    vertices = [v for v in np.flatnonzero(covered) if v != anchor]
    col = {v: 3 * k for k, v in enumerate(vertices)}
    m = 3 * len(vertices)

    n_rows = 3 * len(graph.edges)
    rows, cols, vals = [], [], []
    b = np.zeros(n_rows)
    r = 0
    for e in graph.edges:
        w = np.sqrt(e.weight)
        b[r:r + 3] = w * (rotations[e.i] @ e.translation)
        if e.j != anchor:
            for a in range(3):
                rows.append(r + a)
                cols.append(col[e.j] + a)
                vals.append(w)
        if e.i != anchor:
            for a in range(3):
                rows.append(r + a)
                cols.append(col[e.i] + a)
                vals.append(-w)
        r += 3

    a = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, m)).tocsr()
    ata = (a.T @ a).tocsc()
    atb = a.T @ b
    least_norm = False
    try:
        x = spla.spsolve(ata, atb)
        if not np.all(np.isfinite(x)):
            raise RuntimeError("singular normal equations")
    except RuntimeError:
        x = np.linalg.lstsq(ata.toarray(), atb, rcond=None)[0]
        least_norm = True
        warnings.warn("translation system is rank-deficient beyond the gauge; "
                      "using the least-norm solution", ConvergenceWarning)
    x = np.asarray(x).reshape(-1)

    if not least_norm:
        rel_res = np.linalg.norm(ata @ x - atb) / max(np.linalg.norm(atb), 1e-300)
        if rel_res > 1e-10:
            warnings.warn(f"translation normal equations residual {rel_res:.2e} "
                          "exceeds 1e-10", ConvergenceWarning)

    translations = np.zeros((graph.n_frames, 3))
    for v in vertices:
        translations[v] = x[col[v]:col[v] + 3]
    return translations


def assemble_global(rotations: np.ndarray, translations: np.ndarray,
                    recovered: np.ndarray) -> GlobalPoses:
    """Convert averaged variables to world-to-camera GlobalPoses.

    Inputs are the averaging-frame quantities (camera-to-world rotations
    and camera centers); unrecovered frames get identity placeholders.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    translations = np.asarray(translations, dtype=np.float64)
    recovered = np.asarray(recovered, dtype=bool)
    n = len(recovered)
    r_out = np.tile(np.eye(3), (n, 1, 1))
    t_out = np.zeros((n, 3))
    for k in range(n):
        if recovered[k]:
            r_out[k] = rotations[k].T
            t_out[k] = -rotations[k].T @ translations[k]
    return GlobalPoses(rotations=r_out, translations=t_out, recovered=recovered)
