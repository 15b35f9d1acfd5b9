"""Photometric bundle adjustment: residuals, normal equations, Schur-LM.

Each observation compares the frozen reference patch of a point with the
target image sampled on the same (axis-aligned) footprint around the
point's current projection::

    r = ref_patch - I_k(project(T_k, X) + offsets)

The Jacobians stored on an observation are derivatives of ``r`` itself,
i.e. ``-grad I . d(project)/d(param)``.  Normal equations are written
``H @ delta = b`` with ``H = sum w J^T J`` and ``b = -sum w J^T r``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .geometry import MIN_DEPTH, Intrinsics, Pose, project_points, projection_jacobians, retract
from .image import sample_patches

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    patch_radius: int = 1
    max_iterations: int = 100
    function_tolerance: float = 1e-6
    gradient_tolerance: float = 1e-6
    parameter_tolerance: float = 1e-6
    huber_delta: float = 0.1
    initial_damping: float = 1e-4
    damping_increase: float = 10.0
    damping_decrease: float = 0.1
    min_damping: float = 1e-12
    max_damping: float = 1e8
    min_depth: float = MIN_DEPTH

    def __post_init__(self):
        if self.patch_radius not in (1, 2):
            raise ValueError("patch_radius must be 1 or 2")
        if min(self.function_tolerance, self.gradient_tolerance, self.parameter_tolerance) <= 0:
            raise ValueError("tolerances must be positive")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")


# --- residuals ---------------------------------------------------------------

@dataclass
class Observation:
    point: int
    frame: int
    residual: np.ndarray
    J_pose: np.ndarray
    J_point: np.ndarray
    weight: float = 1.0


@dataclass
class ObservationSet:
    """Stacked observations; row ``m`` pairs ``point_index[m]`` with ``frame_index[m]``."""

    point_index: np.ndarray
    frame_index: np.ndarray
    residuals: np.ndarray
    J_pose: np.ndarray
    J_point: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.point_index)

    def __getitem__(self, m: int) -> Observation:
        return Observation(int(self.point_index[m]), int(self.frame_index[m]), self.residuals[m],
                           self.J_pose[m], self.J_point[m], float(self.weights[m]))

    @property
    def norms(self) -> np.ndarray:
        return np.sqrt(np.einsum("md,md->m", self.residuals, self.residuals))

    @classmethod
    def from_list(cls, observations) -> ObservationSet:
        obs = list(observations)
        if not obs:
            return cls.empty(1)
        return cls(
            np.array([o.point for o in obs], dtype=np.intp),
            np.array([o.frame for o in obs], dtype=np.intp),
            np.stack([o.residual for o in obs]),
            np.stack([o.J_pose for o in obs]),
            np.stack([o.J_point for o in obs]),
            np.array([o.weight for o in obs], dtype=np.float64),
        )

    @classmethod
    def empty(cls, radius: int) -> ObservationSet:
        D = (2 * radius + 1) ** 2
        return cls(np.zeros(0, np.intp), np.zeros(0, np.intp), np.zeros((0, D)),
                   np.zeros((0, D, 6)), np.zeros((0, D, 3)), np.zeros(0))


def robust_weight(residual_norm, delta: float):
    """Huber IRLS weight: 1 inside the elbow, ``delta / |r|`` outside."""
    s = np.asarray(residual_norm, dtype=np.float64)
    with np.errstate(divide="ignore"):
        w = np.where(s <= delta, 1.0, delta / np.where(s > 0, s, 1.0))
    return float(w) if w.ndim == 0 else w


def huber(residual_norm, delta: float):
    s = np.asarray(residual_norm, dtype=np.float64)
    c = np.where(s <= delta, 0.5 * s * s, delta * (s - 0.5 * delta))
    return float(c) if c.ndim == 0 else c


def evaluate_observations(positions, ref_patches, point_index, frame_index, poses, rasters,
                          K: Intrinsics, radius: int, delta: float | None = None,
                          min_depth: float = MIN_DEPTH):
    """Residuals and Jacobians for (point, frame) pairs.

    ``rasters[f]`` is ``(image, gx, gy)`` for frame index ``f``.  Pairs that
    project behind the camera or whose patch footprint leaves the image
    are dropped.  Returns ``(observations, kept)`` where ``kept`` indexes
    the input pairs that survived; the input order is preserved.
    """
    positions = np.asarray(positions, dtype=np.float64)
    point_index = np.asarray(point_index, dtype=np.intp)
    frame_index = np.asarray(frame_index, dtype=np.intp)
    M = len(point_index)
    D = (2 * radius + 1) ** 2
    res = np.zeros((M, D))
    Jc = np.zeros((M, D, 6))
    Jx = np.zeros((M, D, 3))
    valid = np.zeros(M, dtype=bool)
    for f in np.unique(frame_index):
        sel = np.nonzero(frame_index == f)[0]
        X = positions[point_index[sel]]
        uv, z = project_points(poses[f], K, X)
        front = z > min_depth
        centers = np.where(front[:, None], uv, np.nan)
        img, gx, gy = rasters[f]
        vals, inside = sample_patches(img, centers, radius)
        ok = front & inside
        if not np.any(ok):
            continue
        rows = sel[ok]
        offs_centers = centers[ok]
        gxs, _ = sample_patches(gx, offs_centers, radius)
        gys, _ = sample_patches(gy, offs_centers, radius)
        dpose, dpoint = projection_jacobians(poses[f], K, X[ok])
        res[rows] = ref_patches[point_index[rows]] - vals[ok]
        Jc[rows] = -(gxs[:, :, None] * dpose[:, None, 0, :] + gys[:, :, None] * dpose[:, None, 1, :])
        Jx[rows] = -(gxs[:, :, None] * dpoint[:, None, 0, :] + gys[:, :, None] * dpoint[:, None, 1, :])
        valid[rows] = True
    kept = np.nonzero(valid)[0]
    obs = ObservationSet(point_index[kept], frame_index[kept], res[kept], Jc[kept], Jx[kept],
                         np.ones(len(kept)))
    if delta is not None:
        obs.weights = robust_weight(obs.norms, delta) if len(kept) else np.ones(0)
    return obs, kept


def evaluate_observation(point, frame_pose: Pose, image, grads, K: Intrinsics, radius: int,
                         frame_id: int = 0, point_id: int = 0, delta: float | None = None):
    """Single observation of ``point`` (a ScenePoint) in one frame, or None if dropped."""
    rasters = [(image.data if hasattr(image, "data") else np.asarray(image), grads[0], grads[1])]
    ref = np.asarray(point.ref_patch, dtype=np.float64).reshape(1, -1)
    obs, kept = evaluate_observations(point.position.reshape(1, 3), ref, [0], [0], [frame_pose],
                                      rasters, K, radius, delta)
    if len(kept) == 0:
        return None
    o = obs[0]
    o.point, o.frame = point_id, frame_id
    return o


def robust_cost(obs: ObservationSet, delta: float) -> float:
    return float(np.sum(huber(obs.norms, delta))) if len(obs) else 0.0


def squared_cost(obs: ObservationSet) -> float:
    return 0.5 * float(np.sum(obs.residuals * obs.residuals))


# --- normal equations --------------------------------------------------------

@dataclass
class NormalEquations:
    """Block form of ``H @ delta = b`` for free cameras and all points.

    Camera blocks exist only on the diagonal; camera-point couplings are
    stored densely as ``H_cp[point, camera]`` with ``observed`` flagging
    the pairs that actually carry an observation.
    """

    H_cc: np.ndarray
    H_pp: np.ndarray
    H_cp: np.ndarray
    observed: np.ndarray
    g_c: np.ndarray
    g_p: np.ndarray
    free_frames: np.ndarray

    @property
    def n_cameras(self) -> int:
        return len(self.H_cc)

    @property
    def n_points(self) -> int:
        return len(self.H_pp)

    def to_dense(self):
        """Full ``(6C + 3N)`` system, cameras first."""
        C, N = self.n_cameras, self.n_points
        n = 6 * C + 3 * N
        H = np.zeros((n, n))
        for c in range(C):
            H[6 * c:6 * c + 6, 6 * c:6 * c + 6] = self.H_cc[c]
        off = 6 * C
        for j in range(N):
            s = slice(off + 3 * j, off + 3 * j + 3)
            H[s, s] = self.H_pp[j]
            for c in range(C):
                H[6 * c:6 * c + 6, s] = self.H_cp[j, c]
                H[s, 6 * c:6 * c + 6] = self.H_cp[j, c].T
        b = np.concatenate([self.g_c.ravel(), self.g_p.ravel()])
        return H, b


def build_normal_equations(obs: ObservationSet, n_frames: int, n_points: int,
                           fixed_frames=()) -> NormalEquations:
    fixed = set(int(f) for f in fixed_frames)
    free_frames = np.array([f for f in range(n_frames) if f not in fixed], dtype=np.intp)
    cam_of = np.full(n_frames, -1, dtype=np.intp)
    cam_of[free_frames] = np.arange(len(free_frames))
    C = len(free_frames)

    H_cc = np.zeros((C, 6, 6))
    H_pp = np.zeros((n_points, 3, 3))
    H_cp = np.zeros((n_points, C, 6, 3))
    observed = np.zeros((n_points, C), dtype=bool)
    g_c = np.zeros((C, 6))
    g_p = np.zeros((n_points, 3))
    if len(obs) == 0:
        return NormalEquations(H_cc, H_pp, H_cp, observed, g_c, g_p, free_frames)

    w = obs.weights
    wJc = obs.J_pose * w[:, None, None]
    wJx = obs.J_point * w[:, None, None]
    pts = obs.point_index
    np.add.at(H_pp, pts, np.einsum("mdi,mdj->mij", wJx, obs.J_point))
    np.add.at(g_p, pts, -np.einsum("mdi,md->mi", wJx, obs.residuals))

    cams = cam_of[obs.frame_index]
    free = cams >= 0
    if np.any(free):
        pf, cf = pts[free], cams[free]
        np.add.at(H_cc, cf, np.einsum("mdi,mdj->mij", wJc[free], obs.J_pose[free]))
        np.add.at(g_c, cf, -np.einsum("mdi,md->mi", wJc[free], obs.residuals[free]))
        np.add.at(H_cp, (pf, cf), np.einsum("mdi,mdj->mij", wJc[free], obs.J_point[free]))
        observed[pf, cf] = True
    return NormalEquations(H_cc, H_pp, H_cp, observed, g_c, g_p, free_frames)


def _damp(blocks: np.ndarray, lam: float) -> np.ndarray:
    """``H + lam * diag(H)`` per block; empty diagonal entries become 1."""
    out = blocks.copy()
    k = blocks.shape[-1]
    idx = np.arange(k)
    diag = blocks[..., idx, idx]
    out[..., idx, idx] = np.where(diag > 0, diag * (1.0 + lam), 1.0)
    return out


def schur_solve(ne: NormalEquations, lam: float):
    """Damped solve by eliminating the point blocks.

    Returns ``(dtheta, dxi, skipped)`` with shapes (C, 6), (N, 3) and (N,);
    ``skipped`` flags points whose damped block was singular and that were
    left out of this step.
    """
    if not lam > 0:
        raise ValueError("damping must be positive")
    C, N = ne.n_cameras, ne.n_points
    Hcc = _damp(ne.H_cc, lam)
    Hpp = _damp(ne.H_pp, lam)

    skipped = np.zeros(N, dtype=bool)
    Hpp_inv = np.zeros_like(Hpp)
    if N:
        ev = np.linalg.eigvalsh(Hpp)
        skipped = ~(ev[:, 0] > 1e-14 * np.maximum(ev[:, -1], 1e-300))
        good = ~skipped
        Hpp_inv[good] = np.linalg.inv(Hpp[good])
    if np.any(skipped):
        log.debug("schur_solve: %d singular point blocks skipped", int(skipped.sum()))

    # S = Hcc - sum_j Hcp_j Hpp_j^-1 Hcp_j^T ; rhs = g_c - sum_j Hcp_j Hpp_j^-1 g_p_j
    W = ne.H_cp
    WHinv = np.einsum("ncij,njk->ncik", W, Hpp_inv)
    S = np.zeros((6 * C, 6 * C))
    for c in range(C):
        S[6 * c:6 * c + 6, 6 * c:6 * c + 6] = Hcc[c]
    if C and N:
        S -= np.einsum("naik,nbjk->aibj", WHinv, W).reshape(6 * C, 6 * C)
    rhs = ne.g_c.ravel() - (np.einsum("ncik,nk->ci", WHinv, ne.g_p).ravel() if N else 0.0)

    if C:
        S = 0.5 * (S + S.T)
        try:
            dtheta = scipy.linalg.solve(S, rhs, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            dtheta = scipy.linalg.lstsq(S, rhs)[0]
        dtheta = dtheta.reshape(C, 6)
    else:
        dtheta = np.zeros((0, 6))

    back = ne.g_p - np.einsum("ncik,ci->nk", W, dtheta) if C else ne.g_p.copy()
    dxi = np.einsum("nij,nj->ni", Hpp_inv, back)
    dxi[skipped] = 0.0
    return dtheta, dxi, skipped


# --- Levenberg-Marquardt over a window ----------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    cost: float
    damping: float
    step_norm: float
    n_observations: int
    accepted: bool


@dataclass
class SolveReport:
    status: str
    initial_cost: float
    final_cost: float
    iterations: int
    n_points: int
    n_observations: int
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in ("function_tolerance", "gradient_tolerance", "parameter_tolerance")

    def cost_after(self, k: int) -> float:
        """Best cost after ``k`` iterations (``k = 0`` is the initial cost)."""
        costs = [r.cost for r in self.history if r.iteration <= k]
        return costs[-1] if costs else self.initial_cost


def optimize_window(window, cfg: SolverConfig | None = None, fixed_frames=(0,)) -> SolveReport:
    """Jointly refine free frame poses and point positions of ``window``.

    ``window`` is a :class:`~photoba.window.SlidingWindow`; poses and
    point positions are updated in place.  ``fixed_frames`` are window
    indices whose poses are held constant (the gauge).
    """
    cfg = cfg or SolverConfig()
    frames = window.frames
    K = window.K
    if len(frames) < 2:
        raise ValueError("optimize_window needs at least two frames")
    index_of = {f.id: i for i, f in enumerate(frames)}
    points = window.observed_points()
    D = (2 * cfg.patch_radius + 1) ** 2
    pi, fi = [], []
    for j, p in enumerate(points):
        if p.ref_patch.size != D:
            raise ValueError(f"point {p.id} carries a {p.ref_patch.size}-pixel patch, solver expects {D}")
        for k in p.visibility:
            if k in index_of:
                pi.append(j)
                fi.append(index_of[k])
    pi = np.array(pi, dtype=np.intp)
    fi = np.array(fi, dtype=np.intp)
    fixed = sorted(int(f) for f in fixed_frames)
    free = [i for i in range(len(frames)) if i not in fixed]

    rasters = [(f.image.data, f.gx, f.gy) for f in frames]
    ref = np.array([p.ref_patch for p in points]).reshape(len(points), D)
    X = np.array([p.position for p in points]).reshape(len(points), 3)
    poses = [f.pose for f in frames]

    # a pair that drops out keeps the cost it had at the last accepted iterate:
    # leaving the image neither lowers the objective nor makes it jump
    held = np.zeros(len(pi))

    def evaluate(poses_, X_):
        obs, kept = evaluate_observations(X_, ref, pi, fi, poses_, rasters, K, cfg.patch_radius,
                                          cfg.huber_delta, cfg.min_depth)
        pair_cost = held.copy()
        if len(obs):
            pair_cost[kept] = huber(obs.norms, cfg.huber_delta)
        return obs, pair_cost, float(np.sum(pair_cost))

    obs, held, cost = evaluate(poses, X)
    report = SolveReport("no_observations", cost, cost, 0, len(points), len(obs))
    if len(obs) == 0:
        log.warning("optimize_window: no valid observations in window %s", window.frame_ids)
        return report
    lam = cfg.initial_damping
    report.history.append(IterationRecord(0, cost, lam, 0.0, len(obs), True))
    status = "max_iterations"
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        ne = build_normal_equations(obs, len(frames), len(points), fixed)
        if np.max(np.abs(np.concatenate([ne.g_c.ravel(), ne.g_p.ravel()]))) <= cfg.gradient_tolerance:
            status = "gradient_tolerance"
            it -= 1
            break
        dtheta, dxi, _ = schur_solve(ne, lam)
        step = float(np.sqrt(np.sum(dtheta**2) + np.sum(dxi**2)))
        xnorm = float(np.sqrt(np.sum(X**2) + sum(np.sum(poses[i].t**2) for i in free)))
        if step <= cfg.parameter_tolerance * (xnorm + cfg.parameter_tolerance):
            status = "parameter_tolerance"
            report.history.append(IterationRecord(it, cost, lam, step, len(obs), False))
            break
        trial_poses = list(poses)
        for c, i in enumerate(ne.free_frames):
            trial_poses[i] = retract(poses[i], dtheta[c])
        trial_X = X + dxi
        trial_obs, trial_pairs, trial_cost = evaluate(trial_poses, trial_X)
        if len(trial_obs) and trial_cost < cost:
            rel = (cost - trial_cost) / cost
            poses, X, obs, cost = trial_poses, trial_X, trial_obs, trial_cost
            held[:] = trial_pairs
            report.history.append(IterationRecord(it, cost, lam, step, len(obs), True))
            lam = max(lam * cfg.damping_decrease, cfg.min_damping)
            if rel <= cfg.function_tolerance:
                status = "function_tolerance"
                break
        else:
            report.history.append(IterationRecord(it, cost, lam, step, len(trial_obs), False))
            lam *= cfg.damping_increase
            if lam > cfg.max_damping:
                status = "damping_limit"
                break

    accepted = [r.cost for r in report.history if r.accepted]
    if any(b >= a for a, b in zip(accepted, accepted[1:])):
        raise AssertionError("accepted LM steps must strictly decrease the robust cost")

    for i in free:
        frames[i].pose = poses[i]
    for j, p in enumerate(points):
        p.position = X[j].copy()
    report.status = status
    report.final_cost = cost
    report.iterations = it
    report.n_observations = len(obs)
    return report
