"""Independent reference computations used by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from photoba.ba import ObservationSet, evaluate_observations
from photoba.geometry import Intrinsics, backproject, se3_exp
from photoba.image import GrayImage, gradients
from photoba.window import Frame, SlidingWindow

from conftest import ShiftSequence, bilinear_field, make_points

FD_STEP = 1e-5


def column_rel_errors(A, N):
    """Per-column relative error of ``A`` against reference ``N`` (rows x cols)."""
    scale = max(np.linalg.norm(N), 1e-300)
    num = np.linalg.norm(A - N, axis=0)
    den = np.maximum(np.linalg.norm(N, axis=0), 1e-6 * scale)
    return num / den


def random_residual_config(rng, width=80, height=60):
    """One random (image, intrinsics, pose, point, reference patch, radius) setup."""
    img = bilinear_field(height, width, rng)
    f = rng.uniform(40, 90)
    K = Intrinsics(f, f * rng.uniform(0.9, 1.1), width / 2 + rng.uniform(-3, 3),
                   height / 2 + rng.uniform(-3, 3))
    pose = se3_exp(np.concatenate([rng.normal(0, 0.5, 3), rng.normal(0, 0.3, 3)]))
    radius = int(rng.integers(1, 3))
    m = radius + 4
    u, v = rng.uniform(m, width - 1 - m), rng.uniform(m, height - 1 - m)
    z = rng.uniform(1.0, 10.0)
    X = pose.inverse().apply(backproject(K, u, v, z))
    ref = rng.uniform(0, 1, (2 * radius + 1) ** 2)
    return img, K, pose, X, ref, radius


def residual(img, K, pose, X, ref, radius, rasters=None):
    rasters = rasters or [(img.data, *gradients(img))]
    obs, kept = evaluate_observations(X.reshape(1, 3), ref.reshape(1, -1), [0], [0], [pose],
                                      rasters, K, radius)
    assert len(kept) == 1
    return obs


def residual_jacobian_errors(rng, h=FD_STEP):
    """Max per-column relative errors (pose, point) of analytic vs central differences."""
    img, K, pose, X, ref, radius = random_residual_config(rng)
    rasters = [(img.data, *gradients(img))]
    obs = residual(img, K, pose, X, ref, radius, rasters)
    Jp = np.zeros_like(obs.J_pose[0])
    Jx = np.zeros_like(obs.J_point[0])
    for i in range(6):
        d = np.zeros(6)
        d[i] = h
        a = residual(img, K, se3_exp(d) @ pose, X, ref, radius, rasters).residuals[0]
        b = residual(img, K, se3_exp(-d) @ pose, X, ref, radius, rasters).residuals[0]
        Jp[:, i] = (a - b) / (2 * h)
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        a = residual(img, K, pose, X + d, ref, radius, rasters).residuals[0]
        b = residual(img, K, pose, X - d, ref, radius, rasters).residuals[0]
        Jx[:, i] = (a - b) / (2 * h)
    return column_rel_errors(obs.J_pose[0], Jp).max(), column_rel_errors(obs.J_point[0], Jx).max()


# --- normal equations -------------------------------------------------------------------

def random_observations(rng, n_frames, n_points, D=9, p_obs=0.6):
    """Random observation set in which every point is seen at least once."""
    pi, fi = [], []
    for j in range(n_points):
        frames = [k for k in range(n_frames) if rng.random() < p_obs]
        if not frames:
            frames = [int(rng.integers(n_frames))]
        pi += [j] * len(frames)
        fi += frames
    M = len(pi)
    return ObservationSet(np.array(pi, dtype=np.intp), np.array(fi, dtype=np.intp),
                          rng.normal(0, 0.1, (M, D)), rng.normal(0, 1, (M, D, 6)),
                          rng.normal(0, 1, (M, D, 3)), rng.uniform(0.2, 1.0, M))


def dense_system(obs: ObservationSet, n_frames, n_points, fixed=()):
    """Stack every residual row into one Jacobian and form ``J^T W J``, ``-J^T W r``."""
    free = [f for f in range(n_frames) if f not in set(fixed)]
    col = {f: 6 * c for c, f in enumerate(free)}
    n = 6 * len(free) + 3 * n_points
    D = obs.residuals.shape[1]
    J = np.zeros((len(obs) * D, n))
    r = np.zeros(len(obs) * D)
    w = np.zeros(len(obs) * D)
    for m in range(len(obs)):
        rows = slice(m * D, (m + 1) * D)
        f = int(obs.frame_index[m])
        j = int(obs.point_index[m])
        if f in col:
            J[rows, col[f]:col[f] + 6] = obs.J_pose[m]
        p0 = 6 * len(free) + 3 * j
        J[rows, p0:p0 + 3] = obs.J_point[m]
        r[rows] = obs.residuals[m]
        w[rows] = obs.weights[m]
    H = J.T @ (w[:, None] * J)
    b = -J.T @ (w * r)
    return H, b


def damped_dense_solve(H, b, lam):
    """Solve ``(H + lam diag(H)) x = b``; an empty diagonal entry is replaced by 1."""
    Hd = H.copy()
    d = np.diag(H)
    Hd[np.diag_indices_from(Hd)] = np.where(d > 0, d * (1 + lam), 1.0)
    return np.linalg.solve(Hd, b)


# --- sparsity ------------------------------------------------------------------------

def fully_observed_window(n_points=4):
    """Reference frame 0 plus three cameras that all see the same four points."""
    seq = ShiftSequence(4, shift=3)
    frames = [Frame(k, seq.images[k], seq.poses[k]) for k in range(4)]
    pts = make_points(seq, 0, [(20 + 6 * i, 14 + 5 * i) for i in range(n_points)], [1, 2, 3])
    return SlidingWindow(seq.K, frames, pts)


def window_observations(window, radius=1):
    idx = {f.id: i for i, f in enumerate(window.frames)}
    pi = [j for j, p in enumerate(window.points) for k in p.visibility]
    fi = [idx[k] for p in window.points for k in p.visibility]
    obs, kept = evaluate_observations(
        np.array([p.position for p in window.points]), np.array([p.ref_patch for p in window.points]),
        pi, fi, [f.pose for f in window.frames], [(f.image.data, f.gx, f.gy) for f in window.frames],
        window.K, radius)
    assert len(kept) == len(pi)
    return obs


def block_pattern(H, n_cams, n_points):
    sizes = [6] * n_cams + [3] * n_points
    edges = np.concatenate([[0], np.cumsum(sizes)])
    n = len(sizes)
    pat = np.zeros((n, n), dtype=bool)
    for a in range(n):
        for b in range(n):
            pat[a, b] = np.any(H[edges[a]:edges[a + 1], edges[b]:edges[b + 1]] != 0)
    return pat


# --- selection and masking -----------------------------------------------------------------

def brute_force_select(G, valid, nms_radius, border, min_gradient=0.0):
    """Exhaustive scan of the selection rule, pixel by pixel."""
    h, w = G.shape
    out = []
    for y in range(h):
        for x in range(w):
            if min(x, y, w - 1 - x, h - 1 - y) < border or not valid[y, x] or not G[y, x] > min_gradient:
                continue
            ok = True
            for dy in range(-nms_radius, nms_radius + 1):
                for dx in range(-nms_radius, nms_radius + 1):
                    if dy == 0 and dx == 0:
                        continue
                    q = G[y + dy, x + dx]
                    earlier = dy < 0 or (dy == 0 and dx < 0)
                    if (earlier and not G[y, x] > q) or (not earlier and not G[y, x] >= q):
                        ok = False
            if ok:
                out.append((x, y))
    return np.array(out, dtype=np.intp).reshape(-1, 2)


def brute_force_mask(shape, marks, radius):
    h, w = shape
    valid = np.ones(shape, dtype=bool)
    for px in marks:
        cx, cy = int(np.floor(px[0] + 0.5)), int(np.floor(px[1] + 0.5))
        for y in range(h):
            for x in range(w):
                if max(abs(x - cx), abs(y - cy)) <= radius:
                    valid[y, x] = False
    return valid


def random_image(rng, shape=(32, 32)):
    """Random image, sometimes quantized so gradient plateaus and ties occur."""
    I = rng.random(shape)
    if rng.random() < 0.5:
        I = np.round(I * 3) / 3
    return GrayImage(I)
