"""Procedural textured scenes with exact ground truth.

Scenes are sets of (possibly bounded) planes painted with a smooth solid
texture: a sum of a few random 3D sinusoids evaluated at the world point.
Because the texture is a function of position in space, intensity stays
continuous across creases where planes meet; only occluding boundaries
produce steps.  Rendering ray-casts every pixel, so images and depth maps
of any pose are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics, Pose, se3_exp
from .image import GrayImage

BACKGROUND = 0.5
SCENARIOS = ("plane", "room", "corridor", "point-cloud")


@dataclass
class SolidTexture:
    freqs: np.ndarray    # (k, 3) cycles per scene unit
    phases: np.ndarray
    amps: np.ndarray

    def __call__(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=np.float64)
        arg = 2.0 * np.pi * (P @ self.freqs.T) + self.phases
        return BACKGROUND + np.sin(arg) @ self.amps


@dataclass
class Plane:
    origin: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    extent: tuple = (np.inf, np.inf)
    texture: SolidTexture | None = None   # None: use the scene texture

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.axis_u, self.axis_v)
        return n / np.linalg.norm(n)


@dataclass
class SyntheticScene:
    name: str
    planes: list
    texture: SolidTexture
    seed: int
    scale: float    # typical viewing depth; noise levels are quoted relative to it

    def render(self, pose: Pose, K: Intrinsics, width: int, height: int):
        return render_synthetic(self, pose, K, width, height)


def random_texture(rng, n: int = 8, wavelengths=(0.7, 2.0), amplitude: float = 0.42) -> SolidTexture:
    """``n`` sinusoids with random 3D directions; amplitudes sum to ``amplitude``."""
    lam = rng.uniform(*wavelengths, size=n)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    amps = rng.uniform(0.5, 1.0, size=n)
    amps *= amplitude / amps.sum()
    return SolidTexture(d / lam[:, None], rng.uniform(0.0, 2.0 * np.pi, size=n), amps)


def _plane(origin, axis_u, axis_v, extent=(np.inf, np.inf), texture=None):
    au = np.asarray(axis_u, float)
    av = np.asarray(axis_v, float)
    return Plane(np.asarray(origin, float), au / np.linalg.norm(au), av / np.linalg.norm(av),
                 extent, texture)


def make_scene(name: str, seed: int = 0) -> SyntheticScene:
    """Build one of :data:`SCENARIOS`.  Cameras look down +z from near the origin.

    ``plane`` is a single slanted wall; ``room`` a closed box seen from
    inside (creases but no occlusions); ``corridor`` a long open-ended box
    for forward motion; ``point-cloud`` free-floating billboards in front
    of a back wall, with occlusion boundaries.
    """
    rng = np.random.default_rng(seed)
    texture = random_texture(rng)
    if name == "plane":
        planes = [_plane([0, 0, 4.0], [1, 0, 0.15], [0, 1, -0.1])]
        scale = 4.0
    elif name == "room":
        planes = [
            _plane([0, 0, 5.0], [1, 0, 0], [0, 1, 0]),          # back wall
            _plane([0, 1.2, 0], [1, 0, 0], [0, 0, 1]),          # floor
            _plane([0, -1.2, 0], [1, 0, 0], [0, 0, -1]),        # ceiling
            _plane([-2.0, 0, 0], [0, 0, 1], [0, 1, 0]),         # left wall
            _plane([2.0, 0, 0], [0, 1, 0], [0, 0, 1]),          # right wall
        ]
        scale = 4.0
    elif name == "corridor":
        planes = [
            _plane([0, 1.0, 0], [1, 0, 0], [0, 0, 1]),          # floor
            _plane([0, -1.2, 0], [1, 0, 0], [0, 0, -1]),        # ceiling
            _plane([-1.6, 0, 0], [0, 0, 1], [0, 1, 0]),         # left wall
            _plane([1.6, 0, 0], [0, 1, 0], [0, 0, 1]),          # right wall
            _plane([0, 0, 9.0], [1, 0, 0], [0, 1, 0]),          # end wall
        ]
        scale = 3.0
    elif name == "point-cloud":
        planes = [_plane([0, 0, 10.0], [1, 0, 0], [0, 1, 0])]
        for _ in range(24):
            c = np.array([rng.uniform(-2.5, 2.5), rng.uniform(-1.8, 1.8), rng.uniform(2.5, 8.0)])
            yaw = rng.uniform(-0.6, 0.6)
            # each billboard has its own texture, so its silhouette is a real edge
            planes.append(_plane(c, [np.cos(yaw), 0, np.sin(yaw)], [0, 1, 0],
                                 extent=(rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)),
                                 texture=random_texture(rng)))
        scale = 5.0
    else:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return SyntheticScene(name, planes, texture, seed, scale)


def _cast(scene: SyntheticScene, pose: Pose, K: Intrinsics, xs, ys):
    rays_c = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)
    c2w = pose.inverse()
    rays_w = rays_c @ c2w.R.T
    center = c2w.t
    best_t = np.full(xs.shape, np.inf)
    intensity = np.full(xs.shape, BACKGROUND)
    for pl in scene.planes:
        n = pl.normal
        denom = rays_w @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((pl.origin - center) @ n) / denom
        hit = np.isfinite(t) & (t > 1e-6) & (t < best_t)
        if not np.any(hit):
            continue
        P = center + t[..., None] * rays_w
        rel = P - pl.origin
        s = rel @ pl.axis_u
        q = rel @ pl.axis_v
        hit &= (np.abs(s) <= pl.extent[0]) & (np.abs(q) <= pl.extent[1])
        best_t[hit] = t[hit]
        intensity[hit] = (pl.texture or scene.texture)(P[hit])
    # rays_c has unit z, so the ray parameter is the camera depth
    return intensity, np.where(np.isfinite(best_t), best_t, np.nan)


def render_synthetic(scene: SyntheticScene, pose: Pose, K: Intrinsics, width: int, height: int,
                     supersample: int = 3):
    """Ray-cast ``scene`` from a world-to-camera ``pose``.

    Each pixel averages a ``supersample`` x ``supersample`` grid of rays
    (a box pre-filter that keeps distant, foreshortened texture from
    aliasing).  Returns ``(image, depth)``; depth is the camera-frame z of
    the ray through the pixel center, NaN where it hits nothing (those
    pixels get the background intensity).
    """
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    center_int, depth = _cast(scene, pose, K, xs, ys)
    if supersample <= 1:
        intensity = center_int
    else:
        offs = (np.arange(supersample) + 0.5) / supersample - 0.5
        intensity = np.zeros_like(xs)
        for oy in offs:
            for ox in offs:
                intensity += _cast(scene, pose, K, xs + ox, ys + oy)[0]
        intensity /= supersample**2
    return GrayImage(np.clip(intensity, 0.0, 1.0)), depth


def forward_trajectory(n_frames: int, step: float = 0.12, sway: float = 0.05, yaw: float = 0.02,
                       direction=(0.0, 0.0, 1.0)):
    """Gently weaving motion along ``direction``; returns world-to-camera poses.

    The camera always looks down +z; ``direction`` (x, 0, z) only sets the
    travel direction, so ``(1, 0, 0)`` gives a sideways pass.
    """
    d = np.asarray(direction, dtype=np.float64)
    d /= np.linalg.norm(d)
    up = np.array([0.0, 1.0, 0.0])
    side = np.cross(up, d)
    poses = []
    for k in range(n_frames):
        a = 0.7 * k
        c = step * k * d + sway * np.sin(a) * side + 0.3 * sway * np.sin(1.3 * a) * up
        w = np.array([0.3 * yaw * np.sin(0.9 * a), yaw * np.sin(a + 0.5), 0.2 * yaw * np.cos(a)])
        R_wc = se3_exp(np.concatenate([np.zeros(3), w])).R
        poses.append(Pose(R_wc, c).inverse())
    return poses


def perturb_poses(poses, sigma_rot: float, sigma_trans: float, rng, keep_first: bool = True):
    """Left-multiply each pose by a random twist.

    ``sigma_rot`` (rad) and ``sigma_trans`` are the RMS magnitudes of the
    rotation vector and translation offset; each axis gets ``sigma / sqrt(3)``.
    The first pose is left untouched when ``keep_first`` (it is the gauge).
    """
    out = []
    s_r = sigma_rot / np.sqrt(3.0)
    s_t = sigma_trans / np.sqrt(3.0)
    for k, p in enumerate(poses):
        if keep_first and k == 0:
            out.append(p)
            continue
        d = np.concatenate([rng.normal(0.0, s_t, 3), rng.normal(0.0, s_r, 3)])
        out.append(se3_exp(d) @ p)
    return out


@dataclass
class SyntheticSequence:
    scene: SyntheticScene
    K: Intrinsics
    gt_poses: list
    images: list
    depths: list

    @property
    def width(self) -> int:
        return self.images[0].width

    @property
    def height(self) -> int:
        return self.images[0].height

    def disparities(self, rel_noise: float = 0.0, rng=None):
        """Disparity maps from true depth, optionally with multiplicative depth noise."""
        from .stereo import DisparityMap

        out = []
        for d in self.depths:
            if rel_noise > 0:
                d = d * (1.0 + rng.normal(0.0, rel_noise, d.shape))
            out.append(DisparityMap.from_depth(d, self.K))
        return out

    def right_images(self):
        """Renders from the right camera of a rectified pair (baseline along +x)."""
        shift = Pose(np.eye(3), np.array([-self.K.baseline, 0.0, 0.0]))
        return [render_synthetic(self.scene, shift @ p, self.K, self.width, self.height)[0]
                for p in self.gt_poses]


# camera path per scenario: sideways weaving past the plane and room walls,
# mostly forward down the corridor
TRAJECTORIES = {
    "plane": dict(step=0.1, sway=1.0),
    "room": dict(step=0.1, sway=1.0),
    "corridor": dict(step=0.25, sway=0.2),
    "point-cloud": dict(step=0.1, sway=1.0),
}


def default_intrinsics(width: int, height: int, baseline: float = 0.2) -> Intrinsics:
    """Wide (90 degree horizontal) pinhole with the principal point at the center."""
    f = 0.5 * width
    return Intrinsics(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2, baseline=baseline)


def make_sequence(scenario: str = "plane", n_frames: int = 10, seed: int = 0,
                  width: int = 640, height: int = 480, K: Intrinsics | None = None,
                  supersample: int = 3, **trajectory) -> SyntheticSequence:
    """Render ``n_frames`` ground-truth views of a scenario.

    Keyword arguments override the scenario's entry in :data:`TRAJECTORIES`
    (``step``, ``sway``, ``yaw``, ``direction``).
    """
    K = K or default_intrinsics(width, height)
    scene = make_scene(scenario, seed)
    poses = forward_trajectory(n_frames, **{**TRAJECTORIES[scenario], **trajectory})
    images, depths = [], []
    for p in poses:
        img, depth = render_synthetic(scene, p, K, width, height, supersample)
        images.append(img)
        depths.append(depth)
    return SyntheticSequence(scene, K, poses, images, depths)
