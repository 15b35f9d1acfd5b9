"""Winner-takes-all SAD block matching, used only to seed point depths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .geometry import MIN_DISPARITY, Intrinsics, Pose, backproject, disparity_to_depth
from .image import _raster


@dataclass
class StereoConfig:
    max_disparity: int = 128
    sad_radius: int = 3
    lr_tolerance: float = 1.0

    def __post_init__(self):
        if self.max_disparity < 1 or self.sad_radius < 1:
            raise ValueError("max_disparity and sad_radius must be >= 1")


@dataclass
class DisparityMap:
    """Per-pixel disparity in pixels; NaN marks invalid pixels."""

    disp: np.ndarray

    @property
    def height(self) -> int:
        return self.disp.shape[0]

    @property
    def width(self) -> int:
        return self.disp.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.disp)

    @classmethod
    def from_depth(cls, depth, K: Intrinsics) -> DisparityMap:
        depth = np.asarray(depth, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            disp = np.where(np.isfinite(depth) & (depth > 0), K.fx * K.baseline / depth, np.nan)
        return cls(disp)


def _wta_disparity(ref: np.ndarray, other: np.ndarray, cfg: StereoConfig, sign: int) -> np.ndarray:
    """Winner-takes-all disparity for matching ``ref(x)`` with ``other(x + sign*d)``.

    Ties keep the smaller disparity.  Pixels whose aggregation window has
    no full counterpart for any disparity are NaN.
    """
    h, w = ref.shape
    r = cfg.sad_radius
    size = 2 * r + 1
    best_cost = np.full((h, w), np.inf)
    best_d = np.full((h, w), np.nan)
    for d in range(min(cfg.max_disparity, w - 1) + 1):
        diff = np.zeros((h, w))
        ok = np.zeros((h, w), dtype=bool)
        if sign < 0:
            diff[:, d:] = np.abs(ref[:, d:] - other[:, :w - d])
            ok[r:h - r, d + r:w - r] = True
        else:
            diff[:, :w - d] = np.abs(ref[:, :w - d] - other[:, d:])
            ok[r:h - r, r:w - r - d] = True
        cost = uniform_filter(diff, size=size, mode="constant") * (size * size)
        better = ok & (cost < best_cost)
        best_cost[better] = cost[better]
        best_d[better] = d
    return best_d


def block_match(left, right, cfg: StereoConfig | None = None) -> DisparityMap:
    """Integer disparities with a left-right consistency check.

    A left pixel ``x`` matches right pixel ``x - d``.
    """
    cfg = cfg or StereoConfig()
    L = _raster(left)
    R = _raster(right)
    if L.shape != R.shape:
        raise ValueError(f"stereo pair dimensions differ: {L.shape} vs {R.shape}")
    d_left = _wta_disparity(L, R, cfg, -1)
    d_right = _wta_disparity(R, L, cfg, +1)

    h, w = L.shape
    ys, xs = np.nonzero(np.isfinite(d_left))
    xr = xs - d_left[ys, xs].astype(np.intp)
    back = d_right[ys, xr]
    consistent = np.abs(d_left[ys, xs] - back) <= cfg.lr_tolerance
    out = np.full((h, w), np.nan)
    out[ys[consistent], xs[consistent]] = d_left[ys[consistent], xs[consistent]]
    return DisparityMap(out)


def init_points_from_disparity(dmap: DisparityMap, pixels, K: Intrinsics, pose: Pose | None = None,
                               min_disparity: float = MIN_DISPARITY):
    """Triangulate selected integer pixels that carry a usable disparity.

    Returns ``(points, keep)`` where ``keep`` indexes the input pixels that
    produced a point.  Points are in world coordinates when ``pose`` is
    given, camera coordinates otherwise.
    """
    pixels = np.asarray(pixels, dtype=np.intp).reshape(-1, 2)
    d = dmap.disp[pixels[:, 1], pixels[:, 0]] if len(pixels) else np.zeros(0)
    keep = np.nonzero(np.isfinite(d) & (d > min_disparity))[0]
    z = disparity_to_depth(d[keep], K) if len(keep) else np.zeros(0)
    Xc = backproject(K, pixels[keep, 0], pixels[keep, 1], z).reshape(-1, 3)
    if pose is not None:
        Xc = pose.inverse().apply(Xc)
    return Xc, keep
