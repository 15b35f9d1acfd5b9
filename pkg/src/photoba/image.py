"""Grayscale images: bilinear sampling, gradients, patches and ZNCC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ImageError(ValueError):
    pass


class OutOfBoundsError(ImageError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel image with intensities in [0, 1], indexed ``data[y, x]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ImageError(f"expected a 2-D raster, got shape {data.shape}")
        if data.size and (np.nanmin(data) < 0.0 or np.nanmax(data) > 1.0 or not np.all(np.isfinite(data))):
            raise ImageError("intensities must be finite and lie in [0, 1]")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_uint8(cls, raw) -> GrayImage:
        return cls(np.asarray(raw, dtype=np.float64) / 255.0)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape


def _raster(img) -> np.ndarray:
    return img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)


def in_bounds(shape, x, y):
    """Mask of subpixel coordinates that bilinear sampling accepts."""
    h, w = shape
    return (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)


def bilinear(raster: np.ndarray, x, y) -> np.ndarray:
    """Vectorised bilinear lookup; coordinates must already be in bounds."""
    h, w = raster.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    # clamp the cell index so x == w-1 uses the last cell with weight 1
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2)
    fx = x - x0
    fy = y - y0
    a = raster[y0, x0]
    b = raster[y0, x0 + 1]
    c = raster[y0 + 1, x0]
    d = raster[y0 + 1, x0 + 1]
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    return top + fy * (bottom - top)


def sample_bilinear(img, x: float, y: float) -> float:
    raster = _raster(img)
    if not in_bounds(raster.shape, x, y):
        raise OutOfBoundsError(f"({x}, {y}) outside image of shape {raster.shape}")
    return float(bilinear(raster, x, y))


def gradients(img):
    """Central-difference gradients ``(gx, gy)``; one-sided at the border."""
    raster = _raster(img)
    if raster.shape[0] < 3 or raster.shape[1] < 3:
        raise ImageError(f"gradients need at least a 3x3 image, got {raster.shape}")
    gy, gx = np.gradient(raster)
    return gx, gy


def gradient_magnitude(img) -> np.ndarray:
    gx, gy = gradients(img)
    return np.hypot(gx, gy)


def patch_offsets(radius: int) -> np.ndarray:
    """Integer offsets ``(du, dv)`` of a square patch, row-major, shape (D, 2)."""
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    dv, du = np.meshgrid(r, r, indexing="ij")
    return np.stack([du.ravel(), dv.ravel()], axis=1)


def extract_patch(img, center, radius: int) -> np.ndarray:
    """Bilinearly sampled ``(2r+1)^2`` patch around a subpixel center."""
    raster = _raster(img)
    offs = patch_offsets(radius)
    xs = center[0] + offs[:, 0]
    ys = center[1] + offs[:, 1]
    if not np.all(in_bounds(raster.shape, xs, ys)):
        raise OutOfBoundsError(f"patch of radius {radius} at {tuple(center)} leaves the image")
    return bilinear(raster, xs, ys)


def sample_patches(raster: np.ndarray, centers: np.ndarray, radius: int):
    """Sample patches at N subpixel centers.

    Returns ``(values, valid)``: an (N, D) array and an (N,) mask of
    centers whose whole footprint lies inside the image.  Rows of invalid
    centers are NaN.
    """
    offs = patch_offsets(radius)
    xs = centers[:, None, 0] + offs[None, :, 0]
    ys = centers[:, None, 1] + offs[None, :, 1]
    valid = np.all(in_bounds(raster.shape, xs, ys), axis=1) & np.all(np.isfinite(centers), axis=1)
    out = np.full(xs.shape, np.nan)
    if np.any(valid):
        out[valid] = bilinear(raster, xs[valid], ys[valid])
    return out, valid


def zncc(a, b) -> float:
    """Zero-mean normalized cross-correlation in [-1, 1].

    A (near-)constant patch has no defined correlation; 0 is returned so
    that it never passes a positive threshold.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ImageError(f"patch sizes differ: {a.size} vs {b.size}")
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va < 1e-12 or vb < 1e-12:
        return 0.0
    score = float(da @ db) / np.sqrt(va * vb)
    return min(1.0, max(-1.0, score))
