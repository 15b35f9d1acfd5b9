"""Pixel selection by non-maximum suppression of the gradient magnitude."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import gradient_magnitude


@dataclass
class SelectionConfig:
    nms_radius: int = 1
    mask_block_radius: int = 1
    min_gradient: float = 0.0

    def __post_init__(self):
        if self.nms_radius < 1 or self.mask_block_radius < 1:
            raise ValueError("selection radii must be >= 1")


class OccupancyMask:
    """Per-pixel flags of where new scene points may still be created."""

    def __init__(self, height: int, width: int):
        self.valid = np.ones((height, width), dtype=bool)

    @property
    def shape(self):
        return self.valid.shape

    def mark_occupied(self, px, radius: int = 1) -> OccupancyMask:
        """Invalidate the (2r+1)^2 block around ``round(px)``, clipped to the image."""
        h, w = self.valid.shape
        cx = int(np.floor(px[0] + 0.5))
        cy = int(np.floor(px[1] + 0.5))
        x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
        y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
        if x0 < x1 and y0 < y1:
            self.valid[y0:y1, x0:x1] = False
        return self

    def n_invalid(self) -> int:
        return int((~self.valid).sum())


def mark_occupied(mask: OccupancyMask, px, radius: int = 1) -> OccupancyMask:
    return mask.mark_occupied(px, radius)


def nms_mask(G: np.ndarray, radius: int, border: int) -> np.ndarray:
    """Strict-tie local maxima of ``G``.

    A pixel survives when it is >= every neighbour that follows it in
    row-major order and > every neighbour that precedes it, so plateaus
    yield exactly one winner.  Pixels closer than ``border`` to the image
    edge never survive.
    """
    h, w = G.shape
    border = max(border, radius)
    keep = np.zeros_like(G, dtype=bool)
    if h <= 2 * border or w <= 2 * border:
        return keep
    core = G[border:h - border, border:w - border]
    ok = np.ones_like(core, dtype=bool)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            nb = G[border + dy:h - border + dy, border + dx:w - border + dx]
            if (dy, dx) < (0, 0):
                ok &= core > nb
            else:
                ok &= core >= nb
    keep[border:h - border, border:w - border] = ok
    return keep


def select_pixels(img, mask: OccupancyMask | None = None, cfg: SelectionConfig | None = None,
                  patch_radius: int = 2, grad_mag: np.ndarray | None = None) -> np.ndarray:
    """Integer pixels ``(x, y)``, shape (N, 2), in row-major order.

    ``patch_radius`` widens the border margin so a patch of that radius
    around every selected pixel stays inside the image.
    """
    cfg = cfg or SelectionConfig()
    G = gradient_magnitude(img) if grad_mag is None else grad_mag
    keep = nms_mask(G, cfg.nms_radius, max(cfg.nms_radius, patch_radius))
    keep &= G > cfg.min_gradient
    if mask is not None:
        keep &= mask.valid
    ys, xs = np.nonzero(keep)
    return np.stack([xs, ys], axis=1)
