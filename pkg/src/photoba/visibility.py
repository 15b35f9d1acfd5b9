"""Scene points and ZNCC-gated visibility bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import MIN_DEPTH, Intrinsics, Pose, project_points
from .image import GrayImage, sample_patches, zncc
from .selection import OccupancyMask


@dataclass
class VisibilityConfig:
    zncc_threshold: float = 0.6
    max_frame_distance: int = 2
    zncc_patch_radius: int = 2
    mask_block_radius: int = 1

    def __post_init__(self):
        if not -1.0 < self.zncc_threshold < 1.0:
            raise ValueError("zncc_threshold must lie in (-1, 1)")
        if self.max_frame_distance < 1 or self.zncc_patch_radius < 1:
            raise ValueError("max_frame_distance and zncc_patch_radius must be >= 1")


@dataclass(eq=False)
class ScenePoint:
    """A 3-D point anchored to the frame where its patch was frozen.

    ``ref_patch`` is the photometric descriptor used by the solver and
    ``gate_patch`` the (usually larger) patch used for ZNCC gating.  Both
    are copied read-only at construction.  ``visibility`` never contains
    ``ref_frame``.
    """

    id: int
    position: np.ndarray
    ref_frame: int
    ref_pixel: tuple
    ref_patch: np.ndarray
    gate_patch: np.ndarray
    visibility: list = field(default_factory=list)

    def __post_init__(self):
        self.position = np.array(self.position, dtype=np.float64).reshape(3)
        for name in ("ref_patch", "gate_patch"):
            patch = np.array(getattr(self, name), dtype=np.float64).ravel()
            patch.flags.writeable = False
            object.__setattr__(self, name, patch)

    def add_visible(self, frame_id: int) -> bool:
        if frame_id == self.ref_frame or frame_id in self.visibility:
            return False
        self.visibility.append(frame_id)
        self.visibility.sort()
        return True


def gate_points(points, frame_id: int, img: GrayImage, pose: Pose, K: Intrinsics,
                cfg: VisibilityConfig):
    """ZNCC-gate ``points`` against one frame without mutating anything.

    Returns ``(accepted, projections)``: a boolean mask over ``points`` and
    the (N, 2) projected pixels.  Points whose reference frame is more than
    ``max_frame_distance`` away, that project behind the camera, or whose
    gate patch leaves the image are rejected.
    """
    n = len(points)
    accepted = np.zeros(n, dtype=bool)
    if n == 0:
        return accepted, np.zeros((0, 2))
    X = np.array([p.position for p in points])
    uv, z = project_points(pose, K, X)
    near = np.array([abs(frame_id - p.ref_frame) <= cfg.max_frame_distance
                     and p.ref_frame != frame_id for p in points])
    front = z > MIN_DEPTH
    cand = near & front
    patches, inside = sample_patches(img.data, np.where(cand[:, None], uv, np.nan), cfg.zncc_patch_radius)
    for i in np.nonzero(cand & inside)[0]:
        accepted[i] = zncc(points[i].gate_patch, patches[i]) > cfg.zncc_threshold
    return accepted, uv


def update_visibility(frame_id: int, img: GrayImage, pose: Pose, points, K: Intrinsics,
                      cfg: VisibilityConfig | None = None, mask: OccupancyMask | None = None):
    """Connect existing points to a new frame.

    Every accepted point gets ``frame_id`` appended to its visibility list
    and the block around its projection is marked occupied.  Returns
    ``(points, mask)``; the points are updated in place.
    """
    cfg = cfg or VisibilityConfig()
    if mask is None:
        mask = OccupancyMask(img.height, img.width)
    points = list(points)
    accepted, uv = gate_points(points, frame_id, img, pose, K, cfg)
    for i in np.nonzero(accepted)[0]:
        points[i].add_visible(frame_id)
        mask.mark_occupied(uv[i], cfg.mask_block_radius)
    return points, mask
