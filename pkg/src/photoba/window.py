"""Frames and the sliding window they are optimized in."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, Pose
from .image import GrayImage, gradients


@dataclass(eq=False)
class Frame:
    id: int
    image: GrayImage
    pose: Pose
    gx: np.ndarray = field(default=None, repr=False)
    gy: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.image, GrayImage):
            self.image = GrayImage(self.image)
        if self.gx is None or self.gy is None:
            self.gx, self.gy = gradients(self.image)


@dataclass(eq=False)
class SlidingWindow:
    """Frames (increasing ids) and the scene points they jointly constrain."""

    K: Intrinsics
    frames: list = field(default_factory=list)
    points: list = field(default_factory=list)

    @property
    def frame_ids(self) -> list:
        return [f.id for f in self.frames]

    def __len__(self) -> int:
        return len(self.frames)

    def add_frame(self, frame: Frame) -> None:
        if self.frames and frame.id <= self.frames[-1].id:
            raise ValueError(f"frame ids must increase: {frame.id} after {self.frames[-1].id}")
        self.frames.append(frame)

    def frame(self, frame_id: int) -> Frame:
        for f in self.frames:
            if f.id == frame_id:
                return f
        raise KeyError(frame_id)

    def observed_points(self) -> list:
        """Points with at least one visibility entry inside the window."""
        ids = set(self.frame_ids)
        return [p for p in self.points if any(k in ids for k in p.visibility)]
