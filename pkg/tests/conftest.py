"""Shared fixtures and constructions for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from photoba.geometry import Intrinsics, Pose
from photoba.image import GrayImage, extract_patch, gradients
from photoba.stereo import DisparityMap
from photoba.visibility import ScenePoint
from photoba.window import Frame, SlidingWindow

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- images --------------------------------------------------------------------

def bilinear_field(h: int, w: int, rng) -> GrayImage:
    """I = a + b x + c y + d x y, scaled into [0.05, 0.95].

    Bilinear interpolation and central differences are both exact on such
    an image, so finite differences of sampled intensities agree with the
    interpolated gradient to rounding error.
    """
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    b, c = rng.uniform(-1, 1, 2)
    d = rng.uniform(-1, 1) / max(h, w)
    f = b * xs + c * ys + d * xs * ys
    lo, hi = f.min(), f.max()
    return GrayImage(0.05 + 0.9 * (f - lo) / (hi - lo))


def smooth_texture(h: int, w: int, rng, n: int = 6, wavelengths=(6.0, 20.0)) -> np.ndarray:
    """Sum of random 2-D sinusoids in [0.1, 0.9]."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((h, w))
    amps = rng.uniform(0.5, 1.0, n)
    amps *= 0.4 / amps.sum()
    for a in amps:
        theta = rng.uniform(0, np.pi)
        k = 2 * np.pi / rng.uniform(*wavelengths)
        out += a * np.sin(k * (np.cos(theta) * xs + np.sin(theta) * ys) + rng.uniform(0, 2 * np.pi))
    return 0.5 + out


# --- an exactly consistent multi-view construction ------------------------------

class ShiftSequence:
    """Fronto-parallel textured plane seen by a camera sliding along +x.

    Intrinsics and motion are powers of two, so every point created at an
    integer pixel projects onto an integer pixel of every other frame and
    the ground-truth photometric residual is exactly zero.  Frame ``k`` is
    the texture strip starting at column ``k * shift``.
    """

    FX = 64.0
    DEPTH = 2.0

    def __init__(self, n_frames: int, shift: int = 4, width: int = 64, height: int = 48, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.K = Intrinsics(self.FX, self.FX, 31.5, 23.5, baseline=0.25)
        tex = smooth_texture(height, width + shift * n_frames, rng)
        self.images = [GrayImage(tex[:, k * shift:k * shift + width]) for k in range(n_frames)]
        step = shift * self.DEPTH / self.FX
        self.poses = [Pose(np.eye(3), [-k * step, 0.0, 0.0]) for k in range(n_frames)]
        d = self.FX * self.K.baseline / self.DEPTH
        self.disparities = [DisparityMap(np.full((height, width), d)) for _ in range(n_frames)]


def make_points(seq: ShiftSequence, ref: int, pixels, frames, radius: int = 1, start_id: int = 0):
    """Scene points at ``pixels`` of frame ``ref`` at the true depth, visible in ``frames``."""
    img = seq.images[ref]
    pts = []
    for n, (u, v) in enumerate(pixels):
        Xc = np.array([(u - seq.K.cx) / seq.K.fx * seq.DEPTH, (v - seq.K.cy) / seq.K.fy * seq.DEPTH,
                       seq.DEPTH])
        X = seq.poses[ref].inverse().apply(Xc)
        p = ScenePoint(start_id + n, X, ref, (float(u), float(v)),
                       extract_patch(img, (u, v), radius), extract_patch(img, (u, v), 2))
        for k in frames:
            p.add_visible(k)
        pts.append(p)
    return pts


def shift_window(n_frames: int = 3, n_points: int = 12, radius: int = 1, seed: int = 0,
                 shift: int = 4) -> tuple:
    """A window over a :class:`ShiftSequence` at ground truth, plus the sequence."""
    seq = ShiftSequence(n_frames, shift=shift, seed=seed)
    rng = np.random.default_rng(seed + 1)
    frames = [Frame(k, seq.images[k], seq.poses[k]) for k in range(n_frames)]
    margin = shift * n_frames + radius + 2
    us = rng.integers(margin, seq.images[0].width - margin, n_points)
    vs = rng.integers(radius + 3, seq.images[0].height - radius - 3, n_points)
    pts = make_points(seq, 0, zip(us, vs), range(1, n_frames), radius)
    return SlidingWindow(seq.K, frames, pts), seq


def frame_rasters(frames):
    out = []
    for f in frames:
        img = f.image if isinstance(f, GrayImage) else f
        gx, gy = gradients(img)
        out.append((img.data, gx, gy))
    return out
