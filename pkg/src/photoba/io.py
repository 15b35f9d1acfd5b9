"""Dataset reading/writing and KITTI-style relative pose error.

Dataset layout::

    seq/
      000000.pgm 000001.pgm ...   left images, 8-bit
      poses.txt                   12 floats per line, row-major 3x4 camera-to-world
      calib.txt                   fx= fy= cx= cy= baseline=
      right/000000.pgm ...        optional right images
      disparity/000000.pgm ...    optional 16-bit disparity, value/256 px, 0 = invalid

KITTI odometry folders (``image_0/``, ``image_1/``, ``calib.txt`` with
projection matrices) are read as well; their poses come from a separate file.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Intrinsics, Pose, rotation_angle
from .image import GrayImage
from .stereo import DisparityMap

IMAGE_SUFFIXES = (".pgm", ".png")
DEFAULT_SEGMENT_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)


class DatasetError(ValueError):
    pass


# --- trajectories ------------------------------------------------------------

def read_trajectory(path) -> np.ndarray:
    """Camera-to-world 4x4 matrices, shape (N, 4, 4)."""
    path = Path(path)
    mats = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                vals = [float(v) for v in line.split()]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: unparsable value ({exc})") from None
            if len(vals) != 12 or not np.all(np.isfinite(vals)):
                raise DatasetError(f"{path}:{lineno}: expected 12 finite floats, got {len(vals)} values")
            M = np.eye(4)
            M[:3, :] = np.reshape(vals, (3, 4))
            R = M[:3, :3]
            if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1) > 1e-6:
                raise DatasetError(f"{path}:{lineno}: rotation block is not orthonormal")
            mats.append(M)
    return np.array(mats).reshape(-1, 4, 4)


def write_trajectory(path, mats) -> None:
    with open(path, "w") as fh:
        for M in np.asarray(mats).reshape(-1, 4, 4):
            fh.write(" ".join(f"{v:.15e}" for v in M[:3, :].ravel()) + "\n")


def poses_from_c2w(mats) -> list:
    """World-to-camera poses from camera-to-world matrices."""
    return [Pose.from_matrix(M).inverse() for M in np.asarray(mats).reshape(-1, 4, 4)]


def c2w_from_poses(poses) -> np.ndarray:
    return np.array([p.inverse().matrix() for p in poses]).reshape(-1, 4, 4)


# --- calibration and images --------------------------------------------------

_CALIB_RE = re.compile(r"(fx|fy|cx|cy|baseline)\s*[=:]\s*([-+0-9.eE]+)")


def read_calib(path) -> Intrinsics:
    vals = dict(_CALIB_RE.findall(Path(path).read_text()))
    missing = {"fx", "fy", "cx", "cy"} - vals.keys()
    if missing:
        raise DatasetError(f"{path}: missing calibration keys {sorted(missing)}")
    try:
        return Intrinsics(**{k: float(v) for k, v in vals.items()})
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def read_kitti_calib(path) -> Intrinsics:
    """Left intrinsics and stereo baseline from a KITTI ``P0:``/``P1:`` calib file."""
    mats = {}
    for line in Path(path).read_text().splitlines():
        key, _, rest = line.partition(":")
        if key.strip() in ("P0", "P1"):
            mats[key.strip()] = np.array([float(v) for v in rest.split()]).reshape(3, 4)
    if "P0" not in mats:
        raise DatasetError(f"{path}: no P0 projection matrix")
    P0 = mats["P0"]
    baseline = -mats["P1"][0, 3] / mats["P1"][0, 0] if "P1" in mats else 0.0
    return Intrinsics(P0[0, 0], P0[1, 1], P0[0, 2], P0[1, 2], baseline)


def write_calib(path, K: Intrinsics) -> None:
    Path(path).write_text(f"fx={K.fx!r}\nfy={K.fy!r}\ncx={K.cx!r}\ncy={K.cy!r}\nbaseline={K.baseline!r}\n")


def load_image(path) -> GrayImage:
    try:
        with Image.open(path) as im:
            raw = np.array(im.convert("L") if im.mode not in ("L", "I;16", "I") else im)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from None
    if raw.dtype == np.uint8:
        return GrayImage.from_uint8(raw)
    raise DatasetError(f"{path}: expected an 8-bit grayscale image, got {raw.dtype}")


def save_image(path, img: GrayImage) -> None:
    Image.fromarray(np.round(img.data * 255.0).astype(np.uint8)).save(path)


def read_disparity_pgm(path) -> DisparityMap:
    with Image.open(path) as im:
        raw = np.array(im).astype(np.float64)
    return DisparityMap(np.where(raw > 0, raw / 256.0, np.nan))


def write_disparity_pgm(path, dmap: DisparityMap) -> None:
    d = np.nan_to_num(dmap.disp, nan=0.0)
    raw = np.clip(np.round(d * 256.0), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


# --- sequences ---------------------------------------------------------------

@dataclass
class SequenceFrame:
    index: int
    name: str
    image: GrayImage
    pose_init: Pose
    right: GrayImage | None = None
    disparity: DisparityMap | None = None


class Sequence:
    """A dataset directory; frames are read lazily in name order.

    ``poses`` overrides ``<root>/poses.txt`` (required for KITTI folders,
    which keep poses elsewhere).
    """

    def __init__(self, root, poses=None):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DatasetError(f"{self.root} is not a directory")
        self.kitti = (self.root / "image_0").is_dir()
        self.left_dir = self.root / "image_0" if self.kitti else self.root
        self.right_dir = self.root / ("image_1" if self.kitti else "right")
        calib = self.root / "calib.txt"
        poses = Path(poses) if poses is not None else self.root / "poses.txt"
        if not calib.exists():
            raise DatasetError(f"{self.root}: calib.txt not found")
        if not poses.exists():
            raise DatasetError(f"{self.root}: pose file {poses.name} not found")
        self.K = read_kitti_calib(calib) if self.kitti else read_calib(calib)
        self.image_paths = sorted(p for p in self.left_dir.iterdir()
                                  if p.suffix.lower() in IMAGE_SUFFIXES and p.stem.isdigit())
        if not self.image_paths:
            raise DatasetError(f"{self.root}: no images found")
        self.c2w = read_trajectory(poses)
        if len(self.c2w) != len(self.image_paths):
            raise DatasetError(f"{self.root}: {len(self.image_paths)} images but "
                               f"{len(self.c2w)} pose lines in {poses.name}")

    def __len__(self) -> int:
        return len(self.image_paths)

    def _sidecar(self, d: Path, stem: str):
        for suffix in IMAGE_SUFFIXES:
            p = d / (stem + suffix)
            if p.exists():
                return p
        return None

    @property
    def has_right(self) -> bool:
        return self.right_dir.is_dir()

    @property
    def has_disparity(self) -> bool:
        return (self.root / "disparity").is_dir()

    def __iter__(self):
        for i, path in enumerate(self.image_paths):
            right = self._sidecar(self.right_dir, path.stem)
            disp = self._sidecar(self.root / "disparity", path.stem)
            yield SequenceFrame(
                index=i,
                name=path.stem,
                image=load_image(path),
                pose_init=Pose.from_matrix(self.c2w[i]).inverse(),
                right=load_image(right) if right is not None else None,
                disparity=read_disparity_pgm(disp) if disp is not None else None,
            )


def load_sequence(root, poses=None) -> Sequence:
    return Sequence(root, poses)


def save_sequence(root, images, c2w, K: Intrinsics, disparities=None, rights=None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        save_image(root / f"{i:06d}.pgm", img)
    if disparities is not None:
        (root / "disparity").mkdir(exist_ok=True)
        for i, d in enumerate(disparities):
            write_disparity_pgm(root / "disparity" / f"{i:06d}.pgm", d)
    if rights is not None:
        (root / "right").mkdir(exist_ok=True)
        for i, img in enumerate(rights):
            save_image(root / "right" / f"{i:06d}.pgm", img)
    write_trajectory(root / "poses.txt", c2w)
    write_calib(root / "calib.txt", K)
    return root


# --- result files -------------------------------------------------------------

def write_points_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y", "z", "ref_frame", "n_visible"])
        for p in points:
            w.writerow([p.id, repr(float(p.position[0])), repr(float(p.position[1])),
                        repr(float(p.position[2])), p.ref_frame, len(p.visibility)])


def write_iterations_csv(path, records) -> None:
    """``records`` yields ``(window, IterationRecord, n_residuals)`` triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "iteration", "cost", "damping", "step_norm", "n_observations",
                    "n_residuals", "accepted"])
        for window, rec, n_res in records:
            w.writerow([window, rec.iteration, repr(rec.cost), repr(rec.damping), repr(rec.step_norm),
                        rec.n_observations, n_res, int(rec.accepted)])


# --- evaluation -----------------------------------------------------------------

def trajectory_distances(c2w) -> np.ndarray:
    c = np.asarray(c2w)[:, :3, 3]
    steps = np.linalg.norm(np.diff(c, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _last_frame(dist, first, length):
    # strict '>' as in the KITTI devkit
    idx = np.nonzero(dist[first:] > dist[first] + length)[0]
    return first + int(idx[0]) if len(idx) else -1


def relative_error(estimated, ground_truth, lengths=DEFAULT_SEGMENT_LENGTHS, step: int = 10):
    """KITTI odometry segment errors.

    Both inputs are camera-to-world matrices (N, 4, 4).  Returns a dict
    ``length -> (translation_percent, rotation_deg_per_m, n_segments)`` for
    every length that has at least one segment; empty when the trajectory
    is shorter than all lengths.
    """
    est = np.asarray(estimated, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    if est.shape != gt.shape:
        raise ValueError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    dist = trajectory_distances(gt)
    errs = {L: [] for L in lengths}
    for first in range(0, len(gt), step):
        for L in lengths:
            last = _last_frame(dist, first, L)
            if last < 0:
                continue
            d_gt = np.linalg.inv(gt[first]) @ gt[last]
            d_est = np.linalg.inv(est[first]) @ est[last]
            E = np.linalg.inv(d_est) @ d_gt
            errs[L].append((np.linalg.norm(E[:3, 3]) / L, rotation_angle(E[:3, :3]) / L))
    out = {}
    for L, e in errs.items():
        if e:
            a = np.array(e)
            out[L] = (100.0 * float(a[:, 0].mean()), float(np.degrees(a[:, 1].mean())), len(e))
    return out


def pose_errors(estimated, ground_truth):
    """Per-frame (rotation deg, camera-center distance) between pose lists."""
    rot, trans = [], []
    for e, g in zip(estimated, ground_truth):
        rot.append(np.degrees(rotation_angle(e.R @ g.R.T)))
        trans.append(float(np.linalg.norm(e.center - g.center)))
    return np.array(rot), np.array(trans)
