"""Frame-by-frame processing and sliding-window refinement."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from .ba import SolverConfig, SolveReport, optimize_window
from .geometry import MIN_DISPARITY, Intrinsics, Pose
from .image import GrayImage, extract_patch
from .selection import SelectionConfig, select_pixels
from .stereo import DisparityMap, StereoConfig, block_match, init_points_from_disparity
from .visibility import ScenePoint, VisibilityConfig, gate_points, update_visibility
from .window import Frame, SlidingWindow

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline in one flat record.

    The defaults are the published settings: patch radius 1, NMS radius
    1, visibility updates within 2 frames, ZNCC > 0.6 on 5x5 patches and
    a five-frame window.
    """

    window_size: int = 5
    stride: int = 4
    # selection
    nms_radius: int = 1
    mask_block_radius: int = 1
    min_gradient: float = 0.0
    # visibility
    zncc_threshold: float = 0.6
    max_frame_distance: int = 2
    zncc_patch_radius: int = 2
    backward_visibility: bool = True
    # solver
    patch_radius: int = 1
    max_iterations: int = 100
    function_tolerance: float = 1e-6
    gradient_tolerance: float = 1e-6
    parameter_tolerance: float = 1e-6
    huber_delta: float = 0.1
    initial_damping: float = 1e-4
    min_damping: float = 1e-12
    max_damping: float = 1e8
    # stereo
    max_disparity: int = 128
    sad_radius: int = 3
    lr_tolerance: float = 1.0
    min_disparity: float = MIN_DISPARITY
    # initialization
    init_source: str = "auto"      # auto | stereo | disparity
    pose_init: str = "external"    # external | chain

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        if not 1 <= self.stride <= self.window_size - 1:
            raise ValueError("stride must leave at least one shared frame (1 <= stride < window_size)")
        if self.init_source not in ("auto", "stereo", "disparity"):
            raise ValueError(f"unknown init_source {self.init_source!r}")
        if self.pose_init not in ("external", "chain"):
            raise ValueError(f"unknown pose_init {self.pose_init!r}")
        # validate the derived configs eagerly
        self.selection(), self.visibility(), self.solver(), self.stereo()

    def selection(self) -> SelectionConfig:
        return SelectionConfig(self.nms_radius, self.mask_block_radius, self.min_gradient)

    def visibility(self) -> VisibilityConfig:
        return VisibilityConfig(self.zncc_threshold, self.max_frame_distance, self.zncc_patch_radius,
                                self.mask_block_radius)

    def solver(self) -> SolverConfig:
        return SolverConfig(
            patch_radius=self.patch_radius, max_iterations=self.max_iterations,
            function_tolerance=self.function_tolerance, gradient_tolerance=self.gradient_tolerance,
            parameter_tolerance=self.parameter_tolerance, huber_delta=self.huber_delta,
            initial_damping=self.initial_damping, min_damping=self.min_damping,
            max_damping=self.max_damping,
        )

    def stereo(self) -> StereoConfig:
        return StereoConfig(self.max_disparity, self.sad_radius, self.lr_tolerance)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]


@dataclass
class FrameReport:
    frame_id: int
    n_connected: int
    n_selected: int
    n_new_points: int
    n_backward: int


@dataclass
class WindowResult:
    index: int
    frame_ids: list
    report: SolveReport
    patch_size: int


class Pipeline:
    """Runs frame ingestion (visibility, then new points) and window solves.

    Feed frames in order with :meth:`process_frame`; a solve runs each
    time the window fills.  Call :meth:`finish` after the last frame to
    refine the trailing partial window and retire every point.
    """

    def __init__(self, K: Intrinsics, config: PipelineConfig | None = None):
        self.K = K
        self.config = config or PipelineConfig()
        self.window = SlidingWindow(K)
        self.poses: dict = {}
        self.init_poses: dict = {}
        self.retired: list = []
        self.windows: list = []
        self.frame_reports: list = []
        self._next_frame = 0
        self._next_point = 0
        self._dirty = False
        # frames and points that left the window at the last slide; the
        # trailing partial window is solved against them in finish()
        self._slid_frames: list = []
        self._slid_points: list = []

    # -- pose initialization --
    def _initial_pose(self, fid: int, pose_init: Pose | None) -> Pose:
        prev = self.poses.get(fid - 1)
        if pose_init is not None:
            self.init_poses[fid] = pose_init
            if self.config.pose_init == "chain" and prev is not None and (fid - 1) in self.init_poses:
                rel = pose_init @ self.init_poses[fid - 1].inverse()
                return rel @ prev
            return pose_init
        if prev is None:
            return Pose.identity()
        prev2 = self.poses.get(fid - 2)
        if prev2 is None:
            return prev
        return (prev @ prev2.inverse()) @ prev

    def _disparity(self, image: GrayImage, right, disparity) -> DisparityMap | None:
        src = self.config.init_source
        if disparity is not None and src in ("auto", "disparity"):
            return disparity if isinstance(disparity, DisparityMap) else DisparityMap(np.asarray(disparity))
        if right is not None and src in ("auto", "stereo"):
            return block_match(image, right, self.config.stereo())
        return None

    def process_frame(self, image, pose_init: Pose | None = None, right=None,
                      disparity=None) -> FrameReport:
        cfg = self.config
        image = image if isinstance(image, GrayImage) else GrayImage(image)
        fid = self._next_frame
        self._next_frame += 1
        frame = Frame(fid, image, self._initial_pose(fid, pose_init))
        vis_cfg = cfg.visibility()

        # Step 1: connect existing points to this frame
        before = sum(len(p.visibility) for p in self.window.points)
        _, mask = update_visibility(fid, image, frame.pose, self.window.points, self.K, vis_cfg)
        n_connected = sum(len(p.visibility) for p in self.window.points) - before

        # Step 2: new points on unmasked gradient maxima
        n_selected = n_new = n_back = 0
        dmap = self._disparity(image, right, disparity)
        if dmap is None:
            log.info("frame %d: no depth source, skipping new points", fid)
        else:
            border = max(cfg.patch_radius, cfg.zncc_patch_radius)
            pixels = select_pixels(image, mask, cfg.selection(), patch_radius=border,
                                   grad_mag=np.hypot(frame.gx, frame.gy))
            n_selected = len(pixels)
            X, keep = init_points_from_disparity(dmap, pixels, self.K, frame.pose, cfg.min_disparity)
            new_points = []
            for x, px in zip(X, pixels[keep]):
                c = (float(px[0]), float(px[1]))
                new_points.append(ScenePoint(
                    id=self._next_point, position=x, ref_frame=fid, ref_pixel=c,
                    ref_patch=extract_patch(image, c, cfg.patch_radius),
                    gate_patch=extract_patch(image, c, cfg.zncc_patch_radius)))
                self._next_point += 1
            if cfg.backward_visibility:
                n_back = self._connect_backward(fid, new_points, vis_cfg)
            self.window.points.extend(new_points)
            n_new = len(new_points)

        self.window.add_frame(frame)
        self.poses[fid] = frame.pose
        self._dirty = True
        report = FrameReport(fid, n_connected, n_selected, n_new, n_back)
        self.frame_reports.append(report)
        log.debug("%s", report)
        if len(self.window) >= cfg.window_size:
            self.slide_and_optimize()
        return report

    def _connect_backward(self, fid: int, points: list, vis_cfg: VisibilityConfig) -> int:
        n = 0
        for frame in self.window.frames:
            if abs(fid - frame.id) > vis_cfg.max_frame_distance:
                continue
            accepted, _ = gate_points(points, frame.id, frame.image, frame.pose, self.K, vis_cfg)
            for i in np.nonzero(accepted)[0]:
                n += points[i].add_visible(frame.id)
        return n

    # -- window management --
    def slide_and_optimize(self) -> WindowResult:
        cfg = self.config
        result = self._optimize()
        self._slid_frames = self.window.frames[:cfg.stride]
        self.window.frames = self.window.frames[cfg.stride:]
        n_before = len(self.retired)
        self._retire()
        self._slid_points = self.retired[n_before:]
        return result

    def _optimize(self, window: SlidingWindow | None = None, n_fixed: int = 1) -> WindowResult:
        window = window or self.window
        report = optimize_window(window, self.config.solver(), fixed_frames=range(n_fixed))
        for f in window.frames:
            self.poses[f.id] = f.pose
        result = WindowResult(len(self.windows), window.frame_ids, report,
                              (2 * self.config.patch_radius + 1) ** 2)
        self.windows.append(result)
        self._dirty = False
        log.info("window %d frames %s: %s after %d iterations, cost %.6g -> %.6g (%d points, %d obs)",
                 result.index, result.frame_ids, report.status, report.iterations,
                 report.initial_cost, report.final_cost, report.n_points, report.n_observations)
        return result

    def _retire(self, everything: bool = False) -> None:
        start = self.window.frames[0].id if self.window.frames else self._next_frame
        horizon = self._next_frame - self.config.max_frame_distance
        active = []
        for p in self.window.points:
            alive = not everything and (any(k >= start for k in p.visibility) or p.ref_frame >= horizon)
            if alive:
                active.append(p)
            elif p.visibility:
                self.retired.append(p)
        self.window.points = active

    def finish(self) -> None:
        """Refine the trailing partial window (if any) and retire all points.

        Frames that arrived after the last full window are solved together
        with the most recent already-refined frames, which stay fixed, so
        the tail gets the same multi-view support as a full window.
        """
        if len(self.window) >= 2 and self._dirty:
            frames = (self._slid_frames + self.window.frames)[-self.config.window_size:]
            n_fixed = len(frames) - (len(self.window) - 1) if self._slid_frames else 1
            tail = SlidingWindow(self.K, frames, self._slid_points + self.window.points)
            self._optimize(tail, n_fixed)
        self._retire(everything=True)

    # -- results --
    def trajectory(self) -> list:
        return [self.poses[i] for i in range(self._next_frame)]

    def all_points(self) -> list:
        return sorted(self.retired + self.window.points, key=lambda p: p.id)
