"""Photometric bundle adjustment over sliding windows of image frames."""

from .ba import (
    NormalEquations,
    Observation,
    ObservationSet,
    SolverConfig,
    SolveReport,
    build_normal_equations,
    evaluate_observation,
    evaluate_observations,
    optimize_window,
    robust_weight,
    schur_solve,
)
from .geometry import (
    Intrinsics,
    Pose,
    project,
    projection_jacobian,
    se3_exp,
    se3_log,
    triangulate_stereo,
)
from .image import GrayImage, extract_patch, gradient_magnitude, gradients, sample_bilinear, zncc
from .io import load_sequence, read_trajectory, relative_error, write_trajectory
from .pipeline import Pipeline, PipelineConfig
from .selection import OccupancyMask, SelectionConfig, mark_occupied, select_pixels
from .stereo import DisparityMap, StereoConfig, block_match, init_points_from_disparity
from .synthetic import SyntheticScene, make_scene, make_sequence, perturb_poses, render_synthetic
from .visibility import ScenePoint, VisibilityConfig, update_visibility
from .window import Frame, SlidingWindow

__version__ = "0.1.0"
