import copy

import numpy as np
import pytest

from photoba.geometry import Pose, project_points, se3_exp
from photoba.image import GrayImage
from photoba.selection import OccupancyMask
from photoba.visibility import ScenePoint, VisibilityConfig, gate_points, update_visibility

from conftest import ShiftSequence, make_points


@pytest.fixture
def seq():
    return ShiftSequence(4, shift=2, seed=7)


def grid_pixels(img, step=6, margin=8):
    return [(u, v) for v in range(margin, img.height - margin, step)
            for u in range(margin, img.width - margin, step)]


def test_identical_frame_accepts_every_point(seq):
    img = seq.images[0]
    pts = make_points(seq, 0, grid_pixels(img), [])
    pts, mask = update_visibility(1, img, seq.poses[0], pts, seq.K)
    assert all(p.visibility == [1] for p in pts)
    for p in pts:
        u, v = (int(c) for c in p.ref_pixel)
        assert not mask.valid[v - 1:v + 2, u - 1:u + 2].any()


def test_true_motion_is_accepted(seq):
    pts = make_points(seq, 0, grid_pixels(seq.images[0]), [])
    update_visibility(2, seq.images[2], seq.poses[2], pts, seq.K)
    assert np.mean([p.visibility == [2] for p in pts]) > 0.9


def test_out_of_bounds_projection_leaves_state_unchanged(seq):
    pts = make_points(seq, 0, [(20, 20)], [])
    far = Pose(np.eye(3), [5.0, 0.0, 0.0])
    pts, mask = update_visibility(1, seq.images[1], far, pts, seq.K)
    assert pts[0].visibility == [] and mask.n_invalid() == 0


def test_behind_camera_is_rejected(seq):
    pts = make_points(seq, 0, [(20, 20)], [])
    behind = Pose(np.diag([1.0, -1.0, -1.0]), [0.0, 0.0, 0.0])
    update_visibility(1, seq.images[0], behind, pts, seq.K)
    assert pts[0].visibility == []


def test_inverted_frame_is_rejected(seq):
    img = seq.images[0]
    pts = make_points(seq, 0, grid_pixels(img), [])
    inverted = GrayImage(1.0 - img.data)
    accepted, uv = gate_points(pts, 1, inverted, seq.poses[0], seq.K, VisibilityConfig())
    assert not accepted.any()
    scores = [np.corrcoef(p.gate_patch, 1 - p.gate_patch)[0, 1] for p in pts]
    assert np.allclose(scores, -1.0)


def test_frame_distance_limit(seq):
    pts = make_points(seq, 0, grid_pixels(seq.images[0]), [])
    update_visibility(3, seq.images[3], seq.poses[3], pts, seq.K)   # |3 - 0| > 2
    assert all(p.visibility == [] for p in pts)
    cfg = VisibilityConfig(max_frame_distance=3)
    update_visibility(3, seq.images[3], seq.poses[3], pts, seq.K, cfg)
    assert any(p.visibility == [3] for p in pts)


def test_reference_frame_never_listed(seq):
    pts = make_points(seq, 1, grid_pixels(seq.images[1]), [])
    update_visibility(1, seq.images[1], seq.poses[1], pts, seq.K)
    assert all(p.visibility == [] for p in pts)
    assert not pts[0].add_visible(1)


def test_no_duplicate_entries(seq):
    pts = make_points(seq, 0, grid_pixels(seq.images[0]), [])
    for _ in range(3):
        update_visibility(1, seq.images[1], seq.poses[1], pts, seq.K)
    assert all(p.visibility.count(1) <= 1 for p in pts)


def test_mask_equals_union_of_accepted_blocks(rng):
    for trial in range(10):
        seq = ShiftSequence(3, shift=2, seed=trial)
        pts = make_points(seq, 0, grid_pixels(seq.images[0], step=4, margin=6), [])
        noisy = se3_exp(np.concatenate([rng.normal(0, 0.01, 3), rng.normal(0, 0.02, 3)])) @ seq.poses[1]
        cfg = VisibilityConfig(mask_block_radius=int(rng.integers(1, 3)))
        pts, mask = update_visibility(1, seq.images[1], noisy, pts, seq.K, cfg)
        uv, _ = project_points(noisy, seq.K, np.array([p.position for p in pts]))
        expected = np.ones(mask.shape, dtype=bool)
        h, w = mask.shape
        for p, (u, v) in zip(pts, uv):
            if 1 not in p.visibility:
                continue
            cx, cy = int(np.floor(u + 0.5)), int(np.floor(v + 0.5))
            for y in range(h):
                for x in range(w):
                    if max(abs(x - cx), abs(y - cy)) <= cfg.mask_block_radius:
                        expected[y, x] = False
        assert np.array_equal(mask.valid, expected)


def test_threshold_monotonicity(rng):
    for trial in range(20):
        seq = ShiftSequence(3, shift=2, seed=100 + trial)
        base = make_points(seq, 0, grid_pixels(seq.images[0], step=5, margin=6), [])
        pose = se3_exp(np.concatenate([rng.normal(0, 0.02, 3), rng.normal(0, 0.05, 3)])) @ seq.poses[1]
        lo, hi = np.sort(rng.uniform(-0.9, 0.95, 2))
        a = copy.deepcopy(base)
        b = copy.deepcopy(base)
        _, ma = update_visibility(1, seq.images[1], pose, a, seq.K, VisibilityConfig(zncc_threshold=lo))
        _, mb = update_visibility(1, seq.images[1], pose, b, seq.K, VisibilityConfig(zncc_threshold=hi))
        for pa, pb in zip(a, b):
            assert set(pb.visibility) <= set(pa.visibility)
        assert np.all(mb.valid | ~ma.valid)


def test_existing_mask_is_extended(seq):
    mask = OccupancyMask(seq.images[0].height, seq.images[0].width)
    mask.mark_occupied((2, 2))
    pts = make_points(seq, 0, [(30, 20)], [])
    _, out = update_visibility(1, seq.images[0], seq.poses[0], pts, seq.K, mask=mask)
    assert out is mask and out.n_invalid() == 9 + 9


def test_patches_are_frozen(seq):
    p = make_points(seq, 0, [(30, 20)], [])[0]
    with pytest.raises(ValueError):
        p.ref_patch[0] = 0.0
    assert isinstance(p, ScenePoint)


def test_config_validation():
    with pytest.raises(ValueError):
        VisibilityConfig(zncc_threshold=1.0)
    with pytest.raises(ValueError):
        VisibilityConfig(max_frame_distance=0)
