"""Command line: ``photoba refine | synth | eval``.

Every PipelineConfig field is a flag (``--patch-radius 2``); ``--config``
reads the same keys from a TOML (or JSON) file.  Precedence is
defaults < file < flags.  Exit codes: 0 success, 2 input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .geometry import GeometryError
from .io import (
    DEFAULT_SEGMENT_LENGTHS,
    DatasetError,
    c2w_from_poses,
    load_sequence,
    pose_errors,
    read_trajectory,
    relative_error,
    save_sequence,
    write_iterations_csv,
    write_points_csv,
    write_trajectory,
)
from .pipeline import Pipeline, PipelineConfig
from .synthetic import SCENARIOS, make_sequence, perturb_poses

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
CONVERGED = ("function_tolerance", "gradient_tolerance", "parameter_tolerance")

log = logging.getLogger("photoba")


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


class NumericalFailure(Exception):
    """No window converged; reported with exit code 3."""


# --- configuration -----------------------------------------------------------

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("pipeline parameters (defaults in brackets)")
    defaults = PipelineConfig()
    for f in fields(PipelineConfig):
        default = getattr(defaults, f.name)
        kw = dict(dest=f.name, default=argparse.SUPPRESS, help=f"[{default}]")
        if isinstance(default, bool):
            group.add_argument(_flag(f.name), action=argparse.BooleanOptionalAction, **kw)
        else:
            group.add_argument(_flag(f.name), type=type(default), metavar=f.name.upper(), **kw)


def read_config_file(path) -> dict:
    """Pipeline settings from TOML or JSON; keys may use dashes or underscores.

    A ``[pipeline]`` table (or ``"pipeline"`` object, as in ``config_used.json``)
    is used when present, otherwise the top level.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    data = data.get("pipeline", data)
    known = set(PipelineConfig.field_names())
    out = {}
    for key, value in data.items():
        name = key.replace("-", "_")
        if name not in known:
            raise InputError(f"{path}: unknown setting {key!r}")
        out[name] = value
    return out


def build_config(args: argparse.Namespace) -> PipelineConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in PipelineConfig.field_names():
        if hasattr(args, name):
            values[name] = getattr(args, name)
    try:
        return PipelineConfig(**values)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid configuration: {exc}") from None


def _write_config_used(out: Path, command: str, cfg: PipelineConfig, **extra) -> None:
    record = {"command": command, **extra, "pipeline": cfg.to_dict()}
    (out / "config_used.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


# --- refine --------------------------------------------------------------------

def refine_sequence(seq, cfg: PipelineConfig) -> Pipeline:
    """Run the pipeline over a loaded :class:`~photoba.io.Sequence`."""
    if len(seq) < 2:
        raise InputError(f"{seq.root}: need at least two frames, found {len(seq)}")
    pipe = Pipeline(seq.K, cfg)
    try:
        for frame in seq:
            pipe.process_frame(frame.image, frame.pose_init, right=frame.right,
                               disparity=frame.disparity)
        pipe.finish()
    except (GeometryError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericalFailure(f"numerical failure: {exc}") from None
    if not any(w.report.status in CONVERGED for w in pipe.windows):
        raise NumericalFailure("no window converged")
    return pipe


def write_results(out: Path, pipe: Pipeline) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / "trajectory.txt", c2w_from_poses(pipe.trajectory()))
    write_points_csv(out / "points.csv", pipe.all_points())
    write_iterations_csv(out / "iterations.csv", (
        (w.index, rec, rec.n_observations * w.patch_size)
        for w in pipe.windows for rec in w.report.history))


def _summarize(pipe: Pipeline) -> None:
    for w in pipe.windows:
        r = w.report
        log.info("window %d %s: %s, %d iterations, cost %.6g -> %.6g",
                 w.index, w.frame_ids, r.status, r.iterations, r.initial_cost, r.final_cost)


def cmd_refine(args) -> int:
    cfg = build_config(args)
    seq = load_sequence(args.input, args.poses)
    out = Path(args.output) if args.output else Path(args.input) / "photoba_out"
    log.info("refining %d frames from %s", len(seq), seq.root)
    pipe = refine_sequence(seq, cfg)
    write_results(out, pipe)
    _write_config_used(out, "refine", cfg, input=str(args.input),
                       poses=str(args.poses) if args.poses else None,
                       seed=args.seed, threads=args.threads)
    _summarize(pipe)
    log.info("wrote %s", out)
    return EXIT_OK


# --- synth ----------------------------------------------------------------------

ERROR_COLUMNS = ["frame", "rot_before_deg", "trans_before", "rot_after_deg", "trans_after"]


def cmd_synth(args) -> int:
    if args.scenario not in SCENARIOS:
        raise InputError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    if args.frames < 2:
        raise InputError("--frames must be at least 2")
    cfg = build_config(args)
    out = Path(args.output)
    seq = make_sequence(args.scenario, args.frames, seed=args.seed, width=args.width,
                        height=args.height)
    rng = np.random.default_rng(args.seed)
    init = perturb_poses(seq.gt_poses, args.sigma_rot, args.sigma_trans * seq.scene.scale, rng)
    disparities = seq.disparities(args.depth_noise, rng)
    data = save_sequence(out / "dataset", seq.images, c2w_from_poses(init), seq.K,
                         disparities=disparities,
                         rights=seq.right_images() if args.with_right else None)
    write_trajectory(out / "gt_poses.txt", c2w_from_poses(seq.gt_poses))

    pipe = refine_sequence(load_sequence(data), cfg)
    write_results(out, pipe)
    _write_config_used(out, "synth", cfg, scenario=args.scenario, frames=args.frames,
                       sigma_rot=args.sigma_rot, sigma_trans=args.sigma_trans,
                       depth_noise=args.depth_noise, width=args.width, height=args.height,
                       seed=args.seed, threads=args.threads, scene_scale=seq.scene.scale)
    _summarize(pipe)

    # compare against what refine actually saw (poses as written to disk)
    seen = [f.pose_init for f in load_sequence(data)]
    rb, tb = pose_errors(seen, seq.gt_poses)
    ra, ta = pose_errors(pipe.trajectory(), seq.gt_poses)
    rows = [[k, repr(float(rb[k])), repr(float(tb[k])), repr(float(ra[k])), repr(float(ta[k]))]
            for k in range(len(rb))]
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ERROR_COLUMNS)
        w.writerows(rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(ERROR_COLUMNS)
    w.writerows(rows)
    length = float(np.sum(np.linalg.norm(np.diff([p.center for p in seq.gt_poses], axis=0), axis=1)))
    log.info("mean rotation error %.4f -> %.4f deg, translation %.4f%% -> %.4f%% of path length",
             rb[1:].mean(), ra[1:].mean(), 100 * tb[1:].mean() / length, 100 * ta[1:].mean() / length)
    return EXIT_OK


# --- eval -------------------------------------------------------------------------

def _lengths(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("segment lengths must be positive")
    return [int(v) if v == int(v) else v for v in vals]


def cmd_eval(args) -> int:
    est = read_trajectory(args.estimate)
    gt = read_trajectory(args.ground_truth)
    if len(est) != len(gt):
        raise InputError(f"trajectory lengths differ: {args.estimate} has {len(est)} poses, "
                         f"{args.ground_truth} has {len(gt)}")
    table = relative_error(est, gt, args.lengths, args.step)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["length", "translation_pct", "rotation_deg_per_m", "segments"])
    for L, (t_pct, r_dpm, n) in table.items():
        w.writerow([L, repr(t_pct), repr(r_dpm), n])
    if not table:
        log.warning("trajectory shorter than the smallest segment length; no segments evaluated")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    common.add_argument("-q", "--quiet", action="store_true", help="errors only")
    common.add_argument("--seed", type=int, default=0, help="random seed [0]")
    common.add_argument("--threads", type=int, default=1,
                        help="worker count (recorded; the solver is vectorized and single-threaded)")

    tuned = argparse.ArgumentParser(add_help=False)
    tuned.add_argument("--config", metavar="FILE", help="TOML or JSON file with pipeline settings")
    _add_pipeline_flags(tuned)

    parser = argparse.ArgumentParser(prog="photoba", description="Photometric bundle adjustment.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", parents=[common, tuned], help="refine a dataset's trajectory")
    p.add_argument("input", help="dataset directory")
    p.add_argument("-o", "--output", help="output directory [INPUT/photoba_out]")
    p.add_argument("--poses", help="initial camera-to-world poses (default INPUT/poses.txt)")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("synth", parents=[common, tuned], help="synthetic ground-truth experiment")
    p.add_argument("-s", "--scenario", default="plane", help=f"one of {', '.join(SCENARIOS)} [plane]")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=10, help="[10]")
    p.add_argument("--sigma-rot", type=float, default=0.01, help="RMS rotation noise, rad [0.01]")
    p.add_argument("--sigma-trans", type=float, default=0.01,
                   help="RMS translation noise as a fraction of scene scale [0.01]")
    p.add_argument("--depth-noise", type=float, default=0.01, help="relative depth noise [0.01]")
    p.add_argument("--width", type=int, default=640, help="[640]")
    p.add_argument("--height", type=int, default=480, help="[480]")
    p.add_argument("--with-right", action="store_true", help="also render right stereo images")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", parents=[common], help="KITTI-style relative pose error")
    p.add_argument("estimate")
    p.add_argument("ground_truth")
    p.add_argument("--lengths", type=_lengths, default=list(DEFAULT_SEGMENT_LENGTHS),
                   help="comma-separated segment lengths [100,...,800]")
    p.add_argument("--step", type=int, default=10, help="start-frame stride [10]")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # argparse reports usage errors with status 2
        return int(exc.code or 0)
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except (InputError, DatasetError, FileNotFoundError) as exc:
        print(f"photoba: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"photoba: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
