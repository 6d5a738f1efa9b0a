"""``vokit`` command line.

Exit codes: 0 success, 1 usage error, 2 data error. Metrics go to stdout;
files are written only through explicit output flags.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .correspondence import HomographyParams, gt_matches_depth, gt_matches_homography, sample_homography
from .epipolar import epipolar_errors
from .errors import (
    CheiralityTie,
    DegenerateConfiguration,
    InsufficientMatches,
    LengthMismatch,
    NoModelFound,
    TrajectoryTooShort,
    VokitError,
)
from .geometry import Pose, quat_to_rotmat, relative_pose
from .robust_pose import RansacParams, inlier_percentage, lo_ransac_pose, match_precision, pose_auc, pose_error
from .synthetic import DEFAULT_INTRINSICS, SyntheticSceneConfig, generate_synthetic_trajectory, synthetic_training_set
from .trajectory import KITTI_LENGTHS, LENGTH_PRESETS, AlignmentMode, accumulate, ate, kitti_score, rpe_score, rpe_steps

EXIT_USAGE = 1
EXIT_DATA = 2
_RANSAC_FAILURES = (InsufficientMatches, NoModelFound, CheiralityTie, DegenerateConfiguration)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _lengths(text):
    if text in LENGTH_PRESETS:
        return list(LENGTH_PRESETS[text])
    vals = _float_list(text)
    if any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("lengths must be positive")
    return vals


def _start_pose(text):
    try:
        vals = [float(v) for v in text.split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'tx ty tz qx qy qz qw', got {text!r}") from None
    if len(vals) != 7 or not np.all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError(f"expected 7 finite numbers 'tx ty tz qx qy qz qw', got {text!r}")
    try:
        return Pose(quat_to_rotmat(vals[3:]), vals[:3])
    except VokitError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _emit(args, doc, rows=None, fields=None):
    """Print ``doc`` as JSON, or ``rows`` as CSV when ``--output csv``."""
    if args.quiet:
        return
    if args.output == "csv" and rows is not None:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        sys.stdout.write(buf.getvalue())
    else:
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")


def _pair_poses(path, fmt, num_pairs):
    """Frame ``k`` and ``k + 1`` of a ground-truth trajectory belong to pair ``k``."""
    traj = fileio.load_trajectory(path, fmt)
    if len(traj) != num_pairs + 1:
        raise LengthMismatch(f"{num_pairs} pairs need {num_pairs + 1} poses in {path}, found {len(traj)}")
    return traj


# gen-gt ----------------------------------------------------------------------


def cmd_gen_gt(args):
    if args.mode == "depth":
        missing = [f for f in ("depth", "intrinsics", "pose_gt") if getattr(args, f) is None]
        if missing:
            raise UsageError("depth mode requires " + ", ".join("--" + m.replace("_", "-") for m in missing))
    pairs = list(fileio.iter_keypoint_pairs(args.matches))
    if not pairs:
        raise VokitError(f"{args.matches}: no keypoint pairs")
    k0 = k1 = None
    if args.intrinsics is not None:
        k0, k1 = fileio.load_intrinsics(args.intrinsics)
    traj = _pair_poses(args.pose_gt, args.pose_format, len(pairs)) if args.mode == "depth" else None
    results = []
    for k, p in enumerate(pairs):
        if args.mode == "homography":
            h = p.homography
            if h is None:
                if k0 is None:
                    raise UsageError(f"pair {p.pair_id} has no homography; pass --intrinsics to sample one")
                hp = HomographyParams(difficulty=args.difficulty, seed=args.seed + k)
                h = sample_homography(hp, (k0.width, k0.height))
            a = gt_matches_homography(p.kpts0, p.kpts1, h, args.radius)
        else:
            depth_path = Path(args.depth)
            if depth_path.is_dir():
                depth_path = depth_path / f"{p.pair_id}.pfm"
            depth = fileio.load_depth_pfm(depth_path)
            t_rel = relative_pose(traj[k + 1], traj[k])
            a = gt_matches_depth(
                p.kpts0, p.kpts1, depth, k0, k1, t_rel, args.radius, p.colors0, p.colors1, args.color_threshold
            )
        results.append((p.pair_id, a, len(p.kpts0), len(p.kpts1)))
    fileio.save_assignments([(pid, a) for pid, a, _, _ in results], args.out, seed=args.seed)
    rows = [{"pair_id": pid, "num_kpts0": n0, "num_kpts1": n1, "num_matches": a.num_matches} for pid, a, n0, n1 in results]
    doc = {"seed": args.seed, "mode": args.mode, "radius": args.radius, "pairs": rows, "total_matches": sum(r["num_matches"] for r in rows)}
    _emit(args, doc, rows, ["pair_id", "num_kpts0", "num_kpts1", "num_matches"])


# eval-matches ----------------------------------------------------------------


def cmd_eval_matches(args):
    matchsets = fileio.load_matches(args.matches)
    if not matchsets:
        raise VokitError(f"{args.matches}: empty match file")
    k0, k1 = fileio.load_intrinsics(args.intrinsics)
    traj = _pair_poses(args.pose_gt, args.pose_format, len(matchsets))
    per_pair, errors = [], []
    for k, m in enumerate(matchsets):
        t_rel = relative_pose(traj[k + 1], traj[k])
        row = {"pair_id": m.pair_id, "num_matches": len(m)}
        if len(m):
            prec = match_precision(epipolar_errors(m, t_rel, k0, k1), args.thresholds)
        else:
            prec = [0.0] * len(args.thresholds)
        row["precision"] = dict(zip((format(t, "g") for t in args.thresholds), prec))
        params = RansacParams(
            max_iterations=args.max_iterations, inlier_threshold=args.inlier_threshold, seed=args.seed + k
        )
        try:
            est = lo_ransac_pose(m, k0, k1, params)
            err = pose_error(est, t_rel)
            row["pose_error_deg"] = err
            row["inlier_pct"] = inlier_percentage(est)
            row["failure"] = None
        except _RANSAC_FAILURES as e:
            err = float("inf")
            row["pose_error_deg"] = None
            row["inlier_pct"] = 0.0
            row["failure"] = type(e).__name__
        errors.append(err)
        per_pair.append(row)
    auc = pose_auc(errors, args.auc_thresholds)
    total = sum(r["num_matches"] for r in per_pair)
    agg_prec = {
        key: (sum(r["precision"][key] * r["num_matches"] for r in per_pair) / total if total else 0.0)
        for key in per_pair[0]["precision"]
    }
    doc = {
        "seed": args.seed,
        "num_pairs": len(per_pair),
        "aggregate": {
            "auc": {format(t, "g"): a for t, a in zip(args.auc_thresholds, auc)},
            "precision": agg_prec,
            "mean_inlier_pct": float(np.mean([r["inlier_pct"] for r in per_pair])),
            "failures": sum(r["failure"] is not None for r in per_pair),
        },
        "pairs": per_pair,
    }
    fields = ["pair_id", "num_matches", "pose_error_deg", "inlier_pct", "failure"] + [f"precision@{k}" for k in agg_prec]
    rows = [
        {**{f: r[f] for f in fields[:5]}, **{f"precision@{k}": v for k, v in r["precision"].items()}} for r in per_pair
    ]
    _emit(args, doc, rows, fields)


# synth -----------------------------------------------------------------------


def _scene_config(args):
    return SyntheticSceneConfig(
        num_points=args.points,
        pixel_noise_sigma=args.noise,
        outlier_fraction=args.outliers,
        seed=args.seed,
    )


def cmd_synth(args):
    cfg = _scene_config(args)
    if args.trajectory:
        traj, matchsets = generate_synthetic_trajectory(cfg, args.pairs + 1)
    else:
        data = synthetic_training_set(args.pairs, cfg)
        matchsets = [m for m, _ in data]
        traj = accumulate([rel for _, rel in data])
    fileio.save_matches(matchsets, args.out_matches)
    fileio.save_trajectory(traj, args.out_poses, args.pose_format)
    if args.out_intrinsics:
        fileio.save_intrinsics(cfg.intrinsics, args.out_intrinsics)
    _emit(args, {"seed": args.seed, "num_pairs": len(matchsets), "num_poses": len(traj)})


# train / infer -----------------------------------------------------------------


def _load_json_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise VokitError(f"{path}: invalid JSON: {e.msg}") from None
    unknown = set(doc) - {"model", "train"}
    if unknown:
        raise VokitError(f"{path}: unknown config sections {sorted(unknown)}")
    return doc


def cmd_train(args):
    from .regressor import (
        Normalizer,
        RegressorConfig,
        TrainConfig,
        build_batch,
        init_params,
        load_checkpoint,
        save_checkpoint,
        train,
        write_log,
    )

    doc = _load_json_config(args.config)
    try:
        model_cfg = RegressorConfig(**doc.get("model", {}))
        train_kw = dict(doc.get("train", {}))
    except TypeError as e:
        raise VokitError(f"bad config: {e}") from None
    if args.dropout is not None:
        model_cfg = replace(model_cfg, dropout_rate=args.dropout)
    for key in ("steps", "batch_size", "learning_rate", "beta"):
        if getattr(args, key) is not None:
            train_kw[key] = getattr(args, key)
    train_kw["seed"] = args.seed
    try:
        train_cfg = TrainConfig(**train_kw)
    except TypeError as e:
        raise VokitError(f"bad config: {e}") from None

    if args.synthetic is not None:
        data = synthetic_training_set(args.synthetic, SyntheticSceneConfig(num_points=args.points, seed=args.seed))
        matchsets = [m for m, _ in data]
        targets = [rel for _, rel in data]
        k0 = DEFAULT_INTRINSICS
    else:
        if args.pose_gt is None:
            raise UsageError("--data requires --pose-gt")
        matchsets = fileio.load_matches(args.data)
        if not matchsets:
            raise VokitError(f"{args.data}: empty match file")
        traj = _pair_poses(args.pose_gt, args.pose_format, len(matchsets))
        targets = [relative_pose(traj[k], traj[k + 1]) for k in range(len(matchsets))]
        k0 = fileio.load_intrinsics(args.intrinsics)[0] if args.intrinsics else DEFAULT_INTRINSICS

    optimizer = None
    if args.checkpoint_in is not None:
        ck = load_checkpoint(args.checkpoint_in)
        params, normalizer, optimizer = ck.params, ck.normalizer, ck.optimizer
        if args.dropout is not None and params.config.dropout_rate != args.dropout:
            params = type(params)(replace(params.config, dropout_rate=args.dropout), params.tensors)
    else:
        params = init_params(model_cfg, args.seed)
        normalizer = Normalizer(k0.width, k0.height)
    dataset = build_batch(matchsets, normalizer, targets, max_len=params.config.max_seq_len, truncate=True)

    stop = args.stop_loss
    result = train(params, dataset, train_cfg, optimizer, on_step=(lambda r: r.total_loss < stop) if stop else None)
    save_checkpoint(args.checkpoint_out, result.params, normalizer, result.optimizer, {"seed": args.seed})
    if args.log:
        write_log(args.log, result.history, append=args.checkpoint_in is not None)
    last = result.history[-1] if result.history else None
    doc = {
        "seed": args.seed,
        "steps_run": len(result.history),
        "optimizer_step": result.optimizer.step,
        "final": None if last is None else {"total_loss": last.total_loss, "l_trans": last.l_trans, "l_rot": last.l_rot},
    }
    rows = [r._asdict() for r in result.history[-1:]]
    _emit(args, doc, rows, ["step", "total_loss", "l_trans", "l_rot"])


def cmd_infer(args):
    from .regressor import load_checkpoint, predict_relative_pose

    ck = load_checkpoint(args.checkpoint)
    matchsets = fileio.load_matches(args.matches)
    if not matchsets:
        raise VokitError(f"{args.matches}: empty match file")
    rels = []
    for m in matchsets:
        try:
            rels.append(predict_relative_pose(ck.params, m, ck.normalizer))
        except VokitError as e:
            raise type(e)(f"pair {m.pair_id!r}: {e}") from None
    traj = accumulate(rels, args.start_pose)
    if args.out:
        fileio.save_trajectory(traj, args.out, args.format)
        _emit(args, {"seed": args.seed, "num_pairs": len(rels), "num_poses": len(traj), "out": str(args.out)})
    elif not args.quiet:
        sys.stdout.write(fileio.format_trajectory(traj, args.format))


# eval-traj -------------------------------------------------------------------


def cmd_eval_traj(args):
    est = fileio.load_trajectory(args.est, args.format)
    gt = fileio.load_trajectory(args.gt, args.gt_format or args.format)
    mode = AlignmentMode(args.align)
    ate_m = ate(est, gt, mode)
    dt, dr = rpe_score(est, gt, args.rpe_reduction)
    try:
        kt, kr = kitti_score(est, gt, args.kitti_lengths)
        kitti = {"dt_pct": kt, "dr_deg_per_m": kr}
    except TrajectoryTooShort:
        kitti = None
    doc = {
        "seed": args.seed,
        "align": mode.value,
        "kitti_lengths": list(args.kitti_lengths),
        "ate_m": ate_m,
        "rpe": {"dt_m": dt, "dr_deg": dr, "reduction": args.rpe_reduction},
        "kitti": kitti,
    }
    step_dt, step_dr = rpe_steps(est, gt)
    rows = [{"step": k, "dt_m": float(a), "dr_deg": float(b)} for k, (a, b) in enumerate(zip(step_dt, step_dr))]
    _emit(args, doc, rows, ["step", "dt_m", "dr_deg"])


# parser ------------------------------------------------------------------------


def _global_flags(p, defaults):
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (echoed in outputs)")
    p.add_argument("--output", choices=("json", "csv"), default=d("json"), help="stdout format")
    p.add_argument("--quiet", action="store_true", default=d(False), help="print nothing on success")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vokit", description="Relative pose and trajectory toolkit.")
    _global_flags(parser, True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    traj_formats = [f.value for f in fileio.TrajectoryFormat]

    p = sub.add_parser("gen-gt", help="ground-truth assignments from homographies or depth")
    _global_flags(p, False)
    p.add_argument("--mode", choices=("homography", "depth"), required=True)
    p.add_argument("--matches", required=True, help="JSON-lines keypoint pairs")
    p.add_argument("--depth", help="PFM depth of image 0, or a directory of <pair_id>.pfm")
    p.add_argument("--intrinsics", help="intrinsics JSON")
    p.add_argument("--pose-gt", help="trajectory; pair k spans frames k and k+1")
    p.add_argument("--pose-format", choices=traj_formats, default="tartanair")
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--color-threshold", type=float, default=10.0)
    p.add_argument("--difficulty", type=float, default=0.5, help="for sampled homographies")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_gt)

    p = sub.add_parser("eval-matches", help="precision, LO-RANSAC pose error and AUC")
    _global_flags(p, False)
    p.add_argument("--matches", required=True)
    p.add_argument("--pose-gt", required=True, help="trajectory; pair k spans frames k and k+1")
    p.add_argument("--pose-format", choices=traj_formats, default="tartanair")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--thresholds", type=_float_list, default=[1e-4, 5e-4, 1e-3, 5e-3, 1e-2])
    p.add_argument("--auc-thresholds", type=_float_list, default=[5.0, 10.0, 20.0])
    p.add_argument("--inlier-threshold", type=float, default=RansacParams.inlier_threshold)
    p.add_argument("--max-iterations", type=int, default=RansacParams.max_iterations)
    p.set_defaults(func=cmd_eval_matches)

    p = sub.add_parser("synth", help="write a synthetic match file and ground-truth poses")
    _global_flags(p, False)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--trajectory", action="store_true", help="consecutive frames of one smooth path")
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.0, help="pixel noise sigma")
    p.add_argument("--outliers", type=float, default=0.0, help="outlier fraction")
    p.add_argument("--out-matches", required=True)
    p.add_argument("--out-poses", required=True)
    p.add_argument("--out-intrinsics")
    p.add_argument("--pose-format", choices=traj_formats, default="tartanair")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the pose regressor")
    _global_flags(p, False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="JSON-lines match file")
    src.add_argument("--synthetic", type=int, metavar="N", help="train on N synthetic pairs")
    p.add_argument("--points", type=int, default=16, help="matches per synthetic pair")
    p.add_argument("--pose-gt", help="trajectory for --data; pair k spans frames k and k+1")
    p.add_argument("--pose-format", choices=traj_formats, default="tartanair")
    p.add_argument("--intrinsics", help="image size for coordinate normalization")
    p.add_argument("--config", help='JSON with optional "model" and "train" sections')
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--stop-loss", type=float, help="stop once the step loss drops below this")
    p.add_argument("--checkpoint-in")
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--log", help="CSV loss log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="chain predicted relative poses into a trajectory")
    _global_flags(p, False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--matches", required=True)
    p.add_argument("--start-pose", type=_start_pose, default=Pose.identity(), help='"tx ty tz qx qy qz qw"')
    p.add_argument("--out")
    p.add_argument("--format", choices=traj_formats, default="tartanair")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval-traj", help="ATE, RPE and KITTI-style drift")
    _global_flags(p, False)
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--format", choices=traj_formats, default="tartanair")
    p.add_argument("--gt-format", choices=traj_formats)
    p.add_argument("--align", choices=[m.value for m in AlignmentMode], default="sim3")
    p.add_argument("--kitti-lengths", type=_lengths, default=list(KITTI_LENGTHS), help="comma list or preset (kitti, desk)")
    p.add_argument("--rpe-reduction", choices=("mean", "rmse"), default="mean")
    p.set_defaults(func=cmd_eval_traj)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"vokit {args.command}: error: {e}\n")
        return EXIT_USAGE
    except (VokitError, OSError) as e:
        sys.stderr.write(f"vokit {args.command}: {type(e).__name__}: {e}\n")
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
