import argparse
import logging
import sys
from pathlib import Path
from time import time
from typing import Optional

import numpy as np

from config import ExperimentConfig, load_experiment_config
from errors import DepthError, DivergedOptimizationError, GradientCheckFailure, InvalidInputError
from losses import CSV_HEADER, LossBreakdown, ScenePair
from metrics import MetricReport, evaluate_depth
from optim import Gradients, finite_diff_check, optimize, trajectory_header, trajectory_rows
from synth import load_scene_descriptor, make_scene_pair, render_descriptor
from utils import (
    read_cameras,
    read_pfm,
    read_ppm,
    read_sparse_cloud,
    write_cameras,
    write_csv,
    write_pfm,
    write_ppm,
    write_sparse_cloud,
)

SYNTH_FILES = ("view1.ppm", "view2.ppm", "gt1.pfm", "gt2.pfm", "sparse.txt", "cameras.txt")


def parse_args(argv: Optional[list[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v",
        "--verbose",
        help="Enable verbose logs.",
        action="store_true",
    )
    common.add_argument(
        "--quiet",
        help="Hide the optimization progress bar.",
        action="store_true",
    )

    p = argparse.ArgumentParser(description="Self-supervised two-view depth on synthetic scenes")
    sub = p.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="Render a scene descriptor into a two-view dataset.")
    synth.add_argument("descriptor", help="Scene descriptor file.")
    synth.add_argument("out_dir", help="Output directory.")
    synth.add_argument("--seed", help="Override the descriptor's correspondence seed.", type=int)

    opt = sub.add_parser("optimize", parents=[common], help="Optimize both relative-depth fields.")
    opt.add_argument("config", help="Experiment config file.")
    opt.add_argument("--seed", type=int)
    opt.add_argument("--scales", help="Number of pyramid levels (1-4).", type=int)

    check = sub.add_parser("gradcheck", parents=[common], help="Compare analytic and finite-difference gradients.")
    check.add_argument("config", help="Experiment config file.")
    check.add_argument("--seed", type=int)
    check.add_argument("--scales", help="Number of pyramid levels (1-4).", type=int)
    check.add_argument("--threshold", help="Maximum accepted relative error.", type=float)
    check.add_argument(
        "--corrupt-gradient",
        help=argparse.SUPPRESS,
        action="store_true",
    )

    ev = sub.add_parser("eval", parents=[common], help="Depth metrics of a prediction against ground truth.")
    ev.add_argument("pred", help="Predicted depth (PFM).")
    ev.add_argument("gt", help="Ground-truth depth (PFM).")
    ev.add_argument("--no-align", help="Skip median alignment.", action="store_true")
    ev.add_argument("--min-depth", help="Ignore pixels with smaller GT depth.", type=float)
    ev.add_argument("--max-depth", help="Ignore pixels with larger GT depth.", type=float)

    return p.parse_args(argv)


def load_synth_outputs(directory: Path) -> ScenePair:
    """ScenePair from a `synth` output directory, medians estimated from sparse.txt."""
    intrinsics, poses = read_cameras(directory / "cameras.txt")
    if len(intrinsics) != 2:
        raise InvalidInputError(f"{directory / 'cameras.txt'} describes {len(intrinsics)} views, expected 2")
    gt = tuple(read_pfm(directory / name) if (directory / name).exists() else None for name in ("gt1.pfm", "gt2.pfm"))
    return make_scene_pair(
        read_ppm(directory / "view1.ppm"),
        read_ppm(directory / "view2.ppm"),
        intrinsics,
        poses,
        read_sparse_cloud(directory / "sparse.txt"),
        gt,
    )


def cmd_synth(args: argparse.Namespace) -> int:
    descriptor = load_scene_descriptor(args.descriptor)
    rendered = render_descriptor(descriptor, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(out / "view1.ppm", rendered.image1)
    write_ppm(out / "view2.ppm", rendered.image2)
    write_pfm(out / "gt1.pfm", rendered.depth1)
    write_pfm(out / "gt2.pfm", rendered.depth2)
    write_sparse_cloud(out / "sparse.txt", rendered.cloud)
    write_cameras(out / "cameras.txt", (descriptor.k1, descriptor.k2), (descriptor.pose1, descriptor.pose2))
    for name in SYNTH_FILES:
        print(out / name)
    return 0


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    config = load_experiment_config(args.config)
    return config.with_overrides(
        seed=args.seed, num_scales=args.scales, threshold=getattr(args, "threshold", None)
    )


def _write_breakdown(path: Path, breakdown: LossBreakdown) -> None:
    write_csv(path, CSV_HEADER, breakdown.csv_rows())


def cmd_optimize(args: argparse.Namespace) -> int:
    config = _experiment(args)
    pair = load_synth_outputs(config.inputs)
    out = config.output
    out.mkdir(parents=True, exist_ok=True)

    start = time()
    try:
        result = optimize(pair, config.optim, progress=not args.quiet and sys.stderr.isatty())
    except DivergedOptimizationError as e:
        write_csv(out / "trajectory.csv", trajectory_header(e.trajectory), trajectory_rows(e.trajectory))
        raise
    print(f"Optimization took {time() - start:.2f} seconds")

    write_csv(out / "trajectory.csv", trajectory_header(result.trajectory), trajectory_rows(result.trajectory))
    _write_breakdown(out / "losses.csv", result.final)
    for view in (1, 2):
        write_pfm(out / f"depth{view}.pfm", result.depths[view - 1])
        write_pfm(out / f"rel{view}.pfm", result.fields[view - 1])
    print(f"final total loss {result.final.total:.10g}")

    for view, gt in ((1, pair.gt1), (2, pair.gt2)):
        if gt is not None:
            report = evaluate_depth(result.depths[view - 1], gt)
            print(f"view {view} (median-aligned):\n{report.as_table()}")
    return 0


def corrupt_gradients(gradients: Gradients) -> Gradients:
    return gradients[0] * 2.0 + 1e-3, gradients[1]


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = _experiment(args)
    pair = load_synth_outputs(config.inputs)
    rng = np.random.default_rng(config.optim.seed)
    fields = (0.1 * rng.standard_normal(pair.shape), 0.1 * rng.standard_normal(pair.shape))

    start = time()
    report = finite_diff_check(
        pair,
        fields,
        config.weights,
        step=config.grad_step,
        sample_count=config.grad_samples,
        seed=config.optim.seed,
        threshold=config.threshold,
        gradient_hook=corrupt_gradients if args.corrupt_gradient else None,
    )
    print(f"Gradient check took {time() - start:.2f} seconds")
    config.output.mkdir(parents=True, exist_ok=True)
    write_csv(config.output / "gradcheck.csv", report.csv_header, report.csv_rows())
    print(report.summary())
    if not report.passed:
        raise GradientCheckFailure(
            f"{len(report.offending)} entries exceed relative error {config.threshold:g}", report
        )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    pred = read_pfm(args.pred)
    gt = read_pfm(args.gt)
    report: MetricReport = evaluate_depth(
        pred, gt, align=not args.no_align, min_depth=args.min_depth, max_depth=args.max_depth
    )
    print(("median-aligned" if not args.no_align else "unaligned") + ", RMS(log) uses log10")
    print(report.as_table())
    print(",".join(MetricReport.FIELDS))
    print(",".join(repr(x) for x in report.as_csv_row()))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "optimize": cmd_optimize,
    "gradcheck": cmd_gradcheck,
    "eval": cmd_eval,
}


def main(argv: Optional[list[str]] = None) -> int:
    program_start = time()
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    try:
        code = COMMANDS[args.command](args)
    except DepthError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return 2
    logging.info(f"'{args.command}' finished in {time() - program_start:.2f} seconds")
    return code


if __name__ == "__main__":
    sys.exit(main())
