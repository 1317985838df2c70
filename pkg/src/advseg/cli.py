"""Command-line entry point: synth / experiment / sweep subcommands.

Every run derives all randomness from one --seed flag through named
sub-streams and writes a manifest of the fully resolved configuration before
any computation, so a run is reproducible from the manifest alone.

Exit codes: 0 success, 2 usage error, 3 numerical divergence, 4 data or
weight-file error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

ARTIFACT_VERSION = "0.1.0"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_DATA = 4


def _apply_thread_cap() -> None:
    """Cap BLAS parallelism from ADVSEG_THREADS (0 or unset = automatic).

    Must run before numpy is first imported to take effect.
    """
    raw = os.environ.get("ADVSEG_THREADS", "").strip()
    if raw and raw != "0":
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, raw)


def _write_manifest(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "command": command,
        "config": resolved,
        "out": str(out_dir),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advseg",
        description="U-Net segmentation with gradient-sign adversarial augmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic image/mask dataset")
    p_synth.add_argument("--count", type=int, default=64, help="number of samples")
    p_synth.add_argument("--size", type=int, default=32, help="image side (power of two)")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, help="output dataset directory")

    p_exp = sub.add_parser(
        "experiment", help="train baseline, craft attacks, retrain on augmented set"
    )
    p_exp.add_argument("--data", required=True, help="dataset directory (images/, masks/)")
    p_exp.add_argument(
        "--strategy", choices=["none", "fgsm", "invfgsm"], default="none"
    )
    p_exp.add_argument("--epsilon", type=float, default=0.1)
    p_exp.add_argument("--epochs", type=int, default=30)
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--lr", type=float, default=0.1)
    p_exp.add_argument("--momentum", type=float, default=0.99)
    p_exp.add_argument("--batch-size", type=int, default=16)
    p_exp.add_argument("--eval-every", type=int, default=10)

    p_sweep = sub.add_parser(
        "sweep", help="evaluate robustness across an epsilon grid"
    )
    p_sweep.add_argument("--data", required=True)
    p_sweep.add_argument("--weights", required=True, help="baseline weight file")
    p_sweep.add_argument(
        "--weights-hardened", default=None, help="adversarially trained weight file"
    )
    p_sweep.add_argument(
        "--epsilons", type=float, nargs="+", default=None,
        help="ascending grid (default: reported values plus even cover of [0, 0.2])",
    )
    p_sweep.add_argument("--out", required=True)
    return parser


def _cmd_synth(args) -> int:
    from .data import SyntheticShapeConfig, generate_synthetic, save_dataset

    try:
        config = SyntheticShapeConfig(count=args.count, size=args.size, seed=args.seed)
    except ValueError as e:
        print(f"advseg synth: {e}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    _write_manifest(
        out_dir,
        "synth",
        {"count": args.count, "size": args.size, "seed": args.seed},
    )
    save_dataset(generate_synthetic(config), out_dir)
    print(f"wrote {args.count} image/mask pairs to {out_dir}")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    from . import data, unet
    from .attacks import AttackConfig, craft_dataset
    from .pipeline import (
        AugmentationPlan,
        DivergenceError,
        Strategy,
        TrainConfig,
        run_augmented_experiment,
    )
    from .seeding import derive_seed

    try:
        strategy = Strategy.from_name(args.strategy)
        plan = AugmentationPlan(strategy=strategy, epsilon=args.epsilon)
        config = TrainConfig(
            learning_rate=args.lr,
            momentum=args.momentum,
            batch_size=args.batch_size,
            epochs=args.epochs,
            seed=args.seed,
            eval_every=args.eval_every,
        )
    except ValueError as e:
        print(f"advseg experiment: {e}", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out)
    _write_manifest(
        out_dir,
        "experiment",
        {
            "data": str(args.data),
            "strategy": strategy.value,
            "epsilon": args.epsilon,
            "epochs": args.epochs,
            "seed": args.seed,
            "learning_rate": args.lr,
            "momentum": args.momentum,
            "batch_size": args.batch_size,
            "eval_every": args.eval_every,
        },
    )

    try:
        dataset = data.load_dataset(args.data)
    except data.DatasetError as e:
        print(f"advseg experiment: {e}", file=sys.stderr)
        return EXIT_DATA

    try:
        baseline, augmented = run_augmented_experiment(dataset, plan, config)
    except DivergenceError as e:
        print(f"advseg experiment: {e}", file=sys.stderr)
        return EXIT_DIVERGED

    rows = baseline.metric_rows("baseline")
    unet.save_weights(baseline.model, out_dir / "baseline.weights")
    if strategy is not Strategy.NONE:
        rows += augmented.metric_rows(strategy.value)
        unet.save_weights(augmented.model, out_dir / f"{strategy.value}.weights")
        # Re-craft the phase-2 set (deterministic) to export inspection PNGs.
        train_set, _ = data.split(dataset, 0.8, derive_seed(config.seed, "split"))
        attack = AttackConfig(epsilon=plan.epsilon, direction=strategy.direction)
        for src, adv in zip(train_set.samples, craft_dataset(baseline.model, train_set, attack)):
            data.export_adversarial_png(adv, src.id, out_dir)
    data.write_metrics_csv(rows, out_dir / "metrics.csv")

    for experiment, epoch, iou_value in rows:
        print(f"{experiment} epoch {epoch}: mean IoU {iou_value:.4f}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from . import data, unet
    from .attacks import Direction
    from .evaluation import (
        DEFAULT_SWEEP_EPSILONS,
        compare_adversarial_training,
        robustness_sweep,
        write_sweep_chart_svg,
    )

    epsilons = list(args.epsilons) if args.epsilons is not None else list(DEFAULT_SWEEP_EPSILONS)
    if epsilons != sorted(epsilons) or any(e < 0 for e in epsilons):
        print("advseg sweep: epsilons must be ascending and >= 0", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out)
    _write_manifest(
        out_dir,
        "sweep",
        {
            "data": str(args.data),
            "weights": str(args.weights),
            "weights_hardened": str(args.weights_hardened) if args.weights_hardened else None,
            "epsilons": epsilons,
        },
    )

    try:
        dataset = data.load_dataset(args.data)
        model = unet.load_weights(args.weights)
        hardened = (
            unet.load_weights(args.weights_hardened, expect=model.config)
            if args.weights_hardened
            else None
        )
    except (data.DatasetError, unet.WeightFileError) as e:
        print(f"advseg sweep: {e}", file=sys.stderr)
        return EXIT_DATA

    directions = (Direction.ASCENT, Direction.DESCENT)
    if hardened is None:
        rows = robustness_sweep(model, dataset, directions, epsilons)
    else:
        rows = compare_adversarial_training(model, hardened, dataset, epsilons, directions)
    data.write_sweep_csv(rows, out_dir / "sweep.csv")
    write_sweep_chart_svg(rows, out_dir / "sweep.svg")

    for row in rows:
        tag = "after" if row.adversarially_trained else "before"
        print(
            f"{row.attack_direction.value} eps={row.epsilon:g} {tag}: "
            f"mean IoU {row.mean_iou:.4f}"
        )
    return EXIT_OK


def main(argv=None) -> int:
    _apply_thread_cap()
    args = _build_parser().parse_args(argv)
    if args.command == "synth":
        return _cmd_synth(args)
    if args.command == "experiment":
        return _cmd_experiment(args)
    return _cmd_sweep(args)


if __name__ == "__main__":
    sys.exit(main())
