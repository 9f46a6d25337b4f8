"""Command-line interface for the paired-translation trainer.

Subcommands:
    fit        Train on a patch manifest and export artifacts.
    make-toy   Write the synthetic paired dataset used by the toy run.
    gradcheck  Certify the pyramid-loss gradient against finite differences.

Each successful invocation prints a single JSON line (sorted keys) to
stdout; diagnostics go to stderr.  Exit codes: 0 success, 1 runtime failure
(for example the divergence guard), 2 usage errors such as missing inputs
or invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import LossWeights, TrainConfig
from .losses import gradcheck_multiscale
from .toydata import build_toy_dataset
from .train import train

__all__ = ["main", "build_parser"]

_EXIT_OK = 0
_EXIT_RUNTIME = 1
_EXIT_USAGE = 2


def _parse_scale_weights(text: str) -> tuple[float, ...]:
    """Parse a comma-separated weight list; empty text disables all scales."""
    stripped = text.strip()
    if not stripped:
        return ()
    try:
        return tuple(float(part) for part in stripped.split(","))
    except ValueError:
        raise ValueError(f"scale weights must be comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histopair-train",
        description="Train a conditional generator on co-registered HE/IHC patch pairs.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    fit = subparsers.add_parser("fit", help="train on a patch manifest")
    fit.add_argument("--manifest", required=True, help="patch manifest CSV")
    fit.add_argument("--out", required=True, help="output directory for run artifacts")
    fit.add_argument(
        "--data-root",
        default=None,
        help="directory for manifest-relative image paths (default: manifest directory)",
    )
    fit.add_argument("--epochs", type=int, default=100)
    fit.add_argument("--batch-size", type=int, default=2)
    fit.add_argument("--learning-rate", type=float, default=2e-4)
    fit.add_argument("--lambda-l1", type=float, default=100.0, help="reconstruction weight")
    fit.add_argument(
        "--scale-weights",
        default="100",
        help="comma-separated pyramid weights for S1..S3 (empty string disables them)",
    )
    fit.add_argument("--generator-width", type=int, default=64)
    fit.add_argument("--discriminator-width", type=int, default=64)
    fit.add_argument("--residual-blocks", type=int, default=9)
    fit.add_argument("--dropout", type=float, default=0.5)
    fit.add_argument("--seed", type=int, default=0)

    toy = subparsers.add_parser("make-toy", help="write the synthetic paired dataset")
    toy.add_argument("--out", required=True, help="dataset directory")
    toy.add_argument("--pairs", type=int, default=200)
    toy.add_argument("--size", type=int, default=64)
    toy.add_argument("--seed", type=int, default=7)

    check = subparsers.add_parser(
        "gradcheck", help="compare the pyramid-loss gradient with finite differences"
    )
    check.add_argument("--image-size", type=int, default=8)
    check.add_argument(
        "--weights", default="1", help="comma-separated pyramid weights for S1..S3"
    )
    check.add_argument("--seed", type=int, default=0)

    return parser


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _run_fit(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    if not manifest.is_file():
        print(f"error: manifest not found: {manifest}", file=sys.stderr)
        return _EXIT_USAGE
    try:
        config = TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.learning_rate,
            weights=LossWeights(
                reconstruction=args.lambda_l1,
                scales=_parse_scale_weights(args.scale_weights),
            ),
            generator_width=args.generator_width,
            discriminator_width=args.discriminator_width,
            residual_blocks=args.residual_blocks,
            dropout=args.dropout,
            seed=args.seed,
        )
    except ValueError as error:
        print(f"error: invalid configuration: {error}", file=sys.stderr)
        return _EXIT_USAGE
    try:
        result = train(manifest, args.out, config, data_root=args.data_root)
    except (ValueError, FileNotFoundError) as error:
        print(f"error: {error}", file=sys.stderr)
        return _EXIT_USAGE
    except RuntimeError as error:
        print(f"error: {error}", file=sys.stderr)
        return _EXIT_RUNTIME
    _emit(
        {
            "checkpoint": str(result.checkpoint_path),
            "loss_csv": str(result.loss_csv_path),
            "generated_dir": str(result.generated_dir),
            "epochs": config.epochs,
            "final": result.epoch_means[-1],
        }
    )
    return _EXIT_OK


def _run_make_toy(args: argparse.Namespace) -> int:
    try:
        manifest = build_toy_dataset(args.out, pairs=args.pairs, size=args.size, seed=args.seed)
    except ValueError as error:
        print(f"error: {error}", file=sys.stderr)
        return _EXIT_USAGE
    _emit({"manifest": str(manifest), "pairs": args.pairs, "size": args.size})
    return _EXIT_OK


def _run_gradcheck(args: argparse.Namespace) -> int:
    try:
        weights = _parse_scale_weights(args.weights)
        error = gradcheck_multiscale(image_size=args.image_size, weights=weights, seed=args.seed)
    except ValueError as failure:
        print(f"error: {failure}", file=sys.stderr)
        return _EXIT_USAGE
    except RuntimeError as failure:
        print(f"error: {failure}", file=sys.stderr)
        return _EXIT_RUNTIME
    _emit(
        {
            "image_size": args.image_size,
            "max_relative_error": error,
            "weights": list(weights),
        }
    )
    return _EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "fit":
        return _run_fit(args)
    if args.command == "make-toy":
        return _run_make_toy(args)
    return _run_gradcheck(args)


if __name__ == "__main__":
    sys.exit(main())
