"""Command-line surface: register | patchify | pyramid | evaluate.

stdout carries machine-readable JSON only; diagnostics go to stderr.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import CONFIG_KEYS, PipelineConfig, build_config
from .metrics import evaluate_pairs
from .patchify import HER2_LEVELS, alignment_score, build_manifest, cut_patches
from .pyramid import ScaleWeights, l1_reconstruction, scale_loss
from .raster import Raster, load_image, save_image
from .registration import load_point_pairs, register_pair, save_field


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="FILE", help="flat key=value config file")
    group = sub.add_argument_group("config overrides (take precedence over --config)")
    for key in CONFIG_KEYS:
        group.add_argument(
            f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE"
        )


def _overrides(args: argparse.Namespace) -> dict:
    return {key: getattr(args, f"cfg_{key}") for key in CONFIG_KEYS}


def _missing_inputs(*named: tuple[str, str]) -> list[str]:
    return [f"{flag} file not found: {path}" for flag, path in named if not Path(path).is_file()]


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def cmd_register(args: argparse.Namespace, config: PipelineConfig) -> int:
    missing = _missing_inputs(
        ("--he", args.he), ("--ihc", args.ihc), ("--points", args.points)
    )
    if missing:
        for line in missing:
            print(f"error: {line}", file=sys.stderr)
        return 2
    he = load_image(args.he)
    ihc = load_image(args.ihc)
    pairs = load_point_pairs(args.points)

    result = register_pair(he, ihc, pairs, config.registration())

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aligned_path = out / "aligned_he.png"
    mask_path = out / "validity.png"
    save_image(result.aligned, aligned_path)
    mask_rgb = np.repeat(
        (result.validity.flags.astype(np.uint8) * 255)[:, :, None], 3, axis=2
    )
    save_image(Raster(mask_rgb), mask_path)
    cols = config.block_cols
    field_paths = []
    for idx, fld in enumerate(result.fields):
        path = out / f"field_r{idx // cols}_c{idx % cols}.dfld"
        save_field(fld, path)
        field_paths.append(str(path))

    same_size = (he.width, he.height) == (ihc.width, ihc.height)
    before = alignment_score(he, ihc) if same_size else None
    after = alignment_score(result.aligned, ihc)
    _emit(
        {
            "aligned": str(aligned_path),
            "fields": field_paths,
            "improved": before is not None and after > before,
            "mask": str(mask_path),
            "score_after": after,
            "score_before": before,
        }
    )
    return 0


def cmd_patchify(args: argparse.Namespace, config: PipelineConfig) -> int:
    missing = _missing_inputs(("--he", args.he), ("--ihc", args.ihc))
    if missing:
        for line in missing:
            print(f"error: {line}", file=sys.stderr)
        return 2
    he = load_image(args.he)
    ihc = load_image(args.ihc)
    pairs = cut_patches(he, ihc, config.patch_size)
    manifest = build_manifest(
        pairs,
        wsi_id=args.wsi_id,
        her2_level=args.her2,
        out_dir=args.out,
        thresholds=config.thresholds(),
        split_rule=config.split_rule(),
    )
    _emit(
        {
            "kept": len(manifest),
            "level_counts": manifest.level_counts(),
            "manifest": str(Path(args.out) / "manifest.csv"),
            "split_counts": manifest.split_counts(),
            "total_patches": len(pairs),
        }
    )
    return 0


def cmd_pyramid(args: argparse.Namespace, config: PipelineConfig) -> int:
    missing = _missing_inputs(("--a", args.a), ("--b", args.b))
    if missing:
        for line in missing:
            print(f"error: {line}", file=sys.stderr)
        return 2
    if args.scales < 1:
        print("error: --scales must be at least 1", file=sys.stderr)
        return 2
    if args.weights is None:
        weights = tuple(100.0 for _ in range(args.scales))
    else:
        try:
            weights = tuple(float(w) for w in args.weights.split(","))
        except ValueError:
            print(f"error: bad --weights value {args.weights!r}", file=sys.stderr)
            return 2
    if len(weights) != args.scales:
        print(
            f"error: --weights gave {len(weights)} values for {args.scales} scales",
            file=sys.stderr,
        )
        return 2
    ScaleWeights(lambda_l1=config.lambda_l1, lambda_scale=weights)

    a = load_image(args.a)
    b = load_image(args.b)
    kernel = config.kernel()
    per_scale = [scale_loss(a, b, i, kernel) for i in range(1, args.scales + 1)]
    total = sum(w * s for w, s in zip(weights, per_scale))
    _emit(
        {
            "l1": l1_reconstruction(a, b),
            "per_scale": per_scale,
            "total": total,
            "weights": list(weights),
        }
    )
    return 0


def cmd_evaluate(args: argparse.Namespace, config: PipelineConfig) -> int:
    for flag, path in (("--generated", args.generated), ("--reference", args.reference)):
        if not Path(path).is_dir():
            print(f"error: {flag} directory not found: {path}", file=sys.stderr)
            return 2
    report = evaluate_pairs(args.generated, args.reference)
    if not report.records:
        print("error: no PNG pairs found to evaluate", file=sys.stderr)
        return 1
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(report_path)
    report.write_json(report_path.with_suffix(".json"))
    _emit(report.aggregates())
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histopair",
        description="Slide-pair registration, patch extraction, multi-scale "
        "losses, and PSNR/SSIM evaluation.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_reg = subs.add_parser("register", help="align an HE image onto its IHC pair")
    p_reg.add_argument("--he", required=True, help="moving HE image (PNG)")
    p_reg.add_argument("--ihc", required=True, help="fixed IHC image (PNG)")
    p_reg.add_argument("--points", required=True, help="correspondence CSV (src_x,src_y,dst_x,dst_y)")
    p_reg.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p_reg)
    p_reg.set_defaults(func=cmd_register)

    p_pat = subs.add_parser("patchify", help="cut a registered pair into scored patches")
    p_pat.add_argument("--he", required=True)
    p_pat.add_argument("--ihc", required=True)
    p_pat.add_argument("--wsi-id", required=True, dest="wsi_id")
    p_pat.add_argument("--her2", required=True, choices=HER2_LEVELS)
    p_pat.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p_pat)
    p_pat.set_defaults(func=cmd_patchify)

    p_pyr = subs.add_parser("pyramid", help="per-scale losses between two images")
    p_pyr.add_argument("--a", required=True)
    p_pyr.add_argument("--b", required=True)
    p_pyr.add_argument("--scales", type=int, default=3)
    p_pyr.add_argument("--weights", help="comma-separated weight per scale")
    _add_config_flags(p_pyr)
    p_pyr.set_defaults(func=cmd_pyramid)

    p_eval = subs.add_parser("evaluate", help="PSNR/SSIM over paired directories")
    p_eval.add_argument("--generated", required=True)
    p_eval.add_argument("--reference", required=True)
    p_eval.add_argument("--report", required=True, help="output CSV path")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args.config, _overrides(args))
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, config)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
