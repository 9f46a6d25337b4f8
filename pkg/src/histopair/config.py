"""Pipeline configuration: one flat key=value file, every key a CLI flag.

Values resolve in order default < config file < command-line flag. The
config object only carries plain scalars; helper methods construct the
richer per-module parameter types on demand so their validation runs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .patchify import FilterThresholds, SplitRule
from .pyramid import GaussianKernel, ScaleWeights, gaussian_kernel
from .registration import CHANNEL_INDEX, BlockGrid, RegistrationConfig


def _parse_weight_list(text: str) -> tuple[float, ...]:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValueError("scale_weights needs at least one comma-separated value")
    return tuple(float(p) for p in parts)


@dataclass(frozen=True)
class PipelineConfig:
    kernel_size: int = 3
    kernel_sigma: float = 1.0
    n_octaves: int = 4
    lambda_l1: float = 100.0
    scale_weights: tuple[float, ...] = (100.0, 100.0, 100.0)
    register_channel: str = "G"
    block_rows: int = 4
    block_cols: int = 4
    background: float = 220.0
    min_tissue_ratio: float = 0.1
    min_alignment_score: float = 0.2
    train_fraction: float = 0.8
    patch_size: int = 1024
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.kernel_sigma <= 0.0:
            raise ValueError(f"kernel_sigma must be positive, got {self.kernel_sigma}")
        if self.n_octaves < 1:
            raise ValueError(f"n_octaves must be at least 1, got {self.n_octaves}")
        if self.lambda_l1 < 0.0 or any(w < 0.0 for w in self.scale_weights):
            raise ValueError("loss weights must be nonnegative")
        if self.register_channel not in CHANNEL_INDEX:
            raise ValueError(f"register_channel must be R, G, or B, got {self.register_channel!r}")
        if self.block_rows < 1 or self.block_cols < 1:
            raise ValueError("block grid must have at least one row and column")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ValueError(f"train_fraction out of [0, 1]: {self.train_fraction}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be positive, got {self.patch_size}")

    def kernel(self) -> GaussianKernel:
        return gaussian_kernel(self.kernel_size, self.kernel_sigma)

    def loss_weights(self) -> ScaleWeights:
        return ScaleWeights(lambda_l1=self.lambda_l1, lambda_scale=self.scale_weights)

    def registration(self) -> RegistrationConfig:
        return RegistrationConfig(
            channel=self.register_channel,
            grid=BlockGrid(rows=self.block_rows, cols=self.block_cols),
        )

    def thresholds(self) -> FilterThresholds:
        return FilterThresholds(
            background=self.background,
            min_tissue_ratio=self.min_tissue_ratio,
            min_alignment_score=self.min_alignment_score,
        )

    def split_rule(self) -> SplitRule:
        return SplitRule(train_fraction=self.train_fraction, seed=self.seed)


_FIELD_PARSERS = {
    "kernel_size": int,
    "kernel_sigma": float,
    "n_octaves": int,
    "lambda_l1": float,
    "scale_weights": _parse_weight_list,
    "register_channel": str,
    "block_rows": int,
    "block_cols": int,
    "background": float,
    "min_tissue_ratio": float,
    "min_alignment_score": float,
    "train_fraction": float,
    "patch_size": int,
    "seed": int,
}

assert set(_FIELD_PARSERS) == {f.name for f in fields(PipelineConfig)}

CONFIG_KEYS = tuple(sorted(_FIELD_PARSERS))


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read a flat key=value file; '#' starts a comment, blanks are skipped."""
    path = Path(path)
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_PARSERS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def build_config(
    config_path: str | Path | None = None, overrides: dict | None = None
) -> PipelineConfig:
    """Resolve a config from an optional file plus flag overrides (flags win)."""
    raw: dict[str, object] = {}
    if config_path is not None:
        raw.update(parse_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_PARSERS:
            raise ValueError(f"unknown config key {key!r}")
        raw[key] = value
    parsed = {key: _FIELD_PARSERS[key](value) for key, value in raw.items()}
    return PipelineConfig(**parsed)
