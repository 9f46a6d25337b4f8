"""Training loop: alternating discriminator/generator updates with logging.

One run reads train/test records from a patch manifest, optimizes the
generator objective with Adam, writes a per-epoch loss-components CSV and a
checkpoint, and exports deterministic (eval-mode) generated PNGs for every
test record.  All randomness — weight initialization, batch shuffling,
dropout — derives from the config seed, so identical configs reproduce
identical losses and identical exported images.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .config import TrainConfig, lr_factor
from .data import PairDataset, batches
from .losses import COMPONENT_KEYS, objective, to_intensity
from .networks import build_discriminator, build_generator

__all__ = ["TrainResult", "train", "LOSS_COLUMNS", "CHECKPOINT_NAME", "LOSS_CSV_NAME", "GENERATED_DIR_NAME"]

LOSS_COLUMNS = ("epoch",) + COMPONENT_KEYS
CHECKPOINT_NAME = "checkpoint.pt"
LOSS_CSV_NAME = "losses.csv"
GENERATED_DIR_NAME = "generated"


@dataclass(frozen=True)
class TrainResult:
    """Artifacts of one training run.

    Attributes:
        out_dir: Run directory.
        checkpoint_path: Saved generator/discriminator state dictionaries.
        loss_csv_path: Per-epoch loss-components CSV.
        generated_dir: Directory of eval-mode generated PNGs, one per test
            record, named ``<patch_id>.png``.
        epoch_means: Per-epoch batch means of the objective components, in
            epoch order; keys match the CSV columns minus ``epoch``.
    """

    out_dir: Path
    checkpoint_path: Path
    loss_csv_path: Path
    generated_dir: Path
    epoch_means: tuple[dict[str, float], ...]


def _set_requires_grad(module: torch.nn.Module, enabled: bool) -> None:
    for parameter in module.parameters():
        parameter.requires_grad_(enabled)


def _check_finite(value: torch.Tensor, label: str, epoch: int, step: int) -> None:
    if not torch.isfinite(value).all():
        raise RuntimeError(
            f"training diverged: non-finite {label} at epoch {epoch + 1}, step {step + 1}"
        )


def _export_generated(
    generator: torch.nn.Module, dataset: PairDataset, out_dir: Path
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    generator.eval()
    with torch.no_grad():
        for index in range(len(dataset)):
            source, _target, patch_id = dataset[index]
            generated = generator(source.unsqueeze(0))[0]
            intensities = to_intensity(generated).round().clamp(0.0, 255.0)
            pixels = intensities.to(torch.uint8).permute(1, 2, 0).numpy()
            Image.fromarray(np.ascontiguousarray(pixels), mode="RGB").save(
                out_dir / f"{patch_id}.png"
            )
    generator.train()


def train(
    manifest_path: str | Path,
    out_dir: str | Path,
    config: TrainConfig,
    data_root: str | Path | None = None,
) -> TrainResult:
    """Run one training job described by the manifest and config.

    Args:
        manifest_path: Patch manifest CSV listing train and test records.
        out_dir: Destination for the checkpoint, loss CSV, and generated PNGs.
        config: Hyper-parameters; see :class:`TrainConfig`.
        data_root: Directory against which manifest-relative image paths
            resolve; defaults to the manifest's own directory.

    Returns:
        The written artifact locations and per-epoch loss means.

    Raises:
        ValueError: If the manifest contains no training records.
        RuntimeError: If any loss becomes non-finite (divergence guard).
    """
    train_set = PairDataset.from_manifest(manifest_path, "train", root=data_root)
    test_set = PairDataset.from_manifest(manifest_path, "test", root=data_root)
    if len(train_set) == 0:
        raise ValueError(f"manifest {manifest_path} contains no training records")

    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    generator = build_generator(config)
    discriminator = build_discriminator(config)
    optimizer_g = torch.optim.Adam(
        generator.parameters(), lr=config.learning_rate, betas=config.adam_betas
    )
    optimizer_d = torch.optim.Adam(
        discriminator.parameters(), lr=config.learning_rate, betas=config.adam_betas
    )
    shuffle_generator = torch.Generator().manual_seed(config.seed + 2)
    torch.manual_seed(config.seed + 3)

    epoch_means: list[dict[str, float]] = []
    for epoch in range(config.epochs):
        rate = config.learning_rate * lr_factor(epoch, config.epochs)
        for optimizer in (optimizer_g, optimizer_d):
            for group in optimizer.param_groups:
                group["lr"] = rate

        sums = dict.fromkeys(COMPONENT_KEYS, 0.0)
        batch_count = 0
        for step, (sources, targets, _ids) in enumerate(
            batches(train_set, config.batch_size, shuffle_generator)
        ):
            generated = generator(sources)

            _set_requires_grad(discriminator, True)
            optimizer_d.zero_grad()
            real_logits = discriminator(sources, targets)
            fake_logits = discriminator(sources, generated.detach())
            discriminator_loss = 0.5 * (
                F.binary_cross_entropy_with_logits(real_logits, torch.ones_like(real_logits))
                + F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits))
            )
            _check_finite(discriminator_loss, "discriminator loss", epoch, step)
            discriminator_loss.backward()
            optimizer_d.step()

            _set_requires_grad(discriminator, False)
            optimizer_g.zero_grad()
            total, components = objective(
                discriminator, sources, targets, generated, config.weights
            )
            _check_finite(total, "generator objective", epoch, step)
            total.backward()
            optimizer_g.step()

            for key in COMPONENT_KEYS:
                sums[key] += components[key]
            batch_count += 1

        means = {key: sums[key] / batch_count for key in COMPONENT_KEYS}
        if not all(math.isfinite(value) for value in means.values()):
            raise RuntimeError(f"training diverged: non-finite epoch means at epoch {epoch + 1}")
        epoch_means.append(means)

    loss_csv_path = run_dir / LOSS_CSV_NAME
    with open(loss_csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(LOSS_COLUMNS)
        for epoch, means in enumerate(epoch_means, start=1):
            writer.writerow([epoch] + [repr(means[key]) for key in COMPONENT_KEYS])

    checkpoint_path = run_dir / CHECKPOINT_NAME
    torch.save(
        {
            "generator": generator.state_dict(),
            "discriminator": discriminator.state_dict(),
            "config": asdict(config),
            "epochs": config.epochs,
        },
        checkpoint_path,
    )

    generated_dir = run_dir / GENERATED_DIR_NAME
    _export_generated(generator, test_set, generated_dir)

    return TrainResult(
        out_dir=run_dir,
        checkpoint_path=checkpoint_path,
        loss_csv_path=loss_csv_path,
        generated_dir=generated_dir,
        epoch_means=tuple(epoch_means),
    )
