"""Synthetic paired dataset for end-to-end trainer exercises.

Each pair consists of a smooth tissue-like source image and a target that is
a fixed per-pixel recoloring of the source with dark stain blobs blended in
wherever the source's (smoothed) luminance is low.  The target is therefore
a deterministic function of the source, so a conditional generator can learn
the mapping, while a copy-the-input baseline scores poorly because the
recoloring moves every channel substantially.

The builder writes ``he/`` and ``ihc/`` PNG directories plus a
``manifest.csv`` using the patch-manifest schema, assigning every fifth pair
to the test split.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import MANIFEST_COLUMNS
from .losses import blur

__all__ = ["build_toy_dataset"]

_LEVELS = ("0", "1+", "2+", "3+")
_STAIN_COLOR = np.array([118.0, 62.0, 44.0])
_TEST_EVERY = 5


def _smooth_field(rng: np.random.Generator, size: int, passes: int) -> np.ndarray:
    """Gaussian-blurred unit-range noise field of shape (size, size)."""
    noise = torch.from_numpy(rng.standard_normal((1, size, size)))
    for _ in range(passes):
        noise = blur(noise)
    field = noise.squeeze(0).numpy()
    spread = field.max() - field.min()
    if spread == 0.0:
        return np.zeros_like(field)
    return (field - field.min()) / spread


def _source_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Tissue-like source: pale background with smooth darker structure."""
    structure = _smooth_field(rng, size, passes=8)
    detail = _smooth_field(rng, size, passes=2)
    density = np.clip(0.75 * structure + 0.25 * detail, 0.0, 1.0)
    red = 238.0 - 98.0 * density
    green = 210.0 - 135.0 * density
    blue = 228.0 - 75.0 * density
    return np.clip(np.stack([red, green, blue], axis=-1), 0.0, 255.0)


def _target_image(source: np.ndarray) -> np.ndarray:
    """Deterministic recoloring of the source plus stain blobs in dense regions."""
    red, green, blue = source[..., 0], source[..., 1], source[..., 2]
    recolored = np.stack(
        [
            np.clip(252.0 - 0.85 * green, 0.0, 255.0),
            np.clip(0.35 * red + 0.25 * blue - 8.0, 0.0, 255.0),
            np.clip(0.92 * red - 24.0, 0.0, 255.0),
        ],
        axis=-1,
    )
    luminance = 0.299 * red + 0.587 * green + 0.114 * blue
    smoothed = torch.from_numpy(luminance[None, :, :])
    for _ in range(3):
        smoothed = blur(smoothed)
    luminance = smoothed.squeeze(0).numpy()
    threshold = np.quantile(luminance, 0.3)
    mask = np.clip((threshold - luminance) / 25.0 + 0.5, 0.0, 1.0)[..., None]
    blended = (1.0 - 0.65 * mask) * recolored + 0.65 * mask * _STAIN_COLOR
    return np.clip(blended, 0.0, 255.0)


def _save_png(pixels: np.ndarray, path: Path) -> None:
    Image.fromarray(np.rint(pixels).astype(np.uint8), mode="RGB").save(path)


def build_toy_dataset(
    out_dir: str | Path,
    pairs: int = 200,
    size: int = 64,
    seed: int = 7,
) -> Path:
    """Write a synthetic paired dataset and return the manifest path.

    Args:
        out_dir: Destination directory (created if needed).
        pairs: Number of image pairs; every fifth pair lands in the test split.
        size: Square image side length in pixels.
        seed: Seed for the source-image draws; the same seed reproduces the
            dataset bit for bit.

    Returns:
        Path of the written ``manifest.csv``.
    """
    if pairs < 1:
        raise ValueError(f"pairs must be at least 1, got {pairs}")
    if size < 2:
        raise ValueError(f"size must be at least 2, got {size}")
    root = Path(out_dir)
    (root / "he").mkdir(parents=True, exist_ok=True)
    (root / "ihc").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    manifest_path = root / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(MANIFEST_COLUMNS)
        for index in range(pairs):
            source = _source_image(rng, size)
            target = _target_image(source)
            patch_id = f"toy_{index:03d}"
            he_path = f"he/{patch_id}.png"
            ihc_path = f"ihc/{patch_id}.png"
            _save_png(source, root / he_path)
            _save_png(target, root / ihc_path)
            split = "test" if index % _TEST_EVERY == _TEST_EVERY - 1 else "train"
            writer.writerow(
                [
                    patch_id,
                    f"toy_{index:03d}",
                    _LEVELS[index % len(_LEVELS)],
                    he_path,
                    ihc_path,
                    repr(1.0),
                    repr(1.0),
                    split,
                ]
            )
    return manifest_path
