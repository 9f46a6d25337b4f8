"""Patch extraction, blank/misalignment filtering, and manifest assembly.

A registered slide pair is cut into non-overlapping square patches; each
patch pair is scored for tissue content and structural alignment, filtered
against configurable thresholds, and the survivors are written out as PNG
pairs plus a CSV manifest labeled with the slide's HER2 level.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .raster import DimensionMismatchError, Raster, save_image, to_luma

HER2_LEVELS = ("0", "1+", "2+", "3+")

DEFAULT_PATCH_SIZE = 1024

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T

_MANIFEST_COLUMNS = (
    "patch_id",
    "wsi_id",
    "her2_level",
    "he_path",
    "ihc_path",
    "tissue_ratio",
    "alignment_score",
    "split",
)


@dataclass(frozen=True)
class PatchPair:
    """One aligned patch pair at grid cell (row, col)."""

    row: int
    col: int
    he: Raster
    ihc: Raster


@dataclass(frozen=True)
class PatchRecord:
    patch_id: str
    wsi_id: str
    her2_level: str
    he_path: str
    ihc_path: str
    tissue_ratio: float
    alignment_score: float
    split: str

    def __post_init__(self) -> None:
        if self.her2_level not in HER2_LEVELS:
            raise ValueError(
                f"her2_level must be one of {HER2_LEVELS}, got {self.her2_level!r}"
            )
        if not 0.0 <= self.tissue_ratio <= 1.0:
            raise ValueError(f"tissue_ratio out of [0, 1]: {self.tissue_ratio}")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")


@dataclass(frozen=True)
class PatchManifest:
    """Ordered patch records for one or more slides."""

    records: tuple[PatchRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def level_counts(self) -> dict[str, int]:
        counts = {level: 0 for level in HER2_LEVELS}
        for rec in self.records:
            counts[rec.her2_level] += 1
        return counts

    def split_counts(self) -> dict[str, int]:
        counts = {"train": 0, "test": 0}
        for rec in self.records:
            counts[rec.split] += 1
        return counts

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_MANIFEST_COLUMNS)
            for rec in self.records:
                writer.writerow(
                    [
                        rec.patch_id,
                        rec.wsi_id,
                        rec.her2_level,
                        rec.he_path,
                        rec.ihc_path,
                        repr(rec.tissue_ratio),
                        repr(rec.alignment_score),
                        rec.split,
                    ]
                )


def load_manifest(path: str | Path) -> PatchManifest:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != _MANIFEST_COLUMNS:
            raise ValueError(f"{path}: unexpected manifest header {reader.fieldnames}")
        records = tuple(
            PatchRecord(
                patch_id=row["patch_id"],
                wsi_id=row["wsi_id"],
                her2_level=row["her2_level"],
                he_path=row["he_path"],
                ihc_path=row["ihc_path"],
                tissue_ratio=float(row["tissue_ratio"]),
                alignment_score=float(row["alignment_score"]),
                split=row["split"],
            )
            for row in reader
        )
    return PatchManifest(records)


@dataclass(frozen=True)
class FilterThresholds:
    """Patch-keeping rules; set the minima to -inf to disable filtering."""

    background: float = 220.0
    min_tissue_ratio: float = 0.1
    min_alignment_score: float = 0.2


@dataclass(frozen=True)
class SplitRule:
    """Deterministic train/test assignment, a function of the WSI id only."""

    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ValueError(f"train_fraction out of [0, 1]: {self.train_fraction}")

    def assign(self, wsi_id: str) -> str:
        digest = hashlib.md5(f"{self.seed}:{wsi_id}".encode()).digest()
        value = int.from_bytes(digest[:8], "big") / 2**64
        return "train" if value < self.train_fraction else "test"


def cut_patches(
    he: Raster, ihc: Raster, size: int = DEFAULT_PATCH_SIZE
) -> list[PatchPair]:
    """Cut both images on a shared non-overlapping grid from the top-left.

    A trailing remainder narrower than ``size`` is discarded.
    """
    if size < 1:
        raise ValueError(f"patch size must be positive, got {size}")
    if (he.width, he.height) != (ihc.width, ihc.height):
        raise DimensionMismatchError(
            f"pair dimensions differ: {he.width}x{he.height} vs {ihc.width}x{ihc.height}"
        )
    if he.width < size or he.height < size:
        raise ValueError(
            f"image {he.width}x{he.height} smaller than patch size {size}"
        )
    rows = he.height // size
    cols = he.width // size
    pairs = []
    for r in range(rows):
        for c in range(cols):
            y0, x0 = r * size, c * size
            pairs.append(
                PatchPair(
                    row=r,
                    col=c,
                    he=Raster(he.samples[y0 : y0 + size, x0 : x0 + size].copy()),
                    ihc=Raster(ihc.samples[y0 : y0 + size, x0 : x0 + size].copy()),
                )
            )
    return pairs


def tissue_ratio(patch: Raster, background: float = 220.0) -> float:
    """Fraction of pixels that are not background.

    A pixel is background when min(R, G, B) >= the background level, i.e.
    all three channels are bright.
    """
    darkest = patch.samples.min(axis=2)
    return float((darkest < background).mean())


def _gradient_magnitude(patch: Raster) -> np.ndarray:
    luma = to_luma(patch).samples
    gx = ndimage.correlate(luma, _SOBEL_X, mode="mirror")
    gy = ndimage.correlate(luma, _SOBEL_Y, mode="mirror")
    return np.sqrt(gx * gx + gy * gy)


def alignment_score(he_patch: Raster, ihc_patch: Raster) -> float:
    """Structural agreement in [-1, 1] between two patches.

    Stain colors differ across the pair, so the score correlates Sobel
    gradient-magnitude maps of the luma images rather than raw intensity.
    A zero-variance gradient map (featureless patch) scores 0.
    """
    if (he_patch.width, he_patch.height) != (ihc_patch.width, ihc_patch.height):
        raise DimensionMismatchError(
            f"patch dimensions differ: {he_patch.width}x{he_patch.height} "
            f"vs {ihc_patch.width}x{ihc_patch.height}"
        )
    g1 = _gradient_magnitude(he_patch)
    g2 = _gradient_magnitude(ihc_patch)
    c1 = g1 - g1.mean()
    c2 = g2 - g2.mean()
    denom = np.sqrt((c1 * c1).sum() * (c2 * c2).sum())
    if denom == 0.0:
        warnings.warn("alignment score undefined on featureless patch, scoring 0", RuntimeWarning)
        return 0.0
    return float((c1 * c2).sum() / denom)


def build_manifest(
    patch_pairs,
    wsi_id: str,
    her2_level: str,
    out_dir: str | Path,
    thresholds: FilterThresholds | None = None,
    split_rule: SplitRule | None = None,
) -> PatchManifest:
    """Score, filter, and persist patch pairs; returns the manifest.

    Kept pairs are written to ``out_dir/he`` and ``out_dir/ihc`` as
    ``{wsi_id}_{row}_{col}_{split}.png`` and the manifest goes to
    ``out_dir/manifest.csv``. The split is decided once per WSI, so a
    slide never straddles train and test.
    """
    if her2_level not in HER2_LEVELS:
        raise ValueError(f"her2_level must be one of {HER2_LEVELS}, got {her2_level!r}")
    thresholds = thresholds or FilterThresholds()
    split_rule = split_rule or SplitRule()
    out_dir = Path(out_dir)
    (out_dir / "he").mkdir(parents=True, exist_ok=True)
    (out_dir / "ihc").mkdir(parents=True, exist_ok=True)

    split = split_rule.assign(wsi_id)
    records = []
    for pair in patch_pairs:
        ratio = tissue_ratio(pair.he, background=thresholds.background)
        score = alignment_score(pair.he, pair.ihc)
        if ratio < thresholds.min_tissue_ratio or score < thresholds.min_alignment_score:
            continue
        name = f"{wsi_id}_{pair.row}_{pair.col}_{split}.png"
        save_image(pair.he, out_dir / "he" / name)
        save_image(pair.ihc, out_dir / "ihc" / name)
        records.append(
            PatchRecord(
                patch_id=f"{wsi_id}_{pair.row}_{pair.col}",
                wsi_id=wsi_id,
                her2_level=her2_level,
                he_path=f"he/{name}",
                ihc_path=f"ihc/{name}",
                tissue_ratio=ratio,
                alignment_score=score,
                split=split,
            )
        )
    manifest = PatchManifest(tuple(records))
    if not records:
        warnings.warn(f"no patches kept for WSI {wsi_id!r}", RuntimeWarning)
    manifest.write_csv(out_dir / "manifest.csv")
    return manifest
