"""PSNR and SSIM plus directory-level evaluation reports.

PSNR pools the squared error across all channels before taking the log.
SSIM follows the original windowed formulation: computed on BT.601 luma
with an 11x11 Gaussian window (sigma 1.5), constants C1 = (0.01 * 255)^2
and C2 = (0.03 * 255)^2, averaged over all centers where the full window
fits (no padding). An exact-match pair has infinite PSNR; the infinity is
carried as a first-class marker and excluded from aggregate means.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .pyramid import gaussian_kernel
from .raster import DimensionMismatchError, Raster, load_image, to_luma

SSIM_WINDOW_SIZE = 11
SSIM_WINDOW_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2

_CSV_COLUMNS = ("id", "psnr_db", "ssim", "status")


def _check_dims(a: Raster, b: Raster) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatchError(
            f"dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mse(a: Raster, b: Raster) -> float:
    """Mean squared difference over all samples and channels."""
    _check_dims(a, b)
    diff = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: Raster, b: Raster) -> float:
    """10 * log10(255^2 / MSE); returns math.inf when the images match."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / err)


def ssim(a: Raster, b: Raster) -> float:
    """Structural similarity on luma, averaged over valid window centers."""
    _check_dims(a, b)
    if a.width < SSIM_WINDOW_SIZE or a.height < SSIM_WINDOW_SIZE:
        raise ValueError(
            f"image {a.width}x{a.height} smaller than the "
            f"{SSIM_WINDOW_SIZE}x{SSIM_WINDOW_SIZE} SSIM window"
        )
    x = to_luma(a).samples
    y = to_luma(b).samples
    window = gaussian_kernel(SSIM_WINDOW_SIZE, SSIM_WINDOW_SIGMA).weights
    margin = SSIM_WINDOW_SIZE // 2

    def win_mean(img: np.ndarray) -> np.ndarray:
        # Boundary mode is irrelevant: the margin rows/cols are cropped.
        full = ndimage.correlate(img, window, mode="constant")
        return full[margin:-margin, margin:-margin]

    mu_x = win_mean(x)
    mu_y = win_mean(y)
    sigma_xx = win_mean(x * x) - mu_x * mu_x
    sigma_yy = win_mean(y * y) - mu_y * mu_y
    sigma_xy = win_mean(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sigma_xy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sigma_xx + sigma_yy + SSIM_C2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class PairResult:
    """Per-pair metric record; psnr_db/ssim are None when status != ok."""

    id: str
    psnr_db: float | None
    ssim: float | None
    status: str

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class MetricReport:
    records: tuple[PairResult, ...]

    @property
    def evaluated_count(self) -> int:
        return sum(1 for r in self.records if r.ok)

    @property
    def failed_count(self) -> int:
        return sum(1 for r in self.records if not r.ok)

    @property
    def infinite_psnr_count(self) -> int:
        return sum(1 for r in self.records if r.ok and math.isinf(r.psnr_db))

    @property
    def mean_psnr_db(self) -> float | None:
        finite = [r.psnr_db for r in self.records if r.ok and math.isfinite(r.psnr_db)]
        if not finite:
            return None
        return sum(finite) / len(finite)

    @property
    def mean_ssim(self) -> float | None:
        vals = [r.ssim for r in self.records if r.ok]
        if not vals:
            return None
        return sum(vals) / len(vals)

    def aggregates(self) -> dict:
        return {
            "pair_count": len(self.records),
            "evaluated_count": self.evaluated_count,
            "failed_count": self.failed_count,
            "infinite_psnr_count": self.infinite_psnr_count,
            "mean_psnr_db": self.mean_psnr_db,
            "mean_ssim": self.mean_ssim,
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            for r in self.records:
                psnr_cell = "" if r.psnr_db is None else repr(r.psnr_db)
                ssim_cell = "" if r.ssim is None else repr(r.ssim)
                writer.writerow([r.id, psnr_cell, ssim_cell, r.status])

    def write_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.aggregates(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def evaluate_pairs(generated_dir: str | Path, reference_dir: str | Path) -> MetricReport:
    """Score same-named PNG pairs from two directories.

    Records are ordered by filename. A pair that cannot be scored (missing
    counterpart, unreadable file, size mismatch) is flagged in its record
    instead of aborting the run.
    """
    generated_dir = Path(generated_dir)
    reference_dir = Path(reference_dir)
    gen_names = {p.name for p in generated_dir.glob("*.png")}
    ref_names = {p.name for p in reference_dir.glob("*.png")}
    records = []
    for name in sorted(gen_names | ref_names):
        pair_id = Path(name).stem
        if name not in ref_names:
            records.append(PairResult(pair_id, None, None, "missing_reference"))
            continue
        if name not in gen_names:
            records.append(PairResult(pair_id, None, None, "missing_generated"))
            continue
        try:
            gen = load_image(generated_dir / name)
            ref = load_image(reference_dir / name)
            records.append(PairResult(pair_id, psnr(gen, ref), ssim(gen, ref), "ok"))
        except DimensionMismatchError:
            records.append(PairResult(pair_id, None, None, "dimension_mismatch"))
        except (ValueError, OSError) as exc:
            records.append(PairResult(pair_id, None, None, f"error: {exc}"))
    return MetricReport(records=tuple(records))
