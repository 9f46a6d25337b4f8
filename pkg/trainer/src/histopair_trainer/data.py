"""Dataset access for paired training patches.

The trainer consumes the patch manifest CSV and the PNG files it references
directly — plain CSV parsing and PNG decoding, no dependency on the package
that produced them.  Images are loaded as float32 tensors scaled to the
network range [-1, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image

__all__ = [
    "MANIFEST_COLUMNS",
    "PairRecord",
    "read_manifest",
    "load_image",
    "PairDataset",
    "batches",
]

MANIFEST_COLUMNS = (
    "patch_id",
    "wsi_id",
    "her2_level",
    "he_path",
    "ihc_path",
    "tissue_ratio",
    "alignment_score",
    "split",
)

_SPLITS = ("train", "test")


@dataclass(frozen=True)
class PairRecord:
    """One manifest row: a co-registered HE/IHC patch pair."""

    patch_id: str
    wsi_id: str
    her2_level: str
    he_path: str
    ihc_path: str
    tissue_ratio: float
    alignment_score: float
    split: str


def read_manifest(path: str | Path) -> list[PairRecord]:
    """Parse a patch manifest CSV into records.

    Args:
        path: Manifest file location.

    Returns:
        Records in file order.

    Raises:
        FileNotFoundError: If the manifest does not exist.
        ValueError: If the header misses required columns, a numeric field
            does not parse, or a split value is neither train nor test.
    """
    manifest_path = Path(path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    with open(manifest_path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [column for column in MANIFEST_COLUMNS if column not in header]
        if missing:
            raise ValueError(f"manifest {manifest_path} misses columns: {', '.join(missing)}")
        records: list[PairRecord] = []
        for row_number, row in enumerate(reader, start=2):
            try:
                tissue_ratio = float(row["tissue_ratio"])
                alignment_score = float(row["alignment_score"])
            except ValueError as error:
                raise ValueError(
                    f"manifest {manifest_path} line {row_number}: bad numeric field ({error})"
                ) from None
            split = row["split"]
            if split not in _SPLITS:
                raise ValueError(
                    f"manifest {manifest_path} line {row_number}: split must be one of "
                    f"{_SPLITS}, got {split!r}"
                )
            records.append(
                PairRecord(
                    patch_id=row["patch_id"],
                    wsi_id=row["wsi_id"],
                    her2_level=row["her2_level"],
                    he_path=row["he_path"],
                    ihc_path=row["ihc_path"],
                    tissue_ratio=tissue_ratio,
                    alignment_score=alignment_score,
                    split=split,
                )
            )
    return records


def load_image(path: str | Path) -> torch.Tensor:
    """Load a PNG as a float32 (3, H, W) tensor scaled to [-1, 1]."""
    image_path = Path(path)
    if not image_path.is_file():
        raise FileNotFoundError(f"image not found: {image_path}")
    with Image.open(image_path) as image:
        pixels = np.asarray(image.convert("RGB"), dtype=np.float32)
    tensor = torch.from_numpy(pixels).permute(2, 0, 1)
    return tensor / 127.5 - 1.0


class PairDataset:
    """Pairs of (source HE, target IHC) tensors backed by manifest records."""

    def __init__(self, records: Sequence[PairRecord], root: str | Path) -> None:
        self.records = list(records)
        self.root = Path(root)

    @classmethod
    def from_manifest(
        cls, manifest_path: str | Path, split: str, root: str | Path | None = None
    ) -> "PairDataset":
        """Load the records of one split; paths resolve against ``root``.

        ``root`` defaults to the manifest's own directory, matching how the
        manifest's relative paths were written.
        """
        if split not in _SPLITS:
            raise ValueError(f"split must be one of {_SPLITS}, got {split!r}")
        manifest = Path(manifest_path)
        records = [record for record in read_manifest(manifest) if record.split == split]
        return cls(records, manifest.parent if root is None else root)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, torch.Tensor, str]:
        record = self.records[index]
        source = load_image(self.root / record.he_path)
        target = load_image(self.root / record.ihc_path)
        return source, target, record.patch_id


def batches(
    dataset: PairDataset,
    batch_size: int,
    generator: torch.Generator | None = None,
) -> Iterator[tuple[torch.Tensor, torch.Tensor, list[str]]]:
    """Yield stacked (source, target, patch_ids) minibatches.

    With a generator the record order is shuffled through it (deterministic
    for a seeded generator); without one, records are visited in manifest
    order.  The final batch may be smaller than ``batch_size``.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    count = len(dataset)
    if generator is None:
        order = list(range(count))
    else:
        order = torch.randperm(count, generator=generator).tolist()
    for start in range(0, count, batch_size):
        chunk = order[start : start + batch_size]
        items = [dataset[index] for index in chunk]
        sources = torch.stack([item[0] for item in items])
        targets = torch.stack([item[1] for item in items])
        ids = [item[2] for item in items]
        yield sources, targets, ids
