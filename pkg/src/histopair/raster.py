"""Image containers and lossless PNG I/O.

Every stage of the pipeline exchanges two containers: :class:`Raster`, an
8-bit RGB image, and :class:`Plane`, a single-channel float image. Samples
are row-major; rasters are channel-interleaved. Both containers are
immutable after construction, so they are safe to share across workers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# ITU-R BT.601 luma weights.
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class UnsupportedBitDepthError(ValueError):
    """PNG file does not carry 8 bits per sample."""


class UnsupportedChannelCountError(ValueError):
    """PNG file is not plain 3-channel RGB."""


class DimensionMismatchError(ValueError):
    """Operands do not share the same pixel dimensions."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Raster:
    """8-bit RGB image. ``samples`` has shape (height, width, 3), dtype uint8."""

    samples: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.samples)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValueError(f"raster samples must have shape (h, w, 3), got {a.shape}")
        if a.dtype != np.uint8:
            raise ValueError(f"raster samples must be uint8, got {a.dtype}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("raster must be at least 1x1")
        object.__setattr__(self, "samples", _frozen(np.ascontiguousarray(a)))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class Plane:
    """Single-channel image with finite float samples in [0, 255].

    ``samples`` has shape (height, width), dtype float64. Values slightly
    outside [0, 255] produced by intermediate arithmetic are accepted; only
    finiteness is enforced here.
    """

    samples: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.samples, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"plane samples must have shape (h, w), got {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("plane must be at least 1x1")
        if not np.all(np.isfinite(a)):
            raise ValueError("plane samples must all be finite")
        object.__setattr__(self, "samples", _frozen(np.ascontiguousarray(a)))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class ValidityMask:
    """Boolean companion mask: True where a pixel holds real data."""

    flags: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.flags, dtype=bool)
        if a.ndim != 2:
            raise ValueError(f"mask flags must have shape (h, w), got {a.shape}")
        object.__setattr__(self, "flags", _frozen(np.ascontiguousarray(a)))

    @property
    def height(self) -> int:
        return self.flags.shape[0]

    @property
    def width(self) -> int:
        return self.flags.shape[1]

    def all_valid(self) -> bool:
        return bool(self.flags.all())


def _read_png_header(path: Path) -> tuple[int, int]:
    """Return (bit_depth, color_type) from the IHDR chunk."""
    with open(path, "rb") as fh:
        head = fh.read(len(_PNG_SIGNATURE) + 25)
    if not head.startswith(_PNG_SIGNATURE):
        raise ValueError(f"not a PNG file: {path}")
    # First chunk must be IHDR: length(4) type(4) w(4) h(4) depth(1) color(1)
    if head[12:16] != b"IHDR" or len(head) < 26:
        raise ValueError(f"malformed PNG header: {path}")
    bit_depth, color_type = struct.unpack(">BB", head[24:26])
    return bit_depth, color_type


def load_image(path: str | Path) -> Raster:
    """Load an 8-bit RGB PNG with exact pixel values.

    Raises FileNotFoundError for a missing file, UnsupportedBitDepthError
    for non-8-bit PNGs, and UnsupportedChannelCountError for anything that
    is not plain truecolor RGB (grayscale, palette, alpha).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    bit_depth, color_type = _read_png_header(path)
    if bit_depth != 8:
        raise UnsupportedBitDepthError(f"{path}: {bit_depth}-bit PNG, only 8-bit is supported")
    if color_type != 2:
        raise UnsupportedChannelCountError(
            f"{path}: PNG color type {color_type}, only truecolor RGB is supported"
        )
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.uint8)
    return Raster(arr)


def save_image(raster: Raster, path: str | Path) -> None:
    """Write ``raster`` as a lossless 8-bit RGB PNG."""
    Image.fromarray(raster.samples, mode="RGB").save(Path(path), format="PNG")


def split_channels(raster: Raster) -> tuple[Plane, Plane, Plane]:
    """Split into (R, G, B) planes; values copied without scaling."""
    a = raster.samples.astype(np.float64)
    return Plane(a[:, :, 0]), Plane(a[:, :, 1]), Plane(a[:, :, 2])


def _round_half_away(values: np.ndarray) -> np.ndarray:
    return np.where(values >= 0.0, np.floor(values + 0.5), np.ceil(values - 0.5))


def merge_channels(r: Plane, g: Plane, b: Plane) -> Raster:
    """Interleave three planes into a Raster.

    Values are rounded half away from zero, then clamped to [0, 255].
    """
    if not (r.samples.shape == g.samples.shape == b.samples.shape):
        raise DimensionMismatchError(
            f"channel shapes differ: {r.samples.shape}, {g.samples.shape}, {b.samples.shape}"
        )
    stacked = np.stack([r.samples, g.samples, b.samples], axis=2)
    rounded = np.clip(_round_half_away(stacked), 0.0, 255.0)
    return Raster(rounded.astype(np.uint8))


def to_luma(raster: Raster) -> Plane:
    """BT.601 luma of an RGB raster, kept as real values (no rounding)."""
    a = raster.samples.astype(np.float64)
    luma = LUMA_R * a[:, :, 0] + LUMA_G * a[:, :, 1] + LUMA_B * a[:, :, 2]
    # The weights sum to 1 analytically; clip the float residue so the
    # output range contract [0, 255] is exact.
    return Plane(np.clip(luma, 0.0, 255.0))
