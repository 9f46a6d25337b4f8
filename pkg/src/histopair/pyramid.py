"""Gaussian scale-space pyramids and the multi-scale L1 losses.

An octave holds 5 layers related by repeated Gaussian blurring; the next
octave starts from the previous octave's last layer decimated by 2. The
scale representative ``F_i`` is the first layer of octave ``i + 1``, i.e.
the image after ``i`` rounds of (4 blurs + 1 downsample). Losses compare
scale representatives of two images with a mean absolute difference, so
values are resolution independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import DimensionMismatchError, Plane, Raster, split_channels


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """Normalized isotropic Gaussian convolution weights."""

    size: int
    sigma: float
    weights: np.ndarray


@dataclass(frozen=True, eq=False)
class Octave:
    """Five planes of identical size; layer k+1 = blur(layer k)."""

    layers: tuple[Plane, ...]

    @property
    def width(self) -> int:
        return self.layers[0].width

    @property
    def height(self) -> int:
        return self.layers[0].height


@dataclass(frozen=True, eq=False)
class GaussianPyramid:
    octaves: tuple[Octave, ...]

    @property
    def base_width(self) -> int:
        return self.octaves[0].width

    @property
    def base_height(self) -> int:
        return self.octaves[0].height


@dataclass(frozen=True)
class ScaleWeights:
    """Loss weights: ``lambda_l1`` for the full-resolution L1 term and
    ``lambda_scale[i-1]`` for scale i."""

    lambda_l1: float = 100.0
    lambda_scale: tuple[float, ...] = (100.0,)

    def __post_init__(self) -> None:
        if self.lambda_l1 < 0.0:
            raise ValueError("lambda_l1 must be >= 0")
        if any(w < 0.0 for w in self.lambda_scale):
            raise ValueError("scale weights must all be >= 0")

    def deepest_active_scale(self) -> int:
        """Largest scale index with a positive weight (0 when none)."""
        deepest = 0
        for i, w in enumerate(self.lambda_scale, start=1):
            if w > 0.0:
                deepest = i
        return deepest


LAYERS_PER_OCTAVE = 5


def gaussian_kernel(size: int = 3, sigma: float = 1.0) -> GaussianKernel:
    """Build a normalized size x size Gaussian kernel.

    weights[dy, dx] is proportional to exp(-(dx^2 + dy^2) / (2 sigma^2))
    for offsets centered on the middle cell, normalized to sum to 1.
    """
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    sq = ax[None, :] ** 2 + ax[:, None] ** 2
    weights = np.exp(-sq / (2.0 * sigma * sigma))
    weights /= weights.sum()
    weights.setflags(write=False)
    return GaussianKernel(size=size, sigma=sigma, weights=weights)


def _blur_array(a: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    # reflect-101 borders (edge pixel not duplicated) keep constants exact.
    return ndimage.correlate(a, kernel.weights, mode="mirror")


def blur(p: Plane, kernel: GaussianKernel) -> Plane:
    """Convolve with the Gaussian kernel; dimensions unchanged."""
    return Plane(_blur_array(p.samples, kernel))


def downsample(p: Plane) -> Plane:
    """Keep samples at even (row, col) indices; output dims = ceil(in / 2)."""
    return Plane(p.samples[::2, ::2].copy())


def _check_depth(width: int, height: int, n_octaves: int) -> None:
    need = 2 ** (n_octaves - 1)
    if min(width, height) < need:
        raise ValueError(
            f"plane {width}x{height} too small for {n_octaves} octaves "
            f"(each side must be >= {need})"
        )


def build_pyramid(p: Plane, n_octaves: int, kernel: GaussianKernel) -> GaussianPyramid:
    """Chain octaves: 4 blurs per octave, then decimate into the next."""
    if n_octaves < 1:
        raise ValueError("n_octaves must be >= 1")
    _check_depth(p.width, p.height, n_octaves)
    octaves = []
    base = p
    for j in range(n_octaves):
        layers = [base]
        for _ in range(LAYERS_PER_OCTAVE - 1):
            layers.append(blur(layers[-1], kernel))
        octaves.append(Octave(layers=tuple(layers)))
        if j + 1 < n_octaves:
            base = downsample(layers[-1])
    return GaussianPyramid(octaves=tuple(octaves))


def scale_representative(pyramid: GaussianPyramid, i: int) -> Plane:
    """First layer of octave i+1: the image after i rounds of 4 blurs + decimate."""
    if i < 1:
        raise ValueError(f"scale index must be >= 1, got {i}")
    if i >= len(pyramid.octaves):
        raise ValueError(
            f"scale {i} needs {i + 1} octaves, pyramid has {len(pyramid.octaves)}"
        )
    return pyramid.octaves[i].layers[0]


def _as_channel_arrays(image: Plane | Raster) -> list[np.ndarray]:
    if isinstance(image, Raster):
        return [ch.samples for ch in split_channels(image)]
    return [image.samples]


def _check_same_geometry(a: Plane | Raster, b: Plane | Raster) -> None:
    if type(a) is not type(b):
        raise DimensionMismatchError(
            f"cannot compare {type(a).__name__} with {type(b).__name__}"
        )
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatchError(
            f"dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def _representative_array(a: np.ndarray, i: int, kernel: GaussianKernel) -> np.ndarray:
    for _ in range(i):
        for _ in range(LAYERS_PER_OCTAVE - 1):
            a = _blur_array(a, kernel)
        a = a[::2, ::2]
    return a


def scale_loss(
    a: Plane | Raster, b: Plane | Raster, i: int, kernel: GaussianKernel
) -> float:
    """Mean absolute difference between the scale-i representatives of a and b.

    RGB rasters are scored per channel and averaged, so the Plane and
    Raster forms agree on grayscale content.
    """
    _check_same_geometry(a, b)
    if i < 1:
        raise ValueError(f"scale index must be >= 1, got {i}")
    _check_depth(a.width, a.height, i + 1)
    total = 0.0
    chans_a, chans_b = _as_channel_arrays(a), _as_channel_arrays(b)
    for ca, cb in zip(chans_a, chans_b):
        fa = _representative_array(ca, i, kernel)
        fb = _representative_array(cb, i, kernel)
        total += float(np.mean(np.abs(fa - fb)))
    return total / len(chans_a)


def multi_scale_loss(
    a: Plane | Raster, b: Plane | Raster, weights: ScaleWeights, kernel: GaussianKernel
) -> float:
    """Weighted sum of per-scale losses over all scales with positive weight."""
    _check_same_geometry(a, b)
    deepest = weights.deepest_active_scale()
    if deepest == 0:
        return 0.0
    _check_depth(a.width, a.height, deepest + 1)
    chans_a, chans_b = _as_channel_arrays(a), _as_channel_arrays(b)
    total = 0.0
    for ca, cb in zip(chans_a, chans_b):
        fa, fb = ca, cb
        for i in range(1, deepest + 1):
            fa = _representative_array(fa, 1, kernel)
            fb = _representative_array(fb, 1, kernel)
            w = weights.lambda_scale[i - 1]
            if w > 0.0:
                total += w * float(np.mean(np.abs(fa - fb)))
    return total / len(chans_a)


def l1_reconstruction(a: Plane | Raster, b: Plane | Raster) -> float:
    """Mean absolute difference over all samples at the original resolution."""
    _check_same_geometry(a, b)
    if isinstance(a, Raster):
        return float(
            np.mean(np.abs(a.samples.astype(np.float64) - b.samples.astype(np.float64)))
        )
    return float(np.mean(np.abs(a.samples - b.samples)))
