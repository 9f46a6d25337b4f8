"""Differentiable losses for the paired translation trainer.

The pyramid terms reproduce, in torch, the scale losses of the companion
evaluation package: a 3x3 Gaussian kernel with sigma 1, reflected borders
(the edge row itself is not repeated), four blur passes followed by
even-index decimation per octave, and the mean absolute difference of the
two images' octave representatives.  All reconstruction terms are computed
on [0, 255] intensity values in float64 so that their values agree with the
evaluation CLI to near machine precision regardless of accumulation order,
while gradients still flow back into float32 network outputs.

Gradients propagate through the blur itself (the pyramid is not detached
from the generated image); :func:`gradcheck_multiscale` certifies the
analytic gradient against central finite differences.
"""

from __future__ import annotations

import functools
import math

import torch
import torch.nn.functional as F

from .config import MAX_SCALES, LossWeights

__all__ = [
    "blur",
    "downsample",
    "scale_representative",
    "multi_scale_components",
    "multi_scale_loss",
    "l1_reconstruction",
    "to_intensity",
    "from_intensity",
    "objective",
    "gradcheck_multiscale",
    "COMPONENT_KEYS",
]

_SIGMA = 1.0
_RADIUS = 1
_BLURS_PER_OCTAVE = 4

# Keys of the component dictionary returned by :func:`objective`, in the
# order they are logged to the loss CSV.
COMPONENT_KEYS = ("cgan", "l1", "s1", "s2", "s3", "total")


def _kernel_rows() -> tuple[tuple[float, ...], ...]:
    """3x3 Gaussian weights with sigma 1, normalized to sum to one."""
    raw = [
        [math.exp(-(dx * dx + dy * dy) / (2.0 * _SIGMA * _SIGMA)) for dx in (-1, 0, 1)]
        for dy in (-1, 0, 1)
    ]
    total = sum(sum(row) for row in raw)
    return tuple(tuple(value / total for value in row) for row in raw)


@functools.lru_cache(maxsize=None)
def _kernel(dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    """Blur kernel as a (1, 1, 3, 3) tensor for the given dtype and device."""
    return torch.tensor(_kernel_rows(), dtype=dtype, device=device).reshape(1, 1, 3, 3)


def _as_batch(image: torch.Tensor, name: str) -> torch.Tensor:
    """Promote a (C, H, W) tensor to (1, C, H, W); validate dimensionality."""
    if image.dim() == 3:
        return image.unsqueeze(0)
    if image.dim() == 4:
        return image
    raise ValueError(f"{name} must have 3 or 4 dimensions, got {image.dim()}")


def blur(image: torch.Tensor) -> torch.Tensor:
    """Convolve each channel with the 3x3 Gaussian kernel, reflected borders.

    Args:
        image: Tensor of shape (N, C, H, W) or (C, H, W) with H, W >= 2.

    Returns:
        Blurred tensor of the same shape as the input.
    """
    batch = _as_batch(image, "image")
    if min(batch.shape[-2:]) < 2:
        raise ValueError(
            f"blur needs spatial dimensions of at least 2, got {tuple(batch.shape[-2:])}"
        )
    channels = batch.shape[1]
    weight = _kernel(batch.dtype, batch.device).expand(channels, 1, 3, 3)
    padded = F.pad(batch, (_RADIUS,) * 4, mode="reflect")
    blurred = F.conv2d(padded, weight, groups=channels)
    return blurred if image.dim() == 4 else blurred.squeeze(0)


def downsample(image: torch.Tensor) -> torch.Tensor:
    """Keep every even-indexed row and column."""
    return image[..., ::2, ::2]


def scale_representative(image: torch.Tensor, level: int) -> torch.Tensor:
    """Apply ``level`` rounds of four blur passes followed by decimation.

    Args:
        image: Tensor of shape (N, C, H, W) or (C, H, W).
        level: Pyramid level, at least 1.  The input's smaller spatial
            dimension must be at least ``2 ** level``.

    Returns:
        The level-``level`` octave representative.
    """
    if level < 1:
        raise ValueError(f"level must be at least 1, got {level}")
    batch = _as_batch(image, "image")
    if min(batch.shape[-2:]) < 2**level:
        raise ValueError(
            f"scale {level} needs spatial dimensions of at least {2 ** level}, "
            f"got {tuple(batch.shape[-2:])}"
        )
    current = batch
    for _ in range(level):
        for _ in range(_BLURS_PER_OCTAVE):
            current = blur(current)
        current = downsample(current)
    return current if image.dim() == 4 else current.squeeze(0)


def _paired_batches(a: torch.Tensor, b: torch.Tensor, op: str) -> tuple[torch.Tensor, torch.Tensor]:
    batch_a = _as_batch(a, "a")
    batch_b = _as_batch(b, "b")
    if batch_a.shape != batch_b.shape:
        raise ValueError(
            f"{op} needs matching shapes, got {tuple(batch_a.shape)} and {tuple(batch_b.shape)}"
        )
    return batch_a, batch_b


def l1_reconstruction(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference, computed in float64.

    Both inputs are expected on the [0, 255] intensity scale (see
    :func:`to_intensity`); the result then matches the evaluation CLI's
    ``l1`` figure.
    """
    batch_a, batch_b = _paired_batches(a, b, "l1_reconstruction")
    return (batch_a.to(torch.float64) - batch_b.to(torch.float64)).abs().mean()


def multi_scale_components(a: torch.Tensor, b: torch.Tensor, count: int) -> list[torch.Tensor]:
    """Unweighted pyramid differences S1..S``count`` as float64 scalars.

    Each S_i is the mean absolute difference of the two images' level-``i``
    octave representatives, averaged over every channel.  Inputs are expected
    on the [0, 255] intensity scale.

    Args:
        a: Tensor of shape (N, C, H, W) or (C, H, W).
        b: Tensor of the same shape as ``a``.
        count: Number of scales to compute, between 0 and 3.

    Returns:
        A list of ``count`` scalar tensors; gradients flow through the blur.
    """
    if not 0 <= count <= MAX_SCALES:
        raise ValueError(f"count must lie in [0, {MAX_SCALES}], got {count}")
    batch_a, batch_b = _paired_batches(a, b, "multi_scale_components")
    if count == 0:
        return []
    if min(batch_a.shape[-2:]) < 2**count:
        raise ValueError(
            f"computing {count} scales needs spatial dimensions of at least {2 ** count}, "
            f"got {tuple(batch_a.shape[-2:])}"
        )
    current_a = batch_a.to(torch.float64)
    current_b = batch_b.to(torch.float64)
    components: list[torch.Tensor] = []
    for _ in range(count):
        for _ in range(_BLURS_PER_OCTAVE):
            current_a = blur(current_a)
            current_b = blur(current_b)
        current_a = downsample(current_a)
        current_b = downsample(current_b)
        components.append((current_a - current_b).abs().mean())
    return components


def multi_scale_loss(a: torch.Tensor, b: torch.Tensor, weights: tuple[float, ...]) -> torch.Tensor:
    """Weighted sum of the pyramid differences: sum_i weights[i] * S_i."""
    components = multi_scale_components(a, b, len(weights))
    total = torch.zeros((), dtype=torch.float64)
    for weight, component in zip(weights, components):
        total = total + weight * component
    return total


def to_intensity(image: torch.Tensor) -> torch.Tensor:
    """Map network-range values in [-1, 1] onto the [0, 255] intensity scale."""
    return (image + 1.0) * 127.5


def from_intensity(image: torch.Tensor) -> torch.Tensor:
    """Map [0, 255] intensity values onto the network range [-1, 1]."""
    return image / 127.5 - 1.0


def objective(
    discriminator: torch.nn.Module,
    source: torch.Tensor,
    target: torch.Tensor,
    generated: torch.Tensor,
    weights: LossWeights,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Full generator objective and its individually logged components.

    The total is ``cgan + reconstruction_weight * l1 + sum_i scale_weight_i * S_i``
    where ``cgan`` scores the generated image as real under the discriminator,
    and the reconstruction terms compare generated and target images on the
    [0, 255] intensity scale.  The component dictionary always carries the
    keys in :data:`COMPONENT_KEYS`; disabled scales are reported as 0.0, and
    ``total`` reconstructs exactly from the other entries.

    Args:
        discriminator: Module scoring (source, candidate) pairs as a logit grid.
        source: Conditioning images in [-1, 1], shape (N, 3, H, W).
        target: Ground-truth images in [-1, 1], same shape as ``source``.
        generated: Generator output in [-1, 1], same shape as ``target``.
        weights: Loss coefficients.

    Returns:
        ``(total, components)`` where ``total`` is a differentiable float64
        scalar and ``components`` maps each key to a plain float.
    """
    if target.shape != generated.shape or source.shape != generated.shape:
        raise ValueError(
            "objective needs matching source/target/generated shapes, got "
            f"{tuple(source.shape)}, {tuple(target.shape)}, {tuple(generated.shape)}"
        )
    logits = discriminator(source, generated)
    cgan = F.binary_cross_entropy_with_logits(logits, torch.ones_like(logits))

    generated_u = to_intensity(generated)
    target_u = to_intensity(target)
    l1 = l1_reconstruction(generated_u, target_u)
    scales = multi_scale_components(generated_u, target_u, weights.enabled_scales)

    total = cgan.to(torch.float64) + weights.reconstruction * l1
    for weight, component in zip(weights.scales, scales):
        total = total + weight * component

    components: dict[str, float] = {
        "cgan": cgan.detach().item(),
        "l1": l1.detach().item(),
        "s1": 0.0,
        "s2": 0.0,
        "s3": 0.0,
        "total": total.detach().item(),
    }
    for index, component in enumerate(scales, start=1):
        components[f"s{index}"] = component.detach().item()
    return total, components


def _pyramid_total(
    generated: torch.Tensor, reference: torch.Tensor, weights: tuple[float, ...]
) -> torch.Tensor:
    total = torch.zeros((), dtype=torch.float64)
    for weight, component in zip(weights, multi_scale_components(generated, reference, len(weights))):
        total = total + weight * component
    return total


def gradcheck_multiscale(
    image_size: int = 8,
    weights: tuple[float, ...] = (1.0,),
    seed: int = 0,
    step: float = 1e-3,
) -> float:
    """Compare the analytic pyramid-loss gradient with central differences.

    Builds a random [0, 255] float64 image pair whose octave representatives
    all differ by a margin far exceeding the finite-difference step
    (re-drawing if necessary): perturbing one input pixel by ``step`` moves
    any representative by at most ``step`` (the composed blur weights sum to
    one), so inside the margin the mean absolute differences are smooth and
    the central difference never crosses a kink of ``|.|``.  The analytic
    gradient of ``sum_i weights[i] * S_i`` with respect to the generated
    image is then compared element-wise against central finite differences.

    Args:
        image_size: Side length of the square test images.
        weights: Pyramid weights; their count sets the number of scales.
        seed: Seed for the test-image draw.
        step: Central-difference step size.

    Returns:
        The maximum absolute gradient deviation divided by the largest
        finite-difference magnitude.
    """
    count = len(weights)
    if count < 1:
        raise ValueError("gradcheck needs at least one pyramid scale")
    if image_size < 2**count:
        raise ValueError(
            f"image_size {image_size} too small for {count} scales (needs {2 ** count})"
        )
    rng = torch.Generator().manual_seed(seed)
    reference = torch.rand((1, 3, image_size, image_size), generator=rng, dtype=torch.float64) * 255.0
    margin = 50.0 * step
    generated = None
    for _ in range(256):
        candidate = torch.rand((1, 3, image_size, image_size), generator=rng, dtype=torch.float64) * 255.0
        rep_a, rep_b = candidate, reference
        clear = True
        for _ in range(count):
            for _ in range(_BLURS_PER_OCTAVE):
                rep_a = blur(rep_a)
                rep_b = blur(rep_b)
            rep_a = downsample(rep_a)
            rep_b = downsample(rep_b)
            if (rep_a - rep_b).abs().min().item() <= margin:
                clear = False
                break
        if clear:
            generated = candidate
            break
    if generated is None:
        raise RuntimeError("could not draw a tie-free image pair for the gradient check")

    point = generated.clone().requires_grad_(True)
    _pyramid_total(point, reference, weights).backward()
    analytic = point.grad.detach().clone()

    finite = torch.zeros_like(generated)
    flat = generated.reshape(-1)
    finite_flat = finite.reshape(-1)
    for index in range(flat.numel()):
        original = flat[index].item()
        flat[index] = original + step
        upper = _pyramid_total(generated, reference, weights).item()
        flat[index] = original - step
        lower = _pyramid_total(generated, reference, weights).item()
        flat[index] = original
        finite_flat[index] = (upper - lower) / (2.0 * step)

    scale = finite.abs().max().item()
    if scale == 0.0:
        raise RuntimeError("degenerate finite-difference gradient in gradcheck")
    return float((analytic - finite).abs().max().item() / scale)
