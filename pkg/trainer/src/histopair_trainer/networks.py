"""Generator and discriminator architectures for paired image translation.

The generator is a residual encoder-decoder: a 7x7 stem, two stride-2
downsampling stages, a trunk of residual blocks at quarter resolution, two
upsampling stages, and a 7x7 head with tanh output in [-1, 1].  Dropout
inside the residual blocks is the model's only stochasticity; it is active
in training mode and disabled in eval mode, which makes eval-mode inference
deterministic.

The discriminator scores overlapping patches of a (source, candidate) pair:
the two 3-channel images are concatenated to 6 channels and reduced by a
stack of 4x4 convolutions to a spatial grid of real/fake logits, each cell
covering a 70x70 receptive field at the default depth (a 256x256 pair yields
a 30x30 grid).
"""

from __future__ import annotations

import torch
from torch import nn

from .config import TrainConfig

__all__ = [
    "ImageGenerator",
    "PairDiscriminator",
    "build_generator",
    "build_discriminator",
    "GENERATOR_STRIDE",
    "DISCRIMINATOR_MIN_SIZE",
]

# Two stride-2 stages each way: spatial dimensions must be multiples of 4.
GENERATOR_STRIDE = 4
# The trunk runs at quarter resolution and its convolutions reflect-pad by
# one pixel, so the quarter-resolution feature map must be at least 2x2.
_GENERATOR_MIN_SIZE = 8
# Three stride-2 stages plus two stride-1 4x4 convolutions: anything
# smaller than 24 pixels per side collapses to an empty logit grid.
DISCRIMINATOR_MIN_SIZE = 24


class _ResidualBlock(nn.Module):
    """3x3 conv block with reflected padding and an identity skip."""

    def __init__(self, channels: int, dropout: float) -> None:
        super().__init__()
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
        ]
        if dropout > 0.0:
            layers.append(nn.Dropout(dropout))
        layers += [
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return image + self.body(image)


class ImageGenerator(nn.Module):
    """Residual encoder-decoder mapping a 3-channel image to [-1, 1] output."""

    def __init__(self, width: int = 64, residual_blocks: int = 9, dropout: float = 0.5) -> None:
        super().__init__()
        stem = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, width, kernel_size=7),
            nn.InstanceNorm2d(width),
            nn.ReLU(inplace=True),
        ]
        encoder = [
            nn.Conv2d(width, width * 2, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(width * 2),
            nn.ReLU(inplace=True),
            nn.Conv2d(width * 2, width * 4, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(width * 4),
            nn.ReLU(inplace=True),
        ]
        trunk = [_ResidualBlock(width * 4, dropout) for _ in range(residual_blocks)]
        decoder = [
            nn.ConvTranspose2d(width * 4, width * 2, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(width * 2),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(width * 2, width, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(width),
            nn.ReLU(inplace=True),
        ]
        head = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(width, 3, kernel_size=7),
            nn.Tanh(),
        ]
        self.layers = nn.Sequential(*stem, *encoder, *trunk, *decoder, *head)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ValueError(
                f"generator expects (N, 3, H, W) input, got shape {tuple(image.shape)}"
            )
        height, width = image.shape[-2:]
        if (
            height % GENERATOR_STRIDE != 0
            or width % GENERATOR_STRIDE != 0
            or min(height, width) < _GENERATOR_MIN_SIZE
        ):
            raise ValueError(
                f"image size {height}x{width} is incompatible with the two stride-2 stages: "
                f"dimensions must be multiples of {GENERATOR_STRIDE} and at least {_GENERATOR_MIN_SIZE}"
            )
        return self.layers(image)


class PairDiscriminator(nn.Module):
    """Patch classifier producing a spatial logit grid for (source, candidate) pairs."""

    def __init__(self, width: int = 64) -> None:
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(6, width, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width, width * 2, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(width * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width * 2, width * 4, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(width * 4),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width * 4, width * 8, kernel_size=4, stride=1, padding=1),
            nn.InstanceNorm2d(width * 8),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width * 8, 1, kernel_size=4, stride=1, padding=1),
        )

    def forward(self, source: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        if source.shape != candidate.shape:
            raise ValueError(
                f"discriminator needs matching shapes, got {tuple(source.shape)} "
                f"and {tuple(candidate.shape)}"
            )
        if source.dim() != 4 or source.shape[1] != 3:
            raise ValueError(
                f"discriminator expects (N, 3, H, W) inputs, got shape {tuple(source.shape)}"
            )
        if min(source.shape[-2:]) < DISCRIMINATOR_MIN_SIZE:
            raise ValueError(
                f"discriminator needs images of at least {DISCRIMINATOR_MIN_SIZE} pixels "
                f"per side, got {tuple(source.shape[-2:])}"
            )
        return self.layers(torch.cat([source, candidate], dim=1))


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, mean=0.0, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def build_generator(config: TrainConfig) -> ImageGenerator:
    """Build and initialize the generator; same config gives identical weights."""
    torch.manual_seed(config.seed)
    generator = ImageGenerator(
        width=config.generator_width,
        residual_blocks=config.residual_blocks,
        dropout=config.dropout,
    )
    generator.apply(_init_weights)
    return generator


def build_discriminator(config: TrainConfig) -> PairDiscriminator:
    """Build and initialize the discriminator; same config gives identical weights."""
    torch.manual_seed(config.seed + 1)
    discriminator = PairDiscriminator(width=config.discriminator_width)
    discriminator.apply(_init_weights)
    return discriminator
