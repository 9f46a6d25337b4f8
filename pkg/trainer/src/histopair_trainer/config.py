"""Configuration for the paired image-to-image translation trainer.

The trainer optimizes a conditional generator against a patch-based
discriminator.  The generator objective combines an adversarial term, an
L1 reconstruction term, and a weighted sum of Gaussian-pyramid difference
terms; :class:`LossWeights` carries the coefficients and encodes which
pyramid scales participate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["LossWeights", "TrainConfig", "lr_factor", "MAX_SCALES"]

# The pyramid loss is defined for the first three scales; enabling deeper
# scales would require larger training patches than this trainer targets.
MAX_SCALES = 3


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the generator objective's non-adversarial terms.

    Attributes:
        reconstruction: Weight of the mean-absolute-error term between the
            generated and the target image (both in [0, 255] intensity units).
        scales: Weight of each enabled pyramid scale, in order S1, S2, S3.
            The enabled scales always form a prefix of (S1, S2, S3): a scale
            can only be switched on together with every shallower scale.  An
            empty tuple disables the pyramid term entirely.
    """

    reconstruction: float = 100.0
    scales: tuple[float, ...] = (100.0,)

    def __post_init__(self) -> None:
        if not math.isfinite(self.reconstruction) or self.reconstruction < 0:
            raise ValueError(
                f"reconstruction weight must be finite and non-negative, got {self.reconstruction!r}"
            )
        scales = tuple(float(w) for w in self.scales)
        object.__setattr__(self, "scales", scales)
        if len(scales) > MAX_SCALES:
            raise ValueError(
                f"at most {MAX_SCALES} pyramid scales are supported, got {len(scales)} weights"
            )
        for index, weight in enumerate(scales, start=1):
            if not math.isfinite(weight) or weight <= 0:
                raise ValueError(
                    f"scale weight S{index} must be finite and positive, got {weight!r}; "
                    "drop trailing entries instead of zeroing them"
                )

    @property
    def enabled_scales(self) -> int:
        """Number of pyramid scales that participate in the objective."""
        return len(self.scales)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one training run.

    Attributes:
        epochs: Number of passes over the training records.
        batch_size: Records per optimization step.
        learning_rate: Base Adam learning rate; held constant for the first
            half of training, then decreased linearly toward zero (see
            :func:`lr_factor`).
        adam_betas: Exponential decay rates for Adam's moment estimates.
        weights: Loss coefficients; see :class:`LossWeights`.
        generator_width: Channel count of the generator's first convolution.
        discriminator_width: Channel count of the discriminator's first
            convolution.
        residual_blocks: Number of residual blocks in the generator trunk.
        dropout: Dropout probability inside the residual blocks.  Dropout is
            the generator's only noise source; it is active during training
            and disabled in deterministic inference (eval) mode.
        seed: Root seed from which all run randomness derives (weight
            initialization, batch shuffling, dropout sampling).
    """

    epochs: int = 100
    batch_size: int = 2
    learning_rate: float = 2e-4
    adam_betas: tuple[float, float] = (0.5, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    generator_width: int = 64
    discriminator_width: int = 64
    residual_blocks: int = 9
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if not math.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be finite and positive, got {self.learning_rate!r}")
        betas = tuple(float(b) for b in self.adam_betas)
        object.__setattr__(self, "adam_betas", betas)
        if len(betas) != 2 or not all(0.0 <= b < 1.0 for b in betas):
            raise ValueError(f"adam_betas must be two values in [0, 1), got {self.adam_betas!r}")
        if not isinstance(self.weights, LossWeights):
            raise ValueError("weights must be a LossWeights instance")
        if self.generator_width < 1 or self.discriminator_width < 1:
            raise ValueError("network widths must be at least 1")
        if self.residual_blocks < 0:
            raise ValueError(f"residual_blocks must be non-negative, got {self.residual_blocks}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout!r}")


def lr_factor(epoch: int, total_epochs: int) -> float:
    """Multiplier applied to the base learning rate for a 0-based epoch.

    The rate is held at its base value for the first ``total_epochs // 2``
    epochs, then decreased linearly so that it would reach exactly zero one
    epoch past the end of training.  For 100 epochs this keeps the base rate
    for epochs 0-49 and steps it down by 1/51 of the base per epoch after.

    Args:
        epoch: Zero-based epoch index.
        total_epochs: Total number of training epochs.

    Returns:
        A factor in (0, 1].

    Raises:
        ValueError: If ``epoch`` is outside ``[0, total_epochs)``.
    """
    if total_epochs < 1:
        raise ValueError(f"total_epochs must be at least 1, got {total_epochs}")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    constant = total_epochs // 2
    if epoch < constant:
        return 1.0
    return 1.0 - (epoch + 1 - constant) / (total_epochs - constant + 1)
