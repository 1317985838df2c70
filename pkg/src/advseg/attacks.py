"""Gradient-sign adversarial example crafting.

Both attacks perturb each pixel by epsilon times the sign of the loss
gradient with respect to the input. Ascent (FGSM) adds the pattern, pushing
the input toward maximum loss; descent (inverse FGSM) subtracts it, pushing
toward minimum loss. Crafted images keep the original ground-truth mask and
are clipped back into the valid pixel range.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import unet
from .ops import cross_entropy_loss
from .tensor import ShapeError, Tape, Tensor, backward


class Direction(Enum):
    """Sign convention of the perturbation step."""

    ASCENT = "fgsm"       # x + eps * sign(grad): maximize loss
    DESCENT = "invfgsm"   # x - eps * sign(grad): minimize loss

    @classmethod
    def from_name(cls, name: str) -> "Direction":
        for d in cls:
            if d.value == name.lower():
                return d
        raise ValueError(f"unknown attack direction {name!r}; use 'fgsm' or 'invfgsm'")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    direction: Direction = Direction.ASCENT
    clip_min: float = 0.0
    clip_max: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.clip_min >= self.clip_max:
            raise ValueError(
                f"clip_min {self.clip_min} must be below clip_max {self.clip_max}"
            )


@dataclass(frozen=True)
class AdversarialExample:
    image: np.ndarray
    mask: np.ndarray
    source_index: int
    epsilon_used: float
    direction: Direction


def input_gradient(model: unet.UNet, images, targets) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the input batch.

    `images` is [B,C,S,S] (array or tensor), `targets` [B,S,S] class indices.
    The model is read-only here; only the input gradient is returned.
    """
    data = images.data if isinstance(images, Tensor) else np.asarray(images)
    x = Tensor(data, requires_grad=True)
    with Tape():
        logits = unet.forward(model, x)
        loss = cross_entropy_loss(logits, targets)
    return backward(loss, [x])[x]


def perturbation(grad: np.ndarray, config: AttackConfig) -> np.ndarray:
    """Signed step `±eps * sign(grad)` before any clipping.

    Every component is exactly -eps, 0, or +eps; sign(0) is 0, so zero
    gradient (or zero epsilon) leaves the pixel untouched. Ascent and descent
    produce exact negations of each other.
    """
    delta = config.epsilon * np.sign(grad)
    return delta if config.direction is Direction.ASCENT else -delta


def perturb(x: np.ndarray, grad: np.ndarray, config: AttackConfig) -> np.ndarray:
    """Apply the gradient-sign step to `x` and clip into the pixel range."""
    x = np.asarray(x)
    grad = np.asarray(grad)
    if x.shape != grad.shape:
        raise ShapeError(f"perturb: image shape {x.shape} != gradient shape {grad.shape}")
    return np.clip(x + perturbation(grad, config), config.clip_min, config.clip_max)


def craft(model: unet.UNet, sample, config: AttackConfig, source_index: int = 0) -> AdversarialExample:
    """Craft one adversarial example; the label stays the source mask."""
    grad = input_gradient(model, sample.image[None], sample.mask[None])
    adv = perturb(sample.image, grad[0], config)
    return AdversarialExample(
        image=adv.astype(sample.image.dtype),
        mask=sample.mask.copy(),
        source_index=source_index,
        epsilon_used=config.epsilon,
        direction=config.direction,
    )


def craft_dataset(
    model: unet.UNet, dataset, config: AttackConfig, batch_size: int = 16
) -> list[AdversarialExample]:
    """One adversarial example per source sample, in source order.

    Gradients are computed over fixed-size batches, so repeated runs against
    the same model and dataset are bitwise identical.
    """
    samples = list(getattr(dataset, "samples", dataset))
    if not samples:
        raise ValueError("craft_dataset: dataset is empty")
    out: list[AdversarialExample] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        images = np.stack([s.image for s in chunk])
        masks = np.stack([s.mask for s in chunk])
        grads = input_gradient(model, images, masks)
        for j, s in enumerate(chunk):
            adv = perturb(s.image, grads[j], config)
            out.append(
                AdversarialExample(
                    image=adv.astype(s.image.dtype),
                    mask=s.mask.copy(),
                    source_index=start + j,
                    epsilon_used=config.epsilon,
                    direction=config.direction,
                )
            )
    return out
