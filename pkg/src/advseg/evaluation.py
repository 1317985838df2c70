"""Segmentation quality and robustness measurement.

IoU is intersection over union of foreground pixels, with the both-empty
case scored 1.0 (perfect agreement on absence). Robustness sweeps craft
white-box adversarial copies of the evaluation set against the model under
test at each epsilon and report the mean IoU that survives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import unet
from .attacks import AttackConfig, Direction, craft_dataset
from .tensor import ShapeError, Tensor

# Union of the reported robustness grid points and an even cover of [0, 0.2].
DEFAULT_SWEEP_EPSILONS = (0.0, 0.0012, 0.05, 0.1, 0.1176, 0.118, 0.15, 0.2)


@dataclass(frozen=True)
class IoUResult:
    per_sample: tuple[float, ...]
    mean: float


@dataclass(frozen=True)
class RobustnessRow:
    epsilon: float
    attack_direction: Direction
    adversarially_trained: bool
    mean_iou: float


def iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """|pred AND truth| / |pred OR truth| over foreground; both empty -> 1."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"iou: mask shapes differ: {pred.shape} vs {truth.shape}")
    for name, m in (("pred", pred), ("truth", truth)):
        if not np.isin(m, (0, 1)).all():
            raise ValueError(f"iou: {name} mask is not binary")
    p = pred.astype(bool)
    t = truth.astype(bool)
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def _batched_logits(model: unet.UNet, images: np.ndarray, batch_size: int = 16):
    for start in range(0, len(images), batch_size):
        batch = images[start : start + batch_size]
        yield unet.forward(model, Tensor(batch)).data


def mean_iou(model: unet.UNet, dataset) -> IoUResult:
    """Predict every sample and average per-sample IoU against its mask."""
    samples = list(getattr(dataset, "samples", dataset))
    if not samples:
        raise ValueError("mean_iou: dataset is empty")
    images = np.stack([s.image for s in samples])
    scores: list[float] = []
    i = 0
    for logits in _batched_logits(model, images):
        for b in range(logits.shape[0]):
            pred = logits[b].argmax(axis=0).astype(np.uint8)
            scores.append(iou(pred, samples[i].mask))
            i += 1
    return IoUResult(per_sample=tuple(scores), mean=float(np.mean(scores)))


def sample_losses(model: unet.UNet, dataset) -> np.ndarray:
    """Per-sample mean-pixel cross-entropy, computed in evaluation mode."""
    samples = list(getattr(dataset, "samples", dataset))
    if not samples:
        raise ValueError("sample_losses: dataset is empty")
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    losses: list[float] = []
    i = 0
    for logits in _batched_logits(model, images):
        n = logits.shape[0]
        t = masks[i : i + n]
        m = logits.max(axis=1)
        lse = np.log(np.exp(logits - m[:, None]).sum(axis=1)) + m
        picked = np.take_along_axis(logits, t[:, None], axis=1)[:, 0]
        losses.extend((lse - picked).mean(axis=(1, 2)).tolist())
        i += n
    return np.asarray(losses, dtype=np.float64)


def robustness_sweep(
    model: unet.UNet,
    dataset,
    directions,
    epsilons,
    adversarially_trained: bool = False,
) -> list[RobustnessRow]:
    """Mean IoU under white-box attack for every (direction, epsilon) cell.

    Attacks are crafted against the model being evaluated. The epsilon list
    must be ascending; the zero row reproduces the clean evaluation exactly.
    """
    epsilons = list(epsilons)
    if any(e < 0 for e in epsilons):
        raise ValueError("robustness_sweep: epsilons must be >= 0")
    if epsilons != sorted(epsilons):
        raise ValueError("robustness_sweep: epsilons must be sorted ascending")
    directions = list(directions)
    rows: list[RobustnessRow] = []
    for direction in directions:
        for eps in epsilons:
            adv = craft_dataset(model, dataset, AttackConfig(eps, direction))
            score = np.mean(
                [iou(unet.predict_mask(model, a.image), a.mask) for a in adv]
            )
            rows.append(
                RobustnessRow(
                    epsilon=eps,
                    attack_direction=direction,
                    adversarially_trained=adversarially_trained,
                    mean_iou=float(score),
                )
            )
    return rows


def compare_adversarial_training(
    baseline_model: unet.UNet,
    hardened_model: unet.UNet,
    dataset,
    epsilons,
    directions=(Direction.ASCENT, Direction.DESCENT),
) -> list[RobustnessRow]:
    """Paired sweep rows ordered by direction, then epsilon, then before/after."""
    if baseline_model.config != hardened_model.config:
        raise unet.ConfigMismatchError(
            "compare_adversarial_training: models have different configurations"
        )
    before = robustness_sweep(
        baseline_model, dataset, directions, epsilons, adversarially_trained=False
    )
    after = robustness_sweep(
        hardened_model, dataset, directions, epsilons, adversarially_trained=True
    )
    paired: list[RobustnessRow] = []
    for b, a in zip(before, after):
        paired.extend((b, a))
    return paired


def write_sweep_chart_svg(rows, path) -> None:
    """Line chart of mean IoU against epsilon, one line per sweep arm."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "advseg"
    import matplotlib.pyplot as plt

    groups: dict[tuple[str, bool], list[RobustnessRow]] = {}
    for row in rows:
        groups.setdefault(
            (row.attack_direction.value, row.adversarially_trained), []
        ).append(row)

    fig, ax = plt.subplots(figsize=(6, 4))
    for (direction, hardened), group in sorted(groups.items()):
        group = sorted(group, key=lambda r: r.epsilon)
        label = f"{direction}{' (adv-trained)' if hardened else ''}"
        style = "--" if hardened else "-"
        ax.plot(
            [r.epsilon for r in group],
            [r.mean_iou for r in group],
            style,
            marker="o",
            label=label,
        )
    ax.set_xlabel("epsilon")
    ax.set_ylabel("mean IoU")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
