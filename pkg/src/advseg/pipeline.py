"""Three-phase training workflow: train, attack, retrain on augmented data.

Phase 1 trains a baseline on the original training split. Phase 2 crafts one
adversarial example per training sample against that trained baseline (a
single static attack, not a per-epoch one). Phase 3 re-initializes a fresh
model from the same seed and trains it on the doubled set, so the
augmentation is the only variable between the two histories. Validation
samples never receive augmentation and never enter training.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import unet
from .attacks import AttackConfig, Direction, craft_dataset
from .data import Dataset, SegmentationSample, split
from .evaluation import mean_iou
from .ops import cross_entropy_loss
from .optim import SGDState, sgd_momentum_step
from .seeding import derive_seed
from .tensor import Tape, Tensor, backward


class DivergenceError(RuntimeError):
    """Training loss became non-finite; the run is aborted, not patched."""


class Strategy(Enum):
    NONE = "none"
    FGSM = "fgsm"
    INV_FGSM = "invfgsm"

    @property
    def direction(self) -> Direction:
        if self is Strategy.NONE:
            raise ValueError("strategy 'none' has no attack direction")
        return Direction.ASCENT if self is Strategy.FGSM else Direction.DESCENT

    @classmethod
    def from_name(cls, name: str) -> "Strategy":
        for s in cls:
            if s.value == name.lower():
                return s
        raise ValueError(f"unknown strategy {name!r}; use none, fgsm, or invfgsm")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.99
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    eval_every: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass(frozen=True)
class AugmentationPlan:
    strategy: Strategy = Strategy.NONE
    epsilon: float = 0.1

    def __post_init__(self):
        if self.strategy is not Strategy.NONE and not 0.0 < self.epsilon <= 1.0:
            raise ValueError(
                f"epsilon must lie in (0, 1] for strategy {self.strategy.value}, "
                f"got {self.epsilon}"
            )


@dataclass(frozen=True)
class EvalPoint:
    epoch: int
    train_loss: float
    val_iou: float


@dataclass
class TrainingHistory:
    records: list[EvalPoint]
    model: unet.UNet

    def final_iou(self) -> float:
        return self.records[-1].val_iou

    def metric_rows(self, experiment: str) -> list[tuple[str, int, float]]:
        return [(experiment, r.epoch, r.val_iou) for r in self.records]


def _as_samples(dataset) -> list[SegmentationSample]:
    return list(getattr(dataset, "samples", dataset))


def train(
    model: unet.UNet,
    dataset,
    config: TrainConfig,
    val_dataset=None,
) -> TrainingHistory:
    """SGD-momentum training with per-epoch seeded shuffling.

    Validation IoU is recorded after the first epoch (reported as epoch 0)
    and after every `eval_every`-th epoch; it is measured on `val_dataset`,
    falling back to the training set when none is given. Runs are fully
    determined by (model weights, dataset, config).
    """
    samples = _as_samples(dataset)
    if not samples:
        raise ValueError("train: dataset is empty")
    size = model.config.input_size
    if any(s.size != size for s in samples):
        raise ValueError(f"train: sample size differs from model input size {size}")
    val_samples = _as_samples(val_dataset) if val_dataset is not None else samples

    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    params = model.parameters
    param_list = list(params.values())
    names = list(params.keys())
    state = SGDState(config.learning_rate, config.momentum)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))

    records: list[EvalPoint] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(samples))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = Tensor(images[idx])
            yb = masks[idx]
            with Tape():
                logits = unet.forward(model, xb)
                loss = cross_entropy_loss(logits, yb)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"training loss became non-finite at epoch {epoch} "
                    f"(lr={config.learning_rate}, momentum={config.momentum})"
                )
            grads = backward(loss, param_list)
            sgd_momentum_step(params, {n: grads[params[n]] for n in names}, state)
            epoch_losses.append(loss_value)
        if epoch == 1 or epoch % config.eval_every == 0:
            label = 0 if epoch == 1 else epoch
            if not records or records[-1].epoch != label:
                records.append(
                    EvalPoint(
                        epoch=label,
                        train_loss=float(np.mean(epoch_losses)),
                        val_iou=mean_iou(model, val_samples).mean,
                    )
                )
    return TrainingHistory(records=records, model=model)


def run_augmented_experiment(
    dataset,
    plan: AugmentationPlan,
    config: TrainConfig,
    model_config: unet.UNetConfig | None = None,
    train_fraction: float = 0.8,
) -> tuple[TrainingHistory, TrainingHistory]:
    """Full train / attack / retrain-on-augmented workflow.

    Returns (baseline_history, augmented_history). With strategy NONE the
    baseline history is returned for both phases. The phase-3 model restarts
    from the phase-1 initialization seed, and the augmented training set is
    exactly twice the original one.
    """
    samples = _as_samples(dataset)
    if not samples:
        raise ValueError("run_augmented_experiment: dataset is empty")
    full = dataset if isinstance(dataset, Dataset) else Dataset(samples)
    if model_config is None:
        model_config = unet.UNetConfig.for_input_size(full.size)

    train_set, val_set = split(full, train_fraction, derive_seed(config.seed, "split"))
    init_seed = derive_seed(config.seed, "init")

    baseline_model = unet.build_unet(model_config, init_seed)
    baseline = train(baseline_model, train_set, config, val_set)
    if plan.strategy is Strategy.NONE:
        return baseline, baseline

    attack = AttackConfig(epsilon=plan.epsilon, direction=plan.strategy.direction)
    crafted = craft_dataset(baseline.model, train_set, attack)
    adversarial = [
        SegmentationSample(image=adv.image, mask=adv.mask, id=f"{src.id}+adv")
        for src, adv in zip(train_set.samples, crafted)
    ]
    augmented_set = Dataset(
        train_set.samples + adversarial, split="train", provenance=full.provenance
    )

    retrained_model = unet.build_unet(model_config, init_seed)
    augmented = train(retrained_model, augmented_set, config, val_set)
    return baseline, augmented


def adversarial_training(
    dataset,
    attack_direction: Direction,
    epsilon: float,
    config: TrainConfig,
    model_config: unet.UNetConfig | None = None,
) -> unet.UNet:
    """Model retrained on the attack-augmented set; what robustness tables
    evaluate as the "after" row."""
    if epsilon <= 0:
        raise ValueError(f"adversarial_training: epsilon must be > 0, got {epsilon}")
    strategy = Strategy.FGSM if attack_direction is Direction.ASCENT else Strategy.INV_FGSM
    plan = AugmentationPlan(strategy=strategy, epsilon=epsilon)
    _, augmented = run_augmented_experiment(dataset, plan, config, model_config)
    return augmented.model
