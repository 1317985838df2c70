"""Adversarial data augmentation for U-Net segmentation.

Train a small U-Net, craft gradient-sign adversarial examples (ascent and
descent variants), retrain on the augmented set, and measure segmentation
IoU and robustness under epsilon sweeps.
"""

import os as _os

# Honor the thread cap before numpy (and its BLAS) loads. 0 or unset means
# automatic.
_threads = _os.environ.get("ADVSEG_THREADS", "").strip()
if _threads and _threads != "0":
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .attacks import (  # noqa: E402
    AdversarialExample,
    AttackConfig,
    Direction,
    craft,
    craft_dataset,
    input_gradient,
    perturb,
    perturbation,
)
from .data import (  # noqa: E402
    Dataset,
    DatasetError,
    SegmentationSample,
    SyntheticShapeConfig,
    generate_synthetic,
    load_dataset,
    resize_bilinear,
    resize_mask_nearest,
    save_dataset,
    split,
    write_metrics_csv,
    write_sweep_csv,
)
from .evaluation import (  # noqa: E402
    DEFAULT_SWEEP_EPSILONS,
    IoUResult,
    RobustnessRow,
    compare_adversarial_training,
    iou,
    mean_iou,
    robustness_sweep,
    sample_losses,
)
from .ops import (  # noqa: E402
    concat_channels,
    conv2d,
    conv_transpose2d,
    cross_entropy_loss,
    maxpool2d,
    relu,
    sigmoid,
    softmax_channels,
)
from .optim import SGDState, sgd_momentum_step  # noqa: E402
from .pipeline import (  # noqa: E402
    AugmentationPlan,
    DivergenceError,
    EvalPoint,
    Strategy,
    TrainConfig,
    TrainingHistory,
    adversarial_training,
    run_augmented_experiment,
    train,
)
from .seeding import derive_seed  # noqa: E402
from .tensor import ShapeError, Tape, TapeError, Tensor, backward  # noqa: E402
from .unet import (  # noqa: E402
    ConfigMismatchError,
    CorruptWeightsError,
    UNet,
    UNetConfig,
    VersionMismatchError,
    WeightFileError,
    build_unet,
    forward,
    load_weights,
    parameter_count,
    parameter_shapes,
    predict_mask,
    save_weights,
)

__version__ = "0.1.0"
