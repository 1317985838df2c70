"""Calibration: 3-seed augmentation trend + robustness checks (scratch script)."""
import time

import numpy as np

from advseg import (
    AugmentationPlan,
    Direction,
    Strategy,
    SyntheticShapeConfig,
    TrainConfig,
    generate_synthetic,
    mean_iou,
    robustness_sweep,
    run_augmented_experiment,
    split,
)
from advseg.seeding import derive_seed

t0 = time.time()
for seed in (0, 1, 2):
    ds = generate_synthetic(SyntheticShapeConfig(count=320, size=32, seed=seed))
    cfg = TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=16, epochs=30, seed=seed, eval_every=10)

    base_f, aug_f = run_augmented_experiment(ds, AugmentationPlan(Strategy.FGSM, 0.1), cfg)
    base_i, aug_i = run_augmented_experiment(ds, AugmentationPlan(Strategy.INV_FGSM, 0.1), cfg)
    b = base_f.final_iou()
    print(f"seed {seed}: baseline={b:.4f} fgsm={aug_f.final_iou():.4f} invfgsm={aug_i.final_iou():.4f} "
          f"(base arms equal: {base_f.final_iou() == base_i.final_iou()})", flush=True)
    print(f"  baseline history: {[(r.epoch, round(r.val_iou, 4)) for r in base_f.records]}", flush=True)

    _, val = split(ds, 0.8, derive_seed(seed, "split"))
    eps_grid = [0.0, 0.05, 0.1, 0.1176, 0.118, 0.15, 0.2]
    rows_b = robustness_sweep(base_f.model, val, [Direction.ASCENT], eps_grid)
    rows_h = robustness_sweep(aug_f.model, val, [Direction.ASCENT], eps_grid)
    print(f"  baseline under FGSM: {[round(r.mean_iou, 4) for r in rows_b]}", flush=True)
    print(f"  hardened under FGSM: {[round(r.mean_iou, 4) for r in rows_h]}", flush=True)
    drop = rows_b[0].mean_iou - rows_b[-1].mean_iou
    wins = [h.mean_iou > b_.mean_iou for b_, h in zip(rows_b[1:], rows_h[1:])]
    print(f"  degradation at 0.2: {drop:.4f}  hardened wins (eps>=0.05): {wins}", flush=True)

print(f"total {time.time() - t0:.0f}s", flush=True)
