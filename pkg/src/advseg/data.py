"""Dataset handling: image/mask pairs, synthetic generation, resize, CSV.

A sample is an RGB float image in [0,1] (shape [3,S,S]) with a binary uint8
mask [S,S]. Datasets load from a directory with `images/*.png` and
`masks/*.png` sharing file stems, or come from the seeded synthetic
generator, which rasterizes bright ellipses/blobs on a dark noisy background
so the exact foreground is known.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class DatasetError(RuntimeError):
    """Problem ingesting or pairing dataset files."""


@dataclass
class SegmentationSample:
    image: np.ndarray  # [3, S, S] float32 in [0, 1]
    mask: np.ndarray   # [S, S] uint8 in {0, 1}
    id: str

    def __post_init__(self):
        img, mask = self.image, self.mask
        if img.ndim != 3 or img.shape[0] != 3 or img.shape[1] != img.shape[2]:
            raise ValueError(f"sample {self.id}: image must be [3,S,S], got {img.shape}")
        if mask.shape != img.shape[1:]:
            raise ValueError(
                f"sample {self.id}: mask shape {mask.shape} != image spatial {img.shape[1:]}"
            )
        if not np.isfinite(img).all() or img.min() < 0.0 or img.max() > 1.0:
            raise ValueError(f"sample {self.id}: image values must be finite and in [0,1]")
        if not np.isin(mask, (0, 1)).all():
            raise ValueError(f"sample {self.id}: mask must be binary")

    @property
    def size(self) -> int:
        return self.image.shape[1]


@dataclass
class Dataset:
    samples: list[SegmentationSample]
    split: str = "full"           # full / train / validation
    provenance: str = "real"      # real / synthetic

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("dataset sample ids must be unique")
        sizes = {s.size for s in self.samples}
        if len(sizes) > 1:
            raise ValueError(f"dataset mixes spatial sizes: {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def size(self) -> int:
        return self.samples[0].size if self.samples else 0


@dataclass(frozen=True)
class SyntheticShapeConfig:
    count: int = 64
    size: int = 32
    min_shapes: int = 1
    max_shapes: int = 3
    blob_fraction: float = 0.5   # remaining shapes are plain ellipses
    noise_std: float = 0.22
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        size = self.size
        if size < 8 or size & (size - 1):
            raise ValueError(f"size must be a power of two >= 8, got {size}")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("need 1 <= min_shapes <= max_shapes")


def generate_synthetic(config: SyntheticShapeConfig) -> Dataset:
    """Seeded synthetic segmentation set: bright shapes on dark noise.

    Masks are the exact rasterized shape foreground (always nonempty); images
    get per-channel gain and additive Gaussian texture noise, clipped to
    [0,1]. Identical configs give bitwise-identical datasets.
    """
    rng = np.random.default_rng(config.seed)
    size = config.size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    samples: list[SegmentationSample] = []
    for i in range(config.count):
        n_shapes = int(rng.integers(config.min_shapes, config.max_shapes + 1))
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(n_shapes):
            cx = rng.uniform(0.25 * size, 0.75 * size)
            cy = rng.uniform(0.25 * size, 0.75 * size)
            # Semi-axes >= 2 px so the rasterization always covers the pixel
            # nearest the center. The range keeps mean foreground coverage
            # near 1/4, far from the all-background degenerate optimum.
            a = max(rng.uniform(0.16, 0.30) * size, 2.0)
            b = max(rng.uniform(0.16, 0.30) * size, 2.0)
            theta = rng.uniform(0.0, np.pi)
            is_blob = rng.random() < config.blob_fraction
            dx, dy = xx - cx, yy - cy
            u = dx * np.cos(theta) + dy * np.sin(theta)
            v = -dx * np.sin(theta) + dy * np.cos(theta)
            q = (u / a) ** 2 + (v / b) ** 2
            if is_blob:
                lobes = int(rng.integers(3, 6))
                amp = rng.uniform(0.15, 0.35)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                wobble = 1.0 + amp * np.sin(lobes * np.arctan2(v, u) + phase)
                mask |= q <= wobble**2
            else:
                mask |= q <= 1.0
        background = rng.uniform(0.10, 0.25)
        contrast = rng.uniform(0.18, 0.35)
        base = background + contrast * mask.astype(np.float64)
        gains = rng.uniform(0.9, 1.1, size=3)
        img = base[None] * gains[:, None, None]
        img += rng.normal(0.0, config.noise_std, size=(3, size, size))
        samples.append(
            SegmentationSample(
                image=np.clip(img, 0.0, 1.0).astype(np.float32),
                mask=mask.astype(np.uint8),
                id=f"{i:05d}",
            )
        )
    return Dataset(samples, split="full", provenance="synthetic")


def save_dataset(dataset, out_dir) -> None:
    """Write `images/{id}.png` (8-bit RGB) and `masks/{id}.png` (grayscale)."""
    out = Path(out_dir)
    img_dir = out / "images"
    mask_dir = out / "masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    for s in dataset:
        rgb = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(rgb.transpose(1, 2, 0), mode="RGB").save(img_dir / f"{s.id}.png")
        Image.fromarray(s.mask * np.uint8(255), mode="L").save(mask_dir / f"{s.id}.png")


def export_adversarial_png(example, source_id: str, out_dir) -> Path:
    """Write one crafted image as `adv/{id}_{direction}_{epsilon}.png`."""
    adv_dir = Path(out_dir) / "adv"
    adv_dir.mkdir(parents=True, exist_ok=True)
    rgb = np.clip(np.rint(example.image * 255.0), 0, 255).astype(np.uint8)
    name = f"{source_id}_{example.direction.value}_{example.epsilon_used:g}.png"
    path = adv_dir / name
    Image.fromarray(rgb.transpose(1, 2, 0), mode="RGB").save(path)
    return path


def load_dataset(data_dir) -> Dataset:
    """Load image/mask PNG pairs matched by file stem, ordered by stem.

    Images scale to [0,1]; mask pixels threshold at 128 into {0,1}. A file
    missing its partner, an empty directory, or mismatched sizes is an error.
    """
    root = Path(data_dir)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"{root}: expected images/ and masks/ subdirectories")
    image_stems = {p.stem: p for p in img_dir.glob("*.png")}
    mask_stems = {p.stem: p for p in mask_dir.glob("*.png")}
    if not image_stems and not mask_stems:
        raise DatasetError(f"{root}: no PNG files found")
    for stem in sorted(set(image_stems) ^ set(mask_stems)):
        side = "mask" if stem in image_stems else "image"
        raise DatasetError(f"{root}: sample '{stem}' is missing its {side} partner")

    samples: list[SegmentationSample] = []
    for stem in sorted(image_stems):
        try:
            with Image.open(image_stems[stem]) as im:
                rgb = np.asarray(im.convert("RGB"))
            with Image.open(mask_stems[stem]) as im:
                gray = np.asarray(im.convert("L"))
        except OSError as e:
            raise DatasetError(f"{root}: unreadable PNG for '{stem}': {e}") from e
        if rgb.shape[0] != rgb.shape[1]:
            raise DatasetError(
                f"{root}: image '{stem}' is not square: {rgb.shape[1]}x{rgb.shape[0]}"
            )
        if gray.shape != rgb.shape[:2]:
            raise DatasetError(
                f"{root}: mask '{stem}' size {gray.shape} != image size {rgb.shape[:2]}"
            )
        samples.append(
            SegmentationSample(
                image=(rgb.astype(np.float32) / 255.0).transpose(2, 0, 1),
                mask=(gray >= 128).astype(np.uint8),
                id=stem,
            )
        )
    try:
        return Dataset(samples, split="full", provenance="real")
    except ValueError as e:
        raise DatasetError(f"{root}: {e}") from e


def resize_bilinear(image: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize of a square [3,S,S] or [S,S] image, half-pixel centers.

    For binary masks use `resize_mask_nearest` instead; interpolation would
    produce fractional values.
    """
    image = np.asarray(image)
    spatial = image.shape[-2:]
    if spatial[0] != spatial[1]:
        raise ValueError(f"resize_bilinear: input must be square, got {spatial}")
    src = spatial[0]
    if src == target:
        return image.copy()

    centers = (np.arange(target, dtype=np.float64) + 0.5) * (src / target) - 0.5
    centers = np.clip(centers, 0.0, src - 1.0)
    lo = np.floor(centers).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    frac = centers - lo

    work = image.astype(np.float64)
    # Separable: rows (axis -2) then columns (axis -1).
    rows = work[..., lo, :] * (1.0 - frac)[:, None] + work[..., hi, :] * frac[:, None]
    out = rows[..., :, lo] * (1.0 - frac) + rows[..., :, hi] * frac
    return out.astype(image.dtype if image.dtype == np.float64 else np.float32)


def resize_mask_nearest(mask: np.ndarray, target: int) -> np.ndarray:
    """Nearest-neighbor resize for binary masks; stays in {0,1}."""
    mask = np.asarray(mask)
    if mask.shape[0] != mask.shape[1]:
        raise ValueError(f"resize_mask_nearest: input must be square, got {mask.shape}")
    src = mask.shape[0]
    idx = np.minimum(((np.arange(target) + 0.5) * (src / target)).astype(np.intp), src - 1)
    return mask[np.ix_(idx, idx)]


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle-then-split into disjoint, exhaustive train/validation."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset.samples))
    cut = int(round(fraction * len(order)))
    train = [dataset.samples[i] for i in order[:cut]]
    val = [dataset.samples[i] for i in order[cut:]]
    return (
        Dataset(train, split="train", provenance=dataset.provenance),
        Dataset(val, split="validation", provenance=dataset.provenance),
    )


def write_metrics_csv(records, path) -> None:
    """Rows of (experiment, epoch, mean_iou); IoU printed to 4 decimals."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["experiment", "epoch", "mean_iou"])
        for experiment, epoch, mean_iou in records:
            w.writerow([experiment, int(epoch), f"{mean_iou:.4f}"])


def read_metrics_csv(path) -> list[tuple[str, int, float]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["experiment", "epoch", "mean_iou"]:
            raise DatasetError(f"{path}: unexpected metrics header {header}")
        return [(row[0], int(row[1]), float(row[2])) for row in reader]


def write_sweep_csv(rows, path) -> None:
    """Robustness rows; direction as its wire name, floats to 4 decimals."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["direction", "epsilon", "adv_trained", "mean_iou"])
        for row in rows:
            w.writerow(
                [
                    row.attack_direction.value,
                    f"{row.epsilon:.4f}",
                    str(row.adversarially_trained).lower(),
                    f"{row.mean_iou:.4f}",
                ]
            )


def read_sweep_csv(path) -> list[tuple[str, float, bool, float]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["direction", "epsilon", "adv_trained", "mean_iou"]:
            raise DatasetError(f"{path}: unexpected sweep header {header}")
        return [
            (row[0], float(row[1]), row[2] == "true", float(row[3])) for row in reader
        ]
