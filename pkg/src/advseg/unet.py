"""U-Net segmentation model: encoder/decoder with skip concatenations.

Every trainable parameter is a convolution kernel or bias; there is no dense
layer. Each encoder level applies two 3x3 same-padding conv+relu blocks and a
2x2 max pool; the bottleneck is two conv blocks; each decoder level upsamples
with a 2x2 stride-2 transposed conv, concatenates the matching encoder
feature map, and applies two conv+relu blocks. A final 1x1 conv maps to
per-class logits at full input resolution. The default configuration takes
128x128x3 input down to an 8x8x256 bottleneck.

Weight files are little-endian binary: an 8-byte magic/version tag, a
length-prefixed UTF-8 JSON config, then raw float32 parameter buffers in
fixed name order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor

WEIGHTS_MAGIC = b"ADVSEG01"


class WeightFileError(RuntimeError):
    """Base class for weight-file problems."""


class CorruptWeightsError(WeightFileError):
    """File is truncated, malformed, or not a weight file at all."""


class VersionMismatchError(WeightFileError):
    """Weight file was written by an incompatible format version."""


class ConfigMismatchError(WeightFileError):
    """Stored model configuration differs from the expected one."""


@dataclass(frozen=True)
class UNetConfig:
    input_channels: int = 3
    num_classes: int = 2
    input_size: int = 128
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    bottleneck_channels: int = 256

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))

    @property
    def levels(self) -> int:
        return len(self.encoder_channels)

    def validate(self) -> None:
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.encoder_channels or any(c < 1 for c in self.encoder_channels):
            raise ValueError("encoder_channels must be a nonempty list of positive ints")
        if self.bottleneck_channels < 1:
            raise ValueError("bottleneck_channels must be >= 1")
        size = self.input_size
        if size < 2 or size & (size - 1):
            raise ValueError(f"input_size must be a power of two, got {size}")
        if size % (1 << self.levels):
            raise ValueError(
                f"input_size {size} not divisible by 2^{self.levels} encoder levels"
            )

    @classmethod
    def small(cls, input_size: int = 32) -> "UNetConfig":
        """Desk-scale config: fewer levels/channels, 8x8 bottleneck."""
        levels = max(1, int(np.log2(input_size // 8)))
        channels = tuple(4 * (1 << i) for i in range(levels))
        return cls(
            input_size=input_size,
            encoder_channels=channels,
            bottleneck_channels=4 * (1 << levels),
        )

    @classmethod
    def for_input_size(cls, input_size: int) -> "UNetConfig":
        return cls() if input_size == 128 else cls.small(input_size)


def parameter_shapes(config: UNetConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in the fixed serialization order."""
    shapes: dict[str, tuple[int, ...]] = {}
    prev = config.input_channels
    for i, c in enumerate(config.encoder_channels):
        shapes[f"enc{i}.conv1.weight"] = (c, prev, 3, 3)
        shapes[f"enc{i}.conv1.bias"] = (c,)
        shapes[f"enc{i}.conv2.weight"] = (c, c, 3, 3)
        shapes[f"enc{i}.conv2.bias"] = (c,)
        prev = c
    bc = config.bottleneck_channels
    shapes["bottleneck.conv1.weight"] = (bc, prev, 3, 3)
    shapes["bottleneck.conv1.bias"] = (bc,)
    shapes["bottleneck.conv2.weight"] = (bc, bc, 3, 3)
    shapes["bottleneck.conv2.bias"] = (bc,)
    cur = bc
    for i in reversed(range(config.levels)):
        c = config.encoder_channels[i]
        shapes[f"dec{i}.up.weight"] = (cur, c, 2, 2)
        shapes[f"dec{i}.conv1.weight"] = (c, 2 * c, 3, 3)
        shapes[f"dec{i}.conv1.bias"] = (c,)
        shapes[f"dec{i}.conv2.weight"] = (c, c, 3, 3)
        shapes[f"dec{i}.conv2.bias"] = (c,)
        cur = c
    shapes["head.weight"] = (config.num_classes, config.encoder_channels[0], 1, 1)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def parameter_count(config: UNetConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


@dataclass
class UNet:
    config: UNetConfig
    parameters: dict[str, Tensor] = field(repr=False)

    def astype(self, dtype) -> "UNet":
        """Copy of the model with parameters cast to `dtype` (for 64-bit
        gradient checks)."""
        params = {
            name: Tensor(p.data.astype(dtype), requires_grad=True)
            for name, p in self.parameters.items()
        }
        return UNet(self.config, params)


def build_unet(config: UNetConfig, seed: int) -> UNet:
    """Deterministically initialized U-Net: He-scaled kernels, zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            # He init: std = sqrt(2 / fan_in). Transposed-conv kernels are
            # [Cin, Cout, k, k], so fan-in sits on axis 0 there.
            fan_axis = 0 if ".up." in name else 1
            fan_in = shape[fan_axis] * shape[2] * shape[3]
            std = np.sqrt(2.0 / fan_in)
            data = (rng.standard_normal(shape, dtype=np.float32) * np.float32(std))
        params[name] = Tensor(data, requires_grad=True)
    return UNet(config, params)


def forward(model: UNet, batch: Tensor, probe: dict | None = None) -> Tensor:
    """Run the network on a [B, C, S, S] batch; returns [B, num_classes, S, S]
    logits (softmax is left to the loss).

    Pass a dict as `probe` to capture intermediate feature-map shapes.
    """
    cfg = model.config
    if batch.data.ndim != 4:
        raise ShapeError(f"forward: expected [B,C,S,S] batch, got shape {batch.shape}")
    B, C, H, W = batch.data.shape
    if C != cfg.input_channels or H != cfg.input_size or W != cfg.input_size:
        raise ShapeError(
            f"forward: batch shape {batch.shape} does not match configured "
            f"input {cfg.input_channels}x{cfg.input_size}x{cfg.input_size}"
        )
    p = model.parameters

    # Fixed affine input normalization: [0,1] pixels to [-1,1]. Zero-centered
    # inputs keep the first conv blocks from collapsing into dead ReLUs under
    # high-momentum SGD.
    batch = (batch - 0.5) * 2.0

    def conv_block(h: Tensor, prefix: str) -> Tensor:
        h = ops.relu(ops.conv2d(h, p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"], padding=1))
        h = ops.relu(ops.conv2d(h, p[f"{prefix}.conv2.weight"], p[f"{prefix}.conv2.bias"], padding=1))
        return h

    h = batch
    skips: list[Tensor] = []
    for i in range(cfg.levels):
        h = conv_block(h, f"enc{i}")
        skips.append(h)
        if probe is not None:
            probe[f"enc{i}"] = h.shape
        h = ops.maxpool2d(h, 2)

    h = conv_block(h, "bottleneck")
    if probe is not None:
        probe["bottleneck"] = h.shape

    for i in reversed(range(cfg.levels)):
        h = ops.conv_transpose2d(h, p[f"dec{i}.up.weight"], stride=2)
        h = ops.concat_channels(h, skips[i])
        if probe is not None:
            probe[f"concat{i}"] = h.shape
        h = conv_block(h, f"dec{i}")
        if probe is not None:
            probe[f"dec{i}"] = h.shape

    logits = ops.conv2d(h, p["head.weight"], p["head.bias"])
    if probe is not None:
        probe["logits"] = logits.shape
    return logits


def predict_mask(model: UNet, image) -> np.ndarray:
    """Argmax class per pixel for one [C,S,S] image; {0,1} uint8 mask.

    Ties resolve to the lowest class index, i.e. background.
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    logits = forward(model, Tensor(data[None]))
    return logits.data[0].argmax(axis=0).astype(np.uint8)


def save_weights(model: UNet, path) -> None:
    cfg = model.config
    config_blob = json.dumps(
        {
            "input_channels": cfg.input_channels,
            "num_classes": cfg.num_classes,
            "input_size": cfg.input_size,
            "encoder_channels": list(cfg.encoder_channels),
            "bottleneck_channels": cfg.bottleneck_channels,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<I", len(config_blob)))
        f.write(config_blob)
        for name in parameter_shapes(cfg):
            f.write(model.parameters[name].data.astype("<f4", copy=False).tobytes())


def load_weights(path, expect: UNetConfig | None = None) -> UNet:
    """Load a model saved by `save_weights`; bitwise round trip.

    `expect`, when given, is checked against the stored configuration.
    """
    blob = Path(path).read_bytes()
    if len(blob) < len(WEIGHTS_MAGIC) + 4:
        raise CorruptWeightsError(f"{path}: file too short to be a weight file")
    magic = blob[: len(WEIGHTS_MAGIC)]
    if magic != WEIGHTS_MAGIC:
        if magic[:6] == WEIGHTS_MAGIC[:6]:
            raise VersionMismatchError(
                f"{path}: format version {magic[6:].decode(errors='replace')!r} "
                f"not supported (expected {WEIGHTS_MAGIC[6:].decode()!r})"
            )
        raise CorruptWeightsError(f"{path}: bad magic {magic!r}")
    offset = len(WEIGHTS_MAGIC)
    (config_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if offset + config_len > len(blob):
        raise CorruptWeightsError(f"{path}: truncated configuration block")
    try:
        raw = json.loads(blob[offset : offset + config_len].decode("utf-8"))
        config = UNetConfig(
            input_channels=int(raw["input_channels"]),
            num_classes=int(raw["num_classes"]),
            input_size=int(raw["input_size"]),
            encoder_channels=tuple(int(c) for c in raw["encoder_channels"]),
            bottleneck_channels=int(raw["bottleneck_channels"]),
        )
        config.validate()
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as e:
        raise CorruptWeightsError(f"{path}: malformed configuration block: {e}") from e
    offset += config_len

    if expect is not None and config != expect:
        raise ConfigMismatchError(
            f"{path}: stored config {config} does not match expected {expect}"
        )

    shapes = parameter_shapes(config)
    expected_bytes = 4 * sum(int(np.prod(s)) for s in shapes.values())
    if len(blob) - offset != expected_bytes:
        raise CorruptWeightsError(
            f"{path}: parameter payload is {len(blob) - offset} bytes, "
            f"expected {expected_bytes}"
        )
    params: dict[str, Tensor] = {}
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        params[name] = Tensor(arr.reshape(shape).copy(), requires_grad=True)
        offset += 4 * count
    return UNet(config, params)
