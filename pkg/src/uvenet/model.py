"""UVENet: shared ConvNeXt encoder, per-scale FAAMs, light decoder and GRM."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import checkpoint
from . import engine as E
from .engine import Tensor

AGGREGATIONS = ("depthwise_only", "pointwise_only", "dsc", "dsc_ca")

# (dx, dy) per channel slice, row-major over {-1,0,1}^2 without (0, 0)
SHIFT_PATTERNS: tuple[tuple[int, int], ...] = (
    (-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1),
)

CA_REDUCTION = 16
SHUFFLE = 4
PAD_MULTIPLE = 32


@dataclass(frozen=True)
class ModelConfig:
    T: int = 5
    dims: tuple[int, ...] = (96, 192, 384, 768)
    depths: tuple[int, ...] = (3, 3, 9, 3)
    shift_len: int = 3
    faam_scales: tuple[int, ...] = (0, 1, 2, 3)
    aggregation: str = "dsc_ca"
    decoder_dim: int = 96
    grm_dim: int = 64
    stem_stride: int = 4

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "faam_scales", tuple(sorted({int(s) for s in self.faam_scales})))
        self.validate()

    def validate(self) -> None:
        if self.T < 1 or self.T % 2 == 0:
            raise ValueError(f"T must be odd and >= 1, got {self.T}")
        if len(self.dims) != 4 or len(self.depths) != 4:
            raise ValueError("dims and depths need exactly four entries")
        for s in range(3):
            if self.dims[s + 1] != 2 * self.dims[s]:
                raise ValueError(f"dims must double per scale, got {self.dims}")
        for d in self.dims:
            if d % len(SHIFT_PATTERNS):
                raise ValueError(f"dims must be divisible by 8, got {d}")
            if self.aggregation == "dsc_ca" and d % CA_REDUCTION:
                raise ValueError(f"dsc_ca needs dims divisible by {CA_REDUCTION}, got {d}")
        if any(d < 0 for d in self.depths):
            raise ValueError("depths must be non-negative")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if not set(self.faam_scales) <= {0, 1, 2, 3}:
            raise ValueError(f"faam_scales must be a subset of {{0,1,2,3}}, got {self.faam_scales}")
        if self.shift_len < 0:
            raise ValueError("shift_len must be >= 0")
        if self.stem_stride != 4:
            raise ValueError("only stem_stride=4 is supported")
        if self.decoder_dim < 1 or self.grm_dim < 1:
            raise ValueError("decoder_dim and grm_dim must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("dims", "depths", "faam_scales"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**dict(d))


@dataclass
class FrameWindow:
    """T temporally ordered frames (T, 3, H, W) in [0, 1] around centre index k."""

    frames: np.ndarray
    k: int = field(init=False)

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ValueError(f"frames must be (T, 3, H, W), got {self.frames.shape}")
        if self.frames.shape[0] % 2 == 0:
            raise ValueError("window length must be odd")
        self.k = self.frames.shape[0] // 2


# ---------------------------------------------------------------- parameters


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered manifest of every learnable tensor; a pure function of the config."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cout, cin, k):
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    def norm(name, c):
        shapes[f"{name}.weight"] = (c,)
        shapes[f"{name}.bias"] = (c,)

    dims, T = config.dims, config.T
    conv("stem.conv", dims[0], 3, 4)
    norm("stem.norm", dims[0])
    for s in range(4):
        c = dims[s]
        if s > 0:
            norm(f"stages.{s}.down.norm", dims[s - 1])
            conv(f"stages.{s}.down.conv", c, dims[s - 1], 2)
        for j in range(config.depths[s]):
            p = f"stages.{s}.blocks.{j}"
            conv(f"{p}.dwconv", c, 1, 7)
            norm(f"{p}.norm", c)
            conv(f"{p}.pwconv1", 4 * c, c, 1)
            conv(f"{p}.pwconv2", c, 4 * c, 1)
    for s in range(4):
        c = dims[s]
        p = f"faam.{s}"
        if s not in config.faam_scales:
            conv(f"{p}.pw", c, T * c, 1)
            continue
        if config.aggregation in ("depthwise_only", "dsc", "dsc_ca"):
            conv(f"{p}.dw", T * c, 1, 3)
        if config.aggregation in ("pointwise_only", "dsc", "dsc_ca"):
            conv(f"{p}.pw", c, T * c, 1)
        if config.aggregation == "dsc_ca":
            conv(f"{p}.ca1", c // CA_REDUCTION, c, 1)
            conv(f"{p}.ca2", c, c // CA_REDUCTION, 1)
    dd = config.decoder_dim
    for s in range(4):
        conv(f"decoder.lateral.{s}", dd, dims[s], 1)
    conv("decoder.fuse1", dd, 4 * dd, 3)
    conv("decoder.fuse2", dd, dd, 3)
    conv("decoder.expand", 3 * SHUFFLE * SHUFFLE, dd, 3)
    g = config.grm_dim
    conv("grm.conv1", g, 3 * T + 3, 3)
    conv("grm.conv2", g, g, 3)
    conv("grm.conv3", g, g, 3)
    conv("grm.conv4", 3, g, 3)
    return shapes


def manifest_text(config: ModelConfig) -> str:
    return "".join(f"{name} {'x'.join(map(str, shape))}\n" for name, shape in param_shapes(config).items())


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return z * std


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Deterministic initialisation.

    Conv weights: truncated normal (+-2 std) with std = 1/sqrt(fan_in).
    Biases and norm shifts start at zero, norm scales at one.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".weight") and len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            arr = _trunc_normal(rng, shape, 1.0 / np.sqrt(fan_in))
        elif name.endswith(".weight"):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(np.float32), requires_grad=True, name=name, dtype=np.float32)
    return params


def cast_params(params: Mapping[str, Tensor], dtype) -> dict[str, Tensor]:
    return {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k, dtype=dtype) for k, v in params.items()}


def params_to_arrays(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in params.items()}


# ---------------------------------------------------------------- building blocks


def _conv(x, params, name, **kw):
    return E.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], **kw)


def _norm(x, params, name):
    return E.instance_norm(x, params[f"{name}.weight"], params[f"{name}.bias"])


def convnext_block(x: Tensor, params, prefix: str) -> Tensor:
    c = x.shape[1]
    y = _conv(x, params, f"{prefix}.dwconv", padding=3, groups=c)
    y = _norm(y, params, f"{prefix}.norm")
    y = _conv(y, params, f"{prefix}.pwconv1")
    y = E.gelu(y)
    y = _conv(y, params, f"{prefix}.pwconv2")
    return E.add(x, y)


def encode_frame(frames: Tensor, params, config: ModelConfig) -> list[Tensor]:
    """Shared encoder over a batch of frames (M, 3, H, W); returns maps at strides 4, 8, 16, 32."""
    _, _, h, w = frames.shape
    if h % PAD_MULTIPLE or w % PAD_MULTIPLE:
        raise ValueError(f"frame size {h}x{w} must be a multiple of {PAD_MULTIPLE}; pad first")
    x = _conv(frames, params, "stem.conv", stride=4)
    x = _norm(x, params, "stem.norm")
    feats = []
    for s in range(4):
        if s > 0:
            x = _norm(x, params, f"stages.{s}.down.norm")
            x = _conv(x, params, f"stages.{s}.down.conv", stride=2)
        for j in range(config.depths[s]):
            x = convnext_block(x, params, f"stages.{s}.blocks.{j}")
        feats.append(x)
    return feats


def grouped_shift(feature: Tensor, l: int, patterns: Sequence[tuple[int, int]] = SHIFT_PATTERNS) -> Tensor:
    """Shift each of the 8 equal channel slices by l * (dx, dy) from the pattern table."""
    if l == 0:
        return feature
    return E.shift_channel_groups(feature, [(l * dx, l * dy) for dx, dy in patterns])


def channel_attention(x: Tensor, params, prefix: str) -> Tensor:
    a = E.global_avg_pool(x)
    a = E.gelu(_conv(a, params, f"{prefix}.ca1"))
    a = E.sigmoid(_conv(a, params, f"{prefix}.ca2"))
    return E.mul(x, a)


def _frame_mean(x: Tensor, T: int) -> Tensor:
    if T == 1:
        return x
    parts = E.split_channels(x, T)
    acc = parts[0]
    for p in parts[1:]:
        acc = E.add(acc, p)
    return E.scale(acc, 1.0 / T)


def faam(features: Tensor, params, config: ModelConfig, s: int) -> Tensor:
    """Align and aggregate (N*T, C, h, w) frame-major features into (N, C, h, w)."""
    if s not in config.faam_scales:
        return faam_bypass(features, params, config, s)
    T = config.T
    c = features.shape[1]
    p = f"faam.{s}"
    x = E.fold_frames(grouped_shift(features, config.shift_len), T)
    agg = config.aggregation
    if agg in ("depthwise_only", "dsc", "dsc_ca"):
        x = _conv(x, params, f"{p}.dw", padding=1, groups=T * c)
    if agg == "depthwise_only":
        return _frame_mean(x, T)
    x = _conv(x, params, f"{p}.pw")
    if agg == "dsc_ca":
        x = channel_attention(x, params, p)
    return x


def faam_bypass(features: Tensor, params, config: ModelConfig, s: int) -> Tensor:
    """No shift, no attention: concatenate frames and project back to C channels."""
    x = E.fold_frames(features, config.T)
    return _conv(x, params, f"faam.{s}.pw")


def decode(hs: Sequence[Tensor], params, config: ModelConfig) -> Tensor:
    ups = []
    for s, h in enumerate(hs):
        y = _conv(h, params, f"decoder.lateral.{s}")
        ups.append(E.bilinear_upsample(y, 2**s))
    x = E.concat_channels(ups)
    x = E.gelu(_conv(x, params, "decoder.fuse1", padding=1))
    x = E.gelu(_conv(x, params, "decoder.fuse2", padding=1))
    x = _conv(x, params, "decoder.expand", padding=1)
    return E.pixel_shuffle(x, SHUFFLE)


def grm_gate(y_prime: Tensor, frames: Tensor, params, config: ModelConfig) -> Tensor:
    """Per-image RGB gains in (0, 2), shape (N, 3, 1, 1)."""
    x = E.concat_channels([y_prime, frames])
    x = E.gelu(_conv(x, params, "grm.conv1", padding=1))
    x = E.max_pool2d(x)
    x = E.gelu(_conv(x, params, "grm.conv2", padding=1))
    x = E.max_pool2d(x)
    x = E.gelu(_conv(x, params, "grm.conv3", padding=1))
    x = _conv(x, params, "grm.conv4", padding=1)
    return E.scale(E.sigmoid(E.global_avg_pool(x)), 2.0)


def apply_gate(y_prime: Tensor, gate: Tensor, clamp: bool = True) -> Tensor:
    y = E.mul(y_prime, gate)
    return E.clamp(y, 0.0, 1.0) if clamp else y


def grm(y_prime: Tensor, frames: Tensor, params, config: ModelConfig, clamp: bool = True) -> Tensor:
    return apply_gate(y_prime, grm_gate(y_prime, frames, params, config), clamp)


# ---------------------------------------------------------------- full model


def _as_batch(window, T: int) -> np.ndarray:
    arr = window.frames if isinstance(window, FrameWindow) else np.asarray(window)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[1] != T or arr.shape[2] != 3:
        raise ValueError(f"expected (N, {T}, 3, H, W) frames, got {arr.shape}")
    return arr


def pad_to_multiple(batch: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    """Reflect-pad bottom/right of (..., H, W) up to a multiple."""
    h, w = batch.shape[-2:]
    ph = -h % multiple
    pw = -w % multiple
    if not ph and not pw:
        return batch
    widths = [(0, 0)] * (batch.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(batch, widths, mode="reflect")


def forward(window, params: Mapping[str, Tensor], config: ModelConfig, clamp: bool = True) -> Tensor:
    """Enhance the centre frame of each window.

    ``window`` is a :class:`FrameWindow`, a (T, 3, H, W) array or an
    (N, T, 3, H, W) batch. Returns an (N, 3, H, W) tensor.
    """
    T = config.T
    dtype = next(iter(params.values())).dtype
    batch = _as_batch(window, T).astype(dtype, copy=False)
    n, _, _, h, w = batch.shape
    padded = pad_to_multiple(batch)
    hp, wp = padded.shape[-2:]
    flat = Tensor(padded.reshape(n * T, 3, hp, wp), dtype=dtype)
    feats = encode_frame(flat, params, config)
    hs = [faam(f, params, config, s) for s, f in enumerate(feats)]
    y_prime = decode(hs, params, config)
    frames = Tensor(padded.reshape(n, T * 3, hp, wp), dtype=dtype)
    y = grm(y_prime, frames, params, config, clamp=clamp)
    if (hp, wp) != (h, w):
        y = E.crop(y, h, w)
    return y


def save_checkpoint(params: Mapping[str, Tensor], config: ModelConfig, path) -> None:
    checkpoint.save(path, params_to_arrays(params), {"model": config.to_dict()})


def load_checkpoint(path) -> tuple[dict[str, Tensor], ModelConfig]:
    arrays, meta = checkpoint.load(path)
    if "model" not in meta:
        raise checkpoint.CheckpointError("checkpoint has no model config")
    config = ModelConfig.from_dict(meta["model"])
    expected = param_shapes(config)
    if list(arrays) != list(expected) or any(arrays[k].shape != expected[k] for k in expected):
        raise checkpoint.CheckpointError("checkpoint tensors do not match the config manifest")
    params = {k: Tensor(v, requires_grad=True, name=k, dtype=np.float32) for k, v in arrays.items()}
    return params, config


def config_from_json(path) -> ModelConfig:
    return ModelConfig.from_dict(json.loads(Path(path).read_text()))
