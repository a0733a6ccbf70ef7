"""Time-axis geometry of fully convolutional acoustic models.

Pure integer arithmetic over a declarative architecture: how many input frames
one prediction consumes (the intrinsic length ``l_m``), how many predictions a
longer window yields, and how to pad a whole utterance so every frame gets
one. No tensors are touched here.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, List

from .errors import ConfigError, WindowTooShortError

LAYER_KINDS = ("conv", "pointwise", "relu", "freq_pool")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_t: int = 1
    kernel_f: int = 1
    dilation_t: int = 1
    out_channels: int = 0
    stride_f: int = 1
    pad_f: int = 0
    collapse_freq: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kernel_t < 1 or self.kernel_f < 1 or self.dilation_t < 1:
            raise ConfigError(f"{self.kind}: kernel and dilation must be >= 1")
        if self.stride_f < 1 or self.pad_f < 0:
            raise ConfigError(f"{self.kind}: stride_f >= 1 and pad_f >= 0 required")
        if self.kind in ("conv", "pointwise") and self.out_channels < 1:
            raise ConfigError(f"{self.kind}: out_channels must be >= 1")
        if self.kind != "conv" and (self.kernel_t != 1 or self.dilation_t != 1):
            raise ConfigError(f"{self.kind} layers cannot span time")

    @property
    def time_reduction(self) -> int:
        return (self.kernel_t - 1) * self.dilation_t if self.kind == "conv" else 0

    @classmethod
    def conv(cls, out_channels, kernel_t=3, kernel_f=3, dilation_t=1, pad_f=None, stride_f=1):
        if pad_f is None:
            pad_f = (kernel_f - 1) // 2
        return cls("conv", kernel_t, kernel_f, dilation_t, out_channels, stride_f, pad_f)

    @classmethod
    def fc(cls, out_channels, collapse_freq=False):
        return cls("pointwise", out_channels=out_channels, collapse_freq=collapse_freq)

    @classmethod
    def relu(cls):
        return cls("relu")

    @classmethod
    def pool(cls, size=2):
        return cls("freq_pool", kernel_f=size)


@dataclass(frozen=True)
class ModelSpec:
    input_channels: int
    mel_bins: int
    num_targets: int
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_channels < 1 or self.mel_bins < 1 or self.num_targets < 2:
            raise ConfigError("input_channels, mel_bins >= 1 and num_targets >= 2 required")
        if not any(l.kind == "conv" for l in self.layers):
            raise ConfigError("model needs at least one conv layer")
        last = [l for l in self.layers if l.kind in ("conv", "pointwise")][-1]
        if last.out_channels != self.num_targets:
            raise ConfigError(f"last layer has {last.out_channels} outputs, "
                              f"expected num_targets={self.num_targets}")
        if frequency_extents(self)[-1] != 1:
            raise ConfigError("frequency extent must be collapsed to 1 before the output")

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "mel_bins": self.mel_bins,
            "num_targets": self.num_targets,
            "layers": [asdict(l) for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            layers = [LayerSpec(**l) for l in d["layers"]]
            return cls(int(d["input_channels"]), int(d["mel_bins"]),
                       int(d["num_targets"]), tuple(layers))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad model spec: {exc}") from exc


def frequency_extents(spec: ModelSpec) -> List[int]:
    """Frequency extent after each layer."""
    f = spec.mel_bins
    out = []
    for layer in spec.layers:
        if layer.kind == "conv":
            fp = f + 2 * layer.pad_f
            if fp < layer.kernel_f:
                raise ConfigError(f"conv kernel_f={layer.kernel_f} exceeds frequency extent {fp}")
            f = (fp - layer.kernel_f) // layer.stride_f + 1
        elif layer.kind == "freq_pool":
            f = f // layer.kernel_f
            if f < 1:
                raise ConfigError("freq_pool reduces frequency extent below 1")
        elif layer.kind == "pointwise" and layer.collapse_freq:
            f = 1
        out.append(f)
    return out


def channel_counts(spec: ModelSpec) -> List[int]:
    c = spec.input_channels
    out = []
    for layer in spec.layers:
        if layer.kind in ("conv", "pointwise"):
            c = layer.out_channels
        out.append(c)
    return out


def time_reductions(spec: ModelSpec) -> List[int]:
    return [l.time_reduction for l in spec.layers]


def cumulative_dilations(spec: ModelSpec) -> List[int]:
    """Effective time dilation in force after each layer.

    Dilation factors are stored already cumulative (1, 2, 4, ... for each
    replaced stride-2 time pooling), so this is the most recent conv's factor.
    """
    out, current = [], 1
    for l in spec.layers:
        if l.kind == "conv":
            current = l.dilation_t
        out.append(current)
    return out


def intrinsic_length(spec: ModelSpec) -> int:
    """Frames one prediction consumes: ``1 + sum((k_t - 1) * dilation_t)``."""
    return 1 + sum(time_reductions(spec))


def output_count(spec_or_lm, l_i: int) -> int:
    l_m = spec_or_lm if isinstance(spec_or_lm, int) else intrinsic_length(spec_or_lm)
    if l_i < l_m:
        raise WindowTooShortError(l_i, l_m)
    return l_i - l_m + 1


def utterance_padding(spec_or_lm, l_u: int = 1) -> tuple:
    """(left, right) zero frames so an ``l_u``-frame utterance yields ``l_u`` outputs."""
    if l_u < 1:
        raise ValueError("utterance must have at least one frame")
    l_m = spec_or_lm if isinstance(spec_or_lm, int) else intrinsic_length(spec_or_lm)
    return (l_m - 1) // 2, math.ceil((l_m - 1) / 2)


def context(spec_or_lm) -> int:
    """Frames left of the predicted frame inside one receptive field."""
    return utterance_padding(spec_or_lm)[0]


# presets ---------------------------------------------------------------------

DEEP_DILATIONS = (1, 1, 1, 1, 1, 1, 2, 2, 2, 4, 4, 4)
DEEP_WIDTHS = (64, 128, 256, 512)


def deep_spec(num_targets: int = 48, mel_bins: int = 64,
              widths: Iterable[int] = DEEP_WIDTHS, bottleneck: int = 512,
              input_channels: int = 3, freq_pool_after: Iterable[int] = ()) -> ModelSpec:
    """Initial 5x5 conv, twelve dilated 3x3 convs in four width groups of
    three, then a frequency-collapsing bottleneck and the output layer.

    ``freq_pool_after`` lists group indices (0..3) followed by 2x frequency pooling.
    """
    widths = tuple(widths)
    if len(widths) != 4:
        raise ConfigError("deep spec needs exactly four group widths")
    pools = set(freq_pool_after)
    layers = [LayerSpec.conv(widths[0], 5, 5), LayerSpec.relu()]
    for g in range(4):
        for k in range(3):
            layers += [LayerSpec.conv(widths[g], 3, 3, DEEP_DILATIONS[3 * g + k]),
                       LayerSpec.relu()]
        if g in pools:
            layers.append(LayerSpec.pool(2))
    layers += [LayerSpec.fc(bottleneck, collapse_freq=True), LayerSpec.relu(),
               LayerSpec.fc(num_targets)]
    return ModelSpec(input_channels, mel_bins, num_targets, tuple(layers))


def toy_spec(num_targets: int = 8, mel_bins: int = 8, width: int = 4,
             input_channels: int = 3, hidden: int = 16) -> ModelSpec:
    """Three undilated 3x3 convs, l_m = 7 (the small illustrative network)."""
    layers = []
    for _ in range(3):
        layers += [LayerSpec.conv(width, 3, 3), LayerSpec.relu()]
    layers += [LayerSpec.fc(hidden, collapse_freq=True), LayerSpec.relu(),
               LayerSpec.fc(num_targets)]
    return ModelSpec(input_channels, mel_bins, num_targets, tuple(layers))
