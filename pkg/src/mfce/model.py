"""Runnable fully convolutional networks built from a ModelSpec.

A window of ``l_i >= l_m`` frames goes in, ``l_i - l_m + 1`` rows of
log-posteriors come out, one per center frame. Fully connected layers are
pointwise convolutions, so nothing special happens when the window grows.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from . import convgeom
from .convgeom import ModelSpec
from .errors import ShapeError, WindowTooShortError
from .tensor import (Tensor, add_bias, conv2d, freq_pool, log_softmax,
                     pointwise, relu, reshape, transpose)

CHECKPOINT_MAGIC = b"MFCECKPT"

OUTPUT_GAIN = 0.1
NOISE_GAIN = 0.2


@dataclass
class PosteriorSequence:
    log_probs: Tensor  # [rows, S]
    start_frame: int = 0

    @property
    def num_rows(self) -> int:
        return self.log_probs.shape[0]


class Network:
    def __init__(self, spec: ModelSpec, params: "OrderedDict[str, Tensor]"):
        self.spec = spec
        self.params = params
        self.l_m = convgeom.intrinsic_length(spec)
        self._check_shapes()

    def _check_shapes(self):
        expected = parameter_shapes(self.spec)
        got = {k: v.shape for k, v in self.params.items()}
        if got != expected:
            raise ShapeError(f"parameters do not match spec: {got} vs {expected}")

    def parameters(self) -> list:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def copy(self) -> "Network":
        return Network(self.spec, OrderedDict(
            (k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.params.items()))

    def __call__(self, window):
        return forward(self, window)


def parameter_shapes(spec: ModelSpec) -> dict:
    shapes = {}
    c = spec.input_channels
    freqs = [spec.mel_bins] + convgeom.frequency_extents(spec)
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            shapes[f"layer{i}.weight"] = (layer.out_channels, c, layer.kernel_t, layer.kernel_f)
        elif layer.kind == "pointwise":
            fc = freqs[i] if layer.collapse_freq else 1
            shapes[f"layer{i}.weight"] = (layer.out_channels, c * fc)
        else:
            continue
        shapes[f"layer{i}.bias"] = (layer.out_channels,)
        c = layer.out_channels
    return shapes


def build(spec: ModelSpec, seed: int = 0) -> Network:
    """Deterministic initialization from ``seed``; biases start at zero.

    Weights are fan-in scaled uniform, bound ``sqrt(6 / fan_in)``. Every conv
    after the first additionally gets a unit center tap (channel ``o`` reads
    channel ``o mod C_in``) with the random part damped by ``NOISE_GAIN``:
    without it a dozen stacked ReLU convs wash out the input and training
    sits on the uniform-posterior plateau. The output layer is shrunk by
    ``OUTPUT_GAIN`` so untrained posteriors are close to uniform.
    """
    rng = np.random.default_rng(seed)
    shapes = parameter_shapes(spec)
    weights = [k for k in shapes if k.endswith(".weight")]
    first_conv = next(k for k in weights if len(shapes[k]) == 4)
    params = OrderedDict()
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            params[name] = Tensor(np.zeros(shape), requires_grad=True)
            continue
        fan_in = int(np.prod(shape[1:]))
        data = rng.uniform(-1.0, 1.0, size=shape) * np.sqrt(6.0 / fan_in)
        if name == weights[-1]:
            data *= OUTPUT_GAIN
        elif len(shape) == 4 and name != first_conv:
            o, c, kt, kf = shape
            data *= NOISE_GAIN
            data[np.arange(o), np.arange(o) % c, kt // 2, kf // 2] += 1.0
        params[name] = Tensor(data, requires_grad=True)
    return Network(spec, params)


def _run_layers(net: Network, x: Tensor) -> Tensor:
    for i, layer in enumerate(net.spec.layers):
        if layer.kind == "conv":
            x = conv2d(x, net.params[f"layer{i}.weight"], layer.dilation_t,
                       layer.stride_f, layer.pad_f)
            x = add_bias(x, net.params[f"layer{i}.bias"])
        elif layer.kind == "pointwise":
            x = pointwise(x, net.params[f"layer{i}.weight"], layer.collapse_freq)
            x = add_bias(x, net.params[f"layer{i}.bias"])
        elif layer.kind == "relu":
            x = relu(x)
        else:
            x = freq_pool(x, layer.kernel_f)
    return x


def forward_batch(net: Network, windows) -> Tensor:
    """``[B, C, l_i, D]`` windows to ``[B, l_i - l_m + 1, S]`` log-posteriors."""
    x = windows if isinstance(windows, Tensor) else Tensor(windows)
    if x.ndim != 4:
        raise ShapeError(f"forward_batch expects [B, C, T, D], got {x.shape}")
    _, c, t, d = x.shape
    if c != net.spec.input_channels or d != net.spec.mel_bins:
        raise ShapeError(f"window {x.shape[1:]} does not match model input "
                         f"({net.spec.input_channels}, *, {net.spec.mel_bins})")
    if t < net.l_m:
        raise WindowTooShortError(t, net.l_m)
    y = _run_layers(net, x)  # [B, S, T', 1]
    b, s, t_out, _ = y.shape
    y = transpose(reshape(y, (b, s, t_out)), (0, 2, 1))
    return log_softmax(y, axis=-1)


def forward(net: Network, window, start_frame: int = 0) -> PosteriorSequence:
    x = window if isinstance(window, Tensor) else Tensor(window)
    if x.ndim != 3:
        raise ShapeError(f"forward expects a [C, T, D] window, got {x.shape}")
    lp = forward_batch(net, reshape(x, (1,) + x.shape))
    return PosteriorSequence(reshape(lp, lp.shape[1:]), start_frame)


def forward_utterance(net: Network, utterance) -> PosteriorSequence:
    """Posteriors for every frame of an utterance, zero-padded at both ends."""
    frames = getattr(utterance, "frames", utterance)
    frames = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1] < 1:
        raise ValueError("empty utterance")
    left, right = convgeom.utterance_padding(net.l_m, frames.shape[1])
    padded = np.pad(frames, ((0, 0), (left, right), (0, 0)))
    return forward(net, padded, start_frame=0)


# checkpoints ---------------------------------------------------------------

def save_checkpoint(net: Network, path: Union[str, Path]) -> None:
    """Magic, u64 header length, JSON header, then little-endian float64 blobs.

    The header holds the spec and ``name -> {shape, offset}`` with offsets
    relative to the start of the blob region.
    """
    manifest, offset = {}, 0
    for name, p in net.params.items():
        manifest[name] = {"shape": list(p.shape), "offset": offset}
        offset += p.data.size * 8
    header = json.dumps({"spec": net.spec.to_dict(), "params": manifest},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for p in net.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path: Union[str, Path]) -> Network:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    base = 16 + hlen
    params = OrderedDict()
    for name, meta in header["params"].items():
        shape = tuple(meta["shape"])
        n = int(np.prod(shape))
        start = base + meta["offset"]
        data = np.frombuffer(raw[start:start + 8 * n], dtype="<f8").astype(np.float64)
        params[name] = Tensor(data.reshape(shape), requires_grad=True)
    spec = ModelSpec.from_dict(header["spec"])
    order = list(parameter_shapes(spec))
    return Network(spec, OrderedDict((k, params[k]) for k in order))
