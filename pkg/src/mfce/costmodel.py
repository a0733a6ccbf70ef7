"""FLOP accounting for dense prediction and a wall-clock cross-check.

Multiply-accumulates are counted as two FLOPs; biases, ReLUs and pooling are
ignored. Pointwise layers count as the 1x1 (or 1xF) convolutions they are.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import convgeom
from .convgeom import ModelSpec
from .errors import WindowTooShortError


@dataclass
class CostEstimate:
    per_layer_flops: List[int] = field(default_factory=list)
    total_flops: int = 0
    flops_per_label: float = 0.0
    labels: int = 1


def window_cost(spec: ModelSpec, l_i: int) -> CostEstimate:
    l_m = convgeom.intrinsic_length(spec)
    if l_i < l_m:
        raise WindowTooShortError(l_i, l_m)
    freqs = convgeom.frequency_extents(spec)
    f_in = spec.mel_bins
    c_in = spec.input_channels
    t = l_i
    per_layer = []
    for layer, f_out in zip(spec.layers, freqs):
        flops = 0
        if layer.kind == "conv":
            t -= layer.time_reduction
            flops = 2 * layer.out_channels * c_in * layer.kernel_t * layer.kernel_f * t * f_out
            c_in = layer.out_channels
        elif layer.kind == "pointwise":
            k_f = f_in if layer.collapse_freq else 1
            flops = 2 * layer.out_channels * c_in * k_f * t * f_out
            c_in = layer.out_channels
        per_layer.append(flops)
        f_in = f_out
    total = sum(per_layer)
    labels = l_i - l_m + 1
    return CostEstimate(per_layer, total, total / labels, labels)


def analytic_ratio(spec: ModelSpec, delta: int) -> float:
    """Cost of an ``l_m + delta`` window relative to a single-prediction window."""
    l_m = convgeom.intrinsic_length(spec)
    return window_cost(spec, l_m + delta).total_flops / window_cost(spec, l_m).total_flops


def sharing_factor(spec: ModelSpec, delta: int) -> float:
    """Naive per-frame cost of ``1 + delta`` labels over the dense cost."""
    l_m = convgeom.intrinsic_length(spec)
    naive = (1 + delta) * window_cost(spec, l_m).total_flops
    return naive / window_cost(spec, l_m + delta).total_flops


def measured_cost(net, l_i: int, repetitions: int = 5, warmup: int = 1,
                  batch_size: int = 1, seed: int = 0) -> float:
    """Median seconds for forward + backward of a random ``l_i``-frame window."""
    from .loss import batch_loss
    from .model import forward_batch
    from .tensor import backward

    if repetitions < 3:
        raise ValueError("need at least 3 repetitions")
    rng = np.random.default_rng(seed)
    spec = net.spec
    x = rng.normal(size=(batch_size, spec.input_channels, l_i, spec.mel_bins))
    rows = convgeom.output_count(net.l_m, l_i)
    y = rng.integers(0, spec.num_targets, size=(batch_size, rows))
    times = []
    for k in range(warmup + repetitions):
        net.zero_grad()
        t0 = time.perf_counter()
        loss, _ = batch_loss(forward_batch(net, x), y)
        backward(loss)
        dt = time.perf_counter() - t0
        if k >= warmup:
            times.append(dt)
    net.zero_grad()
    return statistics.median(times)


def cost_report(spec: ModelSpec, delta: int, net=None, repetitions: int = 5) -> dict:
    l_m = convgeom.intrinsic_length(spec)
    report = {
        "l_m": l_m,
        "delta": delta,
        "analytic_ratio": analytic_ratio(spec, delta),
        "frame_ratio": (l_m + delta) / l_m,
        "measured_ratio": None,
        "sharing_factor": sharing_factor(spec, delta),
    }
    if net is not None:
        base = measured_cost(net, l_m, repetitions)
        report["measured_ratio"] = measured_cost(net, l_m + delta, repetitions) / base
    return report


def cost_table(spec: ModelSpec, deltas=(0, 2, 4, 8, 16)) -> List[dict]:
    l_m = convgeom.intrinsic_length(spec)
    base = window_cost(spec, l_m).total_flops
    rows = []
    for d in deltas:
        est = window_cost(spec, l_m + d)
        rows.append({"delta": d, "l_i": l_m + d, "labels": est.labels,
                     "flops": est.total_flops, "ratio": est.total_flops / base,
                     "flops_per_label": est.flops_per_label})
    return rows
