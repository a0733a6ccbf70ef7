"""Frame-level cross-entropy objectives.

``ce_loss`` scores the single center frame of a window; ``mfce_loss`` averages
the per-frame NLL over all ``1 + delta`` predicted frames of a longer window.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .model import PosteriorSequence
from .tensor import Tensor, nll, scale, tsum


@dataclass
class LossReport:
    total: Tensor
    per_frame: list = field(default_factory=list)
    label_count: int = 0

    @property
    def value(self) -> float:
        return self.total.item()


def _log_probs(posteriors) -> Tensor:
    return posteriors.log_probs if isinstance(posteriors, PosteriorSequence) else posteriors


def ce_loss(posteriors, label: int) -> LossReport:
    lp = _log_probs(posteriors)
    if lp.ndim != 2 or lp.shape[0] != 1:
        raise ShapeError(f"ce_loss needs exactly one posterior row, got {lp.shape[0]}")
    frame = nll(lp, np.array([label]))
    total = tsum(frame)
    return LossReport(total, [float(frame.data[0])], 1)


def mfce_loss(posteriors, labels: Sequence[int]) -> LossReport:
    """Mean NLL over the ``1 + delta`` rows against their aligned labels."""
    lp = _log_probs(posteriors)
    labels = np.asarray(labels, dtype=np.int64)
    if lp.ndim != 2 or labels.shape != (lp.shape[0],):
        raise ShapeError(f"mfce_loss: {labels.shape} labels for {lp.shape[0]} posterior rows")
    frames = nll(lp, labels)
    n = labels.shape[0]
    total = scale(tsum(frames), 1.0 / n)
    return LossReport(total, frames.data.tolist(), n)


def batch_loss(log_probs: Tensor, labels, loss_fn=mfce_loss) -> tuple:
    """Mean over windows of ``loss_fn`` applied to each window's rows.

    ``log_probs`` is ``[B, rows, S]``, ``labels`` is ``[B, rows]``. Returns the
    scalar loss and the list of per-window reports.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != log_probs.shape[:2]:
        raise ShapeError(f"batch_loss: labels {labels.shape} vs log-probs {log_probs.shape}")
    reports = []
    total = None
    for b in range(labels.shape[0]):
        rep = loss_fn(log_probs[b], labels[b])
        reports.append(rep)
        total = rep.total if total is None else total + rep.total
    return scale(total, 1.0 / labels.shape[0]), reports
