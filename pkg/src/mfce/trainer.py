"""SGD with Nesterov momentum, L2 decay, global-norm clipping and staged
learning-rate annealing, plus the epoch loop that writes metrics and
checkpoints.

Update rule (per parameter, after clipping the joint gradient)::

    g <- grad + weight_decay * theta
    v <- momentum * v - lr * g
    theta <- theta + momentum * v - lr * g
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import corpus as corpus_mod
from .corpus import AlignedUtterance, Corpus
from .errors import ConfigError, DivergenceError, ShapeError
from .loss import batch_loss, mfce_loss
from .model import Network, forward_batch, forward_utterance, save_checkpoint
from .tensor import backward

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("epoch", "train_nll", "heldout_nll", "heldout_fer",
                   "labels_processed", "wall_seconds", "lr")


@dataclass
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.99
    weight_decay: float = 1e-6
    clip_norm: float = 10.0
    epochs: int = 16
    anneal_start_epoch: int = 10
    anneal_factor: float = math.sqrt(0.5)
    delta: int = 0
    batch_size: int = 32
    seed: int = 0
    schedule_speedup: bool = False

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0.0 < self.anneal_factor <= 1.0:
            raise ConfigError("anneal_factor must lie in (0, 1]")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.anneal_start_epoch < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, anneal_start_epoch >= 1 required")
        if self.lr0 <= 0 or self.clip_norm <= 0 or self.weight_decay < 0:
            raise ConfigError("lr0 and clip_norm must be positive, weight_decay >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train settings: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class EpochMetrics:
    epoch: int
    train_nll: float
    heldout_nll: float
    heldout_fer: float
    labels_processed: int
    wall_seconds: float
    lr: float

    def row(self) -> list:
        return [self.epoch, repr(self.train_nll), repr(self.heldout_nll),
                repr(self.heldout_fer), self.labels_processed,
                f"{self.wall_seconds:.3f}", repr(self.lr)]


def effective_anneal_start(config: TrainConfig, l_m: Optional[int] = None) -> int:
    """First annealed epoch, optionally shifted so annealing starts after the
    same number of labels a single-frame run sees before its own start."""
    if not config.schedule_speedup or config.delta == 0:
        return config.anneal_start_epoch
    if l_m is None:
        raise ValueError("schedule_speedup needs the model's intrinsic length")
    # labels per epoch relative to delta = 0: (1 + delta) * l_m / (l_m + delta)
    ratio = (1 + config.delta) * l_m / (l_m + config.delta)
    return 1 + math.ceil((config.anneal_start_epoch - 1) / ratio)


def lr_at(config: TrainConfig, epoch: int, l_m: Optional[int] = None) -> float:
    """Learning rate for a 1-based epoch; epoch ``anneal_start`` is the first decayed one."""
    if not 1 <= epoch <= max(config.epochs, 1):
        raise ValueError(f"epoch {epoch} outside 1..{config.epochs}")
    start = effective_anneal_start(config, l_m)
    if epoch < start:
        return config.lr0
    return config.lr0 * config.anneal_factor ** (epoch - start + 1)


def clip_gradients(grads: Sequence[np.ndarray], clip_norm: float) -> tuple:
    """Scale all gradients jointly so their global L2 norm is at most ``clip_norm``."""
    norm = math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads))
    if norm > clip_norm:
        k = clip_norm / norm
        return [g * k for g in grads], norm
    return list(grads), norm


def sgd_step(net: Network, grads: Sequence[np.ndarray], velocity: List[np.ndarray],
             config: TrainConfig, lr: float) -> float:
    """In-place Nesterov update of ``net``'s parameters and ``velocity``.

    Returns the pre-clip global gradient norm.
    """
    params = net.parameters()
    if len(grads) != len(params) or len(velocity) != len(params):
        raise ShapeError("gradient/velocity lists do not match the parameters")
    g_all = []
    for p, g, v in zip(params, grads, velocity):
        if g.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"buffer shape mismatch for parameter {p.shape}")
        g_all.append(g + config.weight_decay * p.data)
    if not all(np.isfinite(g).all() for g in g_all):
        raise DivergenceError("non-finite gradient")
    g_all, norm = clip_gradients(g_all, config.clip_norm)
    mu = config.momentum
    for p, g, v in zip(params, g_all, velocity):
        v *= mu
        v -= lr * g
        p.data = p.data + mu * v - lr * g
    return norm


def evaluate(net: Network, heldout: Sequence[AlignedUtterance], delta_eval: int = 0) -> tuple:
    """(mean per-frame NLL, frame error rate) over whole padded utterances.

    ``delta_eval`` is accepted for interface symmetry; full-utterance dense
    prediction does not depend on it.
    """
    if not heldout:
        raise ValueError("heldout set is empty")
    total_nll, errors, frames = 0.0, 0, 0
    for utt in heldout:
        lp = forward_utterance(net, utt).log_probs.data
        labels = np.asarray(utt.labels)
        total_nll += float(-lp[np.arange(len(labels)), labels].sum())
        errors += int((lp.argmax(axis=1) != labels).sum())
        frames += len(labels)
    return total_nll / frames, errors / frames


def velocity_like(net: Network) -> List[np.ndarray]:
    return [np.zeros_like(p.data) for p in net.parameters()]


def train_step(net: Network, batch, velocity, config: TrainConfig, lr: float,
               loss_fn: Callable = mfce_loss) -> float:
    """One minibatch: forward, mean-of-window losses, backward, update."""
    net.zero_grad()
    lp = forward_batch(net, batch.windows)
    loss, _ = batch_loss(lp, batch.labels, loss_fn)
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite training loss {value}")
    backward(loss)
    sgd_step(net, [p.grad for p in net.parameters()], velocity, config, lr)
    return value


def write_metrics(path: Path, rows: Sequence[EpochMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for m in rows:
            w.writerow(m.row())


def train(net: Network, corpus: Corpus, config: TrainConfig,
          out_dir: Optional[Path] = None,
          on_epoch: Optional[Callable[[EpochMetrics], None]] = None) -> List[EpochMetrics]:
    """Run ``config.epochs`` epochs of (MF)CE training on ``corpus.train``.

    With ``out_dir`` set, writes ``metrics.csv`` (rewritten after each epoch)
    and ``ckpt_epoch{N}`` for N = 0..epochs.
    """
    if corpus.mel_bins != net.spec.mel_bins or corpus.num_states != net.spec.num_targets:
        raise ShapeError(f"corpus (S={corpus.num_states}, D={corpus.mel_bins}) does not "
                         f"match model (S={net.spec.num_targets}, D={net.spec.mel_bins})")
    l_m = net.l_m
    l_i = l_m + config.delta
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(net, out_dir / "ckpt_epoch0")
    velocity = velocity_like(net)
    history: List[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at(config, epoch, l_m)
        stream = corpus_mod.epoch_windows(corpus.train, l_i, l_m, config.seed, epoch)
        loss_sum, labels_seen = 0.0, 0
        for b in corpus_mod.batch(stream, config.batch_size):
            loss_sum += train_step(net, b, velocity, config, lr) * len(b)
            labels_seen += b.labels.size
        train_nll = loss_sum / max(len(stream), 1)
        held_nll, held_fer = evaluate(net, corpus.heldout) if corpus.heldout else (float("nan"),) * 2
        m = EpochMetrics(epoch, train_nll, held_nll, held_fer, labels_seen,
                         time.perf_counter() - t0, lr)
        history.append(m)
        log.info("epoch %d lr=%.6g train_nll=%.4f heldout_nll=%.4f fer=%.4f labels=%d (%.1fs)",
                 epoch, lr, train_nll, held_nll, held_fer, labels_seen, m.wall_seconds)
        if out_dir is not None:
            save_checkpoint(net, out_dir / f"ckpt_epoch{epoch}")
            write_metrics(out_dir / "metrics.csv", history)
        if on_epoch is not None:
            on_epoch(m)
    if out_dir is not None and not history:
        write_metrics(out_dir / "metrics.csv", history)
    return history


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
