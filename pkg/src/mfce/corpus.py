"""Synthetic force-aligned corpora, epoch window streams and minibatches.

Utterances come from a Markov chain over ``S`` states grouped into
left-to-right units (three states per unit by default, like a phone HMM);
each state emits Gaussian features around its own mean. The generating state
sequence doubles as the forced alignment.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Sequence, Union

import numpy as np

from .convgeom import context
from .errors import WindowTooShortError

log = logging.getLogger(__name__)

CORPUS_MAGIC = b"MFCECORP"


@dataclass
class FeatureSequence:
    frames: np.ndarray  # [3, T, D]
    utterance_id: int

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]


@dataclass
class AlignedUtterance:
    features: FeatureSequence
    labels: np.ndarray  # [T] int64

    @property
    def utterance_id(self) -> int:
        return self.features.utterance_id

    @property
    def frames(self) -> np.ndarray:
        return self.features.frames

    def __len__(self) -> int:
        return self.features.num_frames


@dataclass
class Corpus:
    train: List[AlignedUtterance]
    heldout: List[AlignedUtterance]
    num_states: int
    mel_bins: int

    @property
    def train_frames(self) -> int:
        return sum(len(u) for u in self.train)

    @property
    def heldout_frames(self) -> int:
        return sum(len(u) for u in self.heldout)


@dataclass
class WindowSample:
    utterance_id: int
    start: int
    window: np.ndarray  # [3, l_i, D] view into the utterance
    center_labels: np.ndarray  # [1 + delta]


@dataclass
class EpochAccounting:
    total_frames: int
    l_m: int
    delta: int
    l_i: int
    samples_per_epoch: int
    labels_per_epoch: int


@dataclass
class EpochStream:
    windows: List[WindowSample]
    dropped_frames: int = 0
    skipped_utterances: List[int] = field(default_factory=list)

    def __iter__(self) -> Iterator[WindowSample]:
        return iter(self.windows)

    def __len__(self) -> int:
        return len(self.windows)

    def __getitem__(self, i):
        return self.windows[i]


@dataclass
class Batch:
    windows: np.ndarray  # [B, 3, l_i, D]
    labels: np.ndarray  # [B, 1 + delta]
    utterance_ids: np.ndarray
    starts: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


# generation ----------------------------------------------------------------

def _deltas(base: np.ndarray) -> np.ndarray:
    """Stack base, first and second temporal differences: [T, D] -> [3, T, D]."""
    d1 = np.diff(base, axis=0, prepend=base[:1])
    d2 = np.diff(d1, axis=0, prepend=d1[:1])
    return np.stack([base, d1, d2])


def sample_states(rng: np.random.Generator, length: int, num_states: int,
                  p_loop: float, states_per_unit: int) -> np.ndarray:
    units = num_states // states_per_unit
    states = np.empty(length, dtype=np.int64)
    s = int(rng.integers(units)) * states_per_unit
    stay = rng.random(length) < p_loop
    jumps = rng.integers(units, size=length)
    for t in range(length):
        if t > 0 and not stay[t]:
            if (s + 1) % states_per_unit:
                s += 1
            else:
                s = int(jumps[t]) * states_per_unit
        states[t] = s
    return states


def generate_corpus(seed: int, num_states: int, num_utterances: int,
                    length_range: Sequence[int], mel_bins: int, *,
                    p_loop: float = 0.7, states_per_unit: int = 3,
                    noise: float = 1.0, mean_scale: float = 1.0,
                    heldout_fraction: float = 0.1) -> Corpus:
    """Deterministic in ``seed``; 90/10 train/heldout split by utterance by default."""
    lo, hi = (int(v) for v in length_range)
    if num_states < 2:
        raise ValueError("need at least two states")
    if num_utterances < 1 or lo < 1 or hi < lo or mel_bins < 1:
        raise ValueError("invalid corpus size or length range")
    if not 0.0 <= p_loop <= 1.0 or noise < 0 or not 0.0 <= heldout_fraction < 1.0:
        raise ValueError("p_loop and heldout_fraction must lie in [0, 1], noise >= 0")
    if states_per_unit < 1 or num_states % states_per_unit:
        states_per_unit = 1

    rng = np.random.default_rng(seed)
    means = rng.normal(scale=mean_scale, size=(num_states, mel_bins))
    utterances = []
    for r in range(num_utterances):
        length = int(rng.integers(lo, hi + 1))
        states = sample_states(rng, length, num_states, p_loop, states_per_unit)
        base = means[states] + noise * rng.normal(size=(length, mel_bins))
        utterances.append(AlignedUtterance(FeatureSequence(_deltas(base), r), states))

    n_held = int(round(heldout_fraction * num_utterances))
    if heldout_fraction > 0 and num_utterances > 1:
        n_held = min(max(n_held, 1), num_utterances - 1)
    held_ids = set(rng.permutation(num_utterances)[:n_held].tolist())
    train = [u for u in utterances if u.utterance_id not in held_ids]
    heldout = [u for u in utterances if u.utterance_id in held_ids]
    return Corpus(train, heldout, num_states, mel_bins)


# accounting and windows -------------------------------------------------------

def epoch_accounting(total_frames: int, l_m: int, delta: int) -> EpochAccounting:
    """One epoch is one pass over all frames: ``N = L // l_i`` windows,
    ``(1 + delta) * N`` labels."""
    if delta < 0 or l_m < 1:
        raise ValueError("delta >= 0 and l_m >= 1 required")
    l_i = l_m + delta
    if total_frames < l_i:
        raise WindowTooShortError(total_frames, l_i)
    n = total_frames // l_i
    return EpochAccounting(total_frames, l_m, delta, l_i, n, (1 + delta) * n)


def epoch_windows(utterances: Union[Corpus, Sequence[AlignedUtterance]], l_i: int,
                  l_m: int, seed: int, epoch_index: int) -> EpochStream:
    """Partition every utterance into non-overlapping ``l_i``-frame windows from
    a random per-epoch offset, then shuffle all windows globally.

    ``(seed, epoch_index)`` fully determines the stream.
    """
    if isinstance(utterances, Corpus):
        utterances = utterances.train
    if not utterances:
        raise ValueError("empty corpus")
    if l_i < l_m:
        raise WindowTooShortError(l_i, l_m)
    c = context(l_m)
    delta = l_i - l_m
    rng = np.random.default_rng([seed, epoch_index])
    offsets = rng.integers(0, l_i, size=len(utterances))
    windows, dropped, skipped = [], 0, []
    for utt, off in zip(utterances, offsets):
        t_total = len(utt)
        if t_total < l_i:
            skipped.append(utt.utterance_id)
            dropped += t_total
            continue
        off = int(off)
        n = (t_total - off) // l_i
        dropped += t_total - n * l_i
        for k in range(n):
            t = off + k * l_i
            windows.append(WindowSample(
                utt.utterance_id, t, utt.frames[:, t:t + l_i],
                utt.labels[t + c:t + c + delta + 1]))
    if skipped:
        log.info("skipped %d utterances shorter than %d frames", len(skipped), l_i)
    order = rng.permutation(len(windows))
    log.debug("epoch %d: %d windows, %d remainder frames dropped",
              epoch_index, len(windows), dropped)
    return EpochStream([windows[i] for i in order], dropped, skipped)


def batch(stream, batch_size: int) -> Iterator[Batch]:
    """Stack consecutive windows; the final partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    samples = list(stream)
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        yield Batch(np.stack([s.window for s in chunk]),
                    np.stack([s.center_labels for s in chunk]),
                    np.array([s.utterance_id for s in chunk]),
                    np.array([s.start for s in chunk]))


# file format -------------------------------------------------------------------

def save_corpus(corpus: Corpus, path: Union[str, Path]) -> None:
    """Magic, u64 header length, JSON header, float64 features, int64 labels.

    All blobs are little-endian; offsets in the header are relative to the
    first byte after the header.
    """
    table, offset = [], 0
    entries = [(u, "train") for u in corpus.train] + [(u, "heldout") for u in corpus.heldout]
    for u, split in entries:
        fbytes = u.frames.size * 8
        table.append({"id": u.utterance_id, "frames": len(u), "split": split,
                      "feature_offset": offset, "label_offset": offset + fbytes})
        offset += fbytes + len(u) * 8
    header = json.dumps({"num_states": corpus.num_states, "mel_bins": corpus.mel_bins,
                         "channels": 3, "utterances": table}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CORPUS_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for u, _ in entries:
            fh.write(np.ascontiguousarray(u.frames, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(u.labels, dtype="<i8").tobytes())


def load_corpus(path: Union[str, Path]) -> Corpus:
    raw = Path(path).read_bytes()
    if raw[:8] != CORPUS_MAGIC:
        raise ValueError(f"{path}: not a corpus file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    base = 16 + hlen
    d, ch = header["mel_bins"], header["channels"]
    train, heldout = [], []
    for e in header["utterances"]:
        t = e["frames"]
        fo = base + e["feature_offset"]
        lo = base + e["label_offset"]
        frames = np.frombuffer(raw[fo:fo + ch * t * d * 8], dtype="<f8").reshape(ch, t, d)
        labels = np.frombuffer(raw[lo:lo + t * 8], dtype="<i8")
        utt = AlignedUtterance(FeatureSequence(frames.astype(np.float64), e["id"]),
                               labels.astype(np.int64))
        (train if e["split"] == "train" else heldout).append(utt)
    return Corpus(train, heldout, header["num_states"], d)


def label_histogram(utterances: Sequence[AlignedUtterance], num_states: int) -> np.ndarray:
    return np.bincount(np.concatenate([u.labels for u in utterances]), minlength=num_states)
