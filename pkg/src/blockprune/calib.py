"""Calibration set handling and one-pass activation statistics.

Calibration windows are contiguous byte windows drawn at seeded uniform
start offsets. Statistics are per-block, per-channel means of |X^H| and
|X^U| over every token of every calibration sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import MAX_SEQ, Model, model_forward
from .rng import substream
from .tensor import DTYPE


@dataclass
class Corpus:
    data: bytes
    name: str = "corpus"

    def __post_init__(self) -> None:
        if len(self.data) == 0:
            raise ValueError("corpus must be non-empty")


def load_corpus(path) -> Corpus:
    p = Path(path)
    return Corpus(data=p.read_bytes(), name=p.name)


@dataclass
class CalibSpec:
    n_samples: int = 128
    seq_len: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 2 <= self.seq_len <= MAX_SEQ:
            raise ValueError(f"seq_len must be in [2, {MAX_SEQ}], got {self.seq_len}")


@dataclass
class ActivationStats:
    """Per-block mean absolute activations: X^H channels and X^U channels."""

    mean_abs_xh: list[np.ndarray] = field(default_factory=list)
    mean_abs_xu: list[np.ndarray] = field(default_factory=list)
    token_count: int = 0


def tokenize(corpus: Corpus) -> np.ndarray:
    """Identity byte-level tokens, vocab 256."""
    return np.frombuffer(corpus.data, dtype=np.uint8).astype(np.int64)


def detokenize(tokens) -> bytes:
    return np.asarray(tokens, dtype=np.uint8).tobytes()


def sample_calibration(corpus: Corpus, spec: CalibSpec) -> list[np.ndarray]:
    """n_samples windows of seq_len tokens at seeded uniform offsets."""
    tokens = tokenize(corpus)
    if tokens.shape[0] < spec.seq_len:
        raise ValueError(
            f"corpus {corpus.name!r} has {tokens.shape[0]} bytes, needs >= seq_len={spec.seq_len}")
    n_starts = tokens.shape[0] - spec.seq_len + 1
    rng = substream(spec.seed, "calibration-offsets")
    offsets = rng.integers(0, n_starts, size=spec.n_samples)
    return [tokens[o:o + spec.seq_len].copy() for o in offsets]


def collect_stats(model: Model, batches: list[np.ndarray]) -> ActivationStats:
    """One forward per sequence, no weight changes; accumulates sums of
    |X^H| and |X^U| per channel in (sequence, token) order, then divides
    by the total token count. Accumulators are float64 so the result is
    order-stable to ~1e-7 relative; output is float32 like everything else.
    """
    if len(batches) == 0:
        raise ValueError("collect_stats needs at least one sequence")
    cfg = model.config
    sum_xh = [np.zeros(w.width, dtype=np.float64) for w in model.blocks]
    sum_xu = [np.zeros(w.ffn_hidden, dtype=np.float64) for w in model.blocks]
    tokens_total = 0
    for seq in batches:
        _, traces = model_forward(model, seq)
        for l, trace in enumerate(traces):
            sum_xh[l] += np.sum(np.abs(trace.x_head_out), axis=0, dtype=np.float64)
            sum_xu[l] += np.sum(np.abs(trace.x_ffn_hidden), axis=0, dtype=np.float64)
        tokens_total += len(seq)
    return ActivationStats(
        mean_abs_xh=[(s / tokens_total).astype(DTYPE) for s in sum_xh],
        mean_abs_xu=[(s / tokens_total).astype(DTYPE) for s in sum_xu],
        token_count=tokens_total,
    )
