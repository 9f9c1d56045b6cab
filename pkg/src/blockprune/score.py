"""Channel and head importance scores.

The block-wise importance-propagation ("bip") metric scores a channel by
its bounded effect on the whole block output, not just the next layer:

  FFN channel j:  s_j = mean|X^U_j| * ||wd row j||_1
  MSA channel j:  s_j = mean|X^H_j| * (|wo| row j . v),
                  v = 1 + |wu| (|wd| 1)

v equals (I + |wu||wd|) summed over output dimensions without ever
forming the d x d propagation matrix. Contenders: "wanda" (same
statistic, no propagation factor), "magnitude" (L1 of the connected
weight group), "nisp" (weight-only ones backpropagation from the output)
and "random". Head scores are always the sums of their channels' scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calib import ActivationStats
from .model import BlockWeights, Model
from .rng import substream
from .tensor import DTYPE, lipschitz_constant, row_l1_sums

METHODS = ("bip", "wanda", "magnitude", "random", "nisp")


@dataclass
class ScoreConfig:
    method: str = "bip"
    # C = max(C_sigma, 1) multiplies MSA scores only when asked for; it is a
    # positive scalar so it can never change a ranking, but the bound-slack
    # reports want the literal constant in place.
    include_constant_c: bool = False
    activation: str = "gelu"

    @property
    def constant_c(self) -> float:
        return max(lipschitz_constant(self.activation), 1.0)


@dataclass
class ImportanceScores:
    method: str
    ffn: list[np.ndarray] = field(default_factory=list)
    msa_channels: list[np.ndarray] = field(default_factory=list)
    heads: list[np.ndarray] = field(default_factory=list)


def score_ffn_channels(stats: ActivationStats, w: BlockWeights, block: int) -> np.ndarray:
    mean_abs_xu = stats.mean_abs_xu[block]
    if mean_abs_xu.shape[0] != w.ffn_hidden:
        raise ValueError(
            f"stats have {mean_abs_xu.shape[0]} FFN channels, block {block} has {w.ffn_hidden}")
    return (mean_abs_xu * row_l1_sums(w.wd)).astype(DTYPE)


def propagation_vector(w: BlockWeights) -> np.ndarray:
    """v = 1 + |wu| (|wd| 1), length d."""
    wd_rows = row_l1_sums(w.wd)            # |wd| 1
    return (1.0 + np.abs(w.wu) @ wd_rows).astype(DTYPE)


def score_msa_channels(stats: ActivationStats, w: BlockWeights, block: int,
                       cfg: ScoreConfig | None = None) -> np.ndarray:
    mean_abs_xh = stats.mean_abs_xh[block]
    if mean_abs_xh.shape[0] != w.width:
        raise ValueError(
            f"stats have {mean_abs_xh.shape[0]} MSA channels, block {block} has {w.width}")
    v = propagation_vector(w)
    # float64 row accumulation so the wu == 0 case collapses to the plain
    # |wo| row sums bit-for-bit
    weight_side = np.sum(np.abs(w.wo) * v[np.newaxis, :], axis=1, dtype=np.float64).astype(DTYPE)
    s = mean_abs_xh * weight_side
    if cfg is not None and cfg.include_constant_c:
        s = s * np.asarray(cfg.constant_c, dtype=DTYPE)
    return s.astype(DTYPE)


def aggregate_heads(msa_channels: np.ndarray, n_heads: int) -> np.ndarray:
    d = msa_channels.shape[0]
    if n_heads < 1 or d % n_heads != 0:
        raise ValueError(f"{d} channels not divisible into {n_heads} heads")
    head_dim = d // n_heads
    return np.array(
        [np.sum(msa_channels[i * head_dim:(i + 1) * head_dim]) for i in range(n_heads)],
        dtype=msa_channels.dtype)


def compute_scores(model: Model, method: str, stats: ActivationStats | None = None,
                   seed: int = 0, include_constant_c: bool = False) -> ImportanceScores:
    """Scores for every block under the named method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    if method in ("bip", "wanda") and stats is None:
        raise ValueError(f"method {method!r} needs calibration stats")
    cfg = model.config
    out = ImportanceScores(method=method)
    if method == "bip":
        sc = ScoreConfig(method=method, include_constant_c=include_constant_c,
                         activation=cfg.activation)
        for l, w in enumerate(model.blocks):
            out.ffn.append(score_ffn_channels(stats, w, l))
            out.msa_channels.append(score_msa_channels(stats, w, l, sc))
    elif method == "wanda":
        for l, w in enumerate(model.blocks):
            out.ffn.append(score_ffn_channels(stats, w, l))
            mean_abs_xh = stats.mean_abs_xh[l]
            if mean_abs_xh.shape[0] != w.width:
                raise ValueError(
                    f"stats have {mean_abs_xh.shape[0]} MSA channels, block {l} has {w.width}")
            out.msa_channels.append((mean_abs_xh * row_l1_sums(w.wo)).astype(DTYPE))
    elif method == "magnitude":
        for w in model.blocks:
            ffn = row_l1_sums(w.wu.T) + row_l1_sums(w.wd)
            if w.wg is not None:
                ffn = ffn + row_l1_sums(w.wg.T)
            out.ffn.append(ffn.astype(DTYPE))
            n_heads = w.n_heads(cfg.head_dim)
            qkv_cols = row_l1_sums(w.wq.T) + row_l1_sums(w.wk.T) + row_l1_sums(w.wv.T)
            # spread each head's q/k/v mass evenly over its channels
            per_head = qkv_cols.reshape(n_heads, cfg.head_dim).sum(axis=1) / cfg.head_dim
            msa = row_l1_sums(w.wo) + np.repeat(per_head, cfg.head_dim)
            out.msa_channels.append(msa.astype(DTYPE))
    elif method == "random":
        rng = substream(seed, "score-random")
        for w in model.blocks:
            out.ffn.append(rng.random(w.ffn_hidden).astype(DTYPE))
            out.msa_channels.append(rng.random(w.width).astype(DTYPE))
    elif method == "nisp":
        # ones importance at the last block's output, propagated backward
        # through weights only (residual pairs add the identity path)
        iota = np.ones(cfg.d, dtype=DTYPE)
        per_block = [None] * len(model.blocks)
        for l in range(len(model.blocks) - 1, -1, -1):
            w = model.blocks[l]
            ffn_score = np.abs(w.wd) @ iota
            iota_mid = iota + np.abs(w.wu) @ ffn_score
            msa_score = np.abs(w.wo) @ iota_mid
            per_block[l] = (ffn_score.astype(DTYPE), msa_score.astype(DTYPE))
            iota = iota_mid + np.abs(w.wv) @ msa_score
        for ffn_score, msa_score in per_block:
            out.ffn.append(ffn_score)
            out.msa_channels.append(msa_score)
    for l, w in enumerate(model.blocks):
        out.heads.append(aggregate_heads(out.msa_channels[l], w.n_heads(cfg.head_dim)))
    return out
