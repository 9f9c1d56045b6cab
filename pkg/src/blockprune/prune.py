"""Mask selection under a uniform sparsity target and structural surgery.

A pruned head loses its q/k/v columns and its wo rows; a pruned FFN
channel loses its wu (and wg) column and its wd row. Surgery produces a
compacted model whose per-block widths may differ; the config keeps the
original dense architecture and widths are carried by the weight shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import BlockWeights, Model
from .score import ImportanceScores


@dataclass
class SparsityTarget:
    r: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.r < 1.0:
            raise ValueError(f"sparsity ratio must be in [0, 1), got {self.r}")


@dataclass
class PruneMask:
    """Per-block keep decisions: heads at head granularity, FFN at channel
    granularity. At least one unit of each kind stays kept per block."""

    keep_heads: list[np.ndarray] = field(default_factory=list)
    keep_ffn: list[np.ndarray] = field(default_factory=list)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def kept_count(n: int, r: float) -> int:
    """Units kept out of n at ratio r: round-half-up with a floor of 1."""
    return max(1, round_half_up((1.0 - r) * n))


def top_k_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean keep-mask of the k highest scores; ties keep the lower index."""
    if not 1 <= k <= scores.shape[0]:
        raise ValueError(f"k={k} out of range for {scores.shape[0]} scores")
    order = np.argsort(-scores, kind="stable")
    mask = np.zeros(scores.shape[0], dtype=bool)
    mask[order[:k]] = True
    return mask


def select_masks(scores: ImportanceScores, target: SparsityTarget) -> PruneMask:
    mask = PruneMask()
    for heads, ffn in zip(scores.heads, scores.ffn):
        mask.keep_heads.append(top_k_mask(heads, kept_count(heads.shape[0], target.r)))
        mask.keep_ffn.append(top_k_mask(ffn, kept_count(ffn.shape[0], target.r)))
    return mask


def expand_head_mask(keep_heads: np.ndarray, head_dim: int) -> np.ndarray:
    """Head-level keeps expanded to X^H channel granularity."""
    return np.repeat(np.asarray(keep_heads, dtype=bool), head_dim)


def identity_mask(model: Model) -> PruneMask:
    head_dim = model.config.head_dim
    return PruneMask(
        keep_heads=[np.ones(w.n_heads(head_dim), dtype=bool) for w in model.blocks],
        keep_ffn=[np.ones(w.ffn_hidden, dtype=bool) for w in model.blocks],
    )


def _validate_mask(model: Model, mask: PruneMask) -> None:
    n_blocks = len(model.blocks)
    if len(mask.keep_heads) != n_blocks or len(mask.keep_ffn) != n_blocks:
        raise ValueError(f"mask must cover all {n_blocks} blocks")
    head_dim = model.config.head_dim
    for l, w in enumerate(model.blocks):
        kh = np.asarray(mask.keep_heads[l], dtype=bool)
        kf = np.asarray(mask.keep_ffn[l], dtype=bool)
        if kh.shape[0] != w.n_heads(head_dim):
            raise ValueError(
                f"block {l}: head mask length {kh.shape[0]} != {w.n_heads(head_dim)} heads")
        if kf.shape[0] != w.ffn_hidden:
            raise ValueError(
                f"block {l}: ffn mask length {kf.shape[0]} != {w.ffn_hidden} channels")
        if not kh.any() or not kf.any():
            raise ValueError(f"block {l}: mask must keep at least one head and one FFN channel")


def apply_prune(model: Model, mask: PruneMask) -> Model:
    """Compacted copy of `model` with dropped heads/channels removed.

    An all-ones mask returns a parameter-identical (bitwise) copy.
    """
    _validate_mask(model, mask)
    head_dim = model.config.head_dim
    blocks = []
    for l, w in enumerate(model.blocks):
        cols = np.flatnonzero(expand_head_mask(mask.keep_heads[l], head_dim))
        chans = np.flatnonzero(np.asarray(mask.keep_ffn[l], dtype=bool))
        blocks.append(BlockWeights(
            wq=np.ascontiguousarray(w.wq[:, cols]),
            wk=np.ascontiguousarray(w.wk[:, cols]),
            wv=np.ascontiguousarray(w.wv[:, cols]),
            wo=np.ascontiguousarray(w.wo[cols, :]),
            wu=np.ascontiguousarray(w.wu[:, chans]),
            wd=np.ascontiguousarray(w.wd[chans, :]),
            wg=None if w.wg is None else np.ascontiguousarray(w.wg[:, chans]),
        ))
    return Model(
        config=replace(model.config),
        embedding=model.embedding.copy(),
        pos=model.pos.copy(),
        blocks=blocks,
        lm_head=model.lm_head.copy(),
    )


def count_prunable(model: Model) -> tuple[int, int, int]:
    """(head_params, ffn_params, other_params) by weight-group membership."""
    head_params = 0
    ffn_params = 0
    for w in model.blocks:
        head_params += w.wq.size + w.wk.size + w.wv.size + w.wo.size
        ffn_params += w.wu.size + w.wd.size + (w.wg.size if w.wg is not None else 0)
    other = model.embedding.size + model.pos.size + model.lm_head.size
    return head_params, ffn_params, other
