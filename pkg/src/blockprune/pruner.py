"""Estimator-style front-end over the functional pipeline.

BlockPruner follows the fit/transform convention: fit() runs calibration
and scoring against a reference model and freezes the keep-masks;
transform() applies the surgery to a model of the same architecture.
"""

from __future__ import annotations

from .calib import CalibSpec, Corpus, collect_stats, sample_calibration
from .model import Model
from .prune import SparsityTarget, apply_prune, select_masks
from .score import METHODS, compute_scores


class NotFittedError(RuntimeError):
    pass


_PARAM_NAMES = ("method", "ratio", "n_samples", "seq_len", "seed", "include_constant_c")


class BlockPruner:
    """One-shot structured pruner.

    Parameters mirror the CLI: method (bip/wanda/magnitude/random/nisp),
    sparsity ratio, calibration window count/length, seed. Fitted
    attributes: stats_, scores_, mask_.
    """

    def __init__(self, method: str = "bip", ratio: float = 0.2, n_samples: int = 128,
                 seq_len: int = 128, seed: int = 0, include_constant_c: bool = False):
        self.method = method
        self.ratio = ratio
        self.n_samples = n_samples
        self.seq_len = seq_len
        self.seed = seed
        self.include_constant_c = include_constant_c

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def set_params(self, **params) -> "BlockPruner":
        for name, value in params.items():
            if name not in _PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r} for BlockPruner")
            setattr(self, name, value)
        return self

    def fit(self, model: Model, data=None) -> "BlockPruner":
        """data: a Corpus to sample calibration windows from, a list of
        token sequences, or None for stats-free methods."""
        if not isinstance(model, Model):
            raise TypeError(f"fit expects a Model, got {type(model).__name__}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        target = SparsityTarget(self.ratio)  # validates the ratio
        batches = None
        if isinstance(data, Corpus):
            spec = CalibSpec(n_samples=self.n_samples, seq_len=self.seq_len, seed=self.seed)
            batches = sample_calibration(data, spec)
        elif data is not None:
            batches = list(data)
        if batches is not None:
            self.stats_ = collect_stats(model, batches)
        else:
            if self.method in ("bip", "wanda"):
                raise ValueError(f"method {self.method!r} needs calibration data")
            self.stats_ = None
        self.scores_ = compute_scores(model, self.method, stats=self.stats_,
                                      seed=self.seed,
                                      include_constant_c=self.include_constant_c)
        self.mask_ = select_masks(self.scores_, target)
        return self

    def transform(self, model: Model) -> Model:
        if not hasattr(self, "mask_"):
            raise NotFittedError("this BlockPruner is not fitted yet; call fit first")
        return apply_prune(model, self.mask_)

    def fit_transform(self, model: Model, data=None) -> Model:
        return self.fit(model, data).transform(model)
