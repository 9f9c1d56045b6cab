"""Evaluation: bound verification, reconstruction error, exhaustive mask
oracle, perplexity/KL quality and parameter/MAC accounting.

The two bound lines being verified numerically, elementwise over T x d:

  FFN side:  |f(X) - f(X, s_F)| <= C_sigma ((1-s_F) * |X^U|) |wd|
  MSA side:  |f(X) - f(X, s_H)| <= C ((1-s_H) * |X^H|) |wo| (|wu||wd| + I)

with C = max(C_sigma, 1) and the MSA mask applied to X^H only. When both
masks are active the right-hand sides add (triangle inequality, with
X^U/X^H taken from the dense forward).
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calib import ActivationStats, Corpus, tokenize
from .model import (Model, ModelConfig, BlockWeights, block_forward,
                    model_forward, named_parameters, random_block_weights)
from .prune import PruneMask, expand_head_mask, kept_count, top_k_mask
from .rng import substream
from .tensor import DTYPE, lipschitz_constant
from .score import score_ffn_channels

BOUND_TOLERANCE = 1e-5


def _channel_masks(model: Model, mask: PruneMask) -> tuple[list, list]:
    head_dim = model.config.head_dim
    hms, fms = [], []
    for l, w in enumerate(model.blocks):
        kh = np.asarray(mask.keep_heads[l], dtype=bool)
        kf = np.asarray(mask.keep_ffn[l], dtype=bool)
        if kh.shape[0] != w.n_heads(head_dim) or kf.shape[0] != w.ffn_hidden:
            raise ValueError(f"mask shapes do not match block {l}")
        hms.append(expand_head_mask(kh, head_dim))
        fms.append(kf)
    return hms, fms


def recon_errors_all_blocks(dense: Model, mask: PruneMask, batch: list) -> list[float]:
    """Mean |dense - masked| block output per block index, masks applied
    cumulatively from block 0 (the masked forward runs every block masked)."""
    if len(batch) == 0:
        raise ValueError("recon error needs a non-empty batch")
    hms, fms = _channel_masks(dense, mask)
    n_blocks = len(dense.blocks)
    total = np.zeros(n_blocks, dtype=np.float64)
    count = 0
    for seq in batch:
        _, traces_d = model_forward(dense, seq)
        _, traces_m = model_forward(dense, seq, head_masks=hms, ffn_masks=fms)
        for l in range(n_blocks):
            diff = np.abs(traces_d[l].x_out.astype(np.float64) - traces_m[l].x_out.astype(np.float64))
            total[l] += diff.sum()
        count += traces_d[0].x_out.size
    return [float(t / count) for t in total]


def block_recon_error(dense: Model, pruned_mask: PruneMask, batch: list, upto_block: int) -> float:
    if not 0 <= upto_block < len(dense.blocks):
        raise ValueError(f"block index {upto_block} out of range [0, {len(dense.blocks)})")
    return recon_errors_all_blocks(dense, pruned_mask, batch)[upto_block]


def verify_bound(w: BlockWeights, cfg: ModelConfig, x: np.ndarray,
                 ffn_mask=None, head_mask=None) -> tuple[float, float]:
    """Elementwise bound check on one block; returns (max(LHS - RHS),
    min(RHS - LHS)). The first must stay <= tolerance * max(RHS)."""
    if cfg.prenorm:
        raise ValueError("bound verification requires prenorm off")
    if cfg.gated:
        raise ValueError("bound verification covers the ungated FFN only")
    c_sigma = lipschitz_constant(cfg.activation)
    c = max(c_sigma, 1.0)

    dense = block_forward(x, w, cfg)
    masked = block_forward(x, w, cfg, head_mask=head_mask, ffn_mask=ffn_mask)
    lhs = np.abs(dense.x_out - masked.x_out)

    rhs = np.zeros_like(lhs)
    if ffn_mask is not None:
        fm = np.asarray(ffn_mask, dtype=x.dtype)
        dropped = (1.0 - fm) * np.abs(dense.x_ffn_hidden)
        rhs = rhs + np.asarray(c_sigma, dtype=x.dtype) * (dropped @ np.abs(w.wd))
    if head_mask is not None:
        hm = np.asarray(head_mask, dtype=x.dtype)
        a = ((1.0 - hm) * np.abs(dense.x_head_out)) @ np.abs(w.wo)
        rhs = rhs + np.asarray(c, dtype=x.dtype) * ((a @ np.abs(w.wu)) @ np.abs(w.wd) + a)
    return float(np.max(lhs - rhs)), float(np.min(rhs - lhs))


def brute_force_mask(w: BlockWeights, cfg: ModelConfig, x: np.ndarray,
                     keep: int, side: str) -> tuple[np.ndarray, list[float]]:
    """Exhaustively scores every keep-mask with `keep` kept units on the
    true mean-|difference| block error; lexicographic enumeration order."""
    if side == "ffn":
        n = w.ffn_hidden
    elif side == "heads":
        n = w.n_heads(cfg.head_dim)
    else:
        raise ValueError(f"side must be 'ffn' or 'heads', got {side!r}")
    if not 1 <= keep <= n:
        raise ValueError(f"keep={keep} out of range [1, {n}]")
    count = math.comb(n, keep)
    if count > 10**6:
        raise ValueError(f"C({n},{keep}) = {count} masks exceeds the 1e6 guard")

    dense_out = block_forward(x, w, cfg).x_out.astype(np.float64)
    denom = dense_out.size
    errors: list[float] = []
    best_idx, best_err = 0, math.inf
    for idx, combo in enumerate(itertools.combinations(range(n), keep)):
        mask = np.zeros(n, dtype=bool)
        mask[list(combo)] = True
        if side == "ffn":
            trace = block_forward(x, w, cfg, ffn_mask=mask)
        else:
            trace = block_forward(x, w, cfg, head_mask=expand_head_mask(mask, cfg.head_dim))
        err = float(np.abs(dense_out - trace.x_out.astype(np.float64)).sum() / denom)
        errors.append(err)
        if err < best_err:
            best_idx, best_err = idx, err
    best_combo = list(itertools.islice(itertools.combinations(range(n), keep), best_idx, best_idx + 1))[0]
    best_mask = np.zeros(n, dtype=bool)
    best_mask[list(best_combo)] = True
    return best_mask, errors


def perplexity(model: Model, corpus: Corpus, seq_len: int) -> float:
    """exp(mean next-token NLL) over non-overlapping windows of seq_len+1
    bytes (seq_len predictions each); the final partial window is dropped."""
    tokens = tokenize(corpus)
    window = seq_len + 1
    if tokens.shape[0] < window:
        raise ValueError(
            f"corpus {corpus.name!r} has {tokens.shape[0]} bytes, needs >= {window}")
    n_windows = tokens.shape[0] // window
    total_nll = 0.0
    for i in range(n_windows):
        seq = tokens[i * window:(i + 1) * window]
        logits, _ = model_forward(model, seq[:-1])
        total_nll += _nll_sum(logits, seq[1:])
    return float(np.exp(total_nll / (n_windows * seq_len)))


def _nll_sum(logits: np.ndarray, targets: np.ndarray) -> float:
    l = logits.astype(np.float64)
    m = l.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(l - m), axis=1))
    return float(np.sum(lse - l[np.arange(l.shape[0]), targets]))


def kl_to_dense(dense: Model, pruned: Model, batch: list) -> float:
    """Mean over tokens of KL(dense softmax || pruned softmax)."""
    if dense.config.vocab != pruned.config.vocab:
        raise ValueError("models must share a vocabulary")
    if len(batch) == 0:
        raise ValueError("kl_to_dense needs a non-empty batch")
    total, rows = 0.0, 0
    for seq in batch:
        ld, _ = model_forward(dense, seq)
        lp, _ = model_forward(pruned, seq)
        logp = _log_softmax64(ld)
        logq = _log_softmax64(lp)
        p = np.exp(logp)
        total += float(np.sum(p * (logp - logq)))
        rows += ld.shape[0]
    return total / rows


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    l = logits.astype(np.float64)
    m = l.max(axis=1, keepdims=True)
    return l - (m + np.log(np.sum(np.exp(l - m), axis=1, keepdims=True)))


def count_params(model: Model) -> int:
    return sum(p.size for _, p in named_parameters(model))


def count_macs(model: Model, seq_len: int) -> int:
    """Multiply-accumulates for one forward of seq_len tokens: T*(in*out)
    per linear map, plus attention scores and attention-times-values at
    T^2 * width each per block. Causal halving is not applied."""
    t = seq_len
    cfg = model.config
    total = 0
    for w in model.blocks:
        width, ffn = w.width, w.ffn_hidden
        total += t * (3 * cfg.d * width + width * cfg.d)            # q, k, v, o
        total += 2 * t * t * width                                  # scores, values
        total += t * (cfg.d * ffn + ffn * cfg.d)                    # up, down
        if w.wg is not None:
            total += t * cfg.d * ffn                                # gate
    total += t * cfg.d * cfg.vocab                                  # lm head
    return total


@dataclass
class EvalReport:
    method: str
    ratio: float
    recon_error: list[float] = field(default_factory=list)
    bound_slack_min: list[float] = field(default_factory=list)
    ppl_dense: float = math.nan
    ppl_pruned: float = math.nan
    kl_mean: float = math.nan
    params_dense: int = 0
    params_pruned: int = 0
    macs_dense: int = 0
    macs_pruned: int = 0


def evaluate_pruning(dense: Model, pruned: Model, mask: PruneMask, corpus: Corpus,
                     batch: list, seq_len: int, method: str = "", ratio: float = 0.0) -> EvalReport:
    """Full report for one (method, ratio) pruning of `dense`."""
    report = EvalReport(method=method, ratio=ratio)
    report.recon_error = recon_errors_all_blocks(dense, mask, batch)
    report.bound_slack_min = bound_slacks(dense, mask, batch)
    report.ppl_dense = perplexity(dense, corpus, seq_len)
    report.ppl_pruned = perplexity(pruned, corpus, seq_len)
    report.kl_mean = kl_to_dense(dense, pruned, batch)
    report.params_dense = count_params(dense)
    report.params_pruned = count_params(pruned)
    report.macs_dense = count_macs(dense, seq_len)
    report.macs_pruned = count_macs(pruned, seq_len)
    return report


def bound_slacks(dense: Model, mask: PruneMask, batch: list) -> list[float]:
    """Per-block min bound slack under the mask; NaN when the bound does
    not apply to this configuration (prenorm or gated)."""
    cfg = dense.config
    if cfg.prenorm or cfg.gated:
        return [math.nan] * len(dense.blocks)
    hms, fms = _channel_masks(dense, mask)
    slacks = [math.inf] * len(dense.blocks)
    for seq in batch:
        _, traces = model_forward(dense, seq)
        for l, w in enumerate(dense.blocks):
            _, slack = verify_bound(w, cfg, traces[l].x_in, ffn_mask=fms[l], head_mask=hms[l])
            slacks[l] = min(slacks[l], slack)
    return slacks


# ---------------------------------------------------------------------------
# seeded trial harnesses (bound-check and oracle commands)

@dataclass
class BoundCheckResult:
    activation: str
    trials: int
    max_violation_rel: float    # max over trials of violation / max(RHS)
    min_slack: float
    tolerance: float = BOUND_TOLERANCE

    @property
    def ok(self) -> bool:
        return self.max_violation_rel <= self.tolerance


def bound_check_trials(activation: str, trials: int, seed: int, t: int = 8,
                       d: int = 16, ffn_hidden: int = 32,
                       ratios: tuple = (0.25, 0.5), threads: int = 1,
                       weight_std: float = 0.5) -> BoundCheckResult:
    """Random (weights, input, masks) triples; checks LHS <= RHS elementwise."""
    cfg = ModelConfig(d=d, n_heads=2, head_dim=d // 2, ffn_hidden=ffn_hidden,
                      n_blocks=1, activation=activation, causal=False)
    cfg.validate()

    def one_trial_full(i: int) -> tuple[float, float, float]:
        rng = substream(seed, f"bound-{activation}-trial{i}")
        w = random_block_weights(cfg, rng, std=weight_std)
        x = rng.standard_normal((t, d)).astype(DTYPE)
        r = ratios[i % len(ratios)]
        fm = _random_keep_mask(rng, ffn_hidden, kept_count(ffn_hidden, r))
        hm = _random_keep_mask(rng, d, kept_count(d, r))
        violation, slack = verify_bound(w, cfg, x, ffn_mask=fm, head_mask=hm)
        rhs_max = _rhs_max(w, cfg, x, fm, hm)
        return violation, slack, rhs_max

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_trial_full, range(trials)))
    else:
        results = [one_trial_full(i) for i in range(trials)]

    max_rel = -math.inf
    min_slack = math.inf
    for violation, slack, rhs_max in results:
        max_rel = max(max_rel, violation / max(rhs_max, 1e-30))
        min_slack = min(min_slack, slack)
    return BoundCheckResult(activation=activation, trials=trials,
                            max_violation_rel=max_rel, min_slack=min_slack)


def _rhs_max(w, cfg, x, fm, hm) -> float:
    c_sigma = lipschitz_constant(cfg.activation)
    c = max(c_sigma, 1.0)
    dense = block_forward(x, w, cfg)
    rhs = np.zeros_like(dense.x_out)
    dropped = (1.0 - np.asarray(fm, dtype=x.dtype)) * np.abs(dense.x_ffn_hidden)
    rhs = rhs + np.asarray(c_sigma, dtype=x.dtype) * (dropped @ np.abs(w.wd))
    a = ((1.0 - np.asarray(hm, dtype=x.dtype)) * np.abs(dense.x_head_out)) @ np.abs(w.wo)
    rhs = rhs + np.asarray(c, dtype=x.dtype) * ((a @ np.abs(w.wu)) @ np.abs(w.wd) + a)
    return float(np.max(rhs))


def _random_keep_mask(rng: np.random.Generator, n: int, keep: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[:keep]] = True
    return mask


@dataclass
class OracleResult:
    trials: int
    n_masks: int
    frac_within_best_20pct: float
    frac_better_than_median: float

    @property
    def ok(self) -> bool:
        return self.frac_within_best_20pct >= 0.90


def oracle_trials(ffn_size: int = 12, keep: int = 6, trials: int = 50, seed: int = 0,
                  d: int = 16, tokens: int = 64, activation: str = "gelu",
                  threads: int = 1) -> OracleResult:
    """Compares the FFN score's top-k mask against the exhaustive oracle
    on seeded random blocks (one-shot: stats and errors share the input)."""
    cfg = ModelConfig(d=d, n_heads=2, head_dim=d // 2, ffn_hidden=ffn_size,
                      n_blocks=1, activation=activation, causal=False)
    cfg.validate()

    def one_trial(i: int) -> tuple[bool, bool]:
        rng = substream(seed, f"oracle-trial{i}")
        w = random_block_weights(cfg, rng, std=0.5)
        x = rng.standard_normal((tokens, d)).astype(DTYPE)
        trace = block_forward(x, w, cfg)
        stats = ActivationStats(
            mean_abs_xh=[np.mean(np.abs(trace.x_head_out), axis=0).astype(DTYPE)],
            mean_abs_xu=[np.mean(np.abs(trace.x_ffn_hidden), axis=0).astype(DTYPE)],
            token_count=tokens)
        scores = score_ffn_channels(stats, w, 0)
        chosen = top_k_mask(scores, keep)
        _, errors = brute_force_mask(w, cfg, x, keep, side="ffn")
        chosen_err = _mask_error(w, cfg, x, chosen)
        arr = np.asarray(errors)
        n_better = int(np.sum(arr < chosen_err))
        within = n_better <= 0.20 * arr.shape[0]
        better_med = chosen_err < float(np.median(arr))
        return within, better_med

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_trial, range(trials)))
    else:
        results = [one_trial(i) for i in range(trials)]
    n_within = sum(1 for a, _ in results if a)
    n_better = sum(1 for _, b in results if b)
    return OracleResult(trials=trials, n_masks=math.comb(ffn_size, keep),
                        frac_within_best_20pct=n_within / trials,
                        frac_better_than_median=n_better / trials)


def _mask_error(w, cfg, x, ffn_mask) -> float:
    dense = block_forward(x, w, cfg).x_out.astype(np.float64)
    masked = block_forward(x, w, cfg, ffn_mask=ffn_mask).x_out.astype(np.float64)
    return float(np.abs(dense - masked).sum() / dense.size)
