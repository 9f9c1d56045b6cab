"""Adam trainer for the toy byte-level LM.

Gradients are hand-written reverse mode through the exact forward used
everywhere else (block_forward_cached). Batches are stacked rows: a
(B, T) token batch becomes a (B*T, d) activation matrix and attention is
applied per sequence slice, so no tensor ever grows a third axis.

loss_and_grads accepts a dtype so the finite-difference oracle can run
the identical computation in float64.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .calib import Corpus, tokenize
from .model import (BlockCache, BlockWeights, Model, block_forward_cached,
                    copy_model, named_parameters, set_parameter)
from .rng import substream
from .tensor import DTYPE, activation, activation_grad


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    seq_len: int = 64
    learning_rate: float = 1.5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grad_clip: float = 1.0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        # learning_rate 0 is allowed as an explicit null update
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be > 0")


def _as_batch(batch) -> np.ndarray:
    arr = np.asarray(batch)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"batch must be one or more equal-length sequences, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"batch tokens must be integers, got {arr.dtype}")
    return arr.astype(np.int64)


def cast_model(m: Model, dtype) -> Model:
    """Copy with every parameter cast to dtype (no-op when it already is)."""
    if m.embedding.dtype == dtype:
        return m
    out = copy_model(m)
    for name, p in named_parameters(out):
        set_parameter(out, name, p.astype(dtype))
    return out


def loss_and_grads(model: Model, batch, dtype=DTYPE) -> tuple[float, dict[str, np.ndarray]]:
    """Mean next-token cross-entropy over the batch and reverse-mode
    gradients for every parameter (keys match named_parameters)."""
    cfg = model.config
    if not cfg.causal:
        raise ValueError("training requires a causal model")
    tokens = _as_batch(batch)
    b, t = tokens.shape
    if t < 2:
        raise ValueError("sequences must have at least 2 tokens for next-token loss")
    if t > min(cfg.max_seq, model.pos.shape[0]):
        raise ValueError(f"sequence length {t} exceeds max position")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise ValueError("token out of range")

    m = cast_model(model, dtype)
    flat = tokens.reshape(-1)
    pos_idx = np.tile(np.arange(t), b)
    x = m.embedding[flat] + m.pos[pos_idx]

    caches: list[BlockCache] = []
    for w in m.blocks:
        _, cache = block_forward_cached(x, w, cfg, seq_len=t)
        caches.append(cache)
        x = cache.x_out
    logits = x @ m.lm_head

    # next-token loss: rows at position t-1 of each sequence predict nothing
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    sums = exps.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sums)
    valid = pos_idx != (t - 1)
    targets = np.empty(b * t, dtype=np.int64)
    targets[valid] = flat[np.flatnonzero(valid) + 1]
    n_pred = b * (t - 1)
    loss = -float(np.sum(log_probs[valid, targets[valid]])) / n_pred

    d_logits = exps / sums
    d_logits[valid, targets[valid]] -= 1.0
    d_logits[~valid] = 0.0
    d_logits /= np.asarray(n_pred, dtype=dtype)

    grads: dict[str, np.ndarray] = {}
    grads["lm_head"] = x.T @ d_logits
    d_x = d_logits @ m.lm_head.T
    for l in range(len(m.blocks) - 1, -1, -1):
        d_x, g = _block_backward(caches[l], m.blocks[l], cfg, d_x, t)
        for k, v in g.items():
            grads[f"blocks.{l}.{k}"] = v
    d_emb = np.zeros_like(m.embedding)
    np.add.at(d_emb, flat, d_x)
    d_pos = np.zeros_like(m.pos)
    np.add.at(d_pos, pos_idx, d_x)
    grads["embedding"] = d_emb
    grads["pos"] = d_pos
    return loss, grads


def _rms_backward(d_a: np.ndarray, x: np.ndarray, inv: np.ndarray) -> np.ndarray:
    dot = np.sum(d_a * x, axis=1, keepdims=True)
    return d_a * inv - x * (inv * inv * inv) * (dot / x.shape[1])


def _block_backward(cache: BlockCache, w: BlockWeights, cfg, d_out: np.ndarray,
                    t: int) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    rows = d_out.shape[0]
    n_seq = rows // t
    head_dim = cfg.head_dim
    n_heads = w.n_heads(head_dim)
    g: dict[str, np.ndarray] = {}

    # FFN sub-module
    d_hidden = d_out @ w.wd.T
    g["wd"] = cache.hidden.T @ d_out
    d_x_mid = d_out.copy()
    if cfg.gated:
        act_gate = activation(cfg.activation, cache.gate_pre)
        d_gate_pre = d_hidden * cache.xu * activation_grad(cfg.activation, cache.gate_pre)
        d_xu = d_hidden * act_gate
        g["wg"] = cache.b.T @ d_gate_pre
        d_b = d_xu @ w.wu.T + d_gate_pre @ w.wg.T
    else:
        d_xu = d_hidden * activation_grad(cfg.activation, cache.xu)
        d_b = d_xu @ w.wu.T
    g["wu"] = cache.b.T @ d_xu
    if cfg.prenorm:
        d_x_mid += _rms_backward(d_b, cache.x_mid, cache.inv2)
    else:
        d_x_mid += d_b

    # attention sub-module
    d_xh = d_x_mid @ w.wo.T
    g["wo"] = cache.xh.T @ d_x_mid
    d_x_in = d_x_mid.copy()
    d_q = np.empty_like(cache.q)
    d_k = np.empty_like(cache.k)
    d_v = np.empty_like(cache.v)
    scale = np.asarray(1.0 / math.sqrt(cfg.d), dtype=d_out.dtype)
    for s in range(n_seq):
        rs = slice(s * t, (s + 1) * t)
        for h in range(n_heads):
            cs = slice(h * head_dim, (h + 1) * head_dim)
            p = cache.probs[s * n_heads + h]
            d_o = d_xh[rs, cs]
            d_p = d_o @ cache.v[rs, cs].T
            d_v[rs, cs] = p.T @ d_o
            d_s = (p * (d_p - np.sum(d_p * p, axis=1, keepdims=True))) * scale
            d_q[rs, cs] = d_s @ cache.k[rs, cs]
            d_k[rs, cs] = d_s.T @ cache.q[rs, cs]
    g["wq"] = cache.a.T @ d_q
    g["wk"] = cache.a.T @ d_k
    g["wv"] = cache.a.T @ d_v
    d_a = d_q @ w.wq.T + d_k @ w.wk.T + d_v @ w.wv.T
    if cfg.prenorm:
        d_x_in += _rms_backward(d_a, cache.x_in, cache.inv1)
    else:
        d_x_in += d_a
    return d_x_in, g


def global_grad_norm(grads: dict[str, np.ndarray], order: list[str]) -> float:
    total = 0.0
    for name in order:
        g = grads[name]
        total += float(np.sum(g.astype(np.float64) ** 2))
    return math.sqrt(total)


def train(model: Model, corpus: Corpus, cfg: TrainConfig, log_path=None) -> Model:
    """Adam with bias correction and global-norm clipping. Returns a new
    trained model; same seed and corpus give a bitwise-identical result."""
    tokens = tokenize(corpus)
    window = cfg.seq_len + 1
    if tokens.shape[0] < window:
        raise ValueError(
            f"corpus {corpus.name!r} has {tokens.shape[0]} bytes, needs >= {window} for one batch")

    m = copy_model(model)
    names = [n for n, _ in named_parameters(m)]
    params = {n: p for n, p in named_parameters(m)}
    m1 = {n: np.zeros_like(p) for n, p in params.items()}
    m2 = {n: np.zeros_like(p) for n, p in params.items()}
    lr = np.asarray(cfg.learning_rate, dtype=DTYPE)
    b1 = np.asarray(cfg.adam_beta1, dtype=DTYPE)
    b2 = np.asarray(cfg.adam_beta2, dtype=DTYPE)
    one_minus_b1 = np.asarray(1.0 - cfg.adam_beta1, dtype=DTYPE)
    one_minus_b2 = np.asarray(1.0 - cfg.adam_beta2, dtype=DTYPE)
    eps = np.asarray(cfg.adam_eps, dtype=DTYPE)

    rng = substream(cfg.seed, "train-batches")
    log_rows = []
    for step in range(1, cfg.steps + 1):
        offsets = rng.integers(0, tokens.shape[0] - window + 1, size=cfg.batch_size)
        batch = np.stack([tokens[o:o + window] for o in offsets])
        loss, grads = loss_and_grads(m, batch)
        if not math.isfinite(loss):
            raise RuntimeError(f"training diverged at step {step}: loss is not finite")
        norm = global_grad_norm(grads, names)
        coef = cfg.grad_clip / (norm + 1e-6)
        if coef < 1.0:
            c32 = np.asarray(coef, dtype=DTYPE)
            for n in names:
                grads[n] = grads[n] * c32
        bc1 = np.asarray(1.0 - cfg.adam_beta1 ** step, dtype=DTYPE)
        bc2 = np.asarray(1.0 - cfg.adam_beta2 ** step, dtype=DTYPE)
        for n in names:
            g = grads[n]
            m1[n] = b1 * m1[n] + one_minus_b1 * g
            m2[n] = b2 * m2[n] + one_minus_b2 * (g * g)
            update = (m1[n] / bc1) / (np.sqrt(m2[n] / bc2) + eps)
            params[n] = (params[n] - lr * update).astype(DTYPE)
            set_parameter(m, n, params[n])
        log_rows.append((step, loss, norm))

    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["step", "loss", "grad_norm"])
            for row in log_rows:
                writer.writerow([row[0], repr(row[1]), repr(row[2])])
    return m
