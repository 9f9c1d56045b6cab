"""Transformer block forward and the stacked byte-level causal LM.

The block is: multi-head self-attention with a residual, then a
two-layer FFN with a residual. No biases anywhere. An optional prenorm
flag applies gain-free RMS normalization before each sub-module (needed
for training to converge; off by default so the plain block stays the
mathematically analyzed object). An optional gated-FFN flag switches
Eq-style sigma(X'Wu)Wd to (sigma(X'Wg) * (X'Wu))Wd.

Masked mode: head_mask zeroes columns of the concatenated head output
X^H before the Wo product; ffn_mask zeroes columns of the FFN hidden
pre-activation X^U before the activation. All-ones masks run the exact
same code path (multiply by 1.0), so they are bit-identical to no masks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .rng import substream
from .tensor import DTYPE, ACTIVATION_KINDS, activation, softmax_rows

MAX_SEQ = 512
RMS_EPS = 1e-5


@dataclass
class ModelConfig:
    d: int
    n_heads: int
    head_dim: int
    ffn_hidden: int
    n_blocks: int
    vocab: int = 256
    activation: str = "gelu"
    causal: bool = True
    prenorm: bool = False
    gated: bool = False
    max_seq: int = MAX_SEQ

    def validate(self) -> None:
        if self.d != self.n_heads * self.head_dim:
            raise ValueError(f"d={self.d} must equal n_heads*head_dim={self.n_heads}*{self.head_dim}")
        if self.d < 1 or self.head_dim < 1:
            raise ValueError("d and head_dim must both be >= 1")
        if self.n_blocks < 1 or self.ffn_hidden < 1 or self.n_heads < 1:
            raise ValueError("n_blocks, ffn_hidden and n_heads must all be >= 1")
        if self.vocab < 1:
            raise ValueError("vocab must be >= 1")
        if self.activation not in ACTIVATION_KINDS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.max_seq < 1:
            raise ValueError("max_seq must be >= 1")


@dataclass
class BlockWeights:
    """One block's parameters.

    Column/row counts may be narrower than the dense config after
    pruning: wq/wk/wv are d x width, wo is width x d with
    width = kept_heads * head_dim, and wu/wg/wd use the block's own
    kept FFN width.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    wu: np.ndarray
    wd: np.ndarray
    wg: Optional[np.ndarray] = None

    @property
    def width(self) -> int:
        return self.wq.shape[1]

    @property
    def ffn_hidden(self) -> int:
        return self.wu.shape[1]

    def n_heads(self, head_dim: int) -> int:
        if self.width % head_dim != 0:
            raise ValueError(f"head width {self.width} not divisible by head_dim {head_dim}")
        return self.width // head_dim


@dataclass
class Model:
    config: ModelConfig
    embedding: np.ndarray  # vocab x d
    pos: np.ndarray        # max_seq x d
    blocks: list[BlockWeights]
    lm_head: np.ndarray    # d x vocab


@dataclass
class BlockTrace:
    """Intermediate activations of one block forward.

    x_head_out and x_ffn_hidden are stored post-mask so the residual
    identity x_mid == x_head_out @ wo + x_in holds in masked mode too.
    """

    x_in: np.ndarray         # T x d
    x_head_out: np.ndarray   # T x width  (X^H)
    x_mid: np.ndarray        # T x d      (X')
    x_ffn_hidden: np.ndarray  # T x ffn   (X^U, pre-activation)
    x_out: np.ndarray        # T x d


@dataclass
class BlockCache:
    """Everything the trainer's backward pass needs, stacked-rows layout."""

    x_in: np.ndarray
    a: np.ndarray            # attention sub-module input (post-norm if prenorm)
    inv1: Optional[np.ndarray]
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: list              # one T x T matrix per (sequence, head), row-major in (s, h)
    xh: np.ndarray
    x_mid: np.ndarray
    b: np.ndarray            # FFN sub-module input (post-norm if prenorm)
    inv2: Optional[np.ndarray]
    xu: np.ndarray           # pre-activation
    gate_pre: Optional[np.ndarray]
    hidden: np.ndarray       # post-activation, pre-wd
    x_out: np.ndarray


def rms_norm_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gain-free RMS normalization per row; returns (normed, inverse-rms)."""
    ms = np.mean(x * x, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + np.asarray(RMS_EPS, dtype=x.dtype))
    return x * inv, inv


def causal_bias(t: int, dtype) -> np.ndarray:
    """Additive attention bias: 0 on and below the diagonal, -inf above."""
    bias = np.zeros((t, t), dtype=dtype)
    bias[np.triu_indices(t, k=1)] = -np.inf
    return bias


def _mask_vector(mask, length: int, dtype, what: str) -> np.ndarray:
    if mask is None:
        return np.ones(length, dtype=dtype)
    vec = np.asarray(mask)
    if vec.ndim != 1 or vec.shape[0] != length:
        raise ValueError(f"{what} must be a vector of length {length}, got shape {vec.shape}")
    return vec.astype(dtype)


def block_forward_cached(
    x: np.ndarray,
    w: BlockWeights,
    cfg: ModelConfig,
    head_mask=None,
    ffn_mask=None,
    seq_len: Optional[int] = None,
) -> tuple[BlockTrace, BlockCache]:
    """Forward one block on stacked rows.

    `x` holds one or more sequences of `seq_len` rows each (default: all
    rows are one sequence); attention never crosses sequence boundaries.
    """
    if x.ndim != 2 or x.shape[1] != cfg.d:
        raise ValueError(f"block input must be T x {cfg.d}, got {x.shape}")
    rows = x.shape[0]
    t = rows if seq_len is None else seq_len
    if t < 1 or rows % t != 0:
        raise ValueError(f"row count {rows} is not a multiple of seq_len {t}")
    n_seq = rows // t
    head_dim = cfg.head_dim
    n_heads = w.n_heads(head_dim)
    width = w.width
    if w.wo.shape[0] != width or w.wo.shape[1] != cfg.d:
        raise ValueError(f"wo shape {w.wo.shape} inconsistent with width {width} and d {cfg.d}")
    hm = _mask_vector(head_mask, width, x.dtype, "head_mask")
    fm = _mask_vector(ffn_mask, w.ffn_hidden, x.dtype, "ffn_mask")

    if cfg.prenorm:
        a, inv1 = rms_norm_rows(x)
    else:
        a, inv1 = x, None
    q = a @ w.wq
    k = a @ w.wk
    v = a @ w.wv

    scale = np.asarray(1.0 / np.sqrt(cfg.d), dtype=x.dtype)
    bias = causal_bias(t, x.dtype) if cfg.causal else None
    xh = np.empty((rows, width), dtype=x.dtype)
    probs = []
    for s in range(n_seq):
        rs = slice(s * t, (s + 1) * t)
        for h in range(n_heads):
            cs = slice(h * head_dim, (h + 1) * head_dim)
            scores = (q[rs, cs] @ k[rs, cs].T) * scale
            if bias is not None:
                scores = scores + bias
            p = softmax_rows(scores)
            probs.append(p)
            xh[rs, cs] = p @ v[rs, cs]
    xh = xh * hm
    x_mid = xh @ w.wo + x

    if cfg.prenorm:
        b, inv2 = rms_norm_rows(x_mid)
    else:
        b, inv2 = x_mid, None
    xu = (b @ w.wu) * fm
    if cfg.gated:
        if w.wg is None:
            raise ValueError("gated config but block has no wg matrix")
        gate_pre = b @ w.wg
        hidden = activation(cfg.activation, gate_pre) * xu
    else:
        gate_pre = None
        hidden = activation(cfg.activation, xu)
    x_out = hidden @ w.wd + x_mid

    trace = BlockTrace(x_in=x, x_head_out=xh, x_mid=x_mid, x_ffn_hidden=xu, x_out=x_out)
    cache = BlockCache(
        x_in=x, a=a, inv1=inv1, q=q, k=k, v=v, probs=probs, xh=xh,
        x_mid=x_mid, b=b, inv2=inv2, xu=xu, gate_pre=gate_pre,
        hidden=hidden, x_out=x_out,
    )
    return trace, cache


def block_forward(
    x: np.ndarray,
    w: BlockWeights,
    cfg: ModelConfig,
    head_mask=None,
    ffn_mask=None,
    seq_len: Optional[int] = None,
) -> BlockTrace:
    trace, _ = block_forward_cached(x, w, cfg, head_mask, ffn_mask, seq_len)
    return trace


def validate_tokens(tokens, vocab: int, max_seq: int) -> np.ndarray:
    seq = np.asarray(tokens)
    if seq.ndim != 1 or seq.shape[0] < 1:
        raise ValueError(f"token sequence must be non-empty 1-D, got shape {seq.shape}")
    if not np.issubdtype(seq.dtype, np.integer):
        raise ValueError(f"tokens must be integers, got dtype {seq.dtype}")
    if seq.min() < 0 or seq.max() >= vocab:
        raise ValueError(f"token out of range [0, {vocab}): min={seq.min()}, max={seq.max()}")
    if seq.shape[0] > max_seq:
        raise ValueError(f"sequence length {seq.shape[0]} exceeds max position {max_seq}")
    return seq.astype(np.int64)


def model_forward(
    m: Model,
    tokens,
    head_masks: Optional[list] = None,
    ffn_masks: Optional[list] = None,
) -> tuple[np.ndarray, list[BlockTrace]]:
    """Forward one token sequence; returns (logits T x vocab, traces)."""
    cfg = m.config
    seq = validate_tokens(tokens, cfg.vocab, min(cfg.max_seq, m.pos.shape[0]))
    t = seq.shape[0]
    if head_masks is not None and len(head_masks) != cfg.n_blocks:
        raise ValueError(f"head_masks must list one entry per block ({cfg.n_blocks})")
    if ffn_masks is not None and len(ffn_masks) != cfg.n_blocks:
        raise ValueError(f"ffn_masks must list one entry per block ({cfg.n_blocks})")
    x = m.embedding[seq] + m.pos[:t]
    traces = []
    for i, w in enumerate(m.blocks):
        hm = head_masks[i] if head_masks is not None else None
        fm = ffn_masks[i] if ffn_masks is not None else None
        trace = block_forward(x, w, cfg, head_mask=hm, ffn_mask=fm)
        traces.append(trace)
        x = trace.x_out
    logits = x @ m.lm_head
    return logits, traces


def init_model(cfg: ModelConfig, seed: int, init_std: float = 0.02) -> Model:
    """Random N(0, init_std^2) initialization from named sub-streams."""
    cfg.validate()

    def normal(label: str, shape) -> np.ndarray:
        return (substream(seed, label).standard_normal(shape) * init_std).astype(DTYPE)

    blocks = []
    for l in range(cfg.n_blocks):
        wg = normal(f"init-block{l}-wg", (cfg.d, cfg.ffn_hidden)) if cfg.gated else None
        blocks.append(BlockWeights(
            wq=normal(f"init-block{l}-wq", (cfg.d, cfg.d)),
            wk=normal(f"init-block{l}-wk", (cfg.d, cfg.d)),
            wv=normal(f"init-block{l}-wv", (cfg.d, cfg.d)),
            wo=normal(f"init-block{l}-wo", (cfg.d, cfg.d)),
            wu=normal(f"init-block{l}-wu", (cfg.d, cfg.ffn_hidden)),
            wd=normal(f"init-block{l}-wd", (cfg.ffn_hidden, cfg.d)),
            wg=wg,
        ))
    return Model(
        config=cfg,
        embedding=normal("init-embedding", (cfg.vocab, cfg.d)),
        pos=normal("init-pos", (cfg.max_seq, cfg.d)),
        blocks=blocks,
        lm_head=normal("init-lm-head", (cfg.d, cfg.vocab)),
    )


def random_block_weights(cfg: ModelConfig, rng: np.random.Generator, std: float = 0.5) -> BlockWeights:
    """Standalone random block (bound checks, oracle trials)."""
    def normal(shape):
        return (rng.standard_normal(shape) * std).astype(DTYPE)

    return BlockWeights(
        wq=normal((cfg.d, cfg.d)),
        wk=normal((cfg.d, cfg.d)),
        wv=normal((cfg.d, cfg.d)),
        wo=normal((cfg.d, cfg.d)),
        wu=normal((cfg.d, cfg.ffn_hidden)),
        wd=normal((cfg.ffn_hidden, cfg.d)),
        wg=normal((cfg.d, cfg.ffn_hidden)) if cfg.gated else None,
    )


def named_parameters(m: Model) -> list[tuple[str, np.ndarray]]:
    """Canonical (name, array) list; the order fixes accumulation order
    for the optimizer, gradient clipping and serialization."""
    params: list[tuple[str, np.ndarray]] = [("embedding", m.embedding), ("pos", m.pos)]
    for l, w in enumerate(m.blocks):
        params.append((f"blocks.{l}.wq", w.wq))
        params.append((f"blocks.{l}.wk", w.wk))
        params.append((f"blocks.{l}.wv", w.wv))
        params.append((f"blocks.{l}.wo", w.wo))
        params.append((f"blocks.{l}.wu", w.wu))
        if w.wg is not None:
            params.append((f"blocks.{l}.wg", w.wg))
        params.append((f"blocks.{l}.wd", w.wd))
    params.append(("lm_head", m.lm_head))
    return params


_BLOCK_FIELDS = ("wq", "wk", "wv", "wo", "wu", "wg", "wd")


def set_parameter(m: Model, name: str, value: np.ndarray) -> None:
    if name == "embedding":
        m.embedding = value
    elif name == "pos":
        m.pos = value
    elif name == "lm_head":
        m.lm_head = value
    elif name.startswith("blocks."):
        _, idx, field_name = name.split(".")
        if field_name not in _BLOCK_FIELDS or int(idx) >= len(m.blocks):
            raise ValueError(f"unknown parameter {name!r}")
        setattr(m.blocks[int(idx)], field_name, value)
    else:
        raise ValueError(f"unknown parameter {name!r}")


def copy_model(m: Model) -> Model:
    blocks = [BlockWeights(
        wq=w.wq.copy(), wk=w.wk.copy(), wv=w.wv.copy(), wo=w.wo.copy(),
        wu=w.wu.copy(), wd=w.wd.copy(), wg=None if w.wg is None else w.wg.copy(),
    ) for w in m.blocks]
    return Model(
        config=replace(m.config),
        embedding=m.embedding.copy(),
        pos=m.pos.copy(),
        blocks=blocks,
        lm_head=m.lm_head.copy(),
    )
