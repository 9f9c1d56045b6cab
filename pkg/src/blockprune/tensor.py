"""Dense single-precision matrix helpers and activation functions.

Matrices are plain 2-D float32 numpy arrays, row-major. Everything here
is a pure function; batch is always handled as stacked rows, never as a
third axis.
"""

from __future__ import annotations

import math

import numpy as np

DTYPE = np.float32

# Max |slope| of each activation, used as the Lipschitz constant C_sigma
# in the bound math. ReLU is exact; the GeLU (tanh form) and SiLU values
# come from the checked-in numerical sweep (scripts/lipschitz_sweep.py),
# rounded up at the sixth decimal so they remain valid upper bounds.
RELU_LIPSCHITZ = 1.0
GELU_TANH_LIPSCHITZ = 1.128994
SILU_LIPSCHITZ = 1.099840

ACTIVATION_KINDS = ("relu", "gelu", "silu")

_LIPSCHITZ = {
    "relu": RELU_LIPSCHITZ,
    "gelu": GELU_TANH_LIPSCHITZ,
    "silu": SILU_LIPSCHITZ,
}

_GELU_C = math.sqrt(2.0 / math.pi)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate/coerce `a` to a 2-D float32 array."""
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-D inputs, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift; tolerates -inf entries as long as
    each row keeps at least one finite value."""
    shifted = m - np.max(m, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def abs_col_mean(m: np.ndarray) -> np.ndarray:
    """Column means of |m|, the per-channel calibration statistic."""
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError(f"abs_col_mean needs a non-empty 2-D matrix, got {m.shape}")
    return np.mean(np.abs(m), axis=0, dtype=np.float64).astype(m.dtype)


def row_l1_sums(m: np.ndarray) -> np.ndarray:
    """Per-row L1 norms, the weight-side scalarization."""
    return np.sum(np.abs(m), axis=1, dtype=np.float64).astype(m.dtype)


def lipschitz_constant(kind: str) -> float:
    try:
        return _LIPSCHITZ[kind]
    except KeyError:
        raise ValueError(f"unsupported activation {kind!r}, expected one of {ACTIVATION_KINDS}") from None


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    """Elementwise activation; every supported kind maps 0 to 0."""
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "gelu":
        # tanh approximation
        x3 = x * x * x
        return 0.5 * x * (1.0 + np.tanh(np.asarray(_GELU_C, dtype=x.dtype) * (x + np.asarray(0.044715, dtype=x.dtype) * x3)))
    if kind == "silu":
        return x * _sigmoid(x)
    raise ValueError(f"unsupported activation {kind!r}, expected one of {ACTIVATION_KINDS}")


def activation_grad(kind: str, x: np.ndarray) -> np.ndarray:
    """Elementwise derivative, used by the trainer's backward pass."""
    if kind == "relu":
        return (x > 0).astype(x.dtype)
    if kind == "gelu":
        c = np.asarray(_GELU_C, dtype=x.dtype)
        k = np.asarray(0.044715, dtype=x.dtype)
        u = c * (x + k * x * x * x)
        t = np.tanh(u)
        du = c * (1.0 + 3.0 * k * x * x)
        return np.asarray(0.5, dtype=x.dtype) * (1.0 + t) + np.asarray(0.5, dtype=x.dtype) * x * (1.0 - t * t) * du
    if kind == "silu":
        s = _sigmoid(x)
        return s * (1.0 + x * (1.0 - s))
    raise ValueError(f"unsupported activation {kind!r}, expected one of {ACTIVATION_KINDS}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
