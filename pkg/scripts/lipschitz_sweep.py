"""Numerical slope sweep for the activation Lipschitz constants.

The bound math needs a scalar C_sigma per activation with
|sigma(a) - sigma(b)| <= C_sigma * |a - b|.  ReLU has slope 1 exactly;
for GeLU (tanh form) and SiLU the maximum slope is found numerically.

This script measures the max |derivative| over x in [-10, 10] with step
1e-4 (central differences) and prints the values that are embedded as
named constants in blockprune.tensor.  Rerun it if the activation
definitions ever change; the embedded constants are rounded UP at the
sixth decimal so they stay valid upper bounds of the measured slope.
"""

import math

import numpy as np


def gelu_tanh(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


def silu(x):
    return x / (1.0 + np.exp(-x))


def max_slope(fn, lo=-10.0, hi=10.0, step=1e-4):
    x = np.arange(lo, hi + step, step, dtype=np.float64)
    h = 1e-6
    deriv = (fn(x + h) - fn(x - h)) / (2.0 * h)
    i = int(np.argmax(np.abs(deriv)))
    return float(np.abs(deriv[i])), float(x[i])


def round_up(v, decimals=6):
    f = 10.0**decimals
    return math.ceil(v * f) / f


def main():
    for name, fn in [("gelu(tanh)", gelu_tanh), ("silu", silu)]:
        slope, at = max_slope(fn)
        print(f"{name}: max |f'(x)| = {slope:.9f} at x = {at:.4f}"
              f" -> embed {round_up(slope):.6f}")
    print("relu: max |f'(x)| = 1.0 exactly -> embed 1.0")


if __name__ == "__main__":
    main()
