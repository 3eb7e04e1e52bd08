from __future__ import annotations

import numpy as np

from .layers import Module, check_finite


def _check_bits(bits: int) -> None:
    if not 1 <= bits <= 16:
        raise ValueError(f"bits must lie in [1, 16], got {bits}")


def uniform_indices(x: np.ndarray, bits: int) -> np.ndarray:
    """Index of the mid-rise level nearest to each entry of ``x`` in [-1, 1]."""
    _check_bits(bits)
    # a NaN would otherwise be cast to an arbitrary valid index
    x = check_finite(np.asarray(x), "quantizer input")
    n = 2**bits
    return np.clip(np.floor((x + 1.0) * (n / 2)), 0, n - 1).astype(np.int64)


def uniform_levels(idx: np.ndarray, bits: int, dtype=np.float64) -> np.ndarray:
    _check_bits(bits)
    step = 2.0 / 2**bits
    return (-1.0 + step / 2 + np.asarray(idx) * step).astype(dtype)


def uniform_quantize(x: np.ndarray, bits: int) -> np.ndarray:
    """Mid-rise uniform quantizer with ``2**bits`` levels on [-1, 1]."""
    return uniform_levels(uniform_indices(x, bits), bits, dtype=np.asarray(x).dtype)


class UniformQuantizerSTE(Module):
    """Quantizes on the way forward and passes gradients straight through."""

    def __init__(self, bits: int = 5):
        _check_bits(bits)
        self.bits = bits
        self.bypass = False

    def describe(self) -> dict:
        return {"type": "UniformQuantizerSTE", "bits": self.bits}

    def forward(self, x, training=False):
        return x if self.bypass else uniform_quantize(x, self.bits)

    def backward(self, grad):
        return grad


def uniform_quantize_ste(codeword: np.ndarray, bits: int) -> np.ndarray:
    return uniform_quantize(codeword, bits)
