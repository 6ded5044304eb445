"""Radix-2 Cooley-Tukey FFT over the last axis, vectorised over leading axes.

Forward transforms are unnormalised; inverse transforms carry the 1/n factor.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    tw = np.exp(sign * 2j * np.pi * np.arange(size // 2) / size)
    tw.setflags(write=False)
    return tw


def _fft_last(x: np.ndarray, inverse: bool) -> np.ndarray:
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    out = np.asarray(x, dtype=np.complex128)[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        blocks = out.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(size, inverse)
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2
    if inverse:
        out = out / n
    return out


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.moveaxis(np.asarray(x), axis, -1)
    return np.moveaxis(_fft_last(x, inverse=False), -1, axis)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.moveaxis(np.asarray(x), axis, -1)
    return np.moveaxis(_fft_last(x, inverse=True), -1, axis)


def fft2(x: np.ndarray) -> np.ndarray:
    """2D transform over the last two axes."""
    return fft(fft(x, axis=-1), axis=-2)


def ifft2(x: np.ndarray) -> np.ndarray:
    return ifft(ifft(x, axis=-1), axis=-2)


def dft2_direct(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """O(n^4) double-sum DFT over the last two axes. Reference only."""
    x = np.asarray(x, dtype=np.complex128)
    n0, n1 = x.shape[-2:]
    sign = 1.0 if inverse else -1.0
    out = np.zeros_like(x)
    for k0 in range(n0):
        for k1 in range(n1):
            acc = np.zeros(x.shape[:-2], dtype=np.complex128)
            for j0 in range(n0):
                for j1 in range(n1):
                    phase = sign * 2.0 * np.pi * (k0 * j0 / n0 + k1 * j1 / n1)
                    acc = acc + x[..., j0, j1] * np.exp(1j * phase)
            out[..., k0, k1] = acc
    if inverse:
        out /= n0 * n1
    return out
