"""Eight-point discrete trigonometric transforms (DCT/DST types II, III, IV).

All transforms use orthonormal scaling, so type IV transforms are involutions
and the type II/III pairs are exact inverses of each other.  The fast path is
``scipy.fft`` (FFT-based factorizations); :func:`reference` is the O(N^2)
definition summation used to check it.

Arrays may carry any number of leading batch dimensions; 1D transforms act on
the last axis (or ``axis``), 2D transforms on the last two.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np
import scipy.fft

N = 8

KINDS = ("dct2", "dct3", "dct4", "dst2", "dst3", "dst4")
INVERSE = {"dct2": "dct3", "dct3": "dct2", "dct4": "dct4",
           "dst2": "dst3", "dst3": "dst2", "dst4": "dst4"}

_SCIPY = {
    "dct2": (scipy.fft.dct, 2), "dct3": (scipy.fft.dct, 3), "dct4": (scipy.fft.dct, 4),
    "dst2": (scipy.fft.dst, 2), "dst3": (scipy.fft.dst, 3), "dst4": (scipy.fft.dst, 4),
}

_counter = threading.local()


def _check_kind(kind):
    if kind not in _SCIPY:
        raise ValueError(f"unknown transform kind {kind!r}; expected one of {KINDS}")


def transform(x, kind, axis=-1):
    """Apply the orthonormal 1D transform ``kind`` along ``axis``."""
    _check_kind(kind)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] != N:
        raise ValueError(f"transform length must be {N}, got {x.shape[axis]}")
    func, type_ = _SCIPY[kind]
    return func(x, type=type_, axis=axis, norm="ortho")


def dct2(x, axis=-1):
    return transform(x, "dct2", axis)


def dct3(x, axis=-1):
    return transform(x, "dct3", axis)


def dct4(x, axis=-1):
    return transform(x, "dct4", axis)


def dst2(x, axis=-1):
    return transform(x, "dst2", axis)


def dst3(x, axis=-1):
    return transform(x, "dst3", axis)


def dst4(x, axis=-1):
    return transform(x, "dst4", axis)


def reference(x, kind):
    """Definition summation of ``kind`` over the last axis (slow oracle)."""
    _check_kind(kind)
    x = np.asarray(x, dtype=np.float64)
    n_len = x.shape[-1]
    out = np.zeros_like(x)
    scale = math.sqrt(2.0 / n_len)
    for k in range(n_len):
        acc = np.zeros(x.shape[:-1])
        for n in range(n_len):
            if kind == "dct4":
                c = math.cos(math.pi / n_len * (n + 0.5) * (k + 0.5))
            elif kind == "dst4":
                c = math.sin(math.pi / n_len * (n + 0.5) * (k + 0.5))
            elif kind == "dct2":
                c = math.cos(math.pi / n_len * (n + 0.5) * k)
                if k == 0:
                    c /= math.sqrt(2.0)
            elif kind == "dct3":
                # input index n is the frequency
                c = math.cos(math.pi / n_len * n * (k + 0.5))
                if n == 0:
                    c /= math.sqrt(2.0)
            elif kind == "dst2":
                c = math.sin(math.pi / n_len * (n + 0.5) * (k + 1))
                if k == n_len - 1:
                    c /= math.sqrt(2.0)
            else:  # dst3
                c = math.sin(math.pi / n_len * (n + 1) * (k + 0.5))
                if n == n_len - 1:
                    c /= math.sqrt(2.0)
            acc = acc + x[..., n] * c
        out[..., k] = scale * acc
    return out


def apply_2d(block, horizontal, vertical):
    """Separable 2D transform of 8x8 blocks: rows with ``horizontal``, columns with ``vertical``.

    The first block index is vertical.  Every call adds the number of blocks
    it transformed to the active :func:`count_transforms` counter.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.shape[-2:] != (N, N):
        raise ValueError(f"expected (..., {N}, {N}) blocks, got {block.shape}")
    counter = getattr(_counter, "value", None)
    if counter is not None:
        counter[0] += int(np.prod(block.shape[:-2], dtype=np.int64))
    return transform(transform(block, horizontal, axis=-1), vertical, axis=-2)


@contextlib.contextmanager
def count_transforms():
    """Count 2D block transforms done by :func:`apply_2d` in this thread.

    >>> with count_transforms() as c:
    ...     _ = apply_2d(np.zeros((8, 8)), "dct4", "dct4")
    >>> c[0]
    1
    """
    previous = getattr(_counter, "value", None)
    _counter.value = [0]
    try:
        yield _counter.value
    finally:
        _counter.value = previous
