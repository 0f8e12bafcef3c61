"""Frequency-domain tile operations: complex view, phase rotation, kernels, phase correlation.

Conventions (fixed against the exact-shift oracle, see ``tests/test_fd.py``):

* complex view: ``X(w1, w2) = sum y(n) exp(-i (w1 (n1 + n0) + w2 (n2 + n0)))`` with
  ``w = pi (k + 1/2) / 8`` and ``n0 = 4.5``.  A real tile needs two 8x8
  halves, ``(+w1, +w2)`` and ``(+w1, -w2)``:
  ``Fp = (CC - SS) - i (SC + CS)`` and ``Fm = (CC + SS) - i (SC - CS)``.
* :func:`phase_rotate` with ``(dx, dy)`` moves tile content by ``+dx`` columns
  and ``+dy`` rows.
* correlation surfaces peak at the displacement of ``b`` relative to ``a``;
  cell ``(4, 4)`` of the 9x9 crop is zero shift, columns are x, rows are y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tileproc import dtt
from tileproc.mclt import N, COLORS

OMEGA = np.pi * (np.arange(N) + 0.5) / N
CROP = 9
FULL = 2 * N
DIRECTIONS = ("horizontal", "vertical", "diag_main", "diag_anti")
DEFAULT_WEIGHTS = (0.25, 0.25, 0.5)  # red, blue, green
FAT_ZERO = 0.05  # normalization regularizer, relative to the mean cross-power magnitude


def to_complex(fd):
    """Quadrants ``(..., 4, 8, 8)`` -> complex halves ``(..., 2, 8, 8)`` = ``[Fp, Fm]``."""
    fd = np.asarray(fd, dtype=np.float64)
    cc, sc, cs, ss = (fd[..., i, :, :] for i in range(4))
    fp = (cc - ss) - 1j * (sc + cs)
    fm = (cc + ss) - 1j * (sc - cs)
    return np.stack([fp, fm], axis=-3)


def from_complex(spectrum):
    """Inverse of :func:`to_complex`."""
    spectrum = np.asarray(spectrum)
    fp, fm = spectrum[..., 0, :, :], spectrum[..., 1, :, :]
    cc = 0.5 * (fp.real + fm.real)
    ss = 0.5 * (fm.real - fp.real)
    sc = -0.5 * (fp.imag + fm.imag)
    cs = 0.5 * (fm.imag - fp.imag)
    return np.stack([cc, sc, cs, ss], axis=-3)


def _check_shift(*shifts):
    for s in shifts:
        if np.any(np.abs(np.asarray(s)) > 0.5 + 1e-12):
            raise ValueError(f"fractional shift must be within [-0.5, 0.5], got {s}")


def _rotate_pairs(c, s, angle):
    cos, sin = np.cos(angle), np.sin(angle)
    return c * cos - s * sin, c * sin + s * cos


def phase_rotate(fd, dx, dy):
    """Fractional-pixel shift of ``(..., 4, 8, 8)`` quadrant tiles by ``(dx, dy)`` px.

    ``dx`` and ``dy`` broadcast against the leading dimensions of ``fd``.
    """
    _check_shift(dx, dy)
    fd = np.asarray(fd, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)[..., None, None]
    dy = np.asarray(dy, dtype=np.float64)[..., None, None]
    cc, sc, cs, ss = (fd[..., i, :, :] for i in range(4))
    ah = OMEGA[None, :] * dx  # horizontal frequency is the last axis
    cc, cs = _rotate_pairs(cc, cs, ah)
    sc, ss = _rotate_pairs(sc, ss, ah)
    av = OMEGA[:, None] * dy
    cc, sc = _rotate_pairs(cc, sc, av)
    cs, ss = _rotate_pairs(cs, ss, av)
    return np.stack([cc, sc, cs, ss], axis=-3)


# --- calibration kernels ----------------------------------------------------

@dataclass(frozen=True)
class CalibKernel:
    """Per-color FD multiplier ``(3, 4, 8, 8)`` in quadrant form plus per-color center offsets (px)."""

    tensor: np.ndarray
    center_offset: np.ndarray  # (3, 2) as (x, y)

    @property
    def is_identity(self):
        return bool(np.array_equal(self.tensor, identity_tensor()))


def identity_tensor():
    t = np.zeros((len(COLORS), 4, N, N))
    t[:, 0] = 1.0
    return t


def identity_kernel():
    return CalibKernel(identity_tensor(), np.zeros((len(COLORS), 2)))


def shift_kernel(dx, dy):
    """Quadrant-form kernel equal to :func:`phase_rotate` by ``(dx, dy)``."""
    fp = np.exp(-1j * (OMEGA[:, None] * dy + OMEGA[None, :] * dx))
    fm = np.exp(-1j * (OMEGA[:, None] * dy - OMEGA[None, :] * dx))
    return from_complex(np.stack([fp, fm]))


def gaussian_kernel(sigma):
    """Quadrant-form kernel of a Gaussian blur with ``sigma`` px."""
    g = np.exp(-0.5 * sigma ** 2 * (OMEGA[:, None] ** 2 + OMEGA[None, :] ** 2))
    return from_complex(np.stack([g, g]).astype(complex))


def inverse_kernel(kernel, reg=1e-3):
    """Tikhonov-regularized inverse ``conj(K) / (|K|^2 + reg)`` of a quadrant-form kernel."""
    k = to_complex(kernel)
    return from_complex(np.conj(k) / (np.abs(k) ** 2 + reg))


def apply_kernel(fd, kernel):
    """Pointwise complex multiplication of FD tiles by a kernel (convolution in pixel domain).

    ``fd`` is ``(..., 4, 8, 8)`` or ``(..., 3, 4, 8, 8)``; ``kernel`` is a
    :class:`CalibKernel` or a quadrant-form array broadcastable to ``fd``.
    """
    tensor = kernel.tensor if isinstance(kernel, CalibKernel) else np.asarray(kernel)
    return from_complex(to_complex(fd) * to_complex(tensor))


# --- phase correlation ------------------------------------------------------

_ROW0 = math.sqrt(2.0 / N)
_DCT2_RAW = np.full(N, _ROW0)
_DCT2_RAW[0] /= math.sqrt(2.0)
_DST2_RAW = np.full(N, _ROW0)
_DST2_RAW[-1] /= math.sqrt(2.0)


def _lag_axis(q, basis, axis):
    """Evaluate ``sum_k q_k basis(w_k tau)`` for lags tau = -8..7 along ``axis`` via DCT-II/DST-II."""
    q = np.moveaxis(q, axis, -1)
    out = np.zeros(q.shape[:-1] + (FULL,))
    if basis == "c":
        d = dtt.dct2(q) / _DCT2_RAW  # d[j] = sum_k q_k cos(w_k j), j = 0..7
        out[..., N:] = d
        out[..., 1:N] = d[..., :0:-1]
        # lag -8 is zero: cos(pi (k + 1/2)) = 0
    else:
        d = dtt.dst2(q) / _DST2_RAW  # d[j] = sum_k q_k sin(w_k (j + 1)), j = 0..7
        out[..., N + 1:] = d[..., :N - 1]
        out[..., :N] = -d[..., ::-1]
    return np.moveaxis(out, -1, axis)


def correlation_to_pixels(spectrum):
    """Complex cross-power halves ``(..., 2, 8, 8)`` -> real 16x16 lag surface.

    Returns ``R(tau) = 1/256 * sum over all 16x16 odd frequencies of P(w) exp(i w . tau)``,
    lags -8..7 along both axes (index = lag + 8).
    """
    pp, pm = spectrum[..., 0, :, :], spectrum[..., 1, :, :]
    a, b, c, d = pp.real, pp.imag, pm.real, pm.imag

    def t(q, vertical, horizontal):
        return _lag_axis(_lag_axis(q, horizontal, -1), vertical, -2)

    total = t(a + c, "c", "c") + t(c - a, "s", "s") - t(b + d, "s", "c") + t(d - b, "c", "s")
    return total / (2 * N * N)


def crop(surface, size=CROP):
    lo = N - size // 2
    return surface[..., lo:lo + size, lo:lo + size]


def lpf_weights(sigma):
    """Gaussian low-pass over the odd frequencies: pixel-domain blur of the correlation by ``sigma`` px."""
    return np.exp(-0.5 * sigma ** 2 * (OMEGA[:, None] ** 2 + OMEGA[None, :] ** 2))


def baseband_masks(guard=1):
    """Per-color ``(3, 8, 8)`` masks of the frequencies free of Bayer lattice aliases.

    Red and blue sample every other row and column, so only ``|w| < pi/2`` per
    axis is unambiguous; the green quincunx lattice aliases across
    ``|w1| + |w2| = pi``.  Outside these bands the cross-power of two
    zero-stuffed lattices is dominated by alias copies, which turn the
    correlation into a comb with zeros at odd lags.  For correlation red and
    blue keep ``guard`` bins below their edge: the windowed transform leaks
    aliases into the neighbouring bin and fractional window shifts mis-rotate
    them.
    """
    ky, kx = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    rb = ((ky < N // 2 - guard) & (kx < N // 2 - guard)).astype(float)
    green = (ky + kx < N - 1).astype(float)
    order = {"red": rb, "blue": rb, "green": green}
    return np.stack([order[c] for c in COLORS])


def cross_power(a, b, color_weights=DEFAULT_WEIGHTS, epsilon=FAT_ZERO, lpf_sigma=None, baseband=True):
    """Color-averaged, normalized cross-power spectrum of Bayer FD tiles ``(..., 3, 4, 8, 8)``.

    With ``baseband`` each color contributes only inside its alias-free band
    (:func:`baseband_masks`); switch it off for full-resolution inputs.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    w = np.asarray(color_weights, dtype=np.float64)
    if w.shape != (len(COLORS),) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"color weights must be {len(COLORS)} values summing to 1, got {color_weights}")
    ca, cb = to_complex(a), to_complex(b)
    cw = w[:, None, None] * (baseband_masks() if baseband else np.ones((len(COLORS), N, N)))
    p = np.einsum("cij,...cqij->...qij", cw, np.conj(ca) * cb)
    mag = np.abs(p)
    # fat zero relative to the mean magnitude; the max is usually the DC term
    level = mag.mean(axis=(-3, -2, -1), keepdims=True)
    # a perfect match peaks at 1 whatever the band support
    support = np.count_nonzero(cw.sum(axis=0))
    p = p / (mag + epsilon * level + np.finfo(float).tiny) * (N * N / max(support, 1))
    if lpf_sigma:
        p = p * lpf_weights(lpf_sigma)
    return p


def phase_correlate(a, b, color_weights=DEFAULT_WEIGHTS, epsilon=FAT_ZERO, lpf_sigma=None, full=False,
                    baseband=True):
    """2D phase correlation of Bayer FD tiles; returns the 9x9 center crop.

    With ``full=True`` the uncropped 16x16 surface (lags -8..7) is returned too.
    """
    surface = correlation_to_pixels(cross_power(a, b, color_weights, epsilon, lpf_sigma, baseband))
    if full:
        return crop(surface), surface
    return crop(surface)


@dataclass
class CorrTile:
    surface: np.ndarray  # (9, 9)
    pair_direction: str

    def __post_init__(self):
        if self.pair_direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.pair_direction!r}")
