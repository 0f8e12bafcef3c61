"""2D modified complex lapped transform (MCLT) of 16x16 tiles.

A tile is windowed with a (possibly shifted) half-sine window, folded 16 -> 8
per dimension and transformed with DCT-IV / DST-IV, giving four 8x8
quadrants ordered ``[CC, SC, CS, SS]``; the first letter names the vertical
basis.  Scaling is chosen so that the map from the windowed tile to the 256
quadrant coefficients is orthogonal: the inverse is the transpose, and
windowing again plus stride-8 overlap-add reconstructs the image exactly.

Basis (per dimension, N = 8)::

    b_c(n, k) = cos(pi/N (n + 1/2 + N/2)(k + 1/2)) / sqrt(N)
    b_s(n, k) = sin(pi/N (n + 1/2 + N/2)(k + 1/2)) / sqrt(N)
"""

from __future__ import annotations

import math

import numpy as np

from tileproc import dtt

N = dtt.N
TILE = 2 * N
QUADRANTS = ("CC", "SC", "CS", "SS")
COLORS = ("red", "blue", "green")
# Bayer phase index = 2 * (origin_row % 2) + (origin_col % 2), RG/GB mosaic with red at (even, even)
BAYER_PHASES = ((0, 0), (0, 1), (1, 0), (1, 1))

_QUAD_KINDS = {"CC": ("dct4", "dct4"), "SC": ("dct4", "dst4"),
               "CS": ("dst4", "dct4"), "SS": ("dst4", "dst4")}  # (horizontal, vertical)


def _fold_matrices():
    h = N // 2
    fold_c = np.zeros((N, TILE))
    fold_s = np.zeros((N, TILE))
    for m in range(h):
        # first half from the (c, d) quarters, second half from (a, b)
        fold_c[m, 3 * h - 1 - m] = -1.0
        fold_c[m, 3 * h + m] = -1.0
        fold_s[m, 3 * h - 1 - m] = 1.0
        fold_s[m, 3 * h + m] = -1.0
        fold_c[h + m, m] = 1.0
        fold_c[h + m, 2 * h - 1 - m] = -1.0
        fold_s[h + m, m] = 1.0
        fold_s[h + m, 2 * h - 1 - m] = 1.0
    return fold_c, fold_s


FOLD_C, FOLD_S = _fold_matrices()
_FOLD = {"C": FOLD_C, "S": FOLD_S}
_SCALE = 0.5  # 1/sqrt(2) per dimension on top of the orthonormal DTT-IV


def make_window(shift=0.0):
    """Half-sine analysis window shifted by ``shift`` px, ``taps(n) = sin(pi (n + 1/2 + shift) / 16)``.

    ``shift`` may be an array; the result then has shape ``shift.shape + (16,)``.
    """
    shift = np.asarray(shift, dtype=np.float64)
    if np.any(np.abs(shift) > 0.5):
        raise ValueError(f"window shift must be within [-0.5, 0.5], got {shift}")
    arg = np.arange(TILE) + 0.5 + shift[..., None]
    taps = np.sin(np.pi * arg / TILE)
    return np.where((arg >= 0) & (arg <= TILE), taps, 0.0)


def _windowed(tile, window_h, window_v):
    tile = np.asarray(tile, dtype=np.float64)
    if tile.shape[-2:] != (TILE, TILE):
        raise ValueError(f"expected (..., {TILE}, {TILE}) tiles, got {tile.shape}")
    return tile * np.asarray(window_v)[..., :, None] * np.asarray(window_h)[..., None, :]


def _fold(y, vertical, horizontal):
    return _FOLD[vertical] @ y @ _FOLD[horizontal].T


def mclt_forward(tile, window_h=None, window_v=None):
    """Forward MCLT of ``(..., 16, 16)`` tiles to ``(..., 4, 8, 8)`` quadrants."""
    window_h = make_window() if window_h is None else window_h
    window_v = make_window() if window_v is None else window_v
    y = _windowed(tile, window_h, window_v)
    quads = []
    for q in QUADRANTS:
        horizontal, vertical = _QUAD_KINDS[q]
        quads.append(dtt.apply_2d(_fold(y, q[0], q[1]), horizontal, vertical))
    return _SCALE * np.stack(quads, axis=-3)


def mclt_reference(tile, window_h=None, window_v=None):
    """Direct 2N x 2N summation of the MCLT (oracle for the fold + DTT path)."""
    window_h = make_window() if window_h is None else window_h
    window_v = make_window() if window_v is None else window_v
    y = _windowed(tile, window_h, window_v)
    n = np.arange(TILE)[:, None]
    k = np.arange(N)[None, :]
    arg = np.pi / N * (n + 0.5 + N / 2) * (k + 0.5)
    basis = {"C": np.cos(arg) / math.sqrt(N), "S": np.sin(arg) / math.sqrt(N)}
    out = np.empty(y.shape[:-2] + (4, N, N))
    for i, q in enumerate(QUADRANTS):
        bv, bh = basis[q[0]], basis[q[1]]
        out[..., i, :, :] = np.einsum("...ij,ik,jl->...kl", y, bv, bh)
    return out


def imclt_tile(fd, window_h=None, window_v=None):
    """Inverse MCLT of ``(..., 4, 8, 8)`` quadrants to a windowed 16x16 tile.

    The result is the source tile multiplied by the window twice; overlap-add
    of stride-8 neighbours completes the reconstruction.
    """
    window_h = make_window() if window_h is None else window_h
    window_v = make_window() if window_v is None else window_v
    fd = np.asarray(fd, dtype=np.float64)
    y = 0.0
    for i, q in enumerate(QUADRANTS):
        horizontal, vertical = _QUAD_KINDS[q]
        u = dtt.apply_2d(fd[..., i, :, :], horizontal, vertical)
        y = y + _FOLD[q[0]].T @ u @ _FOLD[q[1]]
    return _windowed(_SCALE * y, window_h, window_v)


def imclt_accumulate(fd, canvas, origin, window_h=None, window_v=None):
    """Add the inverse of one FD tile into ``canvas`` at ``origin = (row, col)``.

    Callers accumulating from several threads must keep the 16x16 write
    regions disjoint (e.g. process tiles in four row/column parity passes).
    """
    row, col = int(origin[0]), int(origin[1])
    if row < 0 or col < 0 or row + TILE > canvas.shape[0] or col + TILE > canvas.shape[1]:
        raise ValueError(f"tile at {origin} does not fit in canvas of shape {canvas.shape}")
    canvas[row:row + TILE, col:col + TILE] += imclt_tile(fd, window_h, window_v)


def reconstruct(image, stride=N):
    """Forward + inverse MCLT of every stride-8 tile of ``image`` with overlap-add.

    Only pixels more than 8 px from the border are complete.
    """
    image = np.asarray(image, dtype=np.float64)
    canvas = np.zeros_like(image)
    rows = range(0, image.shape[0] - TILE + 1, stride)
    cols = range(0, image.shape[1] - TILE + 1, stride)
    origins = [(r, c) for r in rows for c in cols]
    tiles = np.stack([image[r:r + TILE, c:c + TILE] for r, c in origins])
    fds = mclt_forward(tiles)
    for (r, c), fd in zip(origins, fds):
        imclt_accumulate(fd, canvas, (r, c))
    return canvas


# --- Bayer mosaic ----------------------------------------------------------

def _phase_parity(bayer_phase):
    phase = np.asarray(bayer_phase)
    if not np.issubdtype(phase.dtype, np.integer) or np.any((phase < 0) | (phase > 3)):
        raise ValueError(f"bayer_phase must be an integer in 0..3, got {bayer_phase!r}")
    return phase // 2, phase % 2


def color_lattices(bayer_phase):
    """Per color, the (row parity, col parity) lattices in tile coordinates.

    Red and blue occupy one lattice each, green two.
    """
    py, px = _phase_parity(bayer_phase)
    return {
        "red": [(py, px)],
        "blue": [(1 - py, 1 - px)],
        "green": [(py, 1 - px), (1 - py, px)],
    }


def color_masks(bayer_phase):
    """``(..., 3, 16, 16)`` 0/1 sample masks in :data:`COLORS` order."""
    n = np.arange(TILE)
    masks = []
    for color in COLORS:
        m = 0.0
        for qy, qx in color_lattices(bayer_phase)[color]:
            my = (n % 2 == np.asarray(qy)[..., None]).astype(float)
            mx = (n % 2 == np.asarray(qx)[..., None]).astype(float)
            m = m + my[..., :, None] * mx[..., None, :]
        masks.append(m)
    return np.stack(masks, axis=-3)


_DC_ROW = dtt.dct4(np.eye(N))[0] @ FOLD_C  # CC[0,0] response per input sample, one dimension


def _dc_gain(window, parity):
    n = np.arange(TILE)
    sel = (n % 2 == np.asarray(parity)[..., None])
    return np.sum(_DC_ROW * window * sel, axis=-1)


def color_gains(bayer_phase, window_h=None, window_v=None):
    """DC (``CC[0,0]``) gain of each color's sample lattice relative to the full tile.

    Dividing a color's zero-stuffed transform by its gain makes a constant
    scene produce the same DC coefficient in every color.
    """
    window_h = make_window() if window_h is None else np.asarray(window_h)
    window_v = make_window() if window_v is None else np.asarray(window_v)
    full = np.sum(_DC_ROW * window_v, axis=-1) * np.sum(_DC_ROW * window_h, axis=-1)
    gains = []
    for color in COLORS:
        g = 0.0
        for qy, qx in color_lattices(bayer_phase)[color]:
            g = g + _dc_gain(window_v, qy) * _dc_gain(window_h, qx)
        gains.append(g / full)
    return np.stack(gains, axis=-1)


def _lattice_transform(y, qy, qx):
    """All four quadrants of a tile whose samples lie on one parity lattice.

    One DCT-IV/DCT-IV block transform suffices: for samples of a single
    parity the sine transform is the (sign-adjusted) reversed cosine one.
    """
    n = np.arange(TILE)
    my = (n % 2 == np.asarray(qy)[..., None]).astype(float)
    mx = (n % 2 == np.asarray(qx)[..., None]).astype(float)
    ys = y * my[..., :, None] * mx[..., None, :]
    cc = _SCALE * dtt.apply_2d(_fold(ys, "C", "C"), "dct4", "dct4")
    sy = (1 - 2 * np.asarray(qy, dtype=float))[..., None, None]
    sx = (1 - 2 * np.asarray(qx, dtype=float))[..., None, None]
    sc = sy * cc[..., ::-1, :]
    cs = sx * cc[..., :, ::-1]
    ss = sy * sx * cc[..., ::-1, ::-1]
    return np.stack([cc, sc, cs, ss], axis=-3)


def mclt_forward_bayer(tile, bayer_phase, window_h=None, window_v=None):
    """MCLT of a raw Bayer tile into per-color quadrants, shape ``(..., 3, 4, 8, 8)``.

    Colors are ordered as :data:`COLORS`.  Costs four 8x8 DTT-IV block
    transforms per tile: one for red, one for blue, two for green.
    """
    window_h = make_window() if window_h is None else np.asarray(window_h)
    window_v = make_window() if window_v is None else np.asarray(window_v)
    y = _windowed(tile, window_h, window_v)
    lattices = color_lattices(bayer_phase)
    gains = color_gains(bayer_phase, window_h, window_v)
    out = []
    for i, color in enumerate(COLORS):
        f = 0.0
        for qy, qx in lattices[color]:
            f = f + _lattice_transform(y, qy, qx)
        out.append(f / gains[..., i, None, None, None])
    return np.stack(out, axis=-4)


def mclt_bayer_reference(tile, bayer_phase, window_h=None, window_v=None):
    """Per-color zero-stuffed :func:`mclt_forward` (oracle for the Bayer fold)."""
    masks = color_masks(bayer_phase)
    gains = color_gains(bayer_phase, window_h, window_v)
    tile = np.asarray(tile, dtype=np.float64)
    out = []
    for i in range(len(COLORS)):
        f = mclt_forward(tile * masks[..., i, :, :], window_h, window_v)
        out.append(f / gains[..., i, None, None, None])
    return np.stack(out, axis=-4)
