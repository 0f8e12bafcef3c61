"""Property sweeps behind ``tileproc sweep``: reconstruction, shift theorem, pixel locking.

Each sweep returns a :class:`SweepResult` with CSV-ready rows and a pass flag
against its tolerance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from tileproc import fd, mclt, synth
from tileproc.disparity import fit_surface, pixel_locking_sweep
from tileproc.mclt import TILE

RECONSTRUCTION_TOL = 1e-9
SHIFT_TOL = 0.02
LOCKING_TOL = 0.02
SHIFTS = (-0.5, -0.25, 0.0, 0.25, 0.5)
MARGIN = 4


@dataclass
class SweepResult:
    mode: str
    header: tuple
    rows: list
    metric: float
    tolerance: float
    passed: bool
    extra: dict | None = None


# --- reconstruction -------------------------------------------------------------

def reconstruction_sweep(count=100, size=64, seed=0):
    """Max interior round-trip error of stride-8 MCLT tiling on random images."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(count):
        image = rng.uniform(-1.0, 1.0, (size, size))
        err = np.abs(mclt.reconstruct(image) - image)[8:-8, 8:-8].max()
        rows.append((k, err))
    worst = max(r[1] for r in rows)
    return SweepResult("reconstruction", ("image", "max_interior_error"), rows, worst,
                       RECONSTRUCTION_TOL, worst <= RECONSTRUCTION_TOL)


# --- shift theorem ----------------------------------------------------------------

def _tile_fd(patch, shift):
    """FD tile of the 16x16 window of ``patch`` (margin 4) that follows content moved by ``shift``."""
    integer = np.sign(shift) * np.floor(np.abs(shift) + 0.5)
    frac = shift - integer
    r, c = MARGIN + int(integer[1]), MARGIN + int(integer[0])
    tile = patch[r:r + TILE, c:c + TILE]
    spec = mclt.mclt_forward(tile, mclt.make_window(-frac[0]), mclt.make_window(-frac[1]))
    return np.stack([fd.phase_rotate(spec, -frac[0], -frac[1])] * len(mclt.COLORS))


def register_shift(patch_a, patch_b, iters=6, epsilon=fd.FAT_ZERO):
    """Subpixel shift of ``patch_b`` content relative to ``patch_a``.

    Patches are ``(16 + 2 * MARGIN)`` square; the tile is their center.  The
    estimate is refined by pre-shifting ``b`` (window shift plus phase
    rotation) and re-correlating.  Returns ``(dx, dy)``.
    """
    a = _tile_fd(patch_a, np.zeros(2))
    est = np.zeros(2)
    for _ in range(iters):
        b = _tile_fd(patch_b, est)
        surface = fd.phase_correlate(a, b, epsilon=epsilon, baseband=False)
        fit = fit_surface(surface)
        if not fit.valid:
            break
        est = est + fit.offset
        if np.abs(fit.offset).max() < 1e-4:
            break
    return est


def shift_theorem_sweep(shifts=SHIFTS, seeds=(0, 1, 2), origin=(37.0, 81.0), cutoff=0.5):
    """Recover every ``(dx, dy)`` in ``shifts``^2 on band-limited textures."""
    rows = []
    size = TILE + 2 * MARGIN
    corner = (origin[0] - MARGIN, origin[1] - MARGIN)
    for seed in seeds:
        tex = synth.Texture.band_limited(seed, cutoff=cutoff)
        a = synth.shift_reference(tex, (0.0, 0.0), origin=corner, size=size)
        for dx, dy in itertools.product(shifts, repeat=2):
            b = synth.shift_reference(tex, (dx, dy), origin=corner, size=size)
            ex, ey = register_shift(a, b)
            rows.append((seed, dx, dy, ex, ey, max(abs(ex - dx), abs(ey - dy))))
    worst = max(r[-1] for r in rows)
    return SweepResult("shift-theorem", ("seed", "dx", "dy", "est_dx", "est_dy", "error"), rows, worst,
                       SHIFT_TOL, worst <= SHIFT_TOL)


# --- pixel locking ----------------------------------------------------------------

def fronto_scene(size=64, seed=0, noise=0.0):
    def scene(d):
        return synth.render(synth.SceneSpec(disparity=d, width=size, height=size, noise_sigma=noise,
                                            seed=seed, texture=synth.TextureSpec(seed=seed)))
    return scene


def locking_sweep(start=0.0, stop=1.0, step=0.02, size=64, seed=0, config=None):
    """Refined vs single-pass signed bias over true disparities in ``[start, stop]``."""
    count = int(round((stop - start) / step)) + 1
    disparities = start + step * np.arange(count)
    curve = pixel_locking_sweep(fronto_scene(size, seed), disparities, config)
    rows = list(zip(curve.true_disparity, curve.refined_bias, curve.single_bias,
                    curve.refined_rmse, curve.single_rmse))
    worst = float(np.nanmax(np.abs(curve.refined_bias)))
    single = float(np.nanmax(np.abs(curve.single_bias)))
    passed = worst <= LOCKING_TOL and single >= 2 * worst
    return SweepResult("pixel-locking", ("true_disparity", "refined_bias", "single_bias", "refined_rmse",
                                         "single_rmse"), rows, worst, LOCKING_TOL, passed,
                       {"single_worst": single})


MODES = {
    "reconstruction": reconstruction_sweep,
    "shift-theorem": shift_theorem_sweep,
    "pixel-locking": locking_sweep,
}
