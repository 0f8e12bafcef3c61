"""Tile Processor: unary FD processing of four Bayer frames, pair correlation, textures.

Tiles sit on a stride-8 grid; tile ``(row, col)`` has its 16x16 window at
pixel ``(8 row - 4, 8 col - 4)`` before the per-camera offset.  Frames are
mirror-padded so the grid spans ``(H / 8) x (W / 8)`` tiles.

Work is split into fixed-size chunks of tiles in row-major order; the chunk
layout never depends on the worker count, so results are bit-identical for
any number of workers.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from tileproc import fd, mclt
from tileproc import geometry as geo
from tileproc.fd import DIRECTIONS
from tileproc.mclt import COLORS, TILE

PAD = 8
CHUNK = 256
# (a, b) camera pairs; each surface peaks at the displacement of b relative to a,
# which is +residual along the direction's disparity axis
PAIRS = {
    "horizontal": ((1, 0), (3, 2)),
    "vertical": ((2, 0), (3, 1)),
    "diag_main": ((3, 0),),
    "diag_anti": ((2, 1),),
}


@dataclass
class TPConfig:
    color_weights: tuple = (0.25, 0.25, 0.5)  # red, blue, green
    epsilon: float = 0.05
    lpf_sigma: float | None = None
    alpha_tau: float = 0.05
    texture_lpf_sigma: float | None = None
    step_threshold: float = 0.001
    max_iters: int = 10
    ridge_threshold: float = 0.3
    workers: int = 1
    chunk: int = CHUNK

    def __post_init__(self):
        w = np.asarray(self.color_weights, dtype=float)
        if w.shape != (3,) or abs(w.sum() - 1) > 1e-9 or np.any(w < 0):
            raise ValueError(f"color weights must be 3 non-negative values summing to 1: {self.color_weights}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.step_threshold <= 0 or self.max_iters < 1 or self.workers < 1 or self.chunk < 1:
            raise ValueError("invalid refinement / scheduling settings")
        if self.alpha_tau <= 0:
            raise ValueError("alpha_tau must be positive")


@dataclass
class QuadFrameSet:
    """Four Bayer frames ``(4, H, W)`` in [0, 1] full scale, their geometry and kernel grids."""

    images: np.ndarray
    geometry: geo.CameraGeometry
    kernel_grids: list | None = None
    _padded: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3 or self.images.shape[0] != 4:
            raise ValueError(f"expected four images, got array of shape {self.images.shape}")
        h, w = self.images.shape[1:]
        if h % 8 or w % 8:
            raise ValueError(f"image dimensions must be divisible by 8, got {w}x{h}")
        if tuple(self.geometry.image_size) != (w, h):
            raise ValueError(f"geometry image size {self.geometry.image_size} != frames {w}x{h}")
        if self.kernel_grids is not None and len(self.kernel_grids) != 4:
            raise ValueError("need one kernel grid per camera")

    @property
    def grid_shape(self):
        return self.images.shape[1] // 8, self.images.shape[2] // 8

    @property
    def padded(self):
        # reflect padding keeps the Bayer parity of every pixel
        if self._padded is None:
            self._padded = np.pad(self.images, ((0, 0), (PAD, PAD), (PAD, PAD)), mode="reflect")
        return self._padded

    @property
    def identity_kernels(self):
        return self.kernel_grids is None or all(g.all_identity for g in self.kernel_grids)


@dataclass
class TileCorrSet:
    """Directional correlation surfaces for a batch of tiles."""

    tile_index: np.ndarray        # (T, 2)
    surfaces: np.ndarray          # (T, 4, 9, 9) in DIRECTIONS order
    full: np.ndarray              # (T, 4, 16, 16), lags -8..7
    target_disparity: np.ndarray  # (T,)
    valid: np.ndarray             # (T,)


class StageTimer:
    """Accumulates wall time per named stage (single-threaded use)."""

    def __init__(self):
        self.totals = {}

    @contextmanager
    def __call__(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] = self.totals.get(name, 0.0) + time.perf_counter() - start


@contextmanager
def _null_stage(name):
    yield


def _kernels_for(frames, cam, centers):
    """Per-tile kernel tensors ``(T, 3, 4, 8, 8)`` and color offsets ``(T, 3, 2)``, or ``None`` for identity."""
    grid = frames.kernel_grids[cam] if frames.kernel_grids is not None else None
    if grid is None or grid.all_identity:
        return None, np.zeros((len(centers), len(COLORS), 2))
    tensors, offsets = [], []
    for c in centers:
        k = geo.lookup_kernel(grid, np.clip(c, 0, np.asarray(frames.geometry.image_size) - 1))
        tensors.append(k.tensor)
        offsets.append(k.center_offset)
    return np.stack(tensors), np.stack(offsets)


def process_tiles(frames, tile_index, target_disparity, timer=None):
    """Unary processing of tiles for all four cameras.

    Returns corrected FD tensors ``(T, 4, 3, 4, 8, 8)`` (camera, color,
    quadrant) and a ``(T,)`` validity mask (False where a window leaves the
    padded frame).
    """
    stage = timer or _null_stage
    tile_index = np.asarray(tile_index, dtype=np.int64).reshape(-1, 2)
    target = np.asarray(target_disparity, dtype=np.float64).reshape(-1)
    n_tiles = len(tile_index)
    centers = geo.tile_center(tile_index)
    offsets = geo.disparity_to_offsets(frames.geometry, centers, target)  # (T, 4, 2)
    base = geo.tile_origin(tile_index) + PAD  # (T, 2) row, col in padded frame
    padded = frames.padded
    hp, wp = padded.shape[1:]
    n = np.arange(TILE)
    out = np.zeros((n_tiles, 4, len(COLORS), 4, 8, 8))
    valid = np.ones(n_tiles, dtype=bool)
    for cam in range(4):
        tensors, color_offsets = _kernels_for(frames, cam, centers)
        total = offsets[:, cam, None, :] + color_offsets  # (T, 3, 2)
        integer, frac = geo.split_offset(total)
        groups = [list(range(len(COLORS)))] if np.all(color_offsets == color_offsets[:, :1]) else [[c] for c in range(len(COLORS))]
        for colors in groups:
            c0 = colors[0]
            rows = base[:, 0] + integer[:, c0, 1]
            cols = base[:, 1] + integer[:, c0, 0]
            inside = (rows >= 0) & (cols >= 0) & (rows + TILE <= hp) & (cols + TILE <= wp)
            valid &= inside
            r = np.clip(rows, 0, hp - TILE)
            c = np.clip(cols, 0, wp - TILE)
            with stage("extract"):
                tiles = padded[cam][r[:, None, None] + n[None, :, None], c[:, None, None] + n[None, None, :]]
            phase = 2 * ((r - PAD) % 2) + (c - PAD) % 2
            fx, fy = frac[:, c0, 0], frac[:, c0, 1]
            with stage("mclt"):
                spec = mclt.mclt_forward_bayer(tiles, phase, mclt.make_window(-fx), mclt.make_window(-fy))
                spec = fd.phase_rotate(spec, -fx[:, None], -fy[:, None])
            out[:, cam, colors] = spec[:, colors]
        if tensors is not None:
            with stage("kernel"):
                out[:, cam] = fd.apply_kernel(out[:, cam], tensors)
    return out, valid


def correlate_tiles(corrected, config=None):
    """Six pair correlations consolidated into the four directions.

    Returns ``(surfaces (T, 4, 9, 9), full (T, 4, 16, 16))``.
    """
    config = config or TPConfig()
    surfaces, full = [], []
    for direction in DIRECTIONS:
        acc = 0.0
        for a, b in PAIRS[direction]:
            spec = fd.cross_power(corrected[:, a], corrected[:, b], config.color_weights,
                                  config.epsilon, config.lpf_sigma)
            acc = acc + fd.correlation_to_pixels(spec)
        acc = acc / len(PAIRS[direction])
        full.append(acc)
        surfaces.append(fd.crop(acc))
    return np.stack(surfaces, axis=1), np.stack(full, axis=1)


def process_tile_unary(frames, job, timer=None):
    """Corrected FD tensors ``(4, 3, 4, 8, 8)`` for one :class:`~tileproc.geometry.TileJob`; ``None`` if out of frame."""
    out, valid = process_tiles(frames, [job.tile_index], [job.target_disparity], timer)
    return out[0] if valid[0] else None


def correlate_tile(corrected, config=None, tile_index=(0, 0), target_disparity=0.0):
    """:class:`TileCorrSet` (batch of one) from one tile's corrected FD tensors."""
    if corrected is None:
        raise ValueError("tile is invalid (out of frame)")
    surfaces, full = correlate_tiles(np.asarray(corrected)[None], config)
    return TileCorrSet(np.array([tile_index]), surfaces, full, np.array([target_disparity]),
                       np.array([True]))


# --- texture ----------------------------------------------------------------

@dataclass
class TextureTile:
    rgba: np.ndarray  # (16, 16, 4): windowed RGB ready for overlap-add, unwindowed alpha


def _window2d():
    w = mclt.make_window()
    return (w[:, None] * w[None, :]) ** 2


def texture_tiles(corrected, config=None):
    """RGBA texture tiles ``(T, 16, 16, 4)`` from corrected FD tensors ``(T, 4, 3, 4, 8, 8)``.

    Each color is first cut to its Bayer lattice's alias-free band, which
    demosaics it.  RGB is the inverse transform of the camera-averaged
    spectrum (windowed twice, for overlap-add); alpha is
    ``clip(1 - rms_deviation / tau, 0, 1)`` with the per-pixel deviation
    between cameras.
    """
    config = config or TPConfig()
    corrected = np.asarray(corrected, dtype=np.float64) * fd.baseband_masks(guard=0)[:, None]
    if config.texture_lpf_sigma:
        corrected = fd.apply_kernel(corrected, fd.gaussian_kernel(config.texture_lpf_sigma))
    per_cam = mclt.imclt_tile(corrected)  # (T, 4, 3, 16, 16)
    mean = per_cam.mean(axis=1)
    w2 = _window2d()
    dev = np.sqrt(np.mean((per_cam - mean[:, None]) ** 2, axis=(1, 2))) / w2
    alpha = np.clip(1.0 - dev / config.alpha_tau, 0.0, 1.0)
    rgb = mean[:, [0, 2, 1]]  # stored colors are (red, blue, green)
    return np.concatenate([np.moveaxis(rgb, 1, -1), alpha[..., None]], axis=-1)


def texture_tile(corrected, job=None, config=None):
    if corrected is None:
        raise ValueError("tile is invalid (out of frame)")
    return TextureTile(texture_tiles(np.asarray(corrected)[None], config)[0])


def accumulate_texture(tiles, tile_index, grid_shape):
    """Overlap-add RGBA tiles into an ``(H, W, 4)`` image (alpha weighted by the squared window).

    Tiles are added in four row/column parity passes so the writes of one
    pass never overlap.
    """
    rows, cols = grid_shape
    canvas = np.zeros((8 * rows + 8, 8 * cols + 8, 4))
    w2 = _window2d()
    tile_index = np.asarray(tile_index)
    for pr in (0, 1):
        for pc in (0, 1):
            sel = np.flatnonzero((tile_index[:, 0] % 2 == pr) & (tile_index[:, 1] % 2 == pc))
            for k in sel:
                r, c = tile_index[k] * 8
                patch = tiles[k].copy()
                patch[..., 3] *= w2
                canvas[r:r + TILE, c:c + TILE] += patch
    return canvas[4:-4, 4:-4]


# --- frame processing ---------------------------------------------------------

def grid_indices(grid_shape):
    rows, cols = grid_shape
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.stack([r.ravel(), c.ravel()], axis=1)


def run_chunks(func, n_items, config):
    """Apply ``func(slice)`` to fixed chunks of ``range(n_items)``; results in chunk order."""
    slices = [slice(s, min(s + config.chunk, n_items)) for s in range(0, n_items, config.chunk)]
    if config.workers == 1 or len(slices) <= 1:
        return [func(s) for s in slices]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(func, slices))


@dataclass
class FrameCorrelation:
    grid_shape: tuple
    corr: TileCorrSet
    texture: np.ndarray | None = None  # (H, W, 4)


def process_frame(frames, disparity_in, config=None, texture=False):
    """Process every tile of the frame at the given per-tile target disparities."""
    config = config or TPConfig()
    rows, cols = frames.grid_shape
    disparity_in = np.asarray(disparity_in, dtype=np.float64)
    if disparity_in.shape != (rows, cols):
        raise ValueError(f"target disparity grid {disparity_in.shape} != tile grid {(rows, cols)}")
    idx = grid_indices((rows, cols))
    targets = disparity_in.ravel()

    def work(sl):
        corrected, valid = process_tiles(frames, idx[sl], targets[sl])
        surfaces, full = correlate_tiles(corrected, config)
        tex = texture_tiles(corrected, config) if texture else None
        return surfaces, full, valid, tex

    parts = run_chunks(work, len(idx), config)
    surfaces = np.concatenate([p[0] for p in parts])
    full = np.concatenate([p[1] for p in parts])
    valid = np.concatenate([p[2] for p in parts])
    corr = TileCorrSet(idx, surfaces, full, targets.copy(), valid)
    canvas = None
    if texture:
        tiles = np.concatenate([p[3] for p in parts])
        canvas = accumulate_texture(tiles, idx, (rows, cols))
    return FrameCorrelation((rows, cols), corr, canvas)
