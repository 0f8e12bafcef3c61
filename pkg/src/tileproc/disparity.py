"""Subpixel disparity from directional correlation surfaces.

Peaks are fitted with a Gaussian-plus-floor model by Levenberg-Marquardt over
a 5-cell window around the integer maximum, with a per-axis 3-point parabola
as fallback.  The four pair directions are projected onto their disparity
axes and merged into one strength-weighted profile; the tile disparity is
refined by re-correlating at the updated target until the correction is
below a threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from tileproc.fd import CROP, DIRECTIONS
from tileproc.lma import levenberg_marquardt

CENTER = CROP // 2
FIT_WINDOW = 5
FEATURE_LENGTH = CROP * CROP * len(DIRECTIONS) + 1  # 9*9*4 correlation cells + target disparity
FEATURE_MAGIC = "TPFEAT1"


# --- peak fitting ---------------------------------------------------------

def _gauss2d(cells_x, cells_y):
    def model(p, idx):
        amp, cx, cy, width, floor = (p[:, i, None] for i in range(5))
        width = np.maximum(width, 1e-3)
        dx, dy = cells_x[idx] - cx, cells_y[idx] - cy
        r2 = dx ** 2 + dy ** 2
        g = np.exp(-0.5 * r2 / width ** 2)
        values = amp * g + floor
        jac = np.stack([g, amp * g * dx / width ** 2, amp * g * dy / width ** 2,
                        amp * g * r2 / width ** 3, np.ones_like(g)], axis=-1)
        return values, jac
    return model


def _gauss1d(cells):
    def model(p, idx):
        amp, c, width, floor = (p[:, i, None] for i in range(4))
        width = np.maximum(width, 1e-3)
        d = cells[idx] - c
        g = np.exp(-0.5 * d ** 2 / width ** 2)
        jac = np.stack([g, amp * g * d / width ** 2, amp * g * d ** 2 / width ** 3,
                        np.ones_like(g)], axis=-1)
        return amp * g + floor, jac
    return model


def _parabola(left, mid, right):
    denom = left - 2 * mid + right
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom < 0, 0.5 * (left - right) / denom, 0.0)
    return np.clip(off, -0.5, 0.5)


@dataclass
class PeakFit:
    """Batched fit result; offsets are relative to the surface center, in cells (x, y)."""

    offset: np.ndarray      # (..., 2) for surfaces, (...,) for profiles
    strength: np.ndarray    # (...,) in [0, 1], 0 where invalid
    valid: np.ndarray       # (...,) bool
    used_lma: np.ndarray    # (...,) bool


def _strict_max_2d(s):
    batch = s.shape[0]
    flat = s.reshape(batch, -1)
    am = flat.argmax(axis=1)
    iy, ix = np.divmod(am, s.shape[-1])
    inner = (iy >= 1) & (iy <= s.shape[-2] - 2) & (ix >= 1) & (ix <= s.shape[-1] - 2)
    peak = flat[np.arange(batch), am]
    # argmax is never below a neighbour; a peak split evenly between two cells
    # (shift of exactly half a cell) still counts, a flat neighbourhood does not
    lowest = np.full(batch, np.inf)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            ny = np.clip(iy + dy, 0, s.shape[-2] - 1)
            nx = np.clip(ix + dx, 0, s.shape[-1] - 1)
            lowest = np.minimum(lowest, s[np.arange(batch), ny, nx])
    ok = inner & (lowest < peak)
    return iy, ix, ok


def fit_surface(surface, fit_window=FIT_WINDOW, max_iter=20):
    """Fit the peak of ``(..., H, W)`` surfaces (H, W odd); returns a :class:`PeakFit`."""
    surface = np.asarray(surface, dtype=np.float64)
    lead = surface.shape[:-2]
    h, w = surface.shape[-2:]
    s = surface.reshape((-1, h, w))
    batch = s.shape[0]
    iy, ix, valid = _strict_max_2d(s)
    valid &= np.all(np.isfinite(s), axis=(1, 2))
    half = fit_window // 2
    ry = np.arange(-half, half + 1)
    cells_y = (iy[:, None, None] + ry[None, :, None]) + np.zeros((1, 1, fit_window))
    cells_x = (ix[:, None, None] + ry[None, None, :]) + np.zeros((1, fit_window, 1))
    inside = (cells_y >= 0) & (cells_y < h) & (cells_x >= 0) & (cells_x < w)
    cy_i = np.clip(cells_y, 0, h - 1).astype(int)
    cx_i = np.clip(cells_x, 0, w - 1).astype(int)
    data = s[np.arange(batch)[:, None, None], cy_i, cx_i].reshape(batch, -1)
    weights = inside.reshape(batch, -1).astype(float)
    gx = cells_x.reshape(batch, -1).astype(float)
    gy = cells_y.reshape(batch, -1).astype(float)

    b = np.arange(batch)
    peak = s[b, iy, ix]
    # per-axis parabola: fallback and LMA starting point
    px = _parabola(s[b, iy, np.clip(ix - 1, 0, w - 1)], peak, s[b, iy, np.clip(ix + 1, 0, w - 1)])
    py = _parabola(s[b, np.clip(iy - 1, 0, h - 1), ix], peak, s[b, np.clip(iy + 1, 0, h - 1), ix])
    floor0 = np.where(weights > 0, data, np.inf).min(axis=1)
    p0 = np.stack([peak - floor0, ix + px, iy + py, np.ones(batch), floor0], axis=1)
    offset = np.stack([ix + px - w // 2, iy + py - h // 2], axis=1)
    height = peak.copy()
    used = np.zeros(batch, dtype=bool)
    idx = np.flatnonzero(valid)
    if idx.size:
        p, conv, _ = levenberg_marquardt(_gauss2d(gx[idx], gy[idx]), p0[idx], data[idx],
                                         weights[idx], max_iter=max_iter)
        sane = (conv & np.all(np.isfinite(p), axis=1) & (p[:, 0] > 0)
                & (np.abs(p[:, 1] - ix[idx]) <= 1.0) & (np.abs(p[:, 2] - iy[idx]) <= 1.0))
        good = idx[sane]
        offset[good] = np.stack([p[sane, 1] - w // 2, p[sane, 2] - h // 2], axis=1)
        height[good] = p[sane, 0] + p[sane, 4]
        used[good] = True
    strength = np.where(valid, np.clip(height, 0.0, 1.0), 0.0)
    valid &= strength > 0
    offset[~valid] = 0.0
    return PeakFit(offset.reshape(lead + (2,)), strength.reshape(lead), valid.reshape(lead),
                   used.reshape(lead))


def fit_profile(profile, fit_window=FIT_WINDOW, max_iter=20):
    """Fit the peak of ``(..., L)`` 1D profiles (L odd); offsets relative to the middle cell."""
    profile = np.asarray(profile, dtype=np.float64)
    lead = profile.shape[:-1]
    n = profile.shape[-1]
    s = profile.reshape((-1, n))
    batch = s.shape[0]
    b = np.arange(batch)
    i = s.argmax(axis=1)
    left = s[b, np.clip(i - 1, 0, n - 1)]
    right = s[b, np.clip(i + 1, 0, n - 1)]
    peak = s[b, i]
    valid = (i >= 1) & (i <= n - 2) & (np.minimum(left, right) < peak) & np.all(np.isfinite(s), axis=1)
    half = fit_window // 2
    cells = i[:, None] + np.arange(-half, half + 1)[None, :]
    weights = ((cells >= 0) & (cells < n)).astype(float)
    data = s[b[:, None], np.clip(cells, 0, n - 1)]
    par = _parabola(left, peak, right)
    floor0 = np.where(weights > 0, data, np.inf).min(axis=1)
    p0 = np.stack([peak - floor0, i + par, np.ones(batch), floor0], axis=1)
    offset = i + par - n // 2
    height = peak.copy()
    used = np.zeros(batch, dtype=bool)
    idx = np.flatnonzero(valid)
    if idx.size:
        p, conv, _ = levenberg_marquardt(_gauss1d(cells[idx].astype(float)), p0[idx], data[idx],
                                         weights[idx], max_iter=max_iter)
        sane = conv & np.all(np.isfinite(p), axis=1) & (p[:, 0] > 0) & (np.abs(p[:, 1] - i[idx]) <= 1.0)
        good = idx[sane]
        offset[good] = p[sane, 1] - n // 2
        height[good] = p[sane, 0] + p[sane, 3]
        used[good] = True
    strength = np.where(valid, np.clip(height, 0.0, 1.0), 0.0)
    valid &= strength > 0
    offset = np.where(valid, offset, 0.0)
    return PeakFit(offset.reshape(lead), strength.reshape(lead), valid.reshape(lead), used.reshape(lead))


def fit_subpixel(surface_or_profile, fit_window=FIT_WINDOW):
    """Subpixel peak of one 9x9 surface or 9-cell profile: ``(residual, strength)``.

    For a surface the residual is ``(x, y)`` px from the center cell; invalid
    (no strict local maximum) gives residual 0 and strength 0.
    """
    arr = np.asarray(surface_or_profile, dtype=np.float64)
    fit = fit_surface(arr, fit_window) if arr.ndim == 2 else fit_profile(arr, fit_window)
    res = fit.offset
    return (tuple(float(v) for v in res) if arr.ndim == 2 else float(res)), float(fit.strength)


# --- direction combination ----------------------------------------------------

# unit step along each direction's disparity axis, in (row, col) surface cells
_AXES = {"horizontal": (0, 1), "vertical": (1, 0), "diag_main": (1, 1), "diag_anti": (1, -1)}


def direction_profiles(surfaces, reach=None):
    """Project ``(..., 4, S, S)`` directional surfaces onto their disparity axes.

    Cell ``t`` of the profile of a direction is the surface value at disparity
    ``t - reach``: ``(t, 0)`` px for horizontal, ``(0, t)`` for vertical,
    ``(t, t)`` and ``(-t, t)`` for the diagonals, whose baselines are sqrt(2)
    longer so a one-cell diagonal step is already one disparity unit.
    Returns ``(..., 4, 2 * reach + 1)``.
    """
    surfaces = np.asarray(surfaces, dtype=np.float64)
    size = surfaces.shape[-1]
    c = size // 2
    if reach is None:
        reach = min(c, size - 1 - c)
    t = np.arange(-reach, reach + 1)
    out = []
    for k, name in enumerate(DIRECTIONS):
        dr, dc = _AXES[name]
        out.append(surfaces[..., k, c + dr * t, c + dc * t])
    return np.stack(out, axis=-2)


def ridge_contrast(profiles):
    """``1 - side / peak`` where ``side`` is the profile maximum at least 2 cells from the peak.

    A sharp peak scores near 1; a ridge running along the disparity axis (a
    pair parallel to linear features) scores near 0.
    """
    profiles = np.asarray(profiles, dtype=np.float64)
    n = profiles.shape[-1]
    i = profiles.argmax(axis=-1)
    peak = np.take_along_axis(profiles, i[..., None], axis=-1)[..., 0]
    far = np.abs(np.arange(n) - i[..., None]) >= 2
    side = np.where(far, profiles, -np.inf).max(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        contrast = np.where(peak > 0, 1.0 - np.maximum(side, 0.0) / peak, 0.0)
    return np.clip(contrast, 0.0, 1.0)


@dataclass
class DirectionCombination:
    profiles: np.ndarray    # (..., 4, L)
    offsets: np.ndarray     # (..., 4) per-direction residual, px
    strengths: np.ndarray   # (..., 4)
    contrast: np.ndarray    # (..., 4)
    ridge: np.ndarray       # (..., 4) bool, ambiguous along the disparity axis
    weights: np.ndarray     # (..., 4) normalized, 0 for ridge or invalid directions
    combined: np.ndarray    # (..., L)
    residual: np.ndarray    # (...,) px
    strength: np.ndarray    # (...,)
    valid: np.ndarray       # (...,)


def combine_directions(surfaces, ridge_threshold=0.3, reach=None, fit_window=FIT_WINDOW):
    """Merge four directional surfaces into one residual disparity per tile.

    Directions are weighted by fitted strength times ridge contrast; ridge
    directions (contrast below ``ridge_threshold``) are excluded.  The
    residual is the weighted mean of the per-direction peak offsets that lie
    within a cell of the combined profile's peak; the combined profile
    (weighted mean of the direction profiles) also gives the strength.  Averaging offsets rather than fitting the combined profile
    avoids a bias: diagonal profiles are sqrt(2) narrower in disparity units,
    and a sum of peaks of unequal width is skewed when they are off center.
    Tiles with no usable direction are invalid.
    """
    prof = direction_profiles(surfaces, reach)
    fits = fit_profile(prof, fit_window)
    contrast = ridge_contrast(prof)
    ridge = contrast < ridge_threshold
    raw = np.where(fits.valid & ~ridge, fits.strength * contrast, 0.0)
    total = raw.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = np.where(total > 0, raw / total, 0.0)
    combined = np.einsum("...d,...dl->...l", weights, prof)
    fit = fit_profile(combined, fit_window)
    valid = fit.valid & (total[..., 0] > 0)
    # directions that disagree with the combined peak by more than a cell are outliers
    agree = (weights > 0) & (np.abs(fits.offset - fit.offset[..., None]) <= 1.0)
    kept = np.where(agree, weights, 0.0)
    norm = kept.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        residual = np.where(norm > 0, np.sum(kept * fits.offset, axis=-1) / norm, fit.offset)
    return DirectionCombination(prof, fits.offset, fits.strength, contrast, ridge, weights, combined,
                                np.where(valid, residual, 0.0), np.where(valid, fit.strength, 0.0),
                                valid)


# --- refinement ---------------------------------------------------------------

@dataclass
class DisparityEstimate:
    disparity: float
    residual: float
    strength: float
    iterations: int
    converged: bool
    target: float = 0.0

    @property
    def valid(self):
        return self.strength > 0


@dataclass
class DisparityMap:
    """Per-tile estimates on the tile grid; every array is ``(rows, cols)``."""

    disparity: np.ndarray
    residual: np.ndarray
    strength: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    target: np.ndarray

    @property
    def shape(self):
        return self.disparity.shape

    @property
    def valid(self):
        return self.strength > 0

    def __getitem__(self, idx):
        return DisparityEstimate(float(self.disparity[idx]), float(self.residual[idx]),
                                 float(self.strength[idx]), int(self.iterations[idx]),
                                 bool(self.converged[idx]), float(self.target[idx]))

    @classmethod
    def empty(cls, shape):
        z = np.zeros(shape)
        return cls(z.copy(), z.copy(), z.copy(), np.zeros(shape, dtype=np.int64),
                   np.zeros(shape, dtype=bool), z.copy())


def measure_residual(frames, tile_index, target, config, full=True):
    """One correlation pass: combined residual, strength and validity at ``target``."""
    from tileproc.pipeline import correlate_tiles, process_tiles

    corrected, in_frame = process_tiles(frames, tile_index, target)
    surfaces, wide = correlate_tiles(corrected, config)
    comb = combine_directions(wide if full else surfaces, config.ridge_threshold,
                              reach=7 if full else None)
    valid = comb.valid & in_frame
    return np.where(valid, comb.residual, 0.0), np.where(valid, comb.strength, 0.0), valid


def refine_tiles(frames, tile_index, initial, config=None):
    """Iteratively refine target disparities of tiles ``(T, 2)`` starting at ``initial``.

    Each pass correlates at the current target and adds the measured residual;
    a tile stops when ``|residual| < step_threshold`` (converged) or after
    ``max_iters`` passes.  Targets are clamped at 0.  The reported disparity is
    the last target plus the last residual.
    """
    from tileproc.pipeline import TPConfig

    config = config or TPConfig()
    tile_index = np.asarray(tile_index, dtype=np.int64).reshape(-1, 2)
    n = len(tile_index)
    target = np.maximum(np.broadcast_to(np.asarray(initial, dtype=float), (n,)).copy(), 0.0)
    residual = np.zeros(n)
    strength = np.zeros(n)
    iterations = np.zeros(n, dtype=np.int64)
    converged = np.zeros(n, dtype=bool)
    last = target.copy()
    active = np.ones(n, dtype=bool)
    for _ in range(config.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r, s, ok = measure_residual(frames, tile_index[idx], target[idx], config)
        iterations[idx] += 1
        residual[idx], strength[idx] = r, s
        last[idx] = target[idx]
        done = ~ok | (np.abs(r) < config.step_threshold)
        converged[idx[ok & done]] = True
        active[idx[done]] = False
        step = idx[~done]
        target[step] = np.maximum(target[step] + residual[step], 0.0)
    disparity = last + residual
    return disparity, residual, strength, iterations, converged, last


def refine_tile(frames, job, config=None):
    """Refine a single :class:`~tileproc.geometry.TileJob`."""
    d, r, s, it, conv, tgt = refine_tiles(frames, [job.tile_index], [job.target_disparity], config)
    return DisparityEstimate(float(d[0]), float(r[0]), float(s[0]), int(it[0]), bool(conv[0]),
                             float(tgt[0]))


def estimate_frame(frames, initial=0.0, config=None, refine=True):
    """Disparity map of a whole frame; ``refine=False`` gives the single-pass estimate."""
    from tileproc.pipeline import TPConfig, grid_indices, run_chunks

    config = config or TPConfig()
    rows, cols = frames.grid_shape
    idx = grid_indices((rows, cols))
    init = np.broadcast_to(np.asarray(initial, dtype=float), (rows, cols)).reshape(-1)
    if not refine:
        config = replace(config, max_iters=1)

    def work(sl):
        return refine_tiles(frames, idx[sl], init[sl], config)

    parts = run_chunks(work, len(idx), config)
    arrays = [np.concatenate([p[k] for p in parts]).reshape(rows, cols) for k in range(6)]
    return DisparityMap(*arrays)


# --- network features ---------------------------------------------------------

def feature_vectors(surfaces, target):
    """``(T, 4, 9, 9)`` surfaces + ``(T,)`` targets -> ``(T, 325)`` float32 records.

    The 9x9x4 layout keeps the direction index innermost.
    """
    surfaces = np.asarray(surfaces)
    flat = np.moveaxis(surfaces, -3, -1).reshape(len(surfaces), -1)
    return np.concatenate([flat, np.asarray(target, dtype=float)[:, None]], axis=1).astype("<f4")


def export_features(path, tile_index, surfaces, target, valid, grid_shape, gt=None):
    """Write valid tiles as one JSON header line followed by little-endian float32 records."""
    valid = np.asarray(valid, dtype=bool)
    tile_index = np.asarray(tile_index, dtype=np.int64)
    records = feature_vectors(np.asarray(surfaces)[valid], np.asarray(target)[valid])
    header = {
        "magic": FEATURE_MAGIC,
        "record_length": FEATURE_LENGTH,
        "dtype": "<f4",
        "layout": "9x9x4 correlation (direction innermost) + target disparity",
        "directions": list(DIRECTIONS),
        "grid_shape": [int(v) for v in grid_shape],
        "count": int(valid.sum()),
        "tile_index": tile_index[valid].tolist(),
        "skipped": tile_index[~valid].tolist(),
    }
    if gt is not None:
        header["gt_disparity"] = [float(v) for v in np.asarray(gt, dtype=float)[valid]]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(records.tobytes())
    return header


def read_features(path):
    """Inverse of :func:`export_features`: ``(header, records (count, 325) float32)``."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line)
        except ValueError as exc:
            raise ValueError(f"{path}: bad feature header") from exc
        if not isinstance(header, dict) or header.get("magic") != FEATURE_MAGIC:
            raise ValueError(f"{path}: not a feature file")
        body = fh.read()
    length = header["record_length"]
    if len(body) != header["count"] * length * 4:
        raise ValueError(f"{path}: expected {header['count']} records, found {len(body) / (4 * length):g}")
    return header, np.frombuffer(body, dtype="<f4").reshape(header["count"], length)


# --- pixel locking ------------------------------------------------------------

@dataclass
class BiasCurve:
    true_disparity: np.ndarray
    refined_bias: np.ndarray
    single_bias: np.ndarray
    refined_rmse: np.ndarray
    single_rmse: np.ndarray


def pixel_locking_sweep(scene, disparities, config=None, interior=0, initial=0.0):
    """Mean signed error of refined and single-pass estimates over a disparity sweep.

    ``scene(d)`` returns ``(frames, ground_truth)`` for true disparity ``d``.
    The single-pass estimate starts at the nearest integer of the refined
    target's start (``initial``) so it shows the raw subpixel fit bias.
    Border tiles (``interior`` rings) are left out.
    """
    out = {k: [] for k in ("rb", "sb", "rr", "sr")}
    disparities = np.asarray(disparities, dtype=float)
    for d in disparities:
        frames, gt = scene(float(d))
        sl = (slice(interior, -interior or None),) * 2
        for refine, bias, rmse in ((True, "rb", "rr"), (False, "sb", "sr")):
            dm = estimate_frame(frames, initial, config, refine=refine)
            err = (dm.disparity - gt.disparity)[sl][gt.valid[sl] & dm.valid[sl]]
            out[bias].append(float(err.mean()) if err.size else math.nan)
            out[rmse].append(float(np.sqrt(np.mean(err ** 2))) if err.size else math.nan)
    return BiasCurve(disparities, *(np.array(out[k]) for k in ("rb", "sb", "rr", "sr")))
