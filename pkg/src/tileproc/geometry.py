"""Quad-camera geometry: virtual center camera, radial distortion, per-tile offsets.

Pixel coordinates are ``(x, y)`` with the origin at the center of the top-left
pixel.  Camera positions are given in baseline units relative to the virtual
camera at their centroid; for a scene at disparity ``d`` the point seen by the
virtual camera at undistorted position ``u`` appears in camera ``i`` at
``u - d * position_i``.  Hence the left cameras see content shifted right and
``offset_0 - offset_1 == (d, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tileproc.fd import CalibKernel, identity_tensor
from tileproc.mclt import COLORS

TILE_STRIDE = 8
TILE_SIZE = 16
DEFAULT_POSITIONS = ((-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5))


class DistortionError(ArithmeticError):
    """Radial distortion could not be inverted."""


@dataclass(frozen=True)
class CameraGeometry:
    # chosen so that 5 px of disparity is 100 m at the default baseline and pitch
    focal_length_m: float = 5 * 100.0 * 2.2e-6 / 0.258
    baseline_m: float = 0.258
    pixel_pitch_m: float = 2.2e-6
    image_size: tuple = (2592, 1936)  # (width, height)
    camera_positions: tuple = DEFAULT_POSITIONS
    distortion: tuple = (0.0, 0.0, 0.0)  # k1 [px^-2], k2 [px^-4], k3 [px^-6]
    principal_point: tuple | None = None

    def __post_init__(self):
        if self.baseline_m <= 0 or self.pixel_pitch_m <= 0 or self.focal_length_m <= 0:
            raise ValueError("baseline, pixel pitch and focal length must be positive")
        pos = np.asarray(self.camera_positions, dtype=float)
        if pos.shape != (4, 2):
            raise ValueError(f"need 4 camera positions, got shape {pos.shape}")
        if np.abs(pos.sum(axis=0)).max() > 1e-12:
            raise ValueError("camera positions must sum to zero (virtual camera at the centroid)")
        if len(self.distortion) != 3:
            raise ValueError("distortion needs three coefficients (k1, k2, k3)")

    @property
    def positions(self):
        return np.asarray(self.camera_positions, dtype=float)

    @property
    def center(self):
        if self.principal_point is not None:
            return np.asarray(self.principal_point, dtype=float)
        w, h = self.image_size
        return np.array([(w - 1) / 2.0, (h - 1) / 2.0])

    def disparity_at(self, distance_m):
        """Disparity in px of a point at ``distance_m`` for a camera pair one baseline apart."""
        return self.baseline_m * self.focal_length_m / (self.pixel_pitch_m * np.asarray(distance_m))

    def distance_at(self, disparity_px):
        return self.baseline_m * self.focal_length_m / (self.pixel_pitch_m * np.asarray(disparity_px))

    def with_size(self, width, height):
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(image_size=(int(width), int(height)), principal_point=None)
        return CameraGeometry(**kw)


def _radial_factor(k, r2):
    return 1.0 + k[0] * r2 + k[1] * r2 ** 2 + k[2] * r2 ** 3


def distort(geom, points):
    """Undistorted -> distorted pixel coordinates, ``points`` shaped ``(..., 2)``."""
    points = np.asarray(points, dtype=float)
    k = geom.distortion
    if not any(k):
        return points.copy()
    rel = points - geom.center
    r2 = np.sum(rel ** 2, axis=-1, keepdims=True)
    return geom.center + rel * _radial_factor(k, r2)


def undistort(geom, points, tol=1e-9, max_iter=50, damping=1.0):
    """Distorted -> undistorted coordinates by damped fixed-point iteration on the radius."""
    points = np.asarray(points, dtype=float)
    k = geom.distortion
    if not any(k):
        return points.copy()
    rel = points - geom.center
    rd = np.sqrt(np.sum(rel ** 2, axis=-1, keepdims=True))
    ru = rd.copy()
    for _ in range(max_iter):
        target = rd / _radial_factor(k, ru ** 2)
        step = target - ru
        ru = ru + damping * step
        if not np.all(np.isfinite(ru)):
            break
        if np.abs(step).max(initial=0.0) <= tol:
            scale = np.divide(ru, rd, out=np.ones_like(rd), where=rd > 0)
            return geom.center + rel * scale
    raise DistortionError("undistortion did not converge; distortion coefficients are not invertible here")


def disparity_to_offsets(geom, tile_center, target_disparity):
    """Per-camera pixel offsets ``(..., 4, 2)`` of a tile at ``tile_center`` for ``target_disparity``."""
    d = np.asarray(target_disparity, dtype=float)
    if np.any(d < 0):
        raise ValueError(f"target disparity must be non-negative, got {target_disparity}")
    center = np.asarray(tile_center, dtype=float)
    shifts = -d[..., None, None] * geom.positions  # (..., 4, 2)
    if not any(geom.distortion):
        return shifts + np.zeros(center.shape[:-1] + (1, 2))
    u = undistort(geom, center)[..., None, :]
    return distort(geom, u + shifts) - center[..., None, :]


def split_offset(offset):
    """Split real offsets into round-half-away-from-zero integers and a fraction in [-0.5, 0.5]."""
    offset = np.asarray(offset, dtype=float)
    integer = np.sign(offset) * np.floor(np.abs(offset) + 0.5)
    return integer.astype(np.int64), offset - integer


def tile_center(tile_index):
    """Pixel ``(x, y)`` center of the stride-8 tile ``(row, col)``."""
    idx = np.asarray(tile_index, dtype=float)
    return np.stack([TILE_STRIDE * idx[..., 1] + 3.5, TILE_STRIDE * idx[..., 0] + 3.5], axis=-1)


def tile_origin(tile_index):
    """Top-left pixel ``(row, col)`` of the 16x16 window of tile ``(row, col)`` at zero offset."""
    idx = np.asarray(tile_index, dtype=np.int64)
    return TILE_STRIDE * idx - (TILE_SIZE - TILE_STRIDE) // 2


@dataclass
class TileJob:
    tile_index: tuple
    target_disparity: float
    offsets: np.ndarray  # (4, 2) real (x, y)
    integer_offsets: np.ndarray = field(init=False)
    fractional_offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.integer_offsets, self.fractional_offsets = split_offset(self.offsets)


def make_job(geom, tile_index, target_disparity):
    center = tile_center(tile_index)
    return TileJob(tuple(int(i) for i in tile_index), float(target_disparity),
                   disparity_to_offsets(geom, center, target_disparity))


# --- kernel grid ------------------------------------------------------------

@dataclass
class KernelGrid:
    """Lattice of calibration kernels for one camera; node ``(i, j)`` sits at pixel ``(j, i) * spacing``."""

    spacing: float
    shape: tuple  # (rows, cols)
    tensors: np.ndarray  # (rows, cols, 3, 4, 8, 8)
    offsets: np.ndarray  # (rows, cols, 3, 2)
    image_size: tuple = None

    @classmethod
    def identity(cls, image_size, spacing=256.0):
        w, h = image_size
        rows = int(np.ceil((h - 1) / spacing)) + 1
        cols = int(np.ceil((w - 1) / spacing)) + 1
        tensors = np.broadcast_to(identity_tensor(), (rows, cols) + identity_tensor().shape)
        offsets = np.zeros((rows, cols, len(COLORS), 2))
        return cls(float(spacing), (rows, cols), tensors, offsets, tuple(image_size))

    def __post_init__(self):
        rows, cols = self.shape
        if self.tensors.shape[:2] != (rows, cols) or self.offsets.shape[:2] != (rows, cols):
            raise ValueError("kernel grid arrays do not match its shape")
        if self.image_size is not None:
            w, h = self.image_size
            if (cols - 1) * self.spacing < w - 1 or (rows - 1) * self.spacing < h - 1:
                raise ValueError("kernel grid does not cover the image")

    @property
    def all_identity(self):
        return bool(np.all(self.offsets == 0) and np.all(self.tensors == identity_tensor()))


def lookup_kernel(grid, tile_center, color=None):
    """Kernel for a tile: nearest-node tensor, bilinearly interpolated center offsets.

    Returns a :class:`CalibKernel` for all colors, or ``(tensor, offset)`` for one color.
    """
    x, y = (float(v) for v in tile_center)
    rows, cols = grid.shape
    gx, gy = x / grid.spacing, y / grid.spacing
    w, h = grid.image_size if grid.image_size else ((cols - 1) * grid.spacing + 1, (rows - 1) * grid.spacing + 1)
    if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
        raise ValueError(f"tile center {tile_center} outside the image")
    j0 = min(int(np.floor(gx)), cols - 2) if cols > 1 else 0
    i0 = min(int(np.floor(gy)), rows - 2) if rows > 1 else 0
    fx, fy = gx - j0, gy - i0
    j1, i1 = min(j0 + 1, cols - 1), min(i0 + 1, rows - 1)
    off = ((1 - fy) * ((1 - fx) * grid.offsets[i0, j0] + fx * grid.offsets[i0, j1])
           + fy * ((1 - fx) * grid.offsets[i1, j0] + fx * grid.offsets[i1, j1]))
    # nearest node, ties toward the lower index
    ni = min(int(np.ceil(gy - 0.5)), rows - 1)
    nj = min(int(np.ceil(gx - 0.5)), cols - 1)
    kernel = CalibKernel(np.asarray(grid.tensors[ni, nj]), off)
    if color is None:
        return kernel
    c = COLORS.index(color)
    return kernel.tensor[c], kernel.center_offset[c]
