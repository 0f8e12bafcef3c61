"""Synthetic quad-camera scenes with known disparity.

World textures are analytic band-limited functions (sums of sinusoids), so a
texture can be sampled at any real coordinate exactly: rendering at shifted,
distorted or disparity-dependent positions needs no resampling, and
:func:`shift_reference` is an exact fractional-shift oracle.  Gaussian optical
blur is applied per sinusoid as an exact amplitude factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from tileproc import geometry as geo

SCENE_KINDS = ("fronto_plane", "slanted_plane", "two_depth_edge", "bar_target")
FULL_SCALE = 65535


class SceneError(ValueError):
    """Invalid scene specification."""


@dataclass(frozen=True)
class Texture:
    """``f(x, y) = mean + sum_j a_j cos(fx_j x + fy_j y + phase_j)``, frequencies in rad/px."""

    fx: np.ndarray
    fy: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    mean: float = 0.5
    slope: tuple = (0.0, 0.0)  # additive linear ramp (d/dx, d/dy)

    @classmethod
    def band_limited(cls, seed, cutoff=0.5, components=256, contrast=0.12, mean=0.5,
                     orientation=None):
        """Random texture with frequencies uniform in the disk ``|f| <= cutoff * pi``.

        ``orientation="horizontal"`` gives horizontal bars (variation along y
        only), ``"vertical"`` vertical bars.
        """
        if not 0 < cutoff <= 1:
            raise SceneError(f"cutoff must be in (0, 1], got {cutoff}")
        rng = np.random.default_rng(seed)
        fmax = cutoff * np.pi
        if orientation is None:
            r = fmax * np.sqrt(rng.uniform(0.0, 1.0, components))
            theta = rng.uniform(0.0, np.pi, components)
            fx, fy = r * np.cos(theta), r * np.sin(theta)
        else:
            f = rng.uniform(0.05 * fmax, fmax, components)
            zero = np.zeros(components)
            fx, fy = (zero, f) if orientation == "horizontal" else (f, zero)
        amplitude = np.full(components, contrast * math.sqrt(2.0 / components))
        phase = rng.uniform(0.0, 2 * np.pi, components)
        return cls(fx, fy, amplitude, phase, mean)

    @classmethod
    def ramp(cls, gx, gy, offset=0.0):
        empty = np.zeros(0)
        return cls(empty, empty, empty, empty, offset, (gx, gy))

    def blurred(self, sigma):
        """Texture convolved with an isotropic Gaussian of ``sigma`` px."""
        if not sigma:
            return self
        factor = np.exp(-0.5 * sigma ** 2 * (self.fx ** 2 + self.fy ** 2))
        return Texture(self.fx, self.fy, self.amplitude * factor, self.phase, self.mean, self.slope)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        x, y = np.broadcast_arrays(x, y)
        out = np.full(x.shape, float(self.mean)) + self.slope[0] * x + self.slope[1] * y
        flat_x, flat_y, flat = x.ravel(), y.ravel(), out.reshape(-1)
        step = max(1, 2 ** 20 // max(1, len(self.fx)))
        for start in range(0, flat.size, step):
            sl = slice(start, start + step)
            arg = np.outer(flat_x[sl], self.fx) + np.outer(flat_y[sl], self.fy) + self.phase
            flat[sl] += np.cos(arg) @ self.amplitude
        return out

    def sample_grid(self, xs, ys):
        """Evaluate on the separable grid ``(ys[:, None], xs[None, :])``; faster than ``__call__``."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        ex = np.exp(1j * np.outer(xs, self.fx))
        ey = np.exp(1j * np.outer(ys, self.fy))
        coef = self.amplitude * np.exp(1j * self.phase)
        out = ((ey * coef) @ ex.T).real
        return out + self.mean + self.slope[0] * xs[None, :] + self.slope[1] * ys[:, None]


def shift_reference(source, delta, origin=(0.0, 0.0), size=16):
    """Ideal fractional shift of a ``size`` x ``size`` tile by ``delta = (dx, dy)`` px.

    ``source`` is a :class:`Texture` (exact evaluation) or a 2D array
    (periodic band-limited interpolation via the DFT shift theorem).  The
    result at pixel ``(r, c)`` is ``source(origin + (c, r) - delta)``: content
    moves by ``+delta``.
    """
    dx, dy = (float(delta[0]), float(delta[1])) if np.ndim(delta) else (float(delta), 0.0)
    if isinstance(source, Texture):
        xs = origin[0] + np.arange(size) - dx
        ys = origin[1] + np.arange(size) - dy
        return source.sample_grid(xs, ys)
    arr = np.asarray(source, dtype=np.float64)
    ky = np.fft.fftfreq(arr.shape[0])[:, None]
    kx = np.fft.fftfreq(arr.shape[1])[None, :]
    phase = np.exp(-2j * np.pi * (kx * dx + ky * dy))
    return np.fft.ifft2(np.fft.fft2(arr) * phase).real


# --- scenes -------------------------------------------------------------------

@dataclass
class TextureSpec:
    seed: int = 0
    cutoff: float = 0.5
    components: int = 256
    contrast: float = 0.12


@dataclass
class SceneSpec:
    """Scene description; disparities in px, slopes in px of disparity per px."""

    kind: str = "fronto_plane"
    disparity: float = 0.0
    slope: tuple = (0.0, 0.0)
    orientation: str = "vertical"
    d_fg: float = 3.0
    d_bg: float = 1.0
    edge_position: float = 0.5
    width: int = 64
    height: int = 64
    texture: TextureSpec = field(default_factory=TextureSpec)
    noise_sigma: float = 0.0
    blur_sigma: tuple = (0.0, 0.0, 0.0, 0.0)
    color_gains: tuple = (1.0, 1.0, 1.0)  # red, green, blue
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.texture, dict):
            self.texture = TextureSpec(**self.texture)
        if np.isscalar(self.blur_sigma):
            self.blur_sigma = (float(self.blur_sigma),) * 4
        self.slope = tuple(float(s) for s in self.slope)
        self.blur_sigma = tuple(float(s) for s in self.blur_sigma)
        self.color_gains = tuple(float(g) for g in self.color_gains)
        self.validate()

    def validate(self):
        if self.kind not in SCENE_KINDS:
            raise SceneError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        if min(self.disparity, self.d_fg, self.d_bg) < 0:
            raise SceneError("disparities must be non-negative")
        if self.orientation not in ("vertical", "horizontal"):
            raise SceneError(f"orientation must be 'vertical' or 'horizontal', got {self.orientation!r}")
        if not 0 < self.texture.cutoff <= 1:
            raise SceneError("texture cutoff must be in (0, 1]")
        if self.width <= 0 or self.height <= 0 or self.width % 8 or self.height % 8:
            raise SceneError(f"image size must be positive and divisible by 8, got {self.width}x{self.height}")
        if self.noise_sigma < 0 or any(s < 0 for s in self.blur_sigma) or len(self.blur_sigma) != 4:
            raise SceneError("noise sigma and blur sigmas must be non-negative (4 blur values)")
        if len(self.color_gains) != 3:
            raise SceneError("color_gains needs three values (red, green, blue)")
        if self.kind == "two_depth_edge" and not 0 < self.edge_position < 1:
            raise SceneError("edge_position is a fraction of the image in (0, 1)")

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise SceneError("scene spec must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known - {"geometry"}
        if unknown:
            raise SceneError(f"unknown scene spec fields: {sorted(unknown)}")
        try:
            return cls(**{k: v for k, v in data.items() if k in known})
        except (TypeError, ValueError) as exc:
            raise SceneError(str(exc)) from exc

    def to_dict(self):
        return asdict(self)


@dataclass
class GroundTruth:
    """Per-tile true disparity; ``valid`` is False for tiles straddling a depth edge."""

    disparity: np.ndarray
    valid: np.ndarray
    d_fg: np.ndarray | None = None  # per-tile foreground / background disparity, NaN if unmixed
    d_bg: np.ndarray | None = None


def _textures(spec):
    t = spec.texture
    bars = spec.orientation if spec.kind == "bar_target" else None
    main = Texture.band_limited(t.seed, t.cutoff, t.components, t.contrast, orientation=bars)
    second = Texture.band_limited(t.seed + 7919, t.cutoff, t.components, t.contrast)
    return main, second


def _camera_sampler(spec, geom, cam, main, second):
    """Function mapping undistorted camera coords ``(x, y)`` to radiance for camera ``cam``."""
    pos = geom.positions[cam]
    sigma = spec.blur_sigma[cam]
    tex, bg = main.blurred(sigma), second.blurred(sigma)
    center = geom.center

    if spec.kind in ("fronto_plane", "bar_target"):
        d = spec.disparity
        return lambda x, y: tex(x + d * pos[0], y + d * pos[1])

    if spec.kind == "slanted_plane":
        gx, gy = spec.slope

        def sample(x, y):
            ux, uy = x, y
            for _ in range(30):
                d = spec.disparity + gx * (ux - center[0]) + gy * (uy - center[1])
                ux, uy = x + d * pos[0], y + d * pos[1]
            return tex(ux, uy)
        return sample

    # two_depth_edge: foreground on the low-coordinate side of the edge, painted over background
    axis = 0 if spec.orientation == "vertical" else 1
    size = spec.width if axis == 0 else spec.height
    edge = spec.edge_position * size

    def sample(x, y):
        fx, fy = x + spec.d_fg * pos[0], y + spec.d_fg * pos[1]
        fg = (fx if axis == 0 else fy) < edge
        return np.where(fg, tex(fx, fy), bg(x + spec.d_bg * pos[0], y + spec.d_bg * pos[1]))
    return sample


def _render_luminance(spec, geom, cam, main, second):
    h, w = spec.height, spec.width
    sampler = _camera_sampler(spec, geom, cam, main, second)
    xs, ys = np.arange(w, dtype=float), np.arange(h, dtype=float)
    if not any(geom.distortion) and spec.kind in ("fronto_plane", "bar_target"):
        pos = geom.positions[cam]
        d = spec.disparity
        return main.blurred(spec.blur_sigma[cam]).sample_grid(xs + d * pos[0], ys + d * pos[1])
    gx, gy = np.meshgrid(xs, ys)
    pts = geo.undistort(geom, np.stack([gx, gy], axis=-1))
    return sampler(pts[..., 0], pts[..., 1])


def bayer_mosaic(luminance, color_gains=(1.0, 1.0, 1.0)):
    """RG/GB mosaic (red at even row, even column) of a gray image scaled per color."""
    r, g, b = color_gains
    out = luminance * g
    out[0::2, 0::2] = luminance[0::2, 0::2] * r
    out[1::2, 1::2] = luminance[1::2, 1::2] * b
    return out


def ground_truth(spec, geom):
    rows, cols = spec.height // 8, spec.width // 8
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    centers = geo.tile_center(np.stack([r, c], axis=-1))
    u = geo.undistort(geom, centers)
    disparity = np.zeros((rows, cols))
    valid = np.ones((rows, cols), dtype=bool)
    d_fg = np.full((rows, cols), np.nan)
    d_bg = np.full((rows, cols), np.nan)
    if spec.kind in ("fronto_plane", "bar_target"):
        disparity[:] = spec.disparity
    elif spec.kind == "slanted_plane":
        gx, gy = spec.slope
        disparity = spec.disparity + gx * (u[..., 0] - geom.center[0]) + gy * (u[..., 1] - geom.center[1])
    else:
        axis = 0 if spec.orientation == "vertical" else 1
        size = spec.width if axis == 0 else spec.height
        edge = spec.edge_position * size
        coord = u[..., axis]
        fg = coord < edge
        disparity = np.where(fg, spec.d_fg, spec.d_bg)
        # receptive field is 16 px; cameras see the edge displaced by up to max(d)/2
        margin = 8 + 0.5 * max(spec.d_fg, spec.d_bg)
        mixed = np.abs(coord - edge) < margin
        valid = ~mixed
        d_fg[mixed] = spec.d_fg
        d_bg[mixed] = spec.d_bg
    disparity = np.asarray(disparity, dtype=float)
    # tiles whose 16x16 window leaves the sensor in any camera see only mirror padding there
    offsets = geo.disparity_to_offsets(geom, centers, np.maximum(disparity, 0.0))
    integer, _ = geo.split_offset(offsets)
    origin = geo.tile_origin(np.stack([r, c], axis=-1))[..., None, ::-1] + integer  # (x, y)
    inside = np.all((origin >= 0) & (origin + geo.TILE_SIZE <= np.array([spec.width, spec.height])),
                    axis=(-2, -1))
    return GroundTruth(disparity, valid & inside, d_fg, d_bg)


def render(spec, geom=None, size=None):
    """Render four Bayer frames of ``spec`` and the per-tile ground truth.

    Returns ``(QuadFrameSet, GroundTruth)``; pixel values are in [0, 1] full scale.
    """
    from tileproc.pipeline import QuadFrameSet

    if size is not None:
        spec = SceneSpec(**{**spec.to_dict(), "width": int(size[0]), "height": int(size[1])})
    spec.validate()
    geom = geom or geo.CameraGeometry()
    if tuple(geom.image_size) != (spec.width, spec.height):
        geom = geom.with_size(spec.width, spec.height)
    main, second = _textures(spec)
    noise_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))
    images = []
    for cam in range(4):
        lum = _render_luminance(spec, geom, cam, main, second)
        img = bayer_mosaic(lum, spec.color_gains)
        if spec.noise_sigma:
            img = img + noise_rng.normal(0.0, spec.noise_sigma, img.shape)
        images.append(np.clip(img, 0.0, 1.0))
    return QuadFrameSet(np.stack(images), geom), ground_truth(spec, geom)
