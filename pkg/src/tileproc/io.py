"""File formats: 16-bit PGM frames, RGBA PAM textures, calibration JSON, CSV tables.

All writers are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path

import numpy as np

from tileproc.fd import identity_tensor
from tileproc.geometry import CameraGeometry, KernelGrid
from tileproc.mclt import COLORS

MAXVAL = 65535
CALIBRATION_FORMAT = "tileproc-calibration/1"
FRAME_NAMES = tuple(f"cam{i}.pgm" for i in range(4))
GEOMETRY_NAME = "geometry.json"


class FormatError(ValueError):
    """Malformed or missing input file."""


# --- images -------------------------------------------------------------------

def to_counts(image):
    """Full-scale floats in [0, 1] -> uint16 counts (clipped, rounded half to even)."""
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * MAXVAL).astype(np.uint16)


def write_pgm(path, image):
    """Write a 2D image in [0, 1] as binary 16-bit P5 (big-endian samples)."""
    counts = to_counts(image)
    h, w = counts.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        fh.write(counts.astype(">u2").tobytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data, count, start=2):
    tokens, pos = [], start
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if not m:
            raise FormatError("truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos + 1  # single whitespace byte before the raster


def read_pgm(path):
    """Read a P5 PGM (8 or 16 bit) into floats in [0, 1]."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    try:
        (w, h, maxval), pos = _header_tokens(data, 3)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval <= MAXVAL:
        raise FormatError(f"{path}: bad PGM dimensions or maxval")
    dtype = ">u2" if maxval > 255 else "u1"
    size = w * h * np.dtype(dtype).itemsize
    raster = data[pos:pos + size]
    if len(raster) != size:
        raise FormatError(f"{path}: raster truncated ({len(raster)} of {size} bytes)")
    return np.frombuffer(raster, dtype=dtype).reshape(h, w).astype(np.float64) / maxval


def write_pam_rgba(path, rgba):
    """Write an ``(H, W, 4)`` image in [0, 1] as a 16-bit P7 RGB_ALPHA PAM."""
    counts = to_counts(rgba)
    h, w, depth = counts.shape
    if depth != 4:
        raise ValueError("expected 4 channels")
    header = f"P7\nWIDTH {w}\nHEIGHT {h}\nDEPTH 4\nMAXVAL {MAXVAL}\nTUPLTYPE RGB_ALPHA\nENDHDR\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(counts.astype(">u2").tobytes())


def read_pam(path):
    data = Path(path).read_bytes()
    end = data.find(b"ENDHDR\n")
    if data[:3] != b"P7\n" or end < 0:
        raise FormatError(f"{path}: not a PAM file")
    fields = dict(line.split(None, 1) for line in data[3:end].decode("ascii").splitlines() if line.strip())
    w, h, depth, maxval = (int(fields[k]) for k in ("WIDTH", "HEIGHT", "DEPTH", "MAXVAL"))
    dtype = ">u2" if maxval > 255 else "u1"
    raster = np.frombuffer(data[end + 7:], dtype=dtype)
    if raster.size != w * h * depth:
        raise FormatError(f"{path}: raster truncated")
    return raster.reshape(h, w, depth).astype(np.float64) / maxval


# --- calibration ----------------------------------------------------------------

def geometry_to_dict(geom, kernel_grids=None):
    out = {
        "format": CALIBRATION_FORMAT,
        "baseline_m": geom.baseline_m,
        "pixel_pitch_m": geom.pixel_pitch_m,
        "focal_length_m": geom.focal_length_m,
        "image_size": list(geom.image_size),
        "distortion": list(geom.distortion),
        "camera_positions": [list(p) for p in geom.camera_positions],
    }
    if geom.principal_point is not None:
        out["principal_point"] = list(geom.principal_point)
    if kernel_grids is not None:
        grid0 = kernel_grids[0]
        out["kernel_grid"] = {
            "spacing": grid0.spacing,
            "shape": list(grid0.shape),
            "cameras": [_grid_nodes(g) for g in kernel_grids],
        }
    return out


def _grid_nodes(grid):
    identity = identity_tensor()
    nodes = []
    rows, cols = grid.shape
    for i in range(rows):
        for j in range(cols):
            tensor = np.asarray(grid.tensors[i, j])
            node = {"row": i, "col": j, "offsets": np.asarray(grid.offsets[i, j]).tolist()}
            if not np.array_equal(tensor, identity):
                node["tensor"] = tensor.tolist()
            nodes.append(node)
    return {"nodes": nodes}


def geometry_from_dict(data):
    """Parse calibration JSON; returns ``(CameraGeometry, kernel_grids or None)``."""
    if not isinstance(data, dict):
        raise FormatError("calibration must be a JSON object")
    if data.get("format") != CALIBRATION_FORMAT:
        raise FormatError(f"unsupported calibration format {data.get('format')!r}, expected {CALIBRATION_FORMAT!r}")
    try:
        geom = CameraGeometry(
            focal_length_m=float(data["focal_length_m"]),
            baseline_m=float(data["baseline_m"]),
            pixel_pitch_m=float(data["pixel_pitch_m"]),
            image_size=tuple(int(v) for v in data["image_size"]),
            camera_positions=tuple(tuple(float(v) for v in p) for p in data["camera_positions"]),
            distortion=tuple(float(v) for v in data.get("distortion", (0.0, 0.0, 0.0))),
            principal_point=tuple(data["principal_point"]) if data.get("principal_point") else None,
        )
    except KeyError as exc:
        raise FormatError(f"calibration is missing {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad calibration: {exc}") from exc
    grids = None
    if data.get("kernel_grid"):
        grids = _parse_grids(data["kernel_grid"], geom)
    return geom, grids


def _parse_grids(spec, geom):
    try:
        spacing = float(spec["spacing"])
        rows, cols = (int(v) for v in spec["shape"])
        cameras = spec["cameras"]
        if len(cameras) != 4:
            raise FormatError("kernel_grid needs 4 cameras")
        grids = []
        for cam in cameras:
            tensors = np.broadcast_to(identity_tensor(), (rows, cols) + identity_tensor().shape).copy()
            offsets = np.zeros((rows, cols, len(COLORS), 2))
            for node in cam["nodes"]:
                i, j = int(node["row"]), int(node["col"])
                offsets[i, j] = np.asarray(node.get("offsets", 0.0), dtype=float)
                if node.get("tensor") is not None:
                    tensors[i, j] = np.asarray(node["tensor"], dtype=float)
            grids.append(KernelGrid(spacing, (rows, cols), tensors, offsets, tuple(geom.image_size)))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"bad kernel_grid: {exc}") from exc
    return grids


def write_geometry(path, geom, kernel_grids=None):
    Path(path).write_text(json.dumps(geometry_to_dict(geom, kernel_grids), indent=2) + "\n")


def read_geometry(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    return geometry_from_dict(data)


# --- frame directories -------------------------------------------------------

def write_frames(directory, frames):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, image in zip(FRAME_NAMES, frames.images):
        write_pgm(directory / name, image)
    write_geometry(directory / GEOMETRY_NAME, frames.geometry,
                   None if frames.identity_kernels else frames.kernel_grids)


def read_frames(directory, geometry_path=None):
    from tileproc.pipeline import QuadFrameSet

    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"{directory}: not a directory")
    missing = [n for n in FRAME_NAMES if not (directory / n).is_file()]
    if missing:
        raise FormatError(f"{directory}: missing frame files {missing}")
    geom_file = Path(geometry_path) if geometry_path else directory / GEOMETRY_NAME
    if not geom_file.is_file():
        raise FormatError(f"geometry file {geom_file} not found")
    geom, grids = read_geometry(geom_file)
    images = np.stack([read_pgm(directory / n) for n in FRAME_NAMES])
    try:
        return QuadFrameSet(images, geom, grids)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


# --- CSV tables -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    return f"{v:.6f}"


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


DISPARITY_HEADER = ("tile_row", "tile_col", "disparity", "strength", "iterations", "converged")
GT_HEADER = ("tile_row", "tile_col", "disparity", "valid", "d_fg", "d_bg")


def write_disparity_csv(path, dmap):
    rows, cols = dmap.shape
    write_csv(path, DISPARITY_HEADER,
              ((r, c, dmap.disparity[r, c], dmap.strength[r, c], dmap.iterations[r, c], dmap.converged[r, c])
               for r in range(rows) for c in range(cols)))


def write_gt_csv(path, gt):
    rows, cols = gt.disparity.shape
    fg = gt.d_fg if gt.d_fg is not None else np.full((rows, cols), np.nan)
    bg = gt.d_bg if gt.d_bg is not None else np.full((rows, cols), np.nan)
    write_csv(path, GT_HEADER, ((r, c, gt.disparity[r, c], gt.valid[r, c], fg[r, c], bg[r, c])
                                for r in range(rows) for c in range(cols)))


def read_table(path, shape=None):
    """CSV with ``tile_row``/``tile_col`` columns -> dict of ``(rows, cols)`` float arrays."""
    header, rows = read_csv(path)
    data = np.array([[float(v) for v in row] for row in rows]) if rows else np.zeros((0, len(header)))
    r = data[:, header.index("tile_row")].astype(int)
    c = data[:, header.index("tile_col")].astype(int)
    shape = shape or (r.max() + 1, c.max() + 1)
    out = {}
    for k, name in enumerate(header):
        if name in ("tile_row", "tile_col"):
            continue
        arr = np.full(shape, np.nan)
        arr[r, c] = data[:, k]
        out[name] = arr
    return out
