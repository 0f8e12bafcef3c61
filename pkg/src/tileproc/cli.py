"""Command line: ``tileproc synth | run | sweep | bench``.

Exit codes: 0 success, 1 sweep tolerance violated, 2 usage or invalid scene
spec, 3 unreadable or malformed input files.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from tileproc import io as tio
from tileproc import sweeps, synth
from tileproc.disparity import combine_directions, estimate_frame, export_features
from tileproc.geometry import CameraGeometry
from tileproc.pipeline import TPConfig, correlate_tiles, grid_indices, process_frame, process_tiles, StageTimer

EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE, EXIT_FORMAT = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# --- run configuration ----------------------------------------------------------

@dataclass
class RunConfig:
    """Settings of ``tileproc run``; every field has a documented default."""

    geometry: str | None = None        # calibration JSON; default <frames>/geometry.json
    color_weights: tuple = (0.25, 0.25, 0.5)
    epsilon: float = 0.05
    lpf_sigma: float | None = None
    alpha_tau: float = 0.05
    ridge_threshold: float = 0.3
    refinement: dict = field(default_factory=lambda: {"step_threshold": 0.001, "max_iters": 10})
    initial_disparity: float = 0.0
    workers: int = 1
    texture: bool = False
    features: bool = False
    report: bool = False

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise CliError("config must be a JSON object", EXIT_FORMAT)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise CliError(f"unknown config keys: {unknown}", EXIT_FORMAT)
        cfg = cls(**data)
        refine = {"step_threshold": 0.001, "max_iters": 10}
        extra = set(cfg.refinement) - set(refine)
        if extra:
            raise CliError(f"unknown refinement keys: {sorted(extra)}", EXIT_FORMAT)
        refine.update(cfg.refinement)
        cfg.refinement = refine
        cfg.color_weights = tuple(cfg.color_weights)
        cfg.tp_config()  # validate before any processing
        if cfg.initial_disparity < 0:
            raise CliError("initial_disparity must be >= 0", EXIT_FORMAT)
        return cfg

    def tp_config(self):
        try:
            return TPConfig(color_weights=self.color_weights, epsilon=float(self.epsilon),
                            lpf_sigma=self.lpf_sigma, alpha_tau=float(self.alpha_tau),
                            step_threshold=float(self.refinement["step_threshold"]),
                            max_iters=int(self.refinement["max_iters"]),
                            ridge_threshold=float(self.ridge_threshold), workers=int(self.workers))
        except (TypeError, ValueError) as exc:
            raise CliError(f"invalid config: {exc}", EXIT_FORMAT) from exc


def load_run_config(path):
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}", EXIT_FORMAT) from exc
    except ValueError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_FORMAT) from exc
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise CliError(f"invalid config: {exc}", EXIT_FORMAT) from exc


# --- commands -------------------------------------------------------------------

def load_scene(path, seed=None):
    """Scene spec JSON -> ``(SceneSpec, CameraGeometry)``; raises CliError(exit 2)."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read spec {path}: {exc.strerror}", EXIT_USAGE) from exc
    except ValueError as exc:
        raise CliError(f"spec {path} is not valid JSON: {exc}", EXIT_USAGE) from exc
    try:
        spec = synth.SceneSpec.from_dict(data)
        geom_kw = data.get("geometry") or {}
        if not isinstance(geom_kw, dict):
            raise synth.SceneError("geometry must be an object")
        geom = CameraGeometry(**{k: tuple(v) if isinstance(v, list) else v for k, v in geom_kw.items()})
    except (synth.SceneError, TypeError, ValueError) as exc:
        raise CliError(f"invalid scene spec: {exc}", EXIT_USAGE) from exc
    if seed is not None:
        spec = replace(spec, seed=int(seed))
    return spec, geom.with_size(spec.width, spec.height)


def cmd_synth(args):
    spec, geom = load_scene(args.spec, args.seed)
    frames, gt = synth.render(spec, geom)
    out = Path(args.out)
    tio.write_frames(out, frames)
    tio.write_gt_csv(out / "gt.csv", gt)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote 4 frames {spec.width}x{spec.height} and {gt.disparity.size} GT tiles to {out}")
    return EXIT_OK


def _load_gt(frames_dir, shape):
    path = Path(frames_dir) / "gt.csv"
    if not path.is_file():
        return None
    table = tio.read_table(path, shape)
    return synth.GroundTruth(table["disparity"], table["valid"] > 0, table.get("d_fg"), table.get("d_bg"))


def cmd_run(args):
    cfg = load_run_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    tp = cfg.tp_config()
    frames = tio.read_frames(args.frames, cfg.geometry)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dmap = estimate_frame(frames, cfg.initial_disparity, tp)
    tio.write_disparity_csv(out / "disparity.csv", dmap)
    gt = _load_gt(args.frames, dmap.shape)
    written = ["disparity.csv"]
    if cfg.texture or cfg.features:
        fc = process_frame(frames, np.maximum(dmap.disparity, 0.0), tp, texture=cfg.texture)
        if cfg.texture:
            tio.write_pam_rgba(out / "texture.pam", fc.texture)
            written.append("texture.pam")
        if cfg.features:
            c = fc.corr
            gt_flat = gt.disparity.reshape(-1) if gt is not None else None
            export_features(out / "features.bin", c.tile_index, c.surfaces, c.target_disparity,
                            c.valid & dmap.valid.reshape(-1), dmap.shape, gt_flat)
            written.append("features.bin")
    if cfg.report or args.report:
        from tileproc import plotting

        plotting.plot_disparity(out / "disparity.png", dmap, gt)
        written.append("disparity.png")
        if cfg.texture:
            plotting.plot_texture(out / "texture.png", fc.texture)
            written.append("texture.png")
        if gt is not None:
            sel = gt.valid & dmap.valid
            err = dmap.disparity[sel] - gt.disparity[sel]
            rmse = float(np.sqrt(np.mean(err ** 2))) if err.size else float("nan")
            tio.write_csv(out / "summary.csv", ("tiles", "scored", "rmse_px", "max_abs_error_px", "converged"),
                          [(dmap.disparity.size, int(sel.sum()), rmse,
                            float(np.abs(err).max()) if err.size else float("nan"),
                            float(dmap.converged.mean()))])
            written.append("summary.csv")
    print(f"{int(dmap.valid.sum())}/{dmap.disparity.size} valid tiles; wrote {', '.join(written)} to {out}")
    return EXIT_OK


def cmd_sweep(args):
    func = sweeps.MODES[args.mode]
    if args.mode == "pixel-locking":
        result = func(step=args.step, seed=args.seed)
    elif args.mode == "reconstruction":
        result = func(seed=args.seed)
    else:
        result = func()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tio.write_csv(out, result.header, result.rows)
    if args.plot:
        from tileproc import plotting

        plotting.plot_sweep(out.with_suffix(".png"), result)
    status = "PASS" if result.passed else "FAIL"
    print(f"{args.mode}: worst {result.metric:.3g} (tolerance {result.tolerance:g}) {status}")
    return EXIT_OK if result.passed else EXIT_TOLERANCE


BENCH_STAGES = ("extract", "mclt", "kernel", "correlate", "fit")


def cmd_bench(args):
    frames = tio.read_frames(args.frames)
    tp = TPConfig()
    idx = grid_indices(frames.grid_shape)
    target = np.zeros(len(idx))
    rows = []
    for rep in range(args.repeat):
        timer = StageTimer()
        start = time.perf_counter()
        corrected, _ = process_tiles(frames, idx, target, timer)
        with timer("correlate"):
            _, wide = correlate_tiles(corrected, tp)
        with timer("fit"):
            combine_directions(wide, tp.ridge_threshold, reach=7)
        wall = time.perf_counter() - start
        row = {"repeat": rep, "tiles": len(idx), "wall_s": wall, "tiles_per_s": len(idx) / wall}
        row.update({f"{s}_s": timer.totals.get(s, 0.0) for s in BENCH_STAGES})
        rows.append(row)
    header = ("repeat", "tiles", "wall_s", "tiles_per_s") + tuple(f"{s}_s" for s in BENCH_STAGES)
    table = [tuple(r[h] for h in header) for r in rows]
    if args.out:
        tio.write_csv(args.out, header, table)
        if args.plot:
            from tileproc import plotting

            plotting.plot_bench(Path(args.out).with_suffix(".png"), rows, [f"{s}_s" for s in BENCH_STAGES])
    else:
        sys.stdout.write(",".join(header) + "\n")
        for r in table:
            sys.stdout.write(",".join(tio._fmt(v) for v in r) + "\n")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="tileproc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic quad-camera scene")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the spec's noise seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="estimate a disparity map from four frames")
    p.add_argument("--frames", required=True, help="directory with cam0..3.pgm and geometry.json")
    p.add_argument("--config", help="run config JSON (defaults apply when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, help="worker threads (overrides the config)")
    p.add_argument("--report", action="store_true", help="also render figures and a summary")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a property sweep and write its curve")
    p.add_argument("--mode", required=True, choices=sorted(sweeps.MODES))
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=0.02, help="pixel-locking disparity step [px]")
    p.add_argument("--plot", action="store_true", help="write a PNG next to the CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="time the tile pipeline stages")
    p.add_argument("--frames", required=True)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", None) is not None and args.workers < 1:
        parser.error("--workers must be >= 1")
    if getattr(args, "step", 1.0) <= 0:
        parser.error("--step must be positive")
    if getattr(args, "repeat", 1) < 1:
        parser.error("--repeat must be >= 1")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"tileproc: {exc}", file=sys.stderr)
        return exc.code
    except tio.FormatError as exc:
        print(f"tileproc: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
