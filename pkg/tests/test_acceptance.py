"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (shown even under output
capture).  Run ``python tests/test_acceptance.py`` for the lines alone.
"""

import contextlib
import io
import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from tileproc import dtt, mclt, sweeps, synth
from tileproc.cli import main as cli_main
from tileproc.disparity import (combine_directions, estimate_frame, export_features, feature_vectors,
                                read_features, refine_tiles)
from tileproc.fd import DIRECTIONS
from tileproc.pipeline import TPConfig, grid_indices, process_frame
from tileproc.synth import SceneSpec, TextureSpec


def report(number, passed, detail, capsys=None):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    return passed


def plane(d, noise=0.0, seed=0, size=64, **kw):
    return synth.render(SceneSpec(disparity=d, width=size, height=size, noise_sigma=noise, seed=seed,
                                  texture=TextureSpec(seed=seed), **kw))


# --- criteria -------------------------------------------------------------------

def criterion_1():
    start = time.perf_counter()
    res = sweeps.reconstruction_sweep(count=100, size=64, seed=0)
    elapsed = time.perf_counter() - start
    ok = res.metric <= 1e-9 and elapsed < 5
    return ok, f"MCLT reconstruction max interior error {res.metric:.2e} (<= 1e-9), {elapsed:.2f} s (< 5 s)"


def criterion_2():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for kind in dtt.KINDS:
        x = rng.normal(size=(1000, dtt.N))
        worst = max(worst, float(np.abs(dtt.transform(x, kind) - dtt.reference(x, kind)).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 1
    return ok, f"DTT fast vs definition over 1000 vectors x {len(dtt.KINDS)} kinds {worst:.2e} (<= 1e-12), {elapsed:.2f} s (< 1 s)"


def criterion_3():
    rng = np.random.default_rng(3)
    worst, counts = 0.0, []
    for phase in range(4):
        tiles = rng.normal(size=(50, 16, 16))
        wh, wv = mclt.make_window(rng.uniform(-0.5, 0.5)), mclt.make_window(rng.uniform(-0.5, 0.5))
        fast = mclt.mclt_forward_bayer(tiles, phase, wh, wv)
        worst = max(worst, float(np.abs(fast - mclt.mclt_bayer_reference(tiles, phase, wh, wv)).max()))
        with dtt.count_transforms() as count:
            mclt.mclt_forward_bayer(tiles[0], phase)
        counts.append(count[0])
    ok = worst <= 1e-12 and all(c == 4 for c in counts)
    return ok, f"Bayer fold vs zero-stuffed reference {worst:.2e} (<= 1e-12), 2D DTT sets per tile {counts} (== 4)"


def criterion_4():
    start = time.perf_counter()
    res = sweeps.shift_theorem_sweep()
    elapsed = time.perf_counter() - start
    ok = res.passed and elapsed < 10
    return ok, f"shift theorem worst peak error {res.metric:.4f} px over {len(res.rows)} cases (<= 0.02), {elapsed:.1f} s (< 10 s)"


def precision_sweep(noise):
    errors = []
    for k, d in enumerate(np.arange(0.0, 5.0 + 1e-9, 0.25)):
        frames, gt = plane(float(d), noise=noise, seed=k)
        dm = estimate_frame(frames, 0.0)
        sel = gt.valid & dm.valid
        errors.append((dm.disparity - gt.disparity)[sel])
    err = np.concatenate(errors)
    return float(np.sqrt(np.mean(err ** 2))), err.size


def criterion_5():
    start = time.perf_counter()
    clean, n_clean = precision_sweep(0.0)
    noisy, n_noisy = precision_sweep(0.02)
    elapsed = time.perf_counter() - start
    ok = clean <= 0.05 and noisy <= 0.10 and elapsed < 120
    return ok, (f"plane disparity 0-5 px step 0.25: RMSE {clean:.4f} px noise-free (<= 0.05, {n_clean} tiles), "
                f"{noisy:.4f} px at 2% noise (<= 0.10, {n_noisy} tiles), {elapsed:.0f} s (< 120 s)")


def criterion_6():
    res = sweeps.locking_sweep(0.0, 1.0, 0.02)
    single = res.extra["single_worst"]
    ok = res.metric <= 0.02 and single >= 2 * res.metric
    return ok, (f"pixel locking max |bias| refined {res.metric:.4f} px (<= 0.02), single pass {single:.4f} px "
                f"(ratio {single / max(res.metric, 1e-12):.0f} >= 2)")


def criterion_7():
    config = TPConfig(max_iters=5, step_threshold=0.001)
    total = converged = 0
    for k, d in enumerate((0.7, 1.3, 2.6, 3.9, 4.4)):
        frames, gt = plane(d, seed=10 + k)
        idx = grid_indices(frames.grid_shape)[gt.valid.reshape(-1)]
        for start_error in (-0.5, -0.25, 0.25, 0.5):
            _, _, _, _, conv, _ = refine_tiles(frames, idx, d + start_error, config)
            total += len(idx)
            converged += int(conv.sum())
    frac = converged / total
    return frac >= 0.99, f"refinement from |initial error| <= 0.5 px: {converged}/{total} tiles ({100 * frac:.1f}%) converge within 5 iterations (>= 99%)"


def _bars(orientation):
    frames, gt = synth.render(SceneSpec(kind="bar_target", orientation=orientation, disparity=2.4,
                                        texture=TextureSpec(seed=4)))
    dm = estimate_frame(frames, 0.0)
    sel = gt.valid & dm.valid
    rmse = float(np.sqrt(np.mean((dm.disparity - gt.disparity)[sel] ** 2)))
    fc = process_frame(frames, np.maximum(dm.target, 0.0))
    comb = combine_directions(fc.corr.full, reach=7)
    ridge = comb.ridge[sel.reshape(-1)]
    return rmse, ridge.mean(axis=0), int(sel.sum())


def criterion_8():
    h, v = DIRECTIONS.index("horizontal"), DIRECTIONS.index("vertical")
    rmse_h, ridge_h, n_h = _bars("horizontal")
    rmse_v, ridge_v, n_v = _bars("vertical")
    ok = (rmse_h <= 0.05 and ridge_h[h] == 1.0 and ridge_h[v] == 0.0
          and rmse_v <= 0.05 and ridge_v[v] == 1.0 and ridge_v[h] == 0.0)
    return ok, (f"horizontal bars RMSE {rmse_h:.4f} px, ridge flags h/v {ridge_h[h]:.0%}/{ridge_h[v]:.0%}; "
                f"vertical bars RMSE {rmse_v:.4f} px, ridge flags v/h {ridge_v[v]:.0%}/{ridge_v[h]:.0%} "
                f"({n_h}+{n_v} tiles, RMSE <= 0.05)")


def criterion_9():
    frames, gt = plane(1.7, seed=9)
    dm = estimate_frame(frames, 0.0)
    fc = process_frame(frames, np.maximum(dm.target, 0.0))
    c = fc.corr
    valid = c.valid & dm.valid.reshape(-1)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "features.bin"
        export_features(path, c.tile_index, c.surfaces, c.target_disparity, valid, fc.grid_shape,
                        gt.disparity.reshape(-1))
        header, records = read_features(path)
    expected = feature_vectors(c.surfaces[valid], c.target_disparity[valid])
    ok = (records.shape[1] == 325 and records.tobytes() == expected.tobytes()
          and len(records) == int(valid.sum()) == header["count"])
    return ok, f"feature records {records.shape[0]} x {records.shape[1]} (325 values), count == valid tiles {int(valid.sum())}, bit-exact round trip"


def criterion_10():
    scenes = [
        {"kind": "fronto_plane", "disparity": 2.0, "noise_sigma": 0.01, "seed": 1},
        {"kind": "slanted_plane", "disparity": 2.5, "slope": [0.01, -0.005], "seed": 2},
        {"kind": "two_depth_edge", "orientation": "vertical", "d_fg": 3.0, "d_bg": 1.0, "seed": 3},
    ]
    same = []
    with tempfile.TemporaryDirectory() as tmp, contextlib.redirect_stdout(io.StringIO()):
        tmp = Path(tmp)
        for k, spec in enumerate(scenes):
            (tmp / f"s{k}.json").write_text(json.dumps({"width": 64, "height": 64, **spec}))
            frames = tmp / f"f{k}"
            codes = [cli_main(["synth", "--spec", str(tmp / f"s{k}.json"), "--out", str(frames)])]
            for w in ("1", "8"):
                codes.append(cli_main(["run", "--frames", str(frames), "--out", str(tmp / f"o{k}_{w}"),
                                       "--workers", w]))
            a = (tmp / f"o{k}_1" / "disparity.csv").read_bytes()
            b = (tmp / f"o{k}_8" / "disparity.csv").read_bytes()
            same.append(codes == [0, 0, 0] and a == b)
    return all(same), f"run --workers 1 vs 8 byte-identical disparity CSV on 3 scenes: {same}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("number", range(1, 11))
def test_acceptance(number, capsys):
    ok, detail = CRITERIA[number - 1]()
    assert report(number, ok, detail, capsys), detail


if __name__ == "__main__":
    results = [report(k, *func()) for k, func in enumerate(CRITERIA, start=1)]
    sys.exit(0 if all(results) else 1)
