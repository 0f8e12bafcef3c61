import json

import numpy as np
import pytest

from tileproc import io as tio
from tileproc import synth
from tileproc.disparity import DisparityMap
from tileproc.fd import identity_tensor
from tileproc.geometry import CameraGeometry, KernelGrid
from tileproc.pipeline import QuadFrameSet


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).uniform(size=(16, 24))
    tio.write_pgm(tmp_path / "a.pgm", img)
    back = tio.read_pgm(tmp_path / "a.pgm")
    assert back.shape == (16, 24)
    assert np.array_equal(tio.to_counts(back), tio.to_counts(img))
    assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-12


def test_pgm_header_bytes(tmp_path):
    tio.write_pgm(tmp_path / "a.pgm", np.array([[0.0, 1.0]]))
    data = (tmp_path / "a.pgm").read_bytes()
    assert data == b"P5\n2 1\n65535\n\x00\x00\xff\xff"


def test_pgm_with_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n1 1\n# max\n65535\n\x80\x00")
    assert tio.read_pgm(tmp_path / "c.pgm")[0, 0] == pytest.approx(32768 / 65535)


@pytest.mark.parametrize("data", [b"P6\n1 1\n255\n\x00\x00\x00", b"P5\n2 2\n65535\n\x00\x00", b"P5\n", b"",
                                  b"P5\nx 1\n65535\n\x00\x00", b"P5\n1 1\n0\n\x00"])
def test_malformed_pgm(tmp_path, data):
    (tmp_path / "bad.pgm").write_bytes(data)
    with pytest.raises(tio.FormatError):
        tio.read_pgm(tmp_path / "bad.pgm")


def test_missing_pgm(tmp_path):
    with pytest.raises(tio.FormatError):
        tio.read_pgm(tmp_path / "none.pgm")


def test_pam_round_trip(tmp_path):
    rgba = np.random.default_rng(1).uniform(size=(8, 8, 4))
    tio.write_pam_rgba(tmp_path / "t.pam", rgba)
    back = tio.read_pam(tmp_path / "t.pam")
    assert back.shape == (8, 8, 4)
    assert np.abs(back - rgba).max() <= 0.5 / 65535 + 1e-12
    assert (tmp_path / "t.pam").read_bytes().startswith(b"P7\n")


def test_geometry_round_trip(tmp_path):
    geom = CameraGeometry(distortion=(1e-9, 0.0, 0.0), image_size=(64, 64))
    tio.write_geometry(tmp_path / "g.json", geom)
    back, grids = tio.read_geometry(tmp_path / "g.json")
    assert back == geom and grids is None


def test_kernel_grid_round_trip(tmp_path):
    geom = CameraGeometry(image_size=(64, 64))
    base = KernelGrid.identity((64, 64), spacing=64.0)
    tensors = np.array(base.tensors)
    tensors[1, 1] *= 0.5
    offsets = np.zeros_like(base.offsets)
    offsets[0, 1] = [[0.1, 0.2]] * 3
    grids = [KernelGrid(base.spacing, base.shape, tensors, offsets, (64, 64))] + [base] * 3
    tio.write_geometry(tmp_path / "g.json", geom, grids)
    data = json.loads((tmp_path / "g.json").read_text())
    assert data["format"] == tio.CALIBRATION_FORMAT
    _, back = tio.read_geometry(tmp_path / "g.json")
    assert np.array_equal(back[0].tensors, tensors) and np.array_equal(back[0].offsets, offsets)
    assert back[1].all_identity and not back[0].all_identity
    assert np.array_equal(back[2].tensors[0, 0], identity_tensor())


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("baseline_m"),
    lambda d: d.update(format="other/2"),
    lambda d: d.update(camera_positions=[[0, 0]]),
    lambda d: d.update(kernel_grid={"spacing": 64, "shape": [2, 2], "cameras": []}),
    lambda d: d.update(image_size="big"),
])
def test_bad_calibration(tmp_path, mutate):
    data = tio.geometry_to_dict(CameraGeometry(image_size=(64, 64)))
    mutate(data)
    (tmp_path / "g.json").write_text(json.dumps(data))
    with pytest.raises(tio.FormatError):
        tio.read_geometry(tmp_path / "g.json")


def test_invalid_json_calibration(tmp_path):
    (tmp_path / "g.json").write_text("{nope")
    with pytest.raises(tio.FormatError):
        tio.read_geometry(tmp_path / "g.json")


def test_frames_round_trip(tmp_path):
    frames, _ = synth.render(synth.SceneSpec(disparity=1.0))
    tio.write_frames(tmp_path, frames)
    back = tio.read_frames(tmp_path)
    assert back.geometry == frames.geometry
    assert np.array_equal(tio.to_counts(back.images), tio.to_counts(frames.images))


def test_frames_missing_parts(tmp_path):
    with pytest.raises(tio.FormatError):
        tio.read_frames(tmp_path / "nothing")
    with pytest.raises(tio.FormatError):
        tio.read_frames(tmp_path)
    frames = QuadFrameSet(np.zeros((4, 16, 16)), CameraGeometry(image_size=(16, 16)))
    tio.write_frames(tmp_path, frames)
    (tmp_path / tio.GEOMETRY_NAME).unlink()
    with pytest.raises(tio.FormatError):
        tio.read_frames(tmp_path)


def test_frames_geometry_size_mismatch(tmp_path):
    frames = QuadFrameSet(np.zeros((4, 16, 16)), CameraGeometry(image_size=(16, 16)))
    tio.write_frames(tmp_path, frames)
    tio.write_geometry(tmp_path / tio.GEOMETRY_NAME, CameraGeometry(image_size=(32, 32)))
    with pytest.raises(tio.FormatError):
        tio.read_frames(tmp_path)


def test_disparity_csv(tmp_path):
    dm = DisparityMap.empty((2, 3))
    dm.disparity[1, 2] = 2.5
    dm.strength[1, 2] = 0.75
    dm.iterations[1, 2] = 3
    dm.converged[1, 2] = True
    tio.write_disparity_csv(tmp_path / "d.csv", dm)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == ",".join(tio.DISPARITY_HEADER)
    assert len(lines) == 7
    assert lines[-1] == "1,2,2.500000,0.750000,3,1"
    table = tio.read_table(tmp_path / "d.csv")
    assert table["disparity"][1, 2] == 2.5 and table["converged"][0, 0] == 0


def test_gt_csv(tmp_path):
    _, gt = synth.render(synth.SceneSpec(kind="two_depth_edge", width=128, height=64))
    tio.write_gt_csv(tmp_path / "gt.csv", gt)
    table = tio.read_table(tmp_path / "gt.csv", gt.disparity.shape)
    assert np.array_equal(table["disparity"], gt.disparity)
    assert np.array_equal(table["valid"] > 0, gt.valid)
    assert np.array_equal(np.isnan(table["d_fg"]), np.isnan(gt.d_fg))
