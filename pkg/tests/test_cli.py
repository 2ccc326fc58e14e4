import json

import numpy as np
import pytest

from handrefine import io
from handrefine.camera import StereoRig
from handrefine.cli import main
from handrefine.hand_model import HandParams
from handrefine.scenes import framing_camera
from handrefine.stereo import StereoWeights

from conftest import rotation


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["toygen", "--seed", "7", "--segments", "2", "--out", str(d / "model.json")]) == 0
    model = io.read_model(d / "model.json")
    cam = framing_camera(model, 32, 32)
    rng = np.random.default_rng(0)
    truth = HandParams(np.r_[np.zeros(3), rng.normal(0, 0.1, 45)], np.zeros(10), cam)
    start = HandParams(truth.pose + np.r_[np.zeros(6), rng.normal(0, 0.05, 42)], np.zeros(10), cam)
    io.write_params(d / "truth.json", truth)
    io.write_params(d / "start.json", start)
    args = ["--model", str(d / "model.json"), "--width", "32", "--height", "32"]
    assert main(["render", *args, "--params", str(d / "truth.json"), "--out", str(d / "target.pgm")]) == 0
    return d


def run(d, *argv):
    return main([str(a) for a in argv])


def test_render_eval_mask_self(workdir, capsys):
    assert run(workdir, "eval-mask", workdir / "target.pgm", workdir / "target.pgm") == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["iou=1.000000", "pixel_accuracy=1.000000"]


def test_toygen_byte_identical(tmp_path):
    for name in ("a.json", "b.json"):
        assert run(tmp_path, "toygen", "--seed", 42, "--out", tmp_path / name) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_refine_zero_iterations_is_identity(workdir):
    out = workdir / "r0.json"
    assert run(workdir, "refine", "--model", workdir / "model.json", "--params", workdir / "start.json",
               "--target", workdir / "target.pgm", "--iters", 0, "--out-params", out) == 0
    assert json.loads(out.read_text()) == json.loads((workdir / "start.json").read_text())


def _refine(workdir, tag, threads):
    paths = [workdir / f"{tag}.{ext}" for ext in ("json", "obj", "csv")]
    assert run(workdir, "refine", "--model", workdir / "model.json", "--params", workdir / "start.json",
               "--target", workdir / "target.pgm", "--iters", 3, "--threads", threads,
               "--out-params", paths[0], "--out-mesh", paths[1], "--out-history", paths[2]) == 0
    return [p.read_bytes() for p in paths]


def test_refine_deterministic_across_runs_and_threads(workdir):
    a = _refine(workdir, "a", 1)
    assert a == _refine(workdir, "b", 1)
    assert a == _refine(workdir, "c", 3)
    history = a[2].decode().splitlines()
    assert history[0] == "iteration,sil,v,n,lap,edge,total" and len(history) == 5
    assert float(history[-1].split(",")[1]) < float(history[1].split(",")[1])


def test_render_deterministic_across_threads(workdir):
    outs = []
    for threads in (1, 1, 4):
        path = workdir / f"render{len(outs)}.pgm"
        assert run(workdir, "render", "--model", workdir / "model.json", "--params", workdir / "truth.json",
                   "--width", 32, "--height", 32, "--threads", threads, "--out", path) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_stereo_refine(workdir):
    rig = StereoRig(rotation([0, 1, 0], 0.05), [0.01, 0, 0], 400.0, (16.0, 16.0))
    io.write_rig(workdir / "rig.json", rig)
    io.write_weights(workdir / "w.json", StereoWeights.constant(0.5))
    common = ["stereo-refine", "--model", workdir / "model.json", "--params-right", workdir / "start.json",
              "--params-left", workdir / "start.json", "--target-right", workdir / "target.pgm",
              "--target-left", workdir / "target.pgm", "--rig", workdir / "rig.json", "--iters", 1]
    assert run(workdir, *common, "--weights", workdir / "w.json", "--out-params", workdir / "s1.json") == 0
    assert run(workdir, *common, "--heuristic", "--out-params", workdir / "s2.json") == 0
    assert io.read_params(workdir / "s2.json").pose.shape == (48,)


def test_bake_and_ema(workdir):
    image = np.full((32, 32, 3), 128, np.uint8)
    io.write_pnm(workdir / "img.ppm", image)
    base = ["bake", "--model", workdir / "model.json", "--params", workdir / "truth.json",
            "--image", workdir / "img.ppm", "--resolution", 256]
    assert run(workdir, *base, "--out", workdir / "t0.ppm") == 0
    assert run(workdir, *base, "--prev", workdir / "t0.ppm", "--beta", 0.5, "--out", workdir / "t1.ppm") == 0
    tex = io.read_texture(workdir / "t1.ppm")
    seen = tex.weight > 0
    assert seen.any() and np.all(np.abs(tex.rgb[seen] - 128 / 255) < 1e-12)


def test_eval_points(workdir, capsys):
    pts = np.random.default_rng(3).normal(0, 0.05, (30, 3))
    io.write_points(workdir / "gt.json", pts)
    io.write_points(workdir / "pred.json", pts + [0.003, 0, 0])
    assert run(workdir, "eval", "--pred", workdir / "pred.json", "--gt", workdir / "gt.json") == 0
    rows = dict(line.split("=") for line in capsys.readouterr().out.splitlines())
    assert rows["mpve_mm"] == "3.000000" and rows["pa_mpve_mm"] == "0.000000"
    assert rows["fscore@5mm"] == "1.000000"


def test_usage_error_exit_1(capsys):
    assert main(["render", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["nope"]) == 1


def test_data_error_exit_2(workdir, tmp_path, capsys):
    (tmp_path / "bad.pgm").write_bytes(b"P5\n2 1\n1023\n\x00\x00\x00\x00")
    assert main(["eval-mask", str(tmp_path / "bad.pgm"), str(workdir / "target.pgm")]) == 2
    assert "unsupported maxval" in capsys.readouterr().err
    assert main(["eval-mask", str(tmp_path / "missing.pgm"), str(workdir / "target.pgm")]) == 2
