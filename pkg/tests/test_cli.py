import io
import re
import subprocess
import sys

import numpy as np
import pytest

from prunebench import tensor
from prunebench.bev import checker_labels, default_rig, dump_rig, render_ground_labels
from prunebench.cli import main
from prunebench.nn import build_enet_mini, load_model


def run(*argv):
    buf = io.StringIO()
    code = main(list(argv), out=buf)
    return code, buf.getvalue()


@pytest.fixture
def small_model(tmp_path):
    path = tmp_path / "m.pbm"
    code, _ = run("build", "--classes", "4", "--width", "0.25", "--seed", "3", "--out", str(path))
    assert code == 0
    return path


def _prune(model, out, report, *extra):
    return run("prune", "--model", str(model), "--out", str(out), "--report", str(report),
               "--calib-images", "4", "--calib-size", "32x32", "--seed", "9", *extra)


def test_provenance_header(small_model):
    code, text = run("flops", "--model", str(small_model), "--input", "64x64")
    assert code == 0
    assert re.match(r"# prunebench \S+ command=flops seed=none config=[0-9a-f]{16}\n", text)


def test_prune_deterministic(tmp_path, small_model):
    a = _prune(small_model, tmp_path / "a.pbm", tmp_path / "a.csv")
    b = _prune(small_model, tmp_path / "b.pbm", tmp_path / "b.csv")
    assert a[0] == b[0] == 0
    assert (tmp_path / "a.pbm").read_bytes() == (tmp_path / "b.pbm").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_prune_factor_one_keeps_weights(tmp_path, small_model):
    code, _ = _prune(small_model, tmp_path / "p.pbm", tmp_path / "r.csv", "--shallow-factor", "1",
                     "--deep-factor", "1")
    assert code == 0
    assert (tmp_path / "p.pbm").read_bytes() == small_model.read_bytes()


def _total(text, column):
    row = next(l for l in text.splitlines() if l.startswith("total"))
    return int(row.split()[column].replace(",", ""))


def test_pipeline_ratios_consistent(tmp_path, small_model):
    code, text = _prune(small_model, tmp_path / "p.pbm", tmp_path / "r.csv")
    assert code == 0
    ratios = dict(l.split(",") for l in text.splitlines() if l.startswith(("flops_ratio", "params_ratio")))
    _, before = run("flops", "--model", str(small_model), "--input", "640x400")
    _, after = run("flops", "--model", str(tmp_path / "p.pbm"), "--input", "640x400")
    assert abs(_total(after, 1) / _total(before, 1) - float(ratios["flops_ratio"])) < 1e-6
    assert abs(_total(after, 2) / _total(before, 2) - float(ratios["params_ratio"])) < 1e-6
    assert load_model(tmp_path / "p.pbm").param_count() == _total(after, 2)


def test_flops_csv(tmp_path, small_model):
    code, _ = run("flops", "--model", str(small_model), "--input", "64x64", "--mac", "2", "--csv",
                  str(tmp_path / "f.csv"))
    assert code == 0
    assert (tmp_path / "f.csv").read_text().startswith("layer,flops,params,bytes")


def test_infer(tmp_path, small_model, rng):
    tensor.save(rng.standard_normal((2, 3, 16, 16)).astype(np.float32), tmp_path / "x.bin")
    code, text = run("infer", "--model", str(small_model), "--input", str(tmp_path / "x.bin"),
                     "--out", str(tmp_path / "y.bin"), "--workers", "3")
    assert code == 0
    labels = tensor.load(tmp_path / "y.bin")
    assert labels.shape == (2, 1, 16, 16)
    counts = [int(l.split(",")[1]) for l in text.splitlines()[2:]]
    assert sum(counts) == 512


def test_eval(tmp_path):
    (tmp_path / "t").mkdir()
    (tmp_path / "p").mkdir()
    truth = np.array([[[[0, 0, 1, 1]]]], np.float32)
    pred = np.array([[[[0, 1, 1, 1]]]], np.float32)
    tensor.save(truth, tmp_path / "t" / "a.bin")
    tensor.save(pred, tmp_path / "p" / "a.bin")
    code, text = run("eval", "--truth", str(tmp_path / "t"), "--pred", str(tmp_path / "p"), "--classes", "2")
    assert code == 0 and "75.00%" in text


def test_bench(tmp_path):
    code, text = run("bench-argmax", "--shape", "1,4,8,8", "--reps", "3", "--workers", "2",
                     "--csv", str(tmp_path / "b.csv"))
    assert code == 0 and "parallel" in text
    assert (tmp_path / "b.csv").read_text().count("\n") == 3


def test_bev_stitch(tmp_path):
    rig = default_rig(f=40, size=160)
    dump_rig(rig, tmp_path / "rig.ini")
    paths = []
    for cam in rig:
        p = tmp_path / f"{cam.name}.bin"
        tensor.save(render_ground_labels(cam, checker_labels)[None, None].astype(np.float32), p)
        paths.append(str(p))
    code, text = run("bev-stitch", "--calib", str(tmp_path / "rig.ini"), "--labels", ",".join(paths),
                     "--grid", "4x4m@0.5", "--out", str(tmp_path / "top.bin"), "--image", str(tmp_path / "top.ppm"))
    assert code == 0 and "cells,64" in text
    assert tensor.load(tmp_path / "top.bin").shape == (1, 1, 8, 8)
    assert (tmp_path / "top.ppm").read_bytes().startswith(b"P6 8 8 255\n")


@pytest.mark.parametrize("argv,code,kind", [
    (["nosuch"], 2, "usage"),
    (["flops"], 2, "usage"),
    (["flops", "--model", "/nonexistent.pbm"], 3, "io"),
    (["bench-argmax", "--reps", "2", "--shape", "1,2,2,2"], 4, "validation"),
    (["bench-argmax", "--shape", "1,2,x,2"], 2, "usage"),
])
def test_exit_codes(capsys, argv, code, kind):
    assert main(argv, out=io.StringIO()) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error code={code} kind={kind} msg=")


def test_corrupt_model_is_validation_error(tmp_path, capsys):
    bad = tmp_path / "bad.pbm"
    bad.write_bytes(b"PBM1\0\0")
    assert main(["flops", "--model", str(bad)], out=io.StringIO()) in (3, 4)


def test_help_lists_flags():
    out = subprocess.run([sys.executable, "-m", "prunebench", "prune", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for flag in ("--shallow-factor", "--deep-factor", "--exclude", "--seed", "--report"):
        assert flag in out.stdout
