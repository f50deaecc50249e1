import csv
import re
import subprocess
import sys

import numpy as np
import pytest

from diffvmaf.cli import main, score_line
from diffvmaf.filters import KernelFilter, save_kernel, unsharp_kernel
from diffvmaf.fusion import score_stream
from diffvmaf.yuv import write_yuv

W, H, N = 64, 48, 3
LINE = re.compile(r"^diffvmaf-score v1 vmaf=(-?\d+\.\d{6}) frames=(\d+) clipped=([01]) model='([^']*)'$")


@pytest.fixture(scope="module")
def clips(tmp_path_factory, camera):
    d = tmp_path_factory.mktemp("clips")
    ref = [camera[100 + 4 * i:100 + 4 * i + H, 150:150 + W] for i in range(N)]
    blur = KernelFilter(np.full((3, 3), 1 / 9))
    from diffvmaf.filters import apply_filter

    dist = apply_filter(ref, blur, clamp=True)
    write_yuv(d / "ref.yuv", ref)
    write_yuv(d / "dist.yuv", dist)
    return d, ref, dist


def _run(capsys, argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_score_line_format():
    assert score_line(97.5, 4, True, "demo") == "diffvmaf-score v1 vmaf=97.500000 frames=4 clipped=1 model='demo'"


def test_score_matches_library(clips, capsys, demo_model, tmp_path):
    d, ref, dist = clips
    feats = tmp_path / "f.csv"
    code, out, _ = _run(capsys, ["score", d / "ref.yuv", d / "dist.yuv", "--width", W,
                                 "--height", H, "--frames", N, "--features-csv", feats])
    assert code == 0
    m = LINE.match(out.strip())
    assert m, out
    # the file round trip rounds the distorted frames to bytes, so score those bytes
    rounded = [np.clip(np.rint(x), 0, 255) for x in dist]
    expected, _ = score_stream(ref, rounded, demo_model)
    assert float(m.group(1)) == pytest.approx(expected.item(), abs=1e-6)
    assert int(m.group(2)) == N
    with open(feats) as fh:
        assert len(list(csv.DictReader(fh))) == N


def test_score_neg_and_no_clip(clips, capsys):
    d, _, _ = clips
    base = ["score", d / "ref.yuv", d / "ref.yuv", "--width", W, "--height", H, "--frames", N]
    code, out, _ = _run(capsys, base + ["--no-clip"])
    assert code == 0 and "clipped=0" in out
    code, out, _ = _run(capsys, base + ["--neg", "--egl-vif", "1.0", "--egl-dlm", "1.0"])
    assert code == 0 and LINE.match(out.strip())


def test_size_mismatch_exit_code(clips, capsys):
    d, _, _ = clips
    code, _, err = _run(capsys, ["score", d / "ref.yuv", d / "dist.yuv", "--width", W,
                                 "--height", H, "--frames", N + 1])
    assert code == 3
    assert "size mismatch" in err and "expected" in err


def test_missing_file_and_bad_model(clips, capsys, tmp_path):
    d, _, _ = clips
    code, _, err = _run(capsys, ["score", tmp_path / "nope.yuv", d / "dist.yuv", "--width", W,
                                 "--height", H, "--frames", N])
    assert code == 3 and "cannot open" in err
    bad = tmp_path / "m.json"
    bad.write_text("{}")
    code, _, err2 = _run(capsys, ["score", d / "ref.yuv", d / "dist.yuv", "--width", W,
                                  "--height", H, "--frames", N, "--model", bad])
    assert code == 3 and err2 != err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["score", "a.yuv"])
    assert exc.value.code == 2


def test_sweep_unsharp(clips, capsys, tmp_path):
    d, _, _ = clips
    out_csv = tmp_path / "sweep.csv"
    code, out, _ = _run(capsys, ["sweep-alpha", "unsharp", d / "ref.yuv", "--width", W,
                                 "--height", H, "--frames", N, "--alphas", "0,0.5,1",
                                 "--k", 5, "--out", out_csv])
    assert code == 0
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    psnr = [float(r["psnr_db"]) for r in rows]
    assert psnr[0] > psnr[1] > psnr[2]
    assert (tmp_path / "sweep.png").exists()


def test_sweep_kernel_file_with_comparison(clips, capsys, tmp_path):
    d, _, _ = clips
    kfile = tmp_path / "k.txt"
    save_kernel(unsharp_kernel(3, None, 0.5), kfile)
    code, _, _ = _run(capsys, ["sweep-alpha", kfile, d / "ref.yuv", "--width", W, "--height", H,
                               "--frames", N, "--alphas", "0,1", "--compare-unsharp",
                               "--out", tmp_path / "s.csv"])
    assert code == 0 and (tmp_path / "s.png").exists()


def test_apply_identity_byte_identical(clips, capsys, tmp_path):
    d, _, _ = clips
    kfile = tmp_path / "id.txt"
    save_kernel(KernelFilter.identity(5), kfile)
    out = tmp_path / "out.yuv"
    code, _, _ = _run(capsys, ["apply-filter", d / "dist.yuv", kfile, out, "--width", W,
                               "--height", H, "--frames", N])
    assert code == 0
    assert out.read_bytes() == (d / "dist.yuv").read_bytes()


def test_gradcheck_command(clips, capsys, tmp_path):
    d, _, _ = clips
    code, out, _ = _run(capsys, ["gradcheck", d / "ref.yuv", "--width", W, "--height", H,
                                 "--frames", N, "--frame-index", 1, "--init", "identity",
                                 "--epsilon", "1e-4", "--out-dir", tmp_path])
    assert code == 0 and "PASS" in out
    for name in ("gradcheck.csv", "gradcheck.txt", "gradcheck.png"):
        assert (tmp_path / name).exists()


def test_gradcheck_failure_exit_code(clips, capsys, tmp_path):
    d, _, _ = clips
    code, out, _ = _run(capsys, ["gradcheck", d / "ref.yuv", "--width", W, "--height", H,
                                 "--frames", N, "--epsilon", "5", "--tolerance", "1e-12",
                                 "--out-dir", tmp_path])
    assert code == 1 and "FAIL" in out and "offending entry" in out


def test_train_filter_command(clips, capsys, tmp_path):
    d, _, _ = clips
    cfg = tmp_path / "c.json"
    cfg.write_text('{"train": {"max_steps": 3, "kernel_size": 3, "crop_size": 32, "eval_every": 1}}')
    data = tmp_path / "data"
    data.mkdir()
    (data / "a.yuv").write_bytes((d / "ref.yuv").read_bytes())
    out = tmp_path / "out"
    code, text, _ = _run(capsys, ["train-filter", data, "--width", W, "--height", H, "--frames", N,
                                  "--config", cfg, "--out-dir", out])
    assert code == 0 and "selected step" in text
    for name in ("filter.txt", "train_log.csv", "training.png", "kernel.png"):
        assert (out / name).exists()


def test_train_filter_empty_dir(capsys, tmp_path):
    code, _, err = _run(capsys, ["train-filter", tmp_path, "--width", 4, "--height", 4, "--frames", 1])
    assert code == 3 and "no .yuv files" in err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "diffvmaf.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("diffvmaf")
