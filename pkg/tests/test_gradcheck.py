import sys

import numpy as np
import pytest

from diffvmaf import autodiff as ad
from diffvmaf.adm import decouple, dwt2d
from diffvmaf.errors import InvalidArgument
from diffvmaf.filters import KernelFilter
from diffvmaf.gradcheck import (GradCheckConfig, analytic_gradient, gradcheck_report,
                                numeric_gradient, parse_last_float)


@pytest.fixture(scope="module")
def frame(camera):
    return camera[200:264, 220:284]


def test_config_validation():
    with pytest.raises(InvalidArgument):
        GradCheckConfig(epsilon=0.0)
    with pytest.raises(InvalidArgument):
        GradCheckConfig(kernel_size=4)
    with pytest.raises(InvalidArgument):
        GradCheckConfig(init_mode="random")
    k = GradCheckConfig(kernel_size=5).initial_kernel()
    np.testing.assert_allclose(k.weights, 1 / 25)


def test_linear_surrogate_exact(frame):
    kernel = KernelFilter(np.random.default_rng(0).normal(size=(3, 3)))

    def scorer(r, d):
        return float(d.sum())

    num = numeric_gradient(frame, kernel, None, GradCheckConfig(kernel_size=3, epsilon=1e-2),
                           scorer=scorer).gradient
    tape = ad.Tape()
    w = tape.parameter(kernel.weights)
    g = ad.backward(ad.reduce_sum(ad.conv2d(frame, w)))[w]
    np.testing.assert_allclose(num, g, rtol=1e-9, atol=1e-9 * np.abs(g).max())


def test_identity_start_finite_nonzero(frame, demo_model):
    g = analytic_gradient(frame, KernelFilter.identity(3), demo_model.with_options(clip_enabled=False))
    assert np.all(np.isfinite(g)) and np.abs(g).max() > 1.0


def test_directional_derivative_all_ones(frame, demo_model):
    # moving every weight by t scales the filtered frame by (1 + 9t): dS/dt = sum of gradient
    m = demo_model.with_options(clip_enabled=False)
    w0 = np.full((3, 3), 1 / 9)
    g = analytic_gradient(frame, KernelFilter(w0), m)
    from diffvmaf.gradcheck import _score

    h = 1e-6
    sp = _score(frame, ad.conv2d(frame, w0 + h).data, m).item()
    sm = _score(frame, ad.conv2d(frame, w0 - h).data, m).item()
    assert g.sum() == pytest.approx((sp - sm) / (2 * h), rel=1e-5)


def _flag_flips(frame, kernel, eps):
    """Entries whose +-eps stencil changes an ADM angle decision."""
    po = dwt2d(frame)
    out = np.zeros(kernel.weights.shape, bool)
    for i, j in np.ndindex(*kernel.weights.shape):
        flags = []
        for s in (1, -1):
            w = kernel.weights.copy()
            w[i, j] += s * eps
            flags.append(decouple(po, dwt2d(ad.conv2d(frame, w))).angle_flags)
        out[i, j] = any(np.any(a != b) for a, b in zip(*flags))
    return out


def test_smooth_path_agrees_away_from_branch_switches(camera, demo_model):
    # entries whose stencil crosses no angle decision must agree tightly
    rng = np.random.default_rng(5)
    for _ in range(2):
        r, c = rng.integers(0, 384, size=2)
        crop = camera[r:r + 128, c:c + 128]
        cfg = GradCheckConfig(kernel_size=3, epsilon=1e-4)
        rep = gradcheck_report(crop, cfg, demo_model)
        flips = _flag_flips(crop, cfg.initial_kernel(), 1e-4)
        scale = np.abs(rep.analytic).max()
        assert np.all(rep.abs_diff[~flips] / scale < 1e-6)


def test_identity_kernel_smooth_path(frame, demo_model):
    rep = gradcheck_report(frame, GradCheckConfig(kernel_size=3, epsilon=1e-4, init_mode="identity"),
                           demo_model)
    assert rep.passed and rep.max_rel < 1e-5


def test_epsilon_u_shape(frame, demo_model):
    kernel = KernelFilter.identity(3)
    devs = {}
    for eps in (1e-2, 1e-3):
        cfg = GradCheckConfig(kernel_size=3, epsilon=eps, init_mode="identity")
        devs[eps] = gradcheck_report(frame, cfg, demo_model, kernel).max_rel
    assert devs[1e-3] <= devs[1e-2]


def test_deterministic(frame, demo_model):
    m = demo_model.with_options(clip_enabled=False)
    k = KernelFilter(np.full((3, 3), 1 / 9))
    assert np.array_equal(analytic_gradient(frame, k, m), analytic_gradient(frame, k, m))


def test_fault_injection_lists_offenders(frame, demo_model):
    cfg = GradCheckConfig(kernel_size=3, epsilon=1e-4, init_mode="identity")
    with ad.inject_fault("cbrt", 1.5):
        rep = gradcheck_report(frame, cfg, demo_model)
    assert not rep.passed
    assert rep.offending
    assert "offending entry" in rep.text() and "FAIL" in rep.text()


def test_rounding_counts_clamped(demo_model):
    frame = np.zeros((64, 64))
    frame[:, 32:] = 255.0
    frame[10:20, 5:15] = 128.0
    cfg = GradCheckConfig(kernel_size=3, epsilon=1e-2, emulate_integer_pipeline=True,
                          init_mode="identity", tolerance=1.0, tolerance_mode="scaled_mean")
    rep = gradcheck_report(frame, cfg, demo_model)
    assert rep.out_of_range > 0
    assert "clamped pixels" in rep.text()


def test_report_csv(tmp_path, frame, demo_model):
    rep = gradcheck_report(frame, GradCheckConfig(kernel_size=3, epsilon=1e-3), demo_model)
    p = tmp_path / "g.csv"
    rep.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "i,j,analytic,numeric,abs_diff,rel_diff"
    assert len(lines) == 10


def test_kernel_size_mismatch(frame, demo_model):
    with pytest.raises(InvalidArgument):
        gradcheck_report(frame, GradCheckConfig(kernel_size=3), demo_model, KernelFilter.identity(5))


def test_external_scorer(tmp_path, frame, demo_model):
    # a stand-in scorer: mean luma of the distorted file
    script = tmp_path / "scorer.py"
    script.write_text(
        "import sys, numpy as np\n"
        "w, h = int(sys.argv[3]), int(sys.argv[4])\n"
        "y = np.fromfile(sys.argv[2], dtype=np.uint8)[: w * h]\n"
        "print('score:', y.astype(float).sum())\n")
    cmd = f"{sys.executable} {script} {{ref}} {{dist}} {{width}} {{height}}"
    cfg = GradCheckConfig(kernel_size=3, epsilon=0.05, external_command=cmd)
    num = numeric_gradient(frame, cfg.initial_kernel(), demo_model, cfg).gradient
    tape = ad.Tape()
    w = tape.parameter(cfg.initial_kernel().weights)
    g = ad.backward(ad.reduce_sum(ad.conv2d(frame, w)))[w]
    # rounding to bytes inside the files adds noise well under 1%
    assert np.abs(num - g).max() / np.abs(g).max() < 0.01


def test_parse_last_float():
    assert parse_last_float("VMAF score: 97.43\n") == 97.43
    assert parse_last_float("a 1, b 2.5") == 2.5
    with pytest.raises(Exception):
        parse_last_float("nothing here")


def test_branch_switch_explains_large_deviation(camera, demo_model):
    # this crop's k=3 stencil at eps=1e-4 crosses ADM angle decisions
    crop = camera[326:454, 244:372]
    rep = gradcheck_report(crop, GradCheckConfig(kernel_size=3, epsilon=1e-4), demo_model)
    assert not rep.passed
    flips = _flag_flips(crop, GradCheckConfig(kernel_size=3).initial_kernel(), 1e-4)
    assert all(flips[i, j] for i, j in rep.offending)
    # a stencil small enough to stay on one branch agrees with the analytic gradient
    fine = gradcheck_report(crop, GradCheckConfig(kernel_size=3, epsilon=1e-7), demo_model)
    assert fine.max_rel < 1e-4
