import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffvmaf import autodiff as ad
from diffvmaf import fusion
from diffvmaf.errors import InvalidArgument, NumericDomainError
from diffvmaf.fusion import (CSV_COLUMNS, FrameFeatures, configs_for, frame_features,
                             predict_frame, rbf_kernel, read_features_csv, score_stream,
                             write_features_csv)
from diffvmaf.model import VmafModel, load_model
from diffvmaf.motion import motion

vec = arrays(np.float64, 6, elements=st.floats(-10, 10))


@settings(max_examples=50, deadline=None)
@given(u=vec, v=vec, gamma=st.floats(1e-3, 5))
def test_kernel_bounds(u, v, gamma):
    assert rbf_kernel(u, u, gamma) == 1.0
    k = rbf_kernel(u, v, gamma)
    assert 0.0 <= k <= 1.0
    if np.sum((u - v) ** 2) * gamma < 700:
        assert k > 0.0


def feats(values):
    return FrameFeatures(*[float(v) for v in values])


def test_single_sv_at_query():
    s = np.array([0.3, 0.4, 0.5, 0.6, 0.9, 2.0])
    m = VmafModel(s[None, :], [1.0], 0.5, 0.0)
    assert predict_frame(feats(s), m).item() == pytest.approx(1.0)


def test_far_query_gives_intercept():
    m = VmafModel(np.zeros((1, 6)), [5.0], 0.5, 10.0)
    assert predict_frame(feats([1e3] * 6), m).item() == pytest.approx(10.0)


def test_matches_explicit_formula(demo_model):
    x = np.array([0.9, 0.95, 0.97, 0.98, 0.96, 3.0])
    m = demo_model
    z = x * m.feature_norms[:, 0] + m.feature_norms[:, 1]
    y = sum(a * rbf_kernel(sv, z, m.gamma) for a, sv in zip(m.dual_coeffs, m.support_vectors)) + m.intercept
    expect = (y - m.score_norm[1]) / m.score_norm[0]
    assert predict_frame(feats(x), m).item() == pytest.approx(expect, rel=1e-12)


def test_score_transform_polynomial():
    base = VmafModel(np.zeros((1, 6)), [1.0], 0.5, 3.0)
    poly = base.with_options(score_transform=(1.0, 2.0, 0.5))
    x = feats([0.1] * 6)
    raw = predict_frame(x, base).item()
    assert predict_frame(x, poly).item() == pytest.approx(1.0 + 2.0 * raw + 0.5 * raw ** 2)


def test_permutation_invariance(demo_model, rng):
    perm = rng.permutation(len(demo_model.dual_coeffs))
    shuffled = demo_model.with_options(support_vectors=demo_model.support_vectors[perm],
                                       dual_coeffs=demo_model.dual_coeffs[perm])
    x = feats([0.8, 0.9, 0.95, 0.97, 0.9, 5.0])
    assert predict_frame(x, shuffled).item() == pytest.approx(predict_frame(x, demo_model).item(), rel=1e-12)


def test_nan_feature_named():
    m = load_model("toy")
    with pytest.raises(NumericDomainError, match="adm"):
        predict_frame(FrameFeatures(1.0, 1.0, 1.0, 1.0, math.nan, 0.0), m)


def test_one_frame_stream(textured64, demo_model):
    dist = textured64 + 3.0
    s, rep = score_stream([textured64], [dist], demo_model.with_options(clip_enabled=False))
    f = frame_features(textured64, dist, ad.Tensor(0.0), *configs_for(demo_model))
    assert s.item() == pytest.approx(predict_frame(f, demo_model).item(), rel=1e-14)
    assert len(rep.frames) == 1


def test_pool_then_clip(monkeypatch, textured64):
    scores = iter([98.0, 104.0])
    monkeypatch.setattr(fusion, "predict_frame", lambda f, m: ad.Tensor(next(scores)))
    s, rep = score_stream([textured64] * 2, [textured64] * 2, load_model("toy"))
    assert s.item() == 100.0
    assert rep.clipped


def test_clipped_gradient_exactly_zero(textured64):
    # toy model with a large intercept puts every frame above 100
    m = load_model("toy").with_options(intercept=200.0)
    tape = ad.Tape()
    w = tape.parameter(np.full((3, 3), 1 / 9))
    s, _ = score_stream([textured64], [ad.conv2d(textured64, w)], m)
    assert s.item() == 100.0
    assert np.all(ad.backward(s)[w] == 0.0)
    tape = ad.Tape()
    w = tape.parameter(np.full((3, 3), 1 / 9))
    s, _ = score_stream([textured64], [ad.conv2d(textured64, w)], m.with_options(clip_enabled=False))
    assert np.any(ad.backward(s)[w] != 0.0)


def test_per_frame_gradient_share(camera, demo_model):
    m = demo_model.with_options(clip_enabled=False)
    refs = [camera[i * 40:i * 40 + 64, 100:164] for i in range(3)]
    tape = ad.Tape()
    ws = [tape.parameter(np.full((3, 3), 1 / 9)) for _ in refs]
    s, rep = score_stream(refs, [ad.conv2d(r, w) for r, w in zip(refs, ws)], m)
    gs = ad.backward(s)
    for i, (r, w) in enumerate(zip(refs, ws)):
        t2 = ad.Tape()
        wi = t2.parameter(np.full((3, 3), 1 / 9))
        mot = ad.Tensor(rep.frames[i].features["motion"])
        fi = predict_frame(frame_features(r, ad.conv2d(r, wi), mot, *configs_for(m)), m)
        np.testing.assert_allclose(gs[w], ad.backward(fi)[wi] / 3, rtol=1e-10)


def test_stream_motion_matches_window(rng, demo_model):
    refs = [rng.uniform(0, 255, size=(48, 48)) for _ in range(4)]
    _, rep = score_stream(refs, refs, demo_model)
    for i, f in enumerate(rep.frames):
        assert f.features["motion"] == pytest.approx(motion(refs, i).item(), rel=1e-14)


def test_stream_errors(textured64, demo_model):
    with pytest.raises(InvalidArgument, match="length"):
        score_stream([textured64], [], demo_model)
    with pytest.raises(InvalidArgument, match="empty"):
        score_stream([], [], demo_model)
    with pytest.raises(InvalidArgument):
        score_stream([textured64], [textured64[:-2]], demo_model)


def test_neg_configs(demo_model):
    v, a = configs_for(demo_model.with_options(neg_mode=True, egl_vif=1.2, egl_dlm=1.1))
    assert v.neg_mode and v.egl_vif == 1.2 and a.neg_mode and a.egl_dlm == 1.1


def test_features_csv_round_trip(tmp_path, rng, demo_model):
    refs = [rng.uniform(0, 255, size=(40, 40)) for _ in range(3)]
    dists = [r + rng.normal(size=r.shape) for r in refs]
    _, rep = score_stream(refs, dists, demo_model)
    p = tmp_path / "f.csv"
    write_features_csv(rep, p)
    rows = read_features_csv(p)
    assert len(rows) == 3
    assert p.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    for row, rec in zip(rows, rep.frames):
        assert row["score"] == rec.score
        assert row["adm"] == rec.features["adm"]
