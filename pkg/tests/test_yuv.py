import resource

import numpy as np
import pytest

from diffvmaf.errors import InvalidArgument
from diffvmaf.yuv import RawVideo, iter_chroma, iter_luma, open_video, read_yuv_luma, write_yuv


def test_byte_fixture(tmp_path):
    p = tmp_path / "a.yuv"
    p.write_bytes(bytes([0, 128, 255, 64, 10, 20]))
    frames = read_yuv_luma(open_video(p, 2, 2, 1))
    np.testing.assert_array_equal(frames[0], [[0, 128], [255, 64]])
    assert frames[0].dtype == np.float64


def test_size_mismatch_message(tmp_path):
    p = tmp_path / "a.yuv"
    p.write_bytes(bytes(6 * 2 - 1))
    with pytest.raises(InvalidArgument, match=r"expected 12 bytes .* got 11"):
        open_video(p, 2, 2, 2)


def test_frame_range(tmp_path, rng):
    lumas = [rng.integers(0, 256, size=(4, 6)).astype(np.uint8) for _ in range(3)]
    p = tmp_path / "v.yuv"
    write_yuv(p, lumas)
    v = open_video(p, 6, 4, 3)
    got = read_yuv_luma(v, (1, 3))
    assert len(got) == 2
    np.testing.assert_array_equal(got[1], lumas[2])
    with pytest.raises(InvalidArgument, match="outside"):
        read_yuv_luma(v, (2, 5))


def test_geometry_validation(tmp_path):
    with pytest.raises(InvalidArgument):
        RawVideo(tmp_path / "x", 3, 4, 1)
    with pytest.raises(InvalidArgument):
        RawVideo(tmp_path / "x", 4, 4, 0)
    with pytest.raises(InvalidArgument, match="cannot open"):
        open_video(tmp_path / "missing.yuv", 4, 4, 1)


def test_round_trip_byte_exact(tmp_path, rng):
    w, h, n = 8, 6, 4
    raw = rng.integers(0, 256, size=n * w * h * 3 // 2).astype(np.uint8).tobytes()
    src = tmp_path / "src.yuv"
    src.write_bytes(raw)
    v = open_video(src, w, h, n)
    dst = tmp_path / "dst.yuv"
    write_yuv(dst, iter_luma(v), iter_chroma(v))
    assert dst.read_bytes() == raw


def test_streaming_memory(tmp_path):
    # 50 HD frames (about 155 MB) must stream with one frame resident at a time
    w, h, n = 1920, 1080, 50
    p = tmp_path / "hd.yuv"
    frame = bytes(w * h * 3 // 2)
    with open(p, "wb") as fh:
        for _ in range(n):
            fh.write(frame)
    before = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    count = 0
    for y in iter_luma(open_video(p, w, h, n)):
        count += 1
        assert y.shape == (h, w)
    grown_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss - before
    assert count == n
    assert grown_kb < 60_000  # well below the 155 MB file
