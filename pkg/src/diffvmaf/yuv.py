"""Raw planar 8-bit 4:2:0 video: luma reading by seek, writing with chroma copy."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class RawVideo:
    path: Path
    width: int
    height: int
    frame_count: int

    def __post_init__(self):
        object.__setattr__(self, "path", Path(self.path))
        if self.width < 2 or self.height < 2 or self.width % 2 or self.height % 2:
            raise InvalidArgument(f"4:2:0 needs even width and height >= 2, got {self.width}x{self.height}")
        if self.frame_count < 1:
            raise InvalidArgument("frame_count must be positive")

    @property
    def luma_bytes(self) -> int:
        return self.width * self.height

    @property
    def frame_bytes(self) -> int:
        return self.luma_bytes * 3 // 2

    def validate(self) -> None:
        expected = self.frame_count * self.frame_bytes
        try:
            actual = os.path.getsize(self.path)
        except OSError as exc:
            raise InvalidArgument(f"cannot open raw video {self.path}: {exc}") from exc
        if actual != expected:
            raise InvalidArgument(
                f"raw video size mismatch for {self.path}: expected {expected} bytes "
                f"({self.frame_count} frames of {self.width}x{self.height} 4:2:0), got {actual}")


def open_video(path, width: int, height: int, frames: int) -> RawVideo:
    video = RawVideo(Path(path), width, height, frames)
    video.validate()
    return video


def _range(video: RawVideo, frame_range) -> range:
    if frame_range is None:
        return range(video.frame_count)
    r = range(*frame_range) if isinstance(frame_range, tuple) else frame_range
    if len(r) and (min(r) < 0 or max(r) >= video.frame_count):
        raise InvalidArgument(f"frame range {r.start}..{r.stop} outside 0..{video.frame_count}")
    return r


def iter_luma(video: RawVideo, frame_range=None) -> Iterator[np.ndarray]:
    """Yield luma planes as float64 arrays, one frame in memory at a time."""
    video.validate()
    with open(video.path, "rb") as fh:
        for i in _range(video, frame_range):
            fh.seek(i * video.frame_bytes)
            buf = fh.read(video.luma_bytes)
            if len(buf) != video.luma_bytes:
                raise InvalidArgument(f"truncated frame {i} in {video.path}")
            yield np.frombuffer(buf, dtype=np.uint8).reshape(video.height, video.width).astype(np.float64)


def read_yuv_luma(video: RawVideo, frame_range=None) -> list[np.ndarray]:
    return list(iter_luma(video, frame_range))


def iter_chroma(video: RawVideo) -> Iterator[bytes]:
    with open(video.path, "rb") as fh:
        for i in range(video.frame_count):
            fh.seek(i * video.frame_bytes + video.luma_bytes)
            yield fh.read(video.frame_bytes - video.luma_bytes)


def _to_bytes(plane: np.ndarray) -> bytes:
    plane = np.asarray(plane)
    if plane.dtype != np.uint8:
        plane = np.clip(np.rint(plane), 0, 255).astype(np.uint8)
    return plane.tobytes()


def write_yuv(path, lumas: Iterable[np.ndarray], chromas: Iterable[bytes] | None = None) -> int:
    """Write frames; chroma is copied from ``chromas`` or set to neutral 128."""
    n = 0
    chroma_iter = iter(chromas) if chromas is not None else None
    with open(path, "wb") as fh:
        for y in lumas:
            h, w = np.shape(y)
            fh.write(_to_bytes(y))
            if chroma_iter is not None:
                fh.write(next(chroma_iter))
            else:
                fh.write(bytes([128]) * (h * w // 2))
            n += 1
    return n
