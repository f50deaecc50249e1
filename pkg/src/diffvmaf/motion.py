"""Temporal feature: mean absolute difference of blurred neighbouring frames.

Motion is computed on the reference stream only, so it never carries
gradient from a distortion applied to the distorted stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidArgument
from .vif import gaussian_1d


def motion_filter() -> np.ndarray:
    return gaussian_1d(5, 1.0)


@dataclass
class MotionState:
    """Streaming state: the last blurred frame and the blur kernel."""

    prev_blurred: Tensor | None = None
    blur_kernel: np.ndarray = field(default_factory=lambda: np.outer(motion_filter(), motion_filter()))
    normalize: bool = True
    padding: str = "reflect"

    def blur(self, frame) -> Tensor:
        f = motion_filter()
        return ad.conv2d_separable(frame, f, f, self.padding)

    def push(self, frame) -> Tensor | None:
        """Blur ``frame`` and return its SAD against the previous frame."""
        cur = self.blur(frame)
        out = None if self.prev_blurred is None else sad(cur, self.prev_blurred, self.normalize)
        self.prev_blurred = cur
        return out


def sad(a, b, normalize: bool = True) -> Tensor:
    """Sum of absolute differences, divided by the pixel count if ``normalize``."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}")
    total = ad.reduce_sum(ad.absolute(a - b))
    return total * (1.0 / a.data.size) if normalize else total


def motion(frames: Sequence, index: int, normalize: bool = True, padding: str = "reflect") -> Tensor:
    """Motion of frame ``index``: min of SADs to its blurred neighbours.

    The first frame scores 0 and the last frame uses its predecessor only.
    """
    if len(frames) == 0:
        raise InvalidArgument("motion needs at least one frame")
    if not 0 <= index < len(frames):
        raise InvalidArgument(f"frame index {index} out of range for {len(frames)} frames")
    if index == 0:
        return Tensor(0.0)
    state = MotionState(normalize=normalize, padding=padding)
    cur = state.blur(frames[index])
    prev_sad = sad(cur, state.blur(frames[index - 1]), normalize)
    if index == len(frames) - 1:
        return prev_sad
    next_sad = sad(cur, state.blur(frames[index + 1]), normalize)
    return ad.minimum(prev_sad, next_sad)


def motion_stream(frames: Iterable, normalize: bool = True,
                  padding: str = "reflect") -> Iterator[Tensor]:
    """Per-frame motion over a stream, holding at most two blurred frames."""
    state = MotionState(normalize=normalize, padding=padding)
    pending = None  # SAD(i-1, i) for the frame awaiting its successor
    first = True
    for frame in frames:
        s = state.push(frame)
        if s is None:
            continue
        if first:
            yield Tensor(0.0)
            first = False
        else:
            yield ad.minimum(pending, s)
        pending = s
    if state.prev_blurred is None:
        return
    yield Tensor(0.0) if first else pending
