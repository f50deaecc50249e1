"""Convolution kernels for preprocessing: identity, unsharp masking, I/O, PSNR."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument, ModelFormatError
from .vif import gaussian_1d


def identity_kernel(size: int) -> np.ndarray:
    """A ``size x size`` kernel with 1 at the center."""
    if size % 2 == 0 or size < 1:
        raise InvalidArgument(f"kernel size must be odd, got {size}")
    w = np.zeros((size, size))
    w[size // 2, size // 2] = 1.0
    return w


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    g = gaussian_1d(size, sigma)
    return np.outer(g, g)


@dataclass
class KernelFilter:
    """A square convolution kernel.

    ``alpha`` is a label for the amplification the weights correspond to;
    :meth:`at_alpha` rescales the deviation from identity.
    """

    weights: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise InvalidArgument(f"kernel must be square with odd side, got {w.shape}")
        self.weights = w

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def identity(cls, size: int) -> KernelFilter:
        return cls(identity_kernel(size), alpha=0.0)

    def residual(self) -> np.ndarray:
        """Deviation from identity, ``W - I``."""
        return self.weights - identity_kernel(self.size)

    def at_alpha(self, alpha: float) -> KernelFilter:
        """``I + alpha * (W - I)``; keeps the sum at 1 when ``W`` sums to 1."""
        return KernelFilter(identity_kernel(self.size) + alpha * self.residual(), alpha=alpha)

    def symmetry_residual(self) -> float:
        """Largest deviation from transpose and 90-degree rotation symmetry."""
        w = self.weights
        return float(max(np.abs(w - w.T).max(), np.abs(w - np.rot90(w)).max()))

    def save(self, path) -> None:
        save_kernel(self, path)


def unsharp_kernel(size: int, sigma: float | None = None, alpha: float = 1.0) -> KernelFilter:
    """Unsharp mask ``I + alpha (I - G)`` with a normalized Gaussian ``G``.

    ``sigma`` defaults to ``size / 5``.
    """
    sigma = size / 5.0 if sigma is None else sigma
    eye = identity_kernel(size)
    return KernelFilter(eye + alpha * (eye - gaussian_kernel(size, sigma)), alpha=alpha)


def save_kernel(kernel: KernelFilter, path) -> None:
    """Plain text: the side length, then one row of weights per line."""
    lines = [str(kernel.size)]
    lines += [" ".join(repr(float(v)) for v in row) for row in kernel.weights]
    Path(path).write_text("\n".join(lines) + "\n")


def load_kernel(path) -> KernelFilter:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelFormatError(f"cannot read filter file {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        k = int(lines[0])
        rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    except (IndexError, ValueError) as exc:
        raise ModelFormatError(f"malformed filter file {path}: {exc}") from exc
    if len(rows) != k or any(len(r) != k for r in rows):
        raise ModelFormatError(f"filter file {path}: expected {k} rows of {k} weights")
    return KernelFilter(np.array(rows))


def apply_filter(frames: Sequence[np.ndarray], kernel: KernelFilter, clamp: bool = True,
                 padding: str = "reflect") -> list[np.ndarray]:
    """Convolve each luma plane; with ``clamp`` round and clamp to 8-bit range."""
    out = []
    for f in frames:
        y = ad.conv2d(np.asarray(f, dtype=np.float64), kernel.weights, padding).data
        if clamp:
            y = np.clip(np.rint(y), 0.0, 255.0)
        out.append(y)
    return out


def psnr(ref, dist, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    ref = np.asarray(ref, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise InvalidArgument(f"shape mismatch: {ref.shape} vs {dist.shape}")
    mse = float(np.mean((ref - dist) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
