"""Pixel-domain visual information fidelity over four scales.

Local statistics are Gaussian-weighted moments obtained by convolving
with the scale kernel, so the whole feature is a composition of tape
primitives and can be differentiated with respect to either image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidArgument

N_SCALES = 4


def gaussian_1d(size: int, sigma: float) -> np.ndarray:
    """Normalized sampled Gaussian of odd length ``size``."""
    if size % 2 == 0 or size < 1:
        raise InvalidArgument(f"Gaussian size must be odd and positive, got {size}")
    if sigma <= 0:
        raise InvalidArgument("Gaussian sigma must be positive")
    x = np.arange(size, dtype=np.float64) - size // 2
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


@dataclass
class VifConfig:
    sigma_n_sq: float = 2.0
    egl_vif: float = 1.0
    neg_mode: bool = False
    eps_var: float = 1e-10
    eps_v: float = 1e-10
    kernel_sizes: tuple[int, ...] = (17, 9, 5, 3)
    # sigma = size / 5 when left empty
    kernel_sigmas: tuple[float, ...] = ()
    padding: str = "reflect"
    kernels: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.sigma_n_sq <= 0:
            raise InvalidArgument("sigma_n_sq must be positive")
        if self.neg_mode and self.egl_vif < 1.0:
            raise InvalidArgument("egl_vif must be >= 1 in NEG mode")
        if len(self.kernel_sizes) != N_SCALES:
            raise InvalidArgument(f"need {N_SCALES} kernel sizes")
        sigmas = self.kernel_sigmas or tuple(n / 5.0 for n in self.kernel_sizes)
        self.kernel_sizes = tuple(int(n) for n in self.kernel_sizes)
        self.kernel_sigmas = tuple(float(s) for s in sigmas)
        self.kernels = [gaussian_1d(n, s) for n, s in zip(self.kernel_sizes, self.kernel_sigmas)]


@dataclass
class VifScaleStats:
    mu_ref: Tensor
    mu_dist: Tensor
    sigma_ref_sq: Tensor
    sigma_dist_sq: Tensor
    sigma_cross: Tensor
    g: Tensor
    sigma_v_sq: Tensor


def _smooth(x: Tensor, kernel, padding: str) -> Tensor:
    k = np.asarray(kernel.data if isinstance(kernel, Tensor) else kernel)
    if k.ndim == 2 and 1 in k.shape:
        k = k.ravel()
    if k.ndim == 1:
        return ad.conv2d_separable(x, k, k, padding)
    return ad.conv2d(x, k, padding)


def scale_stats(ref, dist, kernel, cfg: VifConfig) -> VifScaleStats:
    """Local moments, channel gain and residual variance at one scale."""
    ref, dist = ad.as_tensor(ref), ad.as_tensor(dist)
    if ref.shape != dist.shape:
        raise InvalidArgument(f"shape mismatch: {ref.shape} vs {dist.shape}")
    ksize = max(np.shape(kernel.data if isinstance(kernel, Tensor) else kernel))
    if min(ref.shape) < ksize:
        raise InvalidArgument(f"image {ref.shape} smaller than {ksize}-tap kernel")
    pad = cfg.padding
    mu1 = _smooth(ref, kernel, pad)
    mu2 = _smooth(dist, kernel, pad)
    s1 = ad.relu(_smooth(ref * ref, kernel, pad) - mu1 * mu1)
    s2 = ad.relu(_smooth(dist * dist, kernel, pad) - mu2 * mu2)
    s12 = _smooth(ref * dist, kernel, pad) - mu1 * mu2

    eps = cfg.eps_var
    g = ad.div(s12, s1, offset=eps)
    sv = s2 - g * s12
    zero = Tensor(0.0)
    # degenerate windows, in order: flat reference, flat distorted, negative gain
    flat_ref = s1.data < eps
    g = ad.where(flat_ref, zero, g)
    sv = ad.where(flat_ref, s2, sv)
    s1 = ad.where(flat_ref, zero, s1)
    flat_dist = s2.data < eps
    g = ad.where(flat_dist, zero, g)
    sv = ad.where(flat_dist, zero, sv)
    negative = g.data < 0.0
    sv = ad.where(negative, s2, sv)
    g = ad.where(negative, zero, g)
    sv = ad.maximum(sv, cfg.eps_v)
    if cfg.neg_mode:
        g = ad.minimum(g, cfg.egl_vif)
    return VifScaleStats(mu1, mu2, s1, s2, s12, g, sv)


def vif_scale(ref, dist, kernel, cfg: VifConfig | None = None) -> Tensor:
    """Information ratio of one scale, as a 1x1 tensor.

    A completely flat reference carries no information; the ratio is then
    defined as 1.
    """
    cfg = cfg or VifConfig()
    st = scale_stats(ref, dist, kernel, cfg)
    n = cfg.sigma_n_sq
    num_terms = ad.log2_1p(st.g * st.g * st.sigma_ref_sq / (st.sigma_v_sq + n))
    den_terms = ad.log2_1p(st.sigma_ref_sq * (1.0 / n))
    num = ad.reduce_sum(num_terms)
    den = ad.reduce_sum(den_terms)
    if den.item() == 0.0:
        return Tensor(1.0)
    return num / den


def vif_features(ref, dist, cfg: VifConfig | None = None) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """VIF at the full resolution and three successive 2x downsamplings."""
    cfg = cfg or VifConfig()
    ref, dist = ad.as_tensor(ref), ad.as_tensor(dist)
    if ref.shape != dist.shape:
        raise InvalidArgument(f"shape mismatch: {ref.shape} vs {dist.shape}")
    out = []
    for s in range(N_SCALES):
        k = cfg.kernels[s]
        if s > 0:
            if min(ref.shape) < 2 * len(k):
                raise InvalidArgument(
                    f"frame too small for VIF scale {s}: {ref.shape} at this level")
            ref = ad.downsample2x(ref, (k, k), cfg.padding)
            dist = ad.downsample2x(dist, (k, k), cfg.padding)
        out.append(vif_scale(ref, dist, k, cfg))
    return tuple(out)
