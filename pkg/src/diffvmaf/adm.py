"""Additive detail metric (detail loss) in the Daubechies-2 wavelet domain.

The distorted image ``T`` is split per coefficient into a restored part
``R`` and an additive impairment ``A = T - R`` relative to the original
``O``.  Restored detail is weighted by a contrast sensitivity function
(CSF), masked by the local energy of the impairment, and compared with
the CSF-weighted original through cube-norm sums over a central region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidArgument, NumericDomainError

_S3 = math.sqrt(3.0)
_N = 4.0 * math.sqrt(2.0)
DB2_LO = np.array([(1 + _S3) / _N, (3 + _S3) / _N, (3 - _S3) / _N, (1 - _S3) / _N])
DB2_HI = np.array([DB2_LO[3], -DB2_LO[2], DB2_LO[1], -DB2_LO[0]])

# subband index: 1 approximation, 2 vertical, 3 diagonal, 4 horizontal
THETA = {1: "a", 2: "v", 3: "d", 4: "h"}
# below this the reference detail is round-off (e.g. a flat frame)
BLANK_DETAIL = 1e-8
DETAIL_BANDS = ("v", "d", "h")

# Watson et al. luma quantization-noise visibility model
_CSF_A, _CSF_K, _CSF_F0 = 0.495, 0.466, 0.401
_CSF_G = (1.501, 1.0, 0.534, 1.0)
_BASIS_AMPLITUDES = (
    (0.62171, 0.67234, 0.72709, 0.67234),
    (0.34537, 0.41317, 0.49428, 0.41317),
    (0.18004, 0.22727, 0.28688, 0.22727),
    (0.091401, 0.11792, 0.15214, 0.11792),
    (0.045943, 0.059758, 0.077727, 0.059758),
    (0.023013, 0.030018, 0.039156, 0.030018),
)


def quant_step(level: int, orientation: int, view_distance: float = 3.0,
               display_height: int = 1080) -> float:
    """Visibility threshold of a unit coefficient at ``level`` (0-based).

    ``orientation`` follows the model table: 1 for horizontal/vertical,
    2 for diagonal.
    """
    r = view_distance * display_height * math.pi / 180.0
    t = math.log10(2.0 ** (level + 1) * _CSF_F0 * _CSF_G[orientation] / r)
    return 2.0 * _CSF_A * 10.0 ** (_CSF_K * t * t) / _BASIS_AMPLITUDES[level][orientation]


def default_csf_weights(levels: int = 4, view_distance: float = 3.0,
                        display_height: int = 1080) -> np.ndarray:
    """``(levels, 3)`` CSF gains in band order (vertical, diagonal, horizontal)."""
    w = np.empty((levels, 3))
    for lam in range(levels):
        hv = 1.0 / quant_step(lam, 1, view_distance, display_height)
        w[lam] = (hv, 1.0 / quant_step(lam, 2, view_distance, display_height), hv)
    return w


def default_cm_kernel() -> np.ndarray:
    k = np.full((3, 3), 1.0 / 30.0)
    k[1, 1] = 1.0 / 15.0
    return k


@dataclass
class AdmConfig:
    egl_dlm: float = 1.0
    neg_mode: bool = False
    border_exclusion_fraction: float = 0.1
    csf_weights: np.ndarray = field(default_factory=default_csf_weights)
    cm_kernel: np.ndarray = field(default_factory=default_cm_kernel)
    cm_threshold_factor: float = 1.0
    levels: int = 4
    angle_threshold_deg: float = 1.0
    ratio_eps: float = 1e-15
    boundary: str = "reflect"
    padding: str = "reflect"

    def __post_init__(self):
        self.csf_weights = np.asarray(self.csf_weights, dtype=np.float64)
        self.cm_kernel = np.asarray(self.cm_kernel, dtype=np.float64)
        if not 0.0 <= self.border_exclusion_fraction < 0.5:
            raise InvalidArgument("border_exclusion_fraction must lie in [0, 0.5)")
        if self.csf_weights.shape != (self.levels, 3):
            raise InvalidArgument(f"csf_weights must have shape ({self.levels}, 3)")
        if np.any(self.csf_weights <= 0):
            raise InvalidArgument("csf_weights must be positive")
        if self.boundary not in ("reflect", "periodic"):
            raise InvalidArgument("boundary must be 'reflect' or 'periodic'")


@lru_cache(maxsize=128)
def _analysis_matrix(n: int, hi: bool, boundary: str) -> sparse.csr_matrix:
    """One-dimensional filter-and-decimate operator ``out[i] = sum_k f[k] x[2i-1+k]``."""
    filt = DB2_HI if hi else DB2_LO
    if boundary == "periodic":
        n_out = n // 2
    else:
        n_out = (n + 1) // 2
    rows, cols, vals = [], [], []
    for i in range(n_out):
        for k, f in enumerate(filt):
            j = 2 * i - 1 + k
            if boundary == "periodic":
                j %= n
            else:
                if j < 0:
                    j = -j
                if j >= n:
                    j = 2 * (n - 1) - j
            rows.append(i)
            cols.append(j)
            vals.append(f)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n_out, n))


class WaveletPyramid:
    """Analysis-only multi-level 2-D wavelet decomposition.

    ``levels[l]`` maps band names ``a``, ``v``, ``d``, ``h`` to tensors.
    """

    def __init__(self, levels: list[dict[str, Tensor]]):
        self.levels = levels

    def __len__(self):
        return len(self.levels)

    def band(self, level: int, theta: int) -> Tensor:
        """Subband at 1-based ``level`` with 1-based orientation ``theta``."""
        return self.levels[level - 1][THETA[theta]]


def dwt_level(x, boundary: str = "reflect") -> dict[str, Tensor]:
    x = ad.as_tensor(x)
    H, W = x.shape
    if boundary == "periodic" and (H % 2 or W % 2):
        raise InvalidArgument("periodic transform needs even dimensions")
    lo_r = ad.linear_map(x, _analysis_matrix(H, False, boundary), axis=0)
    hi_r = ad.linear_map(x, _analysis_matrix(H, True, boundary), axis=0)
    lo_c = _analysis_matrix(W, False, boundary)
    hi_c = _analysis_matrix(W, True, boundary)
    return {
        "a": ad.linear_map(lo_r, lo_c, axis=1),
        "v": ad.linear_map(lo_r, hi_c, axis=1),
        "h": ad.linear_map(hi_r, lo_c, axis=1),
        "d": ad.linear_map(hi_r, hi_c, axis=1),
    }


def dwt2d(image, levels: int = 4, boundary: str = "reflect") -> WaveletPyramid:
    """Separable Daubechies-2 analysis, recursing on the approximation band."""
    x = ad.as_tensor(image)
    need = 2 ** levels
    if min(x.shape) < need:
        raise InvalidArgument(f"image {x.shape} too small for {levels} levels (needs {need})")
    out = []
    for _ in range(levels):
        bands = dwt_level(x, boundary)
        out.append(bands)
        x = bands["a"]
    return WaveletPyramid(out)


@dataclass
class AdmDecomposition:
    restored: list[dict[str, Tensor]]
    additive: list[dict[str, Tensor]]
    psi_ref: list[np.ndarray]
    psi_dist: list[np.ndarray]
    angle_flags: list[np.ndarray]


def _angle_deg(v: np.ndarray, h: np.ndarray) -> np.ndarray:
    return np.degrees(np.arctan2(v, h))


def _restore_band(o: Tensor, t: Tensor, flag: np.ndarray, cfg: AdmConfig) -> Tensor:
    od = o.data
    zero_o = od == 0.0
    shift = np.where(zero_o, 1.0, np.sign(od) * cfg.ratio_eps)
    ratio = ad.where(zero_o, Tensor(0.0), ad.div(t, o + shift))
    restored = ad.clip(ratio, 0.0, 1.0) * o
    if not cfg.neg_mode:
        return ad.where(flag, t, restored)
    scaled = restored * cfg.egl_dlm
    rd = restored.data
    limited = ad.where(rd > 0.0, ad.minimum(scaled, t),
                       ad.where(rd < 0.0, ad.maximum(scaled, t), restored))
    return ad.where(flag, limited, restored)


def decouple(ref_pyr: WaveletPyramid, dist_pyr: WaveletPyramid,
             cfg: AdmConfig | None = None) -> AdmDecomposition:
    """Split each distorted detail coefficient into restored and additive parts.

    The angle test compares the orientation of the (horizontal, vertical)
    coefficient pairs; it is a constant selector during backward.
    """
    cfg = cfg or AdmConfig()
    if len(ref_pyr) != len(dist_pyr):
        raise InvalidArgument("pyramids have different depths")
    restored, additive, psi_o, psi_t, flags = [], [], [], [], []
    for lo, lt in zip(ref_pyr.levels, dist_pyr.levels):
        if lo["h"].shape != lt["h"].shape:
            raise InvalidArgument("pyramids come from differently sized images")
        ao = _angle_deg(lo["v"].data, lo["h"].data)
        at = _angle_deg(lt["v"].data, lt["h"].data)
        diff = np.abs((ao - at + 180.0) % 360.0 - 180.0)
        flag = diff <= cfg.angle_threshold_deg
        r = {b: _restore_band(lo[b], lt[b], flag, cfg) for b in DETAIL_BANDS}
        restored.append(r)
        additive.append({b: lt[b] - r[b] for b in DETAIL_BANDS})
        psi_o.append(ao)
        psi_t.append(at)
        flags.append(flag)
    return AdmDecomposition(restored, additive, psi_o, psi_t, flags)


def central_region(shape: tuple[int, int], fraction: float) -> tuple[int, int, int, int]:
    """Half-open ``(row0, row1, col0, col1)`` excluding ``fraction`` per edge."""
    bounds = []
    for n in shape:
        lo = max(int(n * fraction - 0.5), 0)
        bounds += [lo, n - lo]
    return tuple(bounds)


def adm_score(ref, dist, cfg: AdmConfig | None = None) -> Tensor:
    """Ratio of masked restored detail to original detail (1 for ``dist == ref``)."""
    cfg = cfg or AdmConfig()
    ref, dist = ad.as_tensor(ref), ad.as_tensor(dist)
    if ref.shape != dist.shape:
        raise InvalidArgument(f"shape mismatch: {ref.shape} vs {dist.shape}")
    need = 2 ** (cfg.levels + 1)
    if min(ref.shape) < need:
        raise InvalidArgument(f"frame {ref.shape} too small for ADM (needs {need}x{need})")
    pyr_o = dwt2d(ref, cfg.levels, cfg.boundary)
    pyr_t = dwt2d(dist, cfg.levels, cfg.boundary)
    dec = decouple(pyr_o, pyr_t, cfg)

    num = Tensor(0.0)
    den = Tensor(0.0)
    for lam in range(cfg.levels):
        w = dict(zip(DETAIL_BANDS, cfg.csf_weights[lam]))
        csf_o = {b: pyr_o.levels[lam][b] * w[b] for b in DETAIL_BANDS}
        csf_r = {b: dec.restored[lam][b] * w[b] for b in DETAIL_BANDS}
        thr = None
        for b in DETAIL_BANDS:
            masked = ad.conv2d(ad.absolute(dec.additive[lam][b] * w[b]), cfg.cm_kernel, cfg.padding)
            thr = masked if thr is None else thr + masked
        if cfg.cm_threshold_factor != 1.0:
            thr = thr * cfg.cm_threshold_factor
        region = central_region(csf_o["v"].shape, cfg.border_exclusion_fraction)
        for b in DETAIL_BANDS:
            x = ad.relu(ad.absolute(csf_r[b]) - thr)
            num = num + ad.cbrt(ad.reduce_sum(ad.cube(x), region))
            den = den + ad.cbrt(ad.reduce_sum(ad.cube(ad.absolute(csf_o[b])), region))
    if den.item() < BLANK_DETAIL:
        raise NumericDomainError("ADM undefined: reference has no detail in the central region")
    return num / den
