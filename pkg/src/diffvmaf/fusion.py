"""Per-frame feature extraction, SVM-RBF score fusion and stream pooling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .adm import AdmConfig, adm_score
from .autodiff import Tensor
from .errors import InvalidArgument, NumericDomainError
from .model import FEATURE_NAMES, VmafModel
from .motion import motion_filter, sad
from .vif import VifConfig, vif_features

CSV_COLUMNS = ("frame_index", "vif0", "vif1", "vif2", "vif3", "adm", "motion", "score")


@dataclass
class FrameFeatures:
    """The six regression inputs of one frame (tensors or plain floats)."""

    vif0: Tensor | float
    vif1: Tensor | float
    vif2: Tensor | float
    vif3: Tensor | float
    adm: Tensor | float
    motion: Tensor | float

    def by_name(self) -> dict[str, Tensor | float]:
        return {
            "vif_scale0": self.vif0, "vif_scale1": self.vif1,
            "vif_scale2": self.vif2, "vif_scale3": self.vif3,
            "adm": self.adm, "motion": self.motion,
        }

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass
class FrameRecord:
    index: int
    features: dict[str, float]
    score: float


@dataclass
class StreamReport:
    frames: list[FrameRecord] = field(default_factory=list)
    pooled: float = math.nan
    clipped: bool = False


def configs_for(model: VmafModel, vif_cfg: VifConfig | None = None,
                adm_cfg: AdmConfig | None = None) -> tuple[VifConfig, AdmConfig]:
    """Feature configs with the model's NEG switches applied."""
    vif_cfg = vif_cfg or VifConfig()
    adm_cfg = adm_cfg or AdmConfig()
    if model.neg_mode:
        vif_cfg = VifConfig(**{**_init_fields(vif_cfg), "neg_mode": True, "egl_vif": model.egl_vif})
        adm_cfg = AdmConfig(**{**_init_fields(adm_cfg), "neg_mode": True, "egl_dlm": model.egl_dlm})
    return vif_cfg, adm_cfg


def _init_fields(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.init}


def frame_features(ref, dist, motion_value, vif_cfg: VifConfig | None = None,
                   adm_cfg: AdmConfig | None = None) -> FrameFeatures:
    v = vif_features(ref, dist, vif_cfg)
    return FrameFeatures(*v, adm_score(ref, dist, adm_cfg), motion_value)


def rbf_kernel(u: np.ndarray, v: np.ndarray, gamma: float) -> float:
    d = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    return float(np.exp(-gamma * np.dot(d, d)))


def predict_frame(features: FrameFeatures, model: VmafModel) -> Tensor:
    """``sum_i alpha_i exp(-gamma |x_i - x|^2) + b`` on normalized features, rescaled."""
    named = features.by_name()
    cols = []
    for name in model.feature_order:
        val = named[name]
        if math.isnan(float(val)):
            raise NumericDomainError(f"feature {name} is NaN")
        cols.append(ad.as_tensor(val))
    x = ad.concat(cols, axis=1)
    x = x * model.feature_norms[:, 0][None, :] + model.feature_norms[:, 1][None, :]
    diff = ad.sub(model.support_vectors, x)
    dist2 = ad.sum_axis(ad.square(diff), axis=1)
    k = ad.exp(dist2 * (-model.gamma))
    y = ad.reduce_sum(k * model.dual_coeffs[:, None]) + model.intercept
    slope, icpt = model.score_norm
    score = (y - icpt) * (1.0 / slope)
    if model.score_transform:
        out = Tensor(0.0)
        power = Tensor(1.0)
        for p in model.score_transform:
            out = out + power * p
            power = power * score
        score = out
    return score


def score_stream(ref_frames: Sequence, dist_frames: Sequence, model: VmafModel,
                 vif_cfg: VifConfig | None = None, adm_cfg: AdmConfig | None = None,
                 motion_normalize: bool = True) -> tuple[Tensor, StreamReport]:
    """Mean of per-frame predictions, clipped afterwards if the model says so."""
    if len(ref_frames) != len(dist_frames):
        raise InvalidArgument(
            f"stream length mismatch: {len(ref_frames)} reference vs {len(dist_frames)} distorted")
    if len(ref_frames) == 0:
        raise InvalidArgument("empty stream")
    vif_cfg, adm_cfg = configs_for(model, vif_cfg, adm_cfg)
    scorer = StreamScorer(model, vif_cfg, adm_cfg, motion_normalize)
    for r, d in zip(ref_frames, dist_frames):
        scorer.push(r, d)
    return scorer.finish()


class StreamScorer:
    """Incremental scorer; holds one frame back so motion can look ahead."""

    def __init__(self, model: VmafModel, vif_cfg: VifConfig | None = None,
                 adm_cfg: AdmConfig | None = None, motion_normalize: bool = True):
        self.model = model
        self.vif_cfg, self.adm_cfg = configs_for(model, vif_cfg, adm_cfg)
        self.report = StreamReport()
        self._normalize = motion_normalize
        self._scores: list[Tensor] = []
        self._pending = None
        self._pending_blur = None
        self._back = None  # SAD between the pending frame and its predecessor

    def push(self, ref, dist):
        ref, dist = ad.as_tensor(ref), ad.as_tensor(dist)
        if dist.shape != ref.shape:
            raise InvalidArgument(f"frame size mismatch: {ref.shape} vs {dist.shape}")
        if self._pending is not None and self._pending[0].shape != ref.shape:
            raise InvalidArgument("frame size changed within the stream")
        f = motion_filter()
        blurred = ad.conv2d_separable(ref, f, f, "reflect")
        if self._pending is not None:
            fwd = sad(self._pending_blur, blurred, self._normalize)
            mot = Tensor(0.0) if self._back is None else ad.minimum(self._back, fwd)
            self._score(mot)
            self._back = fwd
        self._pending = (ref, dist)
        self._pending_blur = blurred

    def _score(self, mot):
        ref, dist = self._pending
        feats = frame_features(ref, dist, mot, self.vif_cfg, self.adm_cfg)
        score = predict_frame(feats, self.model)
        self.report.frames.append(FrameRecord(len(self._scores), feats.as_floats(), score.item()))
        self._scores.append(score)

    def finish(self) -> tuple[Tensor, StreamReport]:
        if self._pending is not None:
            self._score(Tensor(0.0) if self._back is None else self._back)
            self._pending = None
        if not self._scores:
            raise InvalidArgument("empty stream")
        total = self._scores[0]
        for s in self._scores[1:]:
            total = total + s
        pooled = total * (1.0 / len(self._scores))
        if self.model.clip_enabled:
            lo, hi = self.model.score_clip
            self.report.clipped = not lo <= pooled.item() <= hi
            pooled = ad.clip(pooled, lo, hi)
        self.report.pooled = pooled.item()
        return pooled, self.report


def write_features_csv(report: StreamReport, path) -> None:
    """One row per frame, fixed column order, shortest round-trip float repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rec in report.frames:
            f = rec.features
            w.writerow([rec.index] + [repr(f[c]) for c in CSV_COLUMNS[1:-1]] + [repr(rec.score)])


def read_features_csv(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != CSV_COLUMNS:
        raise InvalidArgument("unexpected feature CSV columns")
    return [{k: (int(v) if k == "frame_index" else float(v)) for k, v in r.items()} for r in rows]
