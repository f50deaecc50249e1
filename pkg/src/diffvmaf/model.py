"""SVM regression model: container, file formats and validation.

Two on-disk layouts are accepted by :func:`load_model`:

* the native JSON schema written by :func:`save_model` (``"format":
  "diffvmaf-model"``, see README), and
* the JSON layout of the reference VMAF models (a ``model_dict`` holding
  a libsvm model string plus linear-rescale normalization), so an
  official model file can be dropped in unchanged.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ModelFormatError

FORMAT_NAME = "diffvmaf-model"
FORMAT_VERSION = 1
FEATURE_NAMES = ("vif_scale0", "vif_scale1", "vif_scale2", "vif_scale3", "adm", "motion")
BUNDLED = {"demo": "demo_model.json", "toy": "toy_model.json"}


@dataclass(frozen=True)
class VmafModel:
    support_vectors: np.ndarray
    dual_coeffs: np.ndarray
    gamma: float
    intercept: float
    feature_order: tuple[str, ...] = FEATURE_NAMES
    # per feature (slope, intercept): normalized = slope * raw + intercept
    feature_norms: np.ndarray = field(default_factory=lambda: np.tile([1.0, 0.0], (6, 1)))
    # score = (svm_output - intercept) / slope
    score_norm: tuple[float, float] = (1.0, 0.0)
    score_transform: tuple[float, ...] | None = None
    score_clip: tuple[float, float] = (0.0, 100.0)
    clip_enabled: bool = True
    neg_mode: bool = False
    egl_vif: float = 1.0
    egl_dlm: float = 1.0
    name: str = ""

    def __post_init__(self):
        sv = np.atleast_2d(np.asarray(self.support_vectors, dtype=np.float64))
        coef = np.asarray(self.dual_coeffs, dtype=np.float64).ravel()
        norms = np.asarray(self.feature_norms, dtype=np.float64)
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "dual_coeffs", coef)
        object.__setattr__(self, "feature_norms", norms)
        object.__setattr__(self, "feature_order", tuple(self.feature_order))
        object.__setattr__(self, "score_norm", tuple(float(v) for v in self.score_norm))
        object.__setattr__(self, "score_clip", tuple(float(v) for v in self.score_clip))
        if self.score_transform is not None:
            object.__setattr__(self, "score_transform", tuple(float(v) for v in self.score_transform))
        self.validate()

    def validate(self):
        if sorted(self.feature_order) != sorted(FEATURE_NAMES):
            raise ModelFormatError(f"feature_order must list exactly {FEATURE_NAMES}, got {self.feature_order}")
        n = len(self.dual_coeffs)
        if n == 0:
            raise ModelFormatError("dual_coeffs: model has no support vectors")
        if self.support_vectors.shape != (n, len(FEATURE_NAMES)):
            raise ModelFormatError(
                f"support_vectors: expected shape ({n}, 6) to match dual_coeffs, "
                f"got {self.support_vectors.shape}")
        if not self.gamma > 0:
            raise ModelFormatError(f"gamma must be positive, got {self.gamma}")
        if self.feature_norms.shape != (len(FEATURE_NAMES), 2):
            raise ModelFormatError("feature_norms must hold one (slope, intercept) pair per feature")
        if self.score_norm[0] == 0:
            raise ModelFormatError("score_norm slope must be nonzero")
        if self.score_clip[0] >= self.score_clip[1]:
            raise ModelFormatError("score_clip must be an increasing pair")
        for name in ("support_vectors", "dual_coeffs", "feature_norms"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ModelFormatError(f"{name} contains non-finite values")

    def with_options(self, **changes) -> VmafModel:
        """Copy with e.g. ``clip_enabled=False`` or ``neg_mode=True``."""
        return replace(self, **changes)


def _require(d: dict, key: str, where: str = ""):
    if key not in d:
        raise ModelFormatError(f"missing field {where}{key!r}")
    return d[key]


def _from_native(doc: dict) -> VmafModel:
    version = _require(doc, "version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    svm = _require(doc, "svm")
    norms = _require(doc, "feature_norms")
    order = _require(doc, "feature_order")
    score_norm = doc.get("score_norm", {"slope": 1.0, "intercept": 0.0})
    neg = doc.get("neg", {})
    return VmafModel(
        support_vectors=np.asarray(_require(svm, "support_vectors", "svm."), dtype=np.float64),
        dual_coeffs=np.asarray(_require(svm, "dual_coeffs", "svm."), dtype=np.float64),
        gamma=float(_require(svm, "gamma", "svm.")),
        intercept=float(_require(svm, "intercept", "svm.")),
        feature_order=tuple(order),
        feature_norms=np.column_stack([_require(norms, "slopes", "feature_norms."),
                                       _require(norms, "intercepts", "feature_norms.")]),
        score_norm=(score_norm["slope"], score_norm["intercept"]),
        score_transform=doc.get("score_transform"),
        score_clip=tuple(doc.get("score_clip", (0.0, 100.0))),
        clip_enabled=bool(doc.get("clip_enabled", True)),
        neg_mode=bool(neg.get("enabled", False)),
        egl_vif=float(neg.get("egl_vif", 1.0)),
        egl_dlm=float(neg.get("egl_dlm", 1.0)),
        name=doc.get("name", ""),
    )


def _official_feature_name(name: str) -> str:
    m = re.search(r"vif_scale([0-3])", name)
    if m:
        return f"vif_scale{m.group(1)}"
    if "adm" in name:
        return "adm"
    if "motion" in name:
        return "motion"
    raise ModelFormatError(f"unrecognized feature name {name!r}")


def parse_libsvm(text: str) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Parse a libsvm RBF regression model; returns (gamma, intercept, SVs, coefs)."""
    lines = [ln.strip() for ln in text.strip().splitlines()]
    try:
        sv_at = lines.index("SV")
    except ValueError:
        raise ModelFormatError("libsvm model has no 'SV' section") from None
    header = {}
    for ln in lines[:sv_at]:
        key, _, val = ln.partition(" ")
        header[key] = val.strip()
    if header.get("kernel_type", "rbf") != "rbf":
        raise ModelFormatError(f"only RBF kernels are supported, got {header['kernel_type']}")
    gamma = float(_require(header, "gamma", "libsvm."))
    rho = float(_require(header, "rho", "libsvm."))
    coefs, rows = [], []
    for ln in lines[sv_at + 1:]:
        if not ln:
            continue
        parts = ln.split()
        coefs.append(float(parts[0]))
        row = {}
        for item in parts[1:]:
            idx, _, val = item.partition(":")
            row[int(idx)] = float(val)
        rows.append(row)
    if not rows:
        raise ModelFormatError("libsvm model lists no support vectors")
    dim = max(max(r) for r in rows if r)
    sv = np.zeros((len(rows), dim))
    for i, row in enumerate(rows):
        for idx, val in row.items():
            sv[i, idx - 1] = val
    if "total_sv" in header and int(header["total_sv"]) != len(rows):
        raise ModelFormatError("libsvm total_sv does not match the SV count")
    return gamma, -rho, sv, np.asarray(coefs)


def _from_official(doc: dict) -> VmafModel:
    md = doc["model_dict"]
    names = [_official_feature_name(n) for n in _require(md, "feature_names", "model_dict.")]
    gamma, b, sv, coefs = parse_libsvm(_require(md, "model", "model_dict."))
    if sv.shape[1] != len(names):
        raise ModelFormatError("support vector width does not match feature_names")
    norm_type = md.get("norm_type", "none")
    if norm_type == "linear_rescale":
        slopes = md["slopes"]
        intercepts = md["intercepts"]
        score_norm = (slopes[0], intercepts[0])
        norms = np.column_stack([slopes[1:], intercepts[1:]])
    elif norm_type == "none":
        score_norm = (1.0, 0.0)
        norms = np.tile([1.0, 0.0], (len(names), 1))
    else:
        raise ModelFormatError(f"unsupported norm_type {norm_type!r}")
    transform = None
    st = md.get("score_transform") or doc.get("param_dict", {}).get("score_transform")
    if st and st.get("enabled", False):
        transform = tuple(st.get(f"p{i}", 0.0) for i in range(3))
    clip = md.get("score_clip") or doc.get("param_dict", {}).get("score_clip") or [0.0, 100.0]
    return VmafModel(
        support_vectors=sv, dual_coeffs=coefs, gamma=gamma, intercept=b,
        feature_order=tuple(names), feature_norms=norms, score_norm=score_norm,
        score_transform=transform, score_clip=tuple(clip), clip_enabled=True,
        name=str(md.get("model_type", "official")),
    )


def resolve_model_path(path) -> Path:
    key = str(path)
    if key in BUNDLED:
        return Path(str(resources.files("diffvmaf") / "data" / BUNDLED[key]))
    return Path(path)


def load_model(path="demo") -> VmafModel:
    """Load a native or reference-layout JSON model; ``"demo"`` and ``"toy"`` are bundled."""
    p = resolve_model_path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if "model_dict" in doc:
        return _from_official(doc)
    fmt = _require(doc, "format")
    if fmt != FORMAT_NAME:
        raise ModelFormatError(f"unknown model format {fmt!r}")
    return _from_native(doc)


def model_to_dict(model: VmafModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "name": model.name,
        "feature_order": list(model.feature_order),
        "feature_norms": {"slopes": model.feature_norms[:, 0].tolist(),
                          "intercepts": model.feature_norms[:, 1].tolist()},
        "score_norm": {"slope": model.score_norm[0], "intercept": model.score_norm[1]},
        "svm": {"gamma": model.gamma, "intercept": model.intercept,
                "support_vectors": model.support_vectors.tolist(),
                "dual_coeffs": model.dual_coeffs.tolist()},
        "score_transform": list(model.score_transform) if model.score_transform else None,
        "score_clip": list(model.score_clip),
        "clip_enabled": model.clip_enabled,
        "neg": {"enabled": model.neg_mode, "egl_vif": model.egl_vif, "egl_dlm": model.egl_dlm},
    }


def save_model(model: VmafModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")
