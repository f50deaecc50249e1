"""Analytic vs. central-difference gradients of VMAF w.r.t. a convolution kernel.

The analytic side backpropagates through fusion, features and the
convolution.  The numeric side perturbs one kernel entry at a time by
``+-epsilon`` and rescores; with integer emulation the convolution output
is rounded and clamped to 8-bit range before scoring, as a raw video file
would force.
"""

from __future__ import annotations

import csv
import logging
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument, VmafError
from .filters import KernelFilter
from .fusion import configs_for, frame_features, predict_frame
from .model import VmafModel

log = logging.getLogger(__name__)

INIT_MODES = ("uniform", "identity")
TOLERANCE_MODES = ("relative", "scaled_mean")
REPORT_COLUMNS = ("i", "j", "analytic", "numeric", "abs_diff", "rel_diff")


@dataclass
class GradCheckConfig:
    kernel_size: int = 3
    epsilon: float = 1e-2
    emulate_integer_pipeline: bool = False
    init_mode: str = "uniform"
    # relative: max |a - n| / max |a|; scaled_mean: mean |a - n| / mean |a|
    tolerance: float = 1e-3
    tolerance_mode: str = "relative"
    padding: str = "reflect"
    # e.g. "vmaf_bin {ref} {dist} {width} {height}"; last float printed is the score
    external_command: str | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be positive")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise InvalidArgument("kernel_size must be odd")
        if self.init_mode not in INIT_MODES:
            raise InvalidArgument(f"init_mode must be one of {INIT_MODES}")
        if self.tolerance_mode not in TOLERANCE_MODES:
            raise InvalidArgument(f"tolerance_mode must be one of {TOLERANCE_MODES}")

    def initial_kernel(self) -> KernelFilter:
        k = self.kernel_size
        if self.init_mode == "uniform":
            return KernelFilter(np.full((k, k), 1.0 / (k * k)))
        return KernelFilter.identity(k)


def _score(ref, dist, model: VmafModel) -> ad.Tensor:
    cfgs = configs_for(model)
    return predict_frame(frame_features(ref, dist, ad.Tensor(0.0), *cfgs), model)


def analytic_gradient(ref_frame, kernel: KernelFilter, model: VmafModel,
                      padding: str = "reflect") -> np.ndarray:
    """d score / d W for a single frame scored against ``ref * W``."""
    ref = np.asarray(ref_frame, dtype=np.float64)
    tape = ad.Tape()
    w = tape.parameter(kernel.weights)
    s = _score(ref, ad.conv2d(ref, w, padding), model)
    return ad.backward(s)[w]


class ExternalScorer:
    """Runs an external full-reference scorer on single-frame raw files."""

    def __init__(self, command: str):
        self.command = command

    def __call__(self, ref: np.ndarray, dist: np.ndarray) -> float:
        from .yuv import write_yuv

        h, w = ref.shape
        with tempfile.TemporaryDirectory() as tmp:
            rp, dp = Path(tmp) / "ref.yuv", Path(tmp) / "dist.yuv"
            write_yuv(rp, [ref])
            write_yuv(dp, [dist])
            cmd = self.command.format(ref=rp, dist=dp, width=w, height=h)
            proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True)
        if proc.returncode != 0:
            raise VmafError(f"external scorer failed ({proc.returncode}): {proc.stderr.strip()}")
        return parse_last_float(proc.stdout)


def parse_last_float(text: str) -> float:
    for tok in reversed(text.replace(",", " ").split()):
        try:
            return float(tok)
        except ValueError:
            continue
    raise VmafError("no number found in external scorer output")


@dataclass
class NumericResult:
    gradient: np.ndarray
    out_of_range: int = 0  # pixels clamped across all perturbed evaluations


def numeric_gradient(ref_frame, kernel: KernelFilter, model: VmafModel,
                     cfg: GradCheckConfig | None = None,
                     scorer: Callable[[np.ndarray, np.ndarray], float] | None = None) -> NumericResult:
    """Central differences over every kernel entry (``2 k^2`` forward passes)."""
    cfg = cfg or GradCheckConfig(kernel_size=kernel.size)
    ref = np.asarray(ref_frame, dtype=np.float64)
    if scorer is None:
        if cfg.external_command:
            scorer = ExternalScorer(cfg.external_command)
        else:
            def scorer(r, d):
                return _score(r, d, model).item()
    k = kernel.size
    grad = np.zeros((k, k))
    clamped = 0
    for i in range(k):
        for j in range(k):
            vals = []
            for sign in (1.0, -1.0):
                w = kernel.weights.copy()
                w[i, j] += sign * cfg.epsilon
                dist = ad.conv2d(ref, w, cfg.padding).data
                if cfg.emulate_integer_pipeline:
                    bad = int(np.count_nonzero((dist < -0.5) | (dist > 255.5)))
                    clamped += bad
                    dist = np.clip(np.rint(dist), 0.0, 255.0)
                vals.append(scorer(ref, dist))
            grad[i, j] = (vals[0] - vals[1]) / (2.0 * cfg.epsilon)
    if clamped:
        log.warning("%d perturbed pixels fell outside [0, 255] and were clamped", clamped)
    return NumericResult(grad, clamped)


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    epsilon: float
    tolerance: float
    tolerance_mode: str
    out_of_range: int = 0
    offending: list[tuple[int, int]] = field(default_factory=list)

    @property
    def abs_diff(self) -> np.ndarray:
        return np.abs(self.analytic - self.numeric)

    @property
    def max_abs(self) -> float:
        return float(self.abs_diff.max())

    @property
    def mean_abs(self) -> float:
        return float(self.abs_diff.mean())

    @property
    def max_rel(self) -> float:
        return float(self.abs_diff.max() / max(np.abs(self.analytic).max(), 1e-300))

    @property
    def mean_rel(self) -> float:
        return float(self.abs_diff.mean() / max(np.abs(self.analytic).mean(), 1e-300))

    @property
    def deviation(self) -> float:
        return self.max_rel if self.tolerance_mode == "relative" else self.mean_rel

    @property
    def passed(self) -> bool:
        return self.deviation < self.tolerance

    def rows(self):
        scale = max(np.abs(self.analytic).max(), 1e-300)
        k = self.analytic.shape[0]
        for i in range(k):
            for j in range(k):
                a, n = self.analytic[i, j], self.numeric[i, j]
                yield i, j, a, n, abs(a - n), abs(a - n) / scale

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for i, j, a, n, d, r in self.rows():
                w.writerow([i, j, repr(float(a)), repr(float(n)), repr(float(d)), repr(float(r))])

    def text(self) -> str:
        lines = [
            f"kernel {self.analytic.shape[0]}x{self.analytic.shape[1]}, epsilon {self.epsilon:g}",
            f"mean |analytic| {np.abs(self.analytic).mean():.6g}",
            f"max abs diff {self.max_abs:.6g}, mean abs diff {self.mean_abs:.6g}",
            f"max rel diff {self.max_rel:.6g}, mean rel diff {self.mean_rel:.6g}",
            f"clamped pixels {self.out_of_range}",
            f"{self.tolerance_mode} deviation {self.deviation:.6g} vs tolerance {self.tolerance:g}: "
            + ("PASS" if self.passed else "FAIL"),
        ]
        for i, j in self.offending:
            lines.append(f"  offending entry ({i},{j}): analytic {self.analytic[i, j]:.9g} "
                         f"numeric {self.numeric[i, j]:.9g}")
        return "\n".join(lines)


def gradcheck_report(ref_frame, cfg: GradCheckConfig, model: VmafModel,
                     kernel: KernelFilter | None = None) -> GradCheckReport:
    """Both gradients, deviation statistics and pass/fail against ``cfg.tolerance``."""
    kernel = kernel or cfg.initial_kernel()
    if kernel.size != cfg.kernel_size:
        raise InvalidArgument(f"kernel size {kernel.size} differs from config {cfg.kernel_size}")
    model = model.with_options(clip_enabled=False)
    a = analytic_gradient(ref_frame, kernel, model, cfg.padding)
    num = numeric_gradient(ref_frame, kernel, model, cfg)
    rep = GradCheckReport(a, num.gradient, cfg.epsilon, cfg.tolerance, cfg.tolerance_mode,
                          num.out_of_range)
    if not rep.passed:
        # entries whose own deviation exceeds the tolerance on the chosen scale
        if cfg.tolerance_mode == "relative":
            scale = max(np.abs(a).max(), 1e-300)
        else:
            scale = max(np.abs(a).mean(), 1e-300)
        bad = np.argwhere(rep.abs_diff / scale >= cfg.tolerance)
        if len(bad) == 0:
            bad = np.argwhere(rep.abs_diff == rep.abs_diff.max())
        rep.offending = [(int(i), int(j)) for i, j in bad]
    if not math.isfinite(rep.deviation):
        rep.offending = [(int(i), int(j)) for i, j in np.argwhere(~np.isfinite(rep.abs_diff))]
    return rep
