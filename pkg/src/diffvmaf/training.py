"""Learning a preprocessing kernel by projected gradient ascent on VMAF.

The objective over a batch of reference crops ``R_i`` is
``L(W) = sum_i VMAF(R_i, R_i * W)`` with clipping disabled.  After each
step the kernel is divided by its sum so that it keeps unit gain.  By
default the step itself uses the gradient with its mean removed, so it
stays in the sum-to-one plane; see ``TrainConfig.projection``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument, NumericDomainError
from .filters import KernelFilter, psnr, unsharp_kernel
from .fusion import configs_for, frame_features, predict_frame
from .model import VmafModel

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "batch_loss", "kernel_sum", "symmetry_residual")
SWEEP_COLUMNS = ("alpha", "vmaf", "psnr_db")
SELECTIONS = ("matched_psnr", "best_score", "last")
PROJECTIONS = ("tangent", "rescale")


@dataclass
class TrainConfig:
    kernel_size: int = 7
    learning_rate: float = 1e-5
    batch_size: int = 3
    max_steps: int = 200
    crop_size: int | None = 128
    early_stopping: bool = True
    score_ceiling: float | None = 100.0
    patience: int = 50
    selection: str = "matched_psnr"
    reference_alpha: float = 0.5
    unsharp_sigma: float | None = None
    eval_every: int = 10
    seed: int = 0
    clip_disabled: bool = True
    projection: str = "tangent"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidArgument("learning_rate must be non-negative")
        if self.kernel_size % 2 == 0:
            raise InvalidArgument("kernel_size must be odd")
        if not self.clip_disabled:
            raise InvalidArgument("training requires clipping disabled; clipping zeroes the gradient")
        if self.projection not in PROJECTIONS:
            raise InvalidArgument(f"projection must be one of {PROJECTIONS}")
        if self.selection not in SELECTIONS:
            raise InvalidArgument(f"selection must be one of {SELECTIONS}")
        if self.batch_size < 1 or self.max_steps < 0 or self.eval_every < 1:
            raise InvalidArgument("batch_size, max_steps and eval_every must be positive")


@dataclass
class StepRecord:
    step: int
    batch_loss: float
    kernel_sum: float
    symmetry_residual: float


@dataclass
class Checkpoint:
    step: int
    weights: np.ndarray
    eval_vmaf: float
    matched_alpha: float = math.nan
    matched_vmaf: float = math.nan


@dataclass
class TrainResult:
    filter: KernelFilter
    log: list[StepRecord] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    best: Checkpoint | None = None
    init_vmaf: float = math.nan
    target_psnr: float = math.nan
    stop_reason: str = ""


def _frame_vmaf(ref, dist, model: VmafModel, cfgs) -> ad.Tensor:
    feats = frame_features(ref, dist, ad.Tensor(0.0), *cfgs)
    return predict_frame(feats, model)


def mean_vmaf(frames: Sequence[np.ndarray], kernel: KernelFilter, model: VmafModel,
              padding: str = "reflect", cfgs=None) -> float:
    """Mean unclipped single-frame VMAF of ``frames`` against their filtered copies."""
    cfgs = cfgs or configs_for(model)
    vals = [_frame_vmaf(f, ad.conv2d(f, kernel.weights, padding), model, cfgs).item() for f in frames]
    return float(np.mean(vals))


def mean_psnr(frames: Sequence[np.ndarray], kernel: KernelFilter, padding: str = "reflect") -> float:
    return float(np.mean([psnr(f, ad.conv2d(f, kernel.weights, padding).data) for f in frames]))


def matched_alpha(kernel: KernelFilter, frames: Sequence[np.ndarray], target_psnr: float,
                  padding: str = "reflect") -> float:
    """``alpha`` at which ``I + alpha (W - I)`` reaches ``target_psnr`` (mean over frames).

    The filtering error scales linearly in ``alpha``, so mean PSNR drops by
    exactly ``20 log10(alpha)``.
    """
    base = mean_psnr(frames, kernel, padding)
    if math.isinf(base):
        raise InvalidArgument("kernel is the identity; no alpha reaches a finite PSNR")
    return 10.0 ** ((base - target_psnr) / 20.0)


def _random_crop(frame: np.ndarray, size: int | None, rng: np.random.Generator) -> np.ndarray:
    if size is None or (frame.shape[0] <= size and frame.shape[1] <= size):
        return frame
    h = min(size, frame.shape[0])
    w = min(size, frame.shape[1])
    r = int(rng.integers(0, frame.shape[0] - h + 1))
    c = int(rng.integers(0, frame.shape[1] - w + 1))
    return frame[r:r + h, c:c + w]


def _batch_gradient(crops, weights, model, cfgs, padding):
    tape = ad.Tape()
    w = tape.parameter(weights)
    total = None
    for crop in crops:
        s = _frame_vmaf(crop, ad.conv2d(crop, w, padding), model, cfgs)
        total = s if total is None else total + s
    value = total.item()
    grads = ad.backward(total)
    return value, grads[w]


def train_filter(ref_frames: Sequence[np.ndarray], model: VmafModel,
                 cfg: TrainConfig | None = None, padding: str = "reflect",
                 on_step: Callable[[StepRecord], None] | None = None,
                 vif_cfg=None, adm_cfg=None) -> TrainResult:
    """Projected stochastic gradient ascent from the identity kernel.

    Crops of ``cfg.crop_size`` feed the optimizer; checkpoints are scored
    on the full frames.  Stops early when the batch mean exceeds
    ``score_ceiling`` or has not improved for ``patience`` steps.
    """
    cfg = cfg or TrainConfig()
    frames = [np.asarray(f, dtype=np.float64) for f in ref_frames]
    if not frames:
        raise InvalidArgument("training needs at least one frame")
    model = model.with_options(clip_enabled=False)
    cfgs = configs_for(model, vif_cfg, adm_cfg)
    rng = np.random.default_rng(cfg.seed)
    k = cfg.kernel_size
    weights = KernelFilter.identity(k).weights
    result = TrainResult(filter=KernelFilter(weights.copy(), alpha=1.0))
    result.init_vmaf = mean_vmaf(frames, KernelFilter(weights), model, padding, cfgs)
    if cfg.selection == "matched_psnr":
        ref_kernel = unsharp_kernel(k, cfg.unsharp_sigma, cfg.reference_alpha)
        result.target_psnr = mean_psnr(frames, ref_kernel, padding)

    def checkpoint(step):
        kf = KernelFilter(weights.copy())
        cp = Checkpoint(step, kf.weights, mean_vmaf(frames, kf, model, padding, cfgs))
        if cfg.selection == "matched_psnr" and not np.array_equal(kf.weights, KernelFilter.identity(k).weights):
            cp.matched_alpha = matched_alpha(kf, frames, result.target_psnr, padding)
            cp.matched_vmaf = mean_vmaf(frames, kf.at_alpha(cp.matched_alpha), model, padding, cfgs)
        result.checkpoints.append(cp)

    best_batch = -math.inf
    since_best = 0
    result.stop_reason = "max_steps"
    for step in range(1, cfg.max_steps + 1):
        pick = rng.choice(len(frames), size=cfg.batch_size, replace=len(frames) < cfg.batch_size)
        crops = [_random_crop(frames[i], cfg.crop_size, rng) for i in pick]
        value, grad = _batch_gradient(crops, weights, model, cfgs, padding)
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericDomainError(f"non-finite loss or gradient at step {step}")
        if cfg.projection == "tangent":
            # move within the sum-to-one plane; the division below only removes rounding drift
            grad = grad - grad.mean()
        stepped = weights + cfg.learning_rate * grad
        total = stepped.sum()
        if total <= 1e-6:
            raise NumericDomainError(f"kernel sum reached {total:.3g} at step {step}; projection undefined")
        weights = stepped / total
        rec = StepRecord(step, value, float(weights.sum()), KernelFilter(weights).symmetry_residual())
        result.log.append(rec)
        if on_step:
            on_step(rec)
        batch_mean = value / len(crops)
        log.debug("step %d batch mean VMAF %.4f", step, batch_mean)

        stop = ""
        if cfg.early_stopping:
            if batch_mean > best_batch:
                best_batch, since_best = batch_mean, 0
            else:
                since_best += 1
            if cfg.score_ceiling is not None and batch_mean > cfg.score_ceiling:
                stop = "score_ceiling"
            elif since_best >= cfg.patience:
                stop = "patience"
        if stop or step % cfg.eval_every == 0 or step == cfg.max_steps:
            checkpoint(step)
        if stop:
            result.stop_reason = stop
            break

    if not result.checkpoints:
        checkpoint(0)
    result.best = _select(result.checkpoints, cfg.selection)
    result.filter = KernelFilter(result.best.weights.copy(), alpha=1.0)
    return result


def _select(checkpoints: list[Checkpoint], selection: str) -> Checkpoint:
    if selection == "last":
        return checkpoints[-1]
    if selection == "matched_psnr":
        scored = [c for c in checkpoints if math.isfinite(c.matched_vmaf)]
        if scored:
            return max(scored, key=lambda c: c.matched_vmaf)
    return max(checkpoints, key=lambda c: c.eval_vmaf)


@dataclass
class SweepRow:
    alpha: float
    vmaf: float
    psnr_db: float


def alpha_sweep(kernel: KernelFilter, ref_frames: Sequence[np.ndarray], model: VmafModel,
                alphas: Sequence[float], stream: bool = False,
                padding: str = "reflect") -> list[SweepRow]:
    """VMAF (clipping off) and PSNR of ``I + alpha (W - I)`` for each alpha.

    With ``stream`` the frames are scored as one video (motion included);
    otherwise each frame is scored on its own and the scores averaged.
    """
    from .fusion import score_stream

    if any(not math.isfinite(a) for a in alphas):
        raise InvalidArgument("alpha grid must be finite")
    frames = [np.asarray(f, dtype=np.float64) for f in ref_frames]
    model = model.with_options(clip_enabled=False)
    rows = []
    for a in alphas:
        kf = kernel.at_alpha(a)
        if stream:
            dists = [ad.conv2d(f, kf.weights, padding).data for f in frames]
            vmaf = score_stream(frames, dists, model)[0].item()
        else:
            vmaf = mean_vmaf(frames, kf, model, padding)
        rows.append(SweepRow(float(a), vmaf, mean_psnr(frames, kf, padding)))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(r.alpha), repr(r.vmaf), repr(r.psnr_db)])


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        return [SweepRow(float(r["alpha"]), float(r["vmaf"]), float(r["psnr_db"]))
                for r in csv.DictReader(fh)]


def write_log_csv(records: Sequence[StepRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in records:
            w.writerow([r.step, repr(r.batch_loss), repr(r.kernel_sum), repr(r.symmetry_residual)])
