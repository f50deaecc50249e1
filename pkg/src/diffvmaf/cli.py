"""Command-line interface.

Exit status: 0 success, 1 gradient check failed, 2 usage error,
3 runtime error (bad file, dimension mismatch, numeric failure).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .errors import VmafError

SCORE_LINE_VERSION = 1


def score_line(pooled: float, frames: int, clipped: bool, model_name: str) -> str:
    """Versioned, parse-stable summary line printed by ``score``."""
    return (f"diffvmaf-score v{SCORE_LINE_VERSION} vmaf={pooled:.6f} frames={frames} "
            f"clipped={int(clipped)} model={model_name!r}")


def _add_raw(p: argparse.ArgumentParser, frames_required: bool = True):
    p.add_argument("--width", type=int, required=True, help="luma width in pixels")
    p.add_argument("--height", type=int, required=True, help="luma height in pixels")
    p.add_argument("--frames", type=int, required=frames_required, default=1,
                   help="frame count of each raw file")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diffvmaf", description="Differentiable VMAF tools")
    ap.add_argument("--version", action="version", version=f"diffvmaf {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a distorted raw video against a reference")
    p.add_argument("ref")
    p.add_argument("dist")
    _add_raw(p)
    p.add_argument("--model", default="demo", help="model JSON path, or 'demo' (bundled)")
    p.add_argument("--neg", action="store_true", help="NEG mode (enhancement gain limits)")
    p.add_argument("--egl-vif", type=float, default=None)
    p.add_argument("--egl-dlm", type=float, default=None)
    p.add_argument("--no-clip", action="store_true", help="report the unclipped pooled score")
    p.add_argument("--features-csv", help="write per-frame features and scores here")

    p = sub.add_parser("gradcheck", help="analytic vs. numeric kernel gradient on one frame")
    p.add_argument("frame", help="raw video; one frame is used")
    _add_raw(p, frames_required=False)
    p.add_argument("--frame-index", type=int, default=0)
    p.add_argument("--k", type=int, default=3, choices=(3, 5, 7))
    p.add_argument("--epsilon", type=float, default=1e-2)
    p.add_argument("--round", action="store_true", help="round and clamp the filtered frame")
    p.add_argument("--init", choices=("uniform", "identity"), default="uniform")
    p.add_argument("--tolerance", type=float, default=None,
                   help="default 1e-3 relative, or 1e-2 scaled-mean with --round")
    p.add_argument("--external-command", default=None,
                   help="scorer template with {ref} {dist} {width} {height}")
    p.add_argument("--model", default="demo")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("train-filter", help="learn a preprocessing kernel")
    p.add_argument("dataset", help="directory of raw videos sharing one geometry")
    _add_raw(p)
    p.add_argument("--config", help="JSON config with train/vif/adm sections")
    p.add_argument("--model", default="demo")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("sweep-alpha", help="VMAF and PSNR of I + alpha (W - I) over alphas")
    p.add_argument("filter", help="kernel file, or 'unsharp' for the unsharp mask")
    p.add_argument("video")
    _add_raw(p)
    p.add_argument("--alphas", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    p.add_argument("--k", type=int, default=7, help="unsharp kernel size")
    p.add_argument("--sigma", type=float, default=None, help="unsharp sigma (default k/5)")
    p.add_argument("--compare-unsharp", action="store_true", help="add the unsharp curve to the plot")
    p.add_argument("--stream", action="store_true", help="score frames as one video with motion")
    p.add_argument("--model", default="demo")
    p.add_argument("--out", default="sweep.csv")

    p = sub.add_parser("apply-filter", help="filter the luma of a raw video; chroma is copied")
    p.add_argument("input")
    p.add_argument("filter")
    p.add_argument("output")
    _add_raw(p)
    return ap


def _model(args):
    from .model import load_model

    m = load_model(args.model)
    opts = {}
    if getattr(args, "neg", False):
        opts["neg_mode"] = True
    if getattr(args, "egl_vif", None) is not None:
        opts["egl_vif"] = args.egl_vif
    if getattr(args, "egl_dlm", None) is not None:
        opts["egl_dlm"] = args.egl_dlm
    if getattr(args, "no_clip", False):
        opts["clip_enabled"] = False
    return m.with_options(**opts) if opts else m


def cmd_score(args) -> int:
    from .fusion import StreamScorer, write_features_csv
    from .yuv import iter_luma, open_video

    model = _model(args)
    ref = open_video(args.ref, args.width, args.height, args.frames)
    dist = open_video(args.dist, args.width, args.height, args.frames)
    scorer = StreamScorer(model)
    for r, d in zip(iter_luma(ref), iter_luma(dist)):
        scorer.push(r, d)
    _, report = scorer.finish()
    if args.features_csv:
        write_features_csv(report, args.features_csv)
    print(score_line(report.pooled, len(report.frames), report.clipped, model.name))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import GradCheckConfig, gradcheck_report
    from .plotting import plot_gradcheck
    from .yuv import open_video, read_yuv_luma

    video = open_video(args.frame, args.width, args.height, args.frames)
    frame = read_yuv_luma(video, (args.frame_index, args.frame_index + 1))[0]
    if args.tolerance is None:
        tol, mode = (1e-2, "scaled_mean") if args.round else (1e-3, "relative")
    else:
        tol, mode = args.tolerance, ("scaled_mean" if args.round else "relative")
    cfg = GradCheckConfig(kernel_size=args.k, epsilon=args.epsilon,
                          emulate_integer_pipeline=args.round, init_mode=args.init,
                          tolerance=tol, tolerance_mode=mode,
                          external_command=args.external_command)
    rep = gradcheck_report(frame, cfg, _model(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.write_csv(out / "gradcheck.csv")
    (out / "gradcheck.txt").write_text(rep.text() + "\n")
    plot_gradcheck(rep.analytic, rep.numeric, out / "gradcheck.png")
    print(rep.text())
    return 0 if rep.passed else 1


def cmd_train(args) -> int:
    from .config import load_config
    from .filters import save_kernel
    from .plotting import plot_kernel, plot_training
    from .training import train_filter, write_log_csv
    from .yuv import open_video, read_yuv_luma

    cfgs = load_config(args.config)
    files = sorted(p for p in Path(args.dataset).iterdir() if p.suffix == ".yuv")
    if not files:
        raise VmafError(f"no .yuv files in {args.dataset}")
    frames = []
    for f in files:
        frames += read_yuv_luma(open_video(f, args.width, args.height, args.frames))
    res = train_filter(frames, _model(args), cfgs["train"], padding=cfgs["vif"].padding,
                       vif_cfg=cfgs["vif"], adm_cfg=cfgs["adm"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_kernel(res.filter, out / "filter.txt")
    write_log_csv(res.log, out / "train_log.csv")
    plot_training(res.log, out / "training.png", res.checkpoints)
    plot_kernel(res.filter.weights, out / "kernel.png")
    b = res.best
    print(f"stopped: {res.stop_reason} after {len(res.log)} steps")
    print(f"selected step {b.step}: eval VMAF {b.eval_vmaf:.4f} (init {res.init_vmaf:.4f})")
    if math.isfinite(b.matched_vmaf):
        print(f"at matched PSNR {res.target_psnr:.3f} dB: alpha {b.matched_alpha:.4f}, "
              f"VMAF {b.matched_vmaf:.4f}")
    print(f"kernel sum {res.filter.weights.sum():.15f}, "
          f"symmetry residual {res.filter.symmetry_residual():.3g}")
    return 0


def cmd_sweep(args) -> int:
    from .filters import load_kernel, unsharp_kernel
    from .model import load_model
    from .plotting import plot_sweeps
    from .training import alpha_sweep, write_sweep_csv
    from .yuv import open_video, read_yuv_luma

    frames = read_yuv_luma(open_video(args.video, args.width, args.height, args.frames))
    model = load_model(args.model)
    if args.filter == "unsharp":
        kernel = unsharp_kernel(args.k, args.sigma, 1.0)
    else:
        kernel = load_kernel(args.filter)
    rows = alpha_sweep(kernel, frames, model, args.alphas, stream=args.stream)
    write_sweep_csv(rows, args.out)
    curves = {"filter" if args.filter != "unsharp" else "unsharp": rows}
    if args.compare_unsharp and args.filter != "unsharp":
        curves["unsharp"] = alpha_sweep(unsharp_kernel(kernel.size, args.sigma, 1.0), frames, model,
                                        args.alphas, stream=args.stream)
    plot_sweeps(curves, Path(args.out).with_suffix(".png"))
    for r in rows:
        print(f"alpha={r.alpha:g} vmaf={r.vmaf:.6f} psnr_db={r.psnr_db:.6f}")
    return 0


def cmd_apply(args) -> int:
    from .filters import apply_filter, load_kernel
    from .yuv import iter_chroma, iter_luma, open_video, write_yuv

    kernel = load_kernel(args.filter)
    video = open_video(args.input, args.width, args.height, args.frames)
    lumas = (apply_filter([y], kernel, clamp=True)[0] for y in iter_luma(video))
    n = write_yuv(args.output, lumas, iter_chroma(video))
    print(f"wrote {n} frames to {args.output}")
    return 0


COMMANDS = {"score": cmd_score, "gradcheck": cmd_gradcheck, "train-filter": cmd_train,
            "sweep-alpha": cmd_sweep, "apply-filter": cmd_apply}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except VmafError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
