"""Command-line entry point: enhance, train, eval, track, gradcheck.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every command accepts
``--config FILE`` with ``key=value`` lines; explicit flags win over the file,
which wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import HighlightNetError

log = logging.getLogger("highlightnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# dest -> flag for options that must be present after merging the config file
_REQUIRED = {
    "enhance": ("input", "output", "weights"),
    "train": ("data_dir",),
    "eval": ("low_dir", "ref_dir", "weights"),
    "track": ("frames", "gt"),
    "gradcheck": (),
}


def _ablation_flags(p: argparse.ArgumentParser, with_ldan: bool = False) -> None:
    p.add_argument("--no-rm", action="store_true", help="replace the range mask by its spatial mean")
    p.add_argument("--no-tpa", action="store_true", help="use constant alpha=0.55, beta=0.08")
    p.add_argument("--no-st", action="store_true", help="disable soft truncation")
    if with_ldan:
        p.add_argument("--no-ldan", action="store_true", help="drop the dark-area noise loss")
    p.add_argument("--tau", type=float, default=100.0, help="soft truncation strength")


def build_parser() -> _Parser:
    parser = _Parser(prog="highlightnet", description="Low-light enhancement with per-pixel gamma curves.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("enhance", help="enhance one image")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--weights")
    p.add_argument("--save-mask", help="write the range mask as 8-bit gray")
    p.add_argument("--save-gray", help="write the enhanced gray image")
    p.add_argument("--save-tmap", help="write the anti-noise map (negated) as 8-bit gray")
    _ablation_flags(p)

    p = sub.add_parser("train", help="train on a directory of unpaired images")
    p.add_argument("--data-dir")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--resize", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="highlightnet.ckpt")
    p.add_argument("--resume", help="checkpoint to continue from")
    _ablation_flags(p, with_ldan=True)

    p = sub.add_parser("eval", help="paired PSNR/SSIM of enhanced low-light images")
    p.add_argument("--low-dir")
    p.add_argument("--ref-dir")
    p.add_argument("--weights")
    p.add_argument("--report", help="also write a JSON report")
    _ablation_flags(p)

    p = sub.add_parser("track", help="NCC tracking with one-pass evaluation")
    p.add_argument("--frames")
    p.add_argument("--gt")
    p.add_argument("--weights")
    p.add_argument("--enhance", action="store_true", help="enhance every frame before matching")
    p.add_argument("--report", help="also write a JSON report")

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="key=value file supplying flag values")
    return parser


def _read_config(path: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _parse(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required: enhance, train, eval, track or gradcheck")
    sp = parser._subparsers._group_actions[0].choices[args.command]
    if args.config:
        try:
            cfg = _read_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read --config: {exc}") from None
        actions = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, value in cfg.items():
            action = actions.get(key)
            if action is None or key in ("help", "config"):
                raise UsageError(f"unknown config key {key!r}")
            if isinstance(action, argparse._StoreTrueAction):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise UsageError(f"config key {key!r} expects a boolean")
                defaults[key] = value.lower() in ("true", "1", "yes")
            else:
                try:
                    defaults[key] = action.type(value) if action.type else value
                except ValueError:
                    raise UsageError(f"bad value for config key {key!r}: {value!r}") from None
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    for dest in _REQUIRED[args.command]:
        if getattr(args, dest) is None:
            raise UsageError(f"missing required flag --{dest.replace('_', '-')}")
    return args


def _enhance_config(args):
    from .enhancer import EnhanceConfig
    return EnhanceConfig(use_rm=not args.no_rm, use_tpa=not args.no_tpa, use_st=not args.no_st, tau=args.tau)


def _list_images(directory: str) -> list[Path]:
    from .imageio import _FORMATS
    root = Path(directory)
    if not root.is_dir():
        raise UsageError(f"not a directory: {directory}")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in _FORMATS)


def cmd_enhance(args) -> int:
    from .checkpoint import load_weights
    from .enhancer import enhance
    from .imageio import read_image, write_image

    weights = load_weights(args.weights)
    rgb = read_image(args.input)
    t0 = time.perf_counter()
    out, diag = enhance(rgb, weights, _enhance_config(args))
    elapsed = time.perf_counter() - t0
    write_image(args.output, out)
    if args.save_mask:
        write_image(args.save_mask, diag.mask)
    if args.save_gray:
        write_image(args.save_gray, diag.gray_out)
    if args.save_tmap:
        write_image(args.save_tmap, -diag.anti_noise)
    print(f"alpha={diag.alpha:.6f}")
    print(f"beta={diag.beta:.6f}")
    print(f"mean_gray_in={float(diag.gray_in.mean()):.6f}")
    print(f"mean_gray_out={float(diag.gray_out.mean()):.6f}")
    print(f"time_ms={elapsed * 1000:.1f}")
    return 0


def cmd_train(args) -> int:
    from .checkpoint import load_checkpoint
    from .trainer import TrainConfig, train

    cfg = TrainConfig(
        data_dir=args.data_dir, epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
        resize=args.resize, seed=args.seed, tau=args.tau, use_rm=not args.no_rm,
        use_tpa=not args.no_tpa, use_st=not args.no_st, use_ldan=not args.no_ldan,
    )
    resume = load_checkpoint(args.resume) if args.resume else None

    def report(epoch, rep):
        fields = " ".join(f"{k}={v:.6g}" for k, v in rep.as_dict().items())
        print(f"epoch={epoch} {fields}", flush=True)

    result = train(cfg, resume=resume, checkpoint_path=args.out, on_epoch=report)
    print(f"checkpoint={args.out}")
    print(f"epochs={result.epoch}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_weights
    from .enhancer import enhance
    from .imageio import read_image, resize_area
    from .metrics import psnr, ssim

    weights = load_weights(args.weights)
    ecfg = _enhance_config(args)
    refs = {p.stem: p for p in _list_images(args.ref_dir)}
    pairs = [(p, refs[p.stem]) for p in _list_images(args.low_dir) if p.stem in refs]
    if not pairs:
        raise HighlightNetError("no low/reference image pairs with matching names")
    rows = []
    for low_path, ref_path in pairs:
        low = read_image(low_path)
        ref = read_image(ref_path)
        if ref.shape != low.shape:
            ref = np.clip(resize_area(ref, low.shape[0], low.shape[1]), 0, 1)
        out, _ = enhance(low, weights, ecfg)
        row = {"name": low_path.stem, "psnr": psnr(out, ref), "ssim": ssim(out, ref),
               "psnr_input": psnr(low, ref), "ssim_input": ssim(low, ref)}
        rows.append(row)
        print(f"image={row['name']} psnr={row['psnr']:.4f} ssim={row['ssim']:.4f} "
              f"psnr_input={row['psnr_input']:.4f} ssim_input={row['ssim_input']:.4f}")
    summary = {k: float(np.mean([r[k] for r in rows])) for k in ("psnr", "ssim", "psnr_input", "ssim_input")}
    for k, v in summary.items():
        print(f"mean_{k}={v:.4f}")
    if args.report:
        Path(args.report).write_text(json.dumps({"images": rows, "mean": summary}, indent=2))
    return 0


def cmd_track(args) -> int:
    from .checkpoint import load_weights
    from .enhancer import enhance
    from .imageio import read_image
    from .tracking import ncc_track, one_pass_eval, read_ground_truth

    if args.enhance and not args.weights:
        raise UsageError("--enhance requires --weights")
    if args.weights and not args.enhance:
        raise UsageError("--weights is only used together with --enhance")
    paths = _list_images(args.frames)
    gt = read_ground_truth(args.gt)
    if len(paths) != len(gt):
        raise HighlightNetError(f"{len(paths)} frames but {len(gt)} ground-truth boxes")
    frames = [read_image(p) for p in paths]
    enhancer = None
    if args.enhance:
        weights = load_weights(args.weights)
        enhancer = lambda f: enhance(f, weights)[0]  # noqa: E731
    boxes = ncc_track(frames, gt[0], enhancer)
    rep = one_pass_eval(boxes, gt)
    print(f"frames={len(frames)}")
    print(f"precision={rep.precision:.6f}")
    print(f"success_auc={rep.success_auc:.6f}")
    print(f"mean_cle={rep.mean_cle:.6f}")
    if args.report:
        Path(args.report).write_text(json.dumps({
            "precision": rep.precision, "success_auc": rep.success_auc, "cle": rep.cle,
            "boxes": [[b.x, b.y, b.w, b.h] for b in boxes]}, indent=2))
    return 0


OP_TOLERANCE = 1e-4
PIPELINE_TOLERANCE = 1e-3


def cmd_gradcheck(args) -> int:
    from .gradcheck import op_gradient_errors, pipeline_gradient_error

    if args.size < 16:
        raise UsageError("--size must be at least 16")
    ops = op_gradient_errors(args.seed)
    for name, err in ops.items():
        print(f"op.{name}={err:.3e}")
    pipe = pipeline_gradient_error(args.size, args.seed)
    pipe_max = max(pipe.values())
    print(f"pipeline_max_rel_error={pipe_max:.3e}")
    print(f"max_rel_error={max(pipe_max, max(ops.values())):.3e}")
    ok = max(ops.values()) < OP_TOLERANCE and pipe_max < PIPELINE_TOLERANCE
    print(f"status={'pass' if ok else 'fail'}")
    return 0 if ok else 2


COMMANDS = {"enhance": cmd_enhance, "train": cmd_train, "eval": cmd_eval,
            "track": cmd_track, "gradcheck": cmd_gradcheck}


def _thread_limit():
    raw = os.environ.get("HLN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"HLN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("HLN_THREADS must be >= 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=n)


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
        with _thread_limit():
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except (HighlightNetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=os.environ.get("HLN_LOG", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())
