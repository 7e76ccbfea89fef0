"""Command-line interface.

Exit codes: 0 success, 1 validation error (bad arguments, malformed
inputs), 2 runtime failure. Logs go to stderr; artifacts go to --out.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..imagereg import PadMode, fit_affine, load_control_points, warp
from ..pngio import load_png, save_png
from ..spectra import MzAxis, build_target_axis, load_msi, pick_peaks, rebin, save_msi, sum_spectra_raw
from ..reduce import pca_rgb
from ..spectra import build_peak_stack, PeakList
from .config import RunConfig, load_config
from .data import build_manifest, load_manifest, load_pairs, prepare_pairs, save_manifest
from .evaluate import comparison_report, evaluate_checkpoint, synth_from_checkpoint
from .synthetic import generate_synthetic_dataset
from .training import train_pix2pix, train_unet

log = logging.getLogger("msihist")


class _Parser(argparse.ArgumentParser):
    """argparse that treats usage problems as validation errors (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


@contextlib.contextmanager
def output_lock(out_dir: Path):
    """One run owns its output directory; a stale lock must be removed by hand."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".msihist.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock} if that run is dead)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="INI config file")
    p.add_argument("--seed", type=int, default=None, help="override run seed")
    p.add_argument("--pad", choices=["black", "white"], default=None,
                   help="histology padding mode")
    p.add_argument("--k-peaks", type=int, default=None, help="number of peaks")
    p.add_argument("--out", type=Path, default=None, help="output directory")


def _config_from_args(args) -> RunConfig:
    overrides = {"seed": args.seed, "pad": args.pad,
                 "k_peaks": args.k_peaks, "out": args.out}
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msihist",
                     description="MSI-to-histology synthesis pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[], help="write a synthetic paired dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--n-bins", type=int, default=320)

    p = sub.add_parser("rebin", help="rebin a dataset onto a uniform axis")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--bin-width", type=float, default=None,
                   help="target bin width (default: median source width)")

    p = sub.add_parser("peaks", help="pick top peaks of the summed spectrum")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--min-separation", type=float, default=0.0)

    p = sub.add_parser("reduce", help="render a dataset as a 3-channel PNG")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output PNG")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--min-separation", type=float, default=0.0)

    p = sub.add_parser("register", help="warp one image onto another via landmarks")
    p.add_argument("--moving", type=Path, required=True, help="moving image PNG (histology)")
    p.add_argument("--fixed", type=Path, required=True, help="fixed image PNG (MSI frame)")
    p.add_argument("--points", type=Path, required=True,
                   help="CSV src_x,src_y,dst_x,dst_y (src = moving frame)")
    p.add_argument("--out", type=Path, required=True, help="output PNG")
    p.add_argument("--pad", choices=["black", "white"], default="black")
    p.add_argument("--swap", action="store_true",
                   help="treat the fixed image as moving instead")

    for name in ("prepare", "train-unet", "train-pix2pix"):
        p = sub.add_parser(name, help=f"{name} using a config")
        _add_config_args(p)
        if name.startswith("train"):
            p.add_argument("--resume", type=Path, default=None,
                           help="checkpoint to continue from")

    p = sub.add_parser("synth", help="synthesize histology from a prepared MSI image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--in", dest="input", type=Path, required=True,
                   help="prepared MSI RGB (.npy or .png)")
    p.add_argument("--out", type=Path, required=True, help="output PNG")

    p = sub.add_parser("eval", help="evaluate a checkpoint on prepared pairs")
    _add_config_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--label", type=str, default=None,
                   help="variant label used in file names (default: checkpoint stem)")
    p.add_argument("--split", choices=["test", "val", "both"], default="both")

    p = sub.add_parser("report", help="build the comparison table from eval results")
    p.add_argument("--in", dest="input", type=Path, required=True,
                   help="CSV with rows variant,mi,ssim")
    p.add_argument("--out", type=Path, required=True)

    return parser


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------

def _cmd_generate(args) -> None:
    generate_synthetic_dataset(args.out, args.n, args.seed,
                               image_size=args.image_size, n_bins=args.n_bins)
    log.info("wrote %d samples under %s", args.n, args.out)


def _cmd_rebin(args) -> None:
    ds = load_msi(args.input)
    target = build_target_axis([ds.axis], bin_width=args.bin_width)
    save_msi(rebin(ds, target), args.out)
    log.info("rebinned %s -> %s (%d bins)", args.input, args.out, len(target))


def _summed_peaks(path: Path, k: int, min_separation: float):
    ds = load_msi(path)
    total = sum_spectra_raw(ds)
    return ds, pick_peaks(total, k, min_separation, axis=ds.axis)


def _cmd_peaks(args) -> None:
    _, peaks = _summed_peaks(args.input, args.k, args.min_separation)
    lines = ["mz,intensity"]
    lines += [f"{mz!r},{inten!r}" for mz, inten in peaks.peaks]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text("\n".join(lines) + "\n")
    log.info("picked %d peaks -> %s", len(peaks), args.out)


def _cmd_reduce(args) -> None:
    ds, peaks = _summed_peaks(args.input, args.k, args.min_separation)
    half_window = float(np.median(np.diff(ds.axis.values))) / 2.0
    stack = build_peak_stack(ds, peaks, half_window)
    rgb = pca_rgb(stack, mask=ds.mask)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_png(args.out, rgb)
    np.save(args.out.with_suffix(".npy"), rgb)
    log.info("reduced %s -> %s (+.npy)", args.input, args.out)


def _cmd_register(args) -> None:
    moving = load_png(args.moving)
    fixed = load_png(args.fixed)
    points = load_control_points(args.points)
    if args.swap:
        moving, fixed = fixed, moving
        points = points[:, [2, 3, 0, 1]]
    t = fit_affine(points)
    out_h, out_w = fixed.shape[:2]
    result = warp(moving, t, out_w, out_h, PadMode.parse(args.pad))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_png(args.out, result)
    log.info("registered %s onto %s -> %s", args.moving, args.fixed, args.out)


def _cmd_prepare(args) -> None:
    cfg = _config_from_args(args)
    with output_lock(cfg.out_dir):
        manifest = build_manifest(cfg)
        save_manifest(manifest, cfg.out_dir)
        prepare_pairs(manifest, cfg, out_dir=cfg.out_dir)
    log.info("prepared %d pairs under %s", len(manifest.samples), cfg.out_dir)


def _train(args, trainer) -> None:
    cfg = _config_from_args(args)
    manifest = load_manifest(cfg.out_dir)
    train_pairs = load_pairs(cfg.out_dir, manifest.ids("train"))
    val_pairs = load_pairs(cfg.out_dir, manifest.ids("val"))
    with output_lock(cfg.out_dir / "train"):
        best = trainer(train_pairs, val_pairs, cfg, cfg.out_dir,
                       resume_from=args.resume)
    log.info("best checkpoint: %s", best)


def _cmd_synth(args) -> None:
    if args.input.suffix == ".npy":
        msi_rgb = np.load(args.input)
    else:
        msi_rgb = load_png(args.input)
    if msi_rgb.ndim == 2:
        msi_rgb = np.repeat(msi_rgb[:, :, None], 3, axis=2)
    fake = synth_from_checkpoint(args.checkpoint, msi_rgb)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_png(args.out, fake)
    log.info("synthesized %s -> %s", args.input, args.out)


def _cmd_eval(args) -> None:
    cfg = _config_from_args(args)
    manifest = load_manifest(cfg.out_dir)
    label_base = args.label or args.checkpoint.stem
    splits = ["test", "val"] if args.split == "both" else [args.split]
    for split in splits:
        ids = manifest.ids(split)
        if not ids:
            log.warning("split %s is empty; skipping", split)
            continue
        pairs = load_pairs(cfg.out_dir, ids)
        evaluate_checkpoint(args.checkpoint, pairs, cfg.bins_mi,
                            cfg.out_dir, f"{label_base}_{split}")


def _cmd_report(args) -> None:
    variants = []
    for lineno, line in enumerate(args.input.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("variant"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValidationError(f"{args.input}:{lineno}: expected variant,mi,ssim")
        variants.append((parts[0], float(parts[1]), float(parts[2])))
    text, deltas = comparison_report(variants, out_dir=args.out)
    sys.stdout.write(text)
    if deltas:
        log.info("deltas: MI %+0.3f SSIM %+0.3f", deltas["delta_mi"], deltas["delta_ssim"])


_COMMANDS = {
    "generate": _cmd_generate,
    "rebin": _cmd_rebin,
    "peaks": _cmd_peaks,
    "reduce": _cmd_reduce,
    "register": _cmd_register,
    "prepare": _cmd_prepare,
    "train-unet": lambda args: _train(args, train_unet),
    "train-pix2pix": lambda args: _train(args, train_pix2pix),
    "synth": _cmd_synth,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _COMMANDS[args.command](args)
        return 0
    except (ValidationError, FileNotFoundError) as e:
        log.error("%s", e)
        return 1
    except KeyboardInterrupt:
        log.error("interrupted")
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        log.error("runtime failure: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
