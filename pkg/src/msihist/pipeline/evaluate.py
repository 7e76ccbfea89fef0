"""Synthesis from checkpoints, metric evaluation, and the comparison report."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..imagereg import extract_patches, reassemble
from ..metrics import MetricReport, evaluate_set
from ..nn.models import UNet
from ..pngio import save_png
from .data import ImagePair
from .training import load_model

log = logging.getLogger("msihist")


def _to_nchw(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image.transpose(2, 0, 1))


def _to_hwc(batch_row: np.ndarray) -> np.ndarray:
    return batch_row.transpose(1, 2, 0)


def synth_unet(model: UNet, msi_rgb: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Patch, translate, and reassemble with uniform averaging of overlaps."""
    patch = model.cfg.patch
    h, w = msi_rgb.shape[:2]
    if h < patch or w < patch:
        raise ValidationError(
            f"input {w}x{h} smaller than the model patch size {patch}"
        )
    tiles = extract_patches(msi_rgb, patch, patch)
    x = np.stack([_to_nchw(p) for _, _, p in tiles])
    outs = []
    for i in range(0, x.shape[0], chunk):
        outs.append(model.forward(x[i:i + chunk]).data)
    pred = np.concatenate(outs, axis=0)
    translated = [(tx, ty, _to_hwc(pred[i])) for i, (tx, ty, _) in enumerate(tiles)]
    return np.clip(reassemble(translated, w, h), 0.0, 1.0)


def synth_pix2pix(gen: UNet, msi_rgb: np.ndarray) -> np.ndarray:
    h, w = msi_rgb.shape[:2]
    div = 1 << gen.cfg.depth
    if h % div or w % div:
        raise ValidationError(
            f"input {w}x{h} not divisible by 2^depth = {div}"
        )
    out = gen.forward(_to_nchw(msi_rgb)[None]).data[0]
    return np.clip(_to_hwc(out), 0.0, 1.0)


def synth_from_checkpoint(checkpoint: Path, msi_rgb: np.ndarray) -> np.ndarray:
    kind, model, _ = load_model(checkpoint)
    if kind == "unet":
        return synth_unet(model, msi_rgb)
    gen, _ = model
    return synth_pix2pix(gen, msi_rgb)


def evaluate_checkpoint(checkpoint: Path, pairs: list[ImagePair], bins: int,
                        out_dir: Path, label: str,
                        save_images: bool = True) -> MetricReport:
    """Synthesize histology for every pair and score it against the real one."""
    if not pairs:
        raise ValidationError("no pairs to evaluate")
    kind, model, _ = load_model(checkpoint)
    out_dir.mkdir(parents=True, exist_ok=True)
    synth_dir = out_dir / f"synth_{label}"
    if save_images:
        synth_dir.mkdir(exist_ok=True)
    scored = []
    ids = []
    for pair in pairs:
        if kind == "unet":
            fake = synth_unet(model, pair.msi_rgb)
        else:
            fake = synth_pix2pix(model[0], pair.msi_rgb)
        if save_images:
            save_png(synth_dir / f"{pair.sample_id}.png", fake)
        scored.append((pair.histology, fake))
        ids.append(pair.sample_id)
    report = evaluate_set(
        scored, bins=bins, ids=ids,
        csv_path=out_dir / f"metrics_{label}.csv",
        md_path=out_dir / f"metrics_{label}.md",
    )
    log.info("%s: mean MI %.4f mean SSIM %.4f over %d images",
             label, report.mi, report.ssim, report.n_images)
    return report


def comparison_report(variants: list[tuple[str, float, float]],
                      out_dir: Path | None = None) -> tuple[str, dict]:
    """Markdown/CSV table of model variants plus best-pix2pix-vs-baseline deltas.

    Returns (markdown, deltas); deltas is empty unless both a U-Net row and
    at least one pix2pix row are present.
    """
    if not variants:
        raise ValidationError("report needs at least one evaluated variant")

    def is_unet(name: str) -> bool:
        return name.lower().replace("-", "").startswith("unet")

    def is_pix2pix(name: str) -> bool:
        return "pix2pix" in name.lower()

    md = ["## Model comparison", "", "| Model | MI | SSIM |", "|---|---|---|"]
    csv_lines = ["variant,mi,ssim"]
    for name, mi, ss in variants:
        md.append(f"| {name} | {mi:.3f} | {ss:.3f} |")
        csv_lines.append(f"{name},{mi:.9f},{ss:.9f}")

    deltas: dict = {}
    unet_rows = [v for v in variants if is_unet(v[0])]
    p2p_rows = [v for v in variants if is_pix2pix(v[0])]
    if unet_rows and p2p_rows:
        best = max(p2p_rows, key=lambda v: (v[1], v[2]))
        base = unet_rows[0]
        deltas = {
            "baseline": base[0],
            "best_pix2pix": best[0],
            "delta_mi": best[1] - base[1],
            "delta_ssim": best[2] - base[2],
        }
        md += [
            "",
            f"Best pix2pix ({best[0]}) vs {base[0]}: "
            f"MI {deltas['delta_mi']:+.3f}, SSIM {deltas['delta_ssim']:+.3f}",
        ]
        csv_lines.append(f"delta,{deltas['delta_mi']:.9f},{deltas['delta_ssim']:.9f}")

    text = "\n".join(md) + "\n"
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.md").write_text(text)
        (out_dir / "report.csv").write_text("\n".join(csv_lines) + "\n")
    return text, deltas
