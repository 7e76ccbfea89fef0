"""Similarity metrics between real and synthesized histology images.

Mutual information uses a joint-histogram estimator over equal-width bins
on [0, 1] and natural logarithms (nats). SSIM follows the standard
windowed formulation: 11x11 Gaussian window with sigma 1.5, K1=0.01,
K2=0.03, dynamic range 1, symmetric boundary handling, averaged over the
full local map. Color inputs are converted to luminance as the plain mean
of channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _luminance(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    elif arr.ndim != 2:
        raise ValidationError(f"expected (H,W) or (H,W,C) image, got shape {arr.shape}")
    return np.clip(arr, 0.0, 1.0)


def _entropy_sorted(p: np.ndarray) -> float:
    """Entropy in nats from probabilities, summed in ascending sorted order.

    Sorting makes the sum independent of histogram cell order, which keeps
    mutual information bit-exactly symmetric in its arguments.
    """
    p = p[p > 0]
    terms = np.sort(p * np.log(p))
    return -float(np.sum(terms)) + 0.0


def _bin_indices(values: np.ndarray, bins: int) -> np.ndarray:
    idx = np.floor(values * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def mutual_information(a: np.ndarray, b: np.ndarray, bins: int = 64) -> float:
    """Histogram mutual information between two images, in nats.

    Computed as H(a) + H(b) - H(a,b), which equals the usual sum of
    p(i,j) * ln(p(i,j) / (p(i) p(j))) over nonzero joint cells; the
    entropy form keeps the result exactly symmetric. Clamped at 0.
    """
    if bins < 2:
        raise ValidationError("bins must be >= 2")
    la = _luminance(a)
    lb = _luminance(b)
    if la.shape != lb.shape:
        raise ValidationError(f"image dimensions differ: {la.shape} vs {lb.shape}")
    ia = _bin_indices(la.reshape(-1), bins)
    ib = _bin_indices(lb.reshape(-1), bins)
    joint = np.zeros((bins, bins), dtype=np.int64)
    np.add.at(joint, (ia, ib), 1)
    n = ia.size
    pj = joint.reshape(-1).astype(np.float64) / n
    pa = joint.sum(axis=1).astype(np.float64) / n
    pb = joint.sum(axis=0).astype(np.float64) / n
    mi = _entropy_sorted(pa) + _entropy_sorted(pb) - _entropy_sorted(pj)
    return max(mi, 0.0)


def entropy(a: np.ndarray, bins: int = 64) -> float:
    """Marginal histogram entropy of an image, in nats (same binning as MI)."""
    if bins < 2:
        raise ValidationError("bins must be >= 2")
    la = _luminance(a)
    idx = _bin_indices(la.reshape(-1), bins)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    return _entropy_sorted(counts / idx.size)


def _gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_symmetric(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable correlation with symmetric (edge-reflecting) padding."""
    pad = kernel.size // 2
    padded = np.pad(image, pad, mode="symmetric")
    # rows
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel.size, axis=1)
    tmp = windows @ kernel
    # columns
    windows = np.lib.stride_tricks.sliding_window_view(tmp, kernel.size, axis=0)
    return windows @ kernel


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity between two images (dynamic range 1)."""
    la = _luminance(a)
    lb = _luminance(b)
    if la.shape != lb.shape:
        raise ValidationError(f"image dimensions differ: {la.shape} vs {lb.shape}")
    if la.shape[0] < SSIM_WINDOW or la.shape[1] < SSIM_WINDOW:
        raise ValidationError(
            f"image {la.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    kernel = _gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    mu_a = _filter_symmetric(la, kernel)
    mu_b = _filter_symmetric(lb, kernel)
    var_a = _filter_symmetric(la * la, kernel) - mu_a * mu_a
    var_b = _filter_symmetric(lb * lb, kernel) - mu_b * mu_b
    cov = _filter_symmetric(la * lb, kernel) - mu_a * mu_b

    num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-image and mean MI/SSIM for a set of (real, synthesized) pairs."""

    mi: float
    ssim: float
    n_images: int
    per_image: list[tuple[str, float, float]]

    def to_csv(self, path: str | Path, note: str | None = None) -> None:
        lines = []
        if note:
            lines.append(f"# {note}")
        lines.append("id,mi,ssim")
        for img_id, mi, ss in self.per_image:
            lines.append(f"{img_id},{mi:.9f},{ss:.9f}")
        lines.append(f"mean,{self.mi:.9f},{self.ssim:.9f}")
        Path(path).write_text("\n".join(lines) + "\n")

    def to_markdown(self, title: str = "Evaluation") -> str:
        lines = [
            f"## {title}",
            "",
            "Aggregates are arithmetic means over whole images "
            "(per-image metrics, not per-patch).",
            "",
            "| id | MI | SSIM |",
            "|---|---|---|",
        ]
        for img_id, mi, ss in self.per_image:
            lines.append(f"| {img_id} | {mi:.4f} | {ss:.4f} |")
        lines.append(f"| **mean** | **{self.mi:.4f}** | **{self.ssim:.4f}** |")
        return "\n".join(lines) + "\n"


def evaluate_set(pairs: list[tuple[np.ndarray, np.ndarray]], bins: int = 64,
                 ids: list[str] | None = None,
                 csv_path: str | Path | None = None,
                 md_path: str | Path | None = None) -> MetricReport:
    """MI and SSIM for each (real, synthesized) pair plus their means."""
    if not pairs:
        raise ValidationError("evaluate_set needs at least one image pair")
    if ids is None:
        ids = [f"{i:03d}" for i in range(len(pairs))]
    if len(ids) != len(pairs):
        raise ValidationError("ids and pairs length mismatch")
    per_image = []
    for img_id, (real, synth) in zip(ids, pairs):
        per_image.append((img_id, mutual_information(real, synth, bins), ssim(real, synth)))
    mean_mi = float(np.mean([m for _, m, _ in per_image]))
    mean_ssim = float(np.mean([s for _, _, s in per_image]))
    report = MetricReport(mean_mi, mean_ssim, len(pairs), per_image)
    note = "aggregates are means over whole images (image-level, not patch-level)"
    if csv_path is not None:
        report.to_csv(csv_path, note=note)
    if md_path is not None:
        Path(md_path).write_text(report.to_markdown())
    return report
