"""Reduce a multi-channel peak image stack to a 3-channel pseudo-color image.

The K intensities of each pixel are treated as one sample; the stack is
projected onto its top three principal components and each projection is
robust-rescaled into [0, 1] to become the R, G and B channels.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .spectra import PeakImageStack


def _principal_components(samples: np.ndarray, n_components: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, eigenvalues (descending) and component rows for sorted samples.

    Samples are lexicographically sorted before accumulation so the result
    is bit-identical under any permutation of the input rows.
    """
    order = np.lexsort(samples.T[::-1])
    sorted_rows = samples[order]
    n = sorted_rows.shape[0]
    mean = np.add.reduce(sorted_rows, axis=0) / n
    centered = sorted_rows - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    idx = np.argsort(evals)[::-1][:n_components]
    comps = evecs[:, idx].T.copy()
    # Sign convention: flip each component so its largest-|loading| entry is positive.
    for row in comps:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return mean, evals[idx], comps


def _rescale_channel(values: np.ndarray, lo_pct: float, hi_pct: float) -> tuple[np.ndarray, float, float]:
    lo = float(np.percentile(values, lo_pct))
    hi = float(np.percentile(values, hi_pct))
    if hi == lo:
        return np.full_like(values, 0.5), lo, hi
    scaled = (np.clip(values, lo, hi) - lo) / (hi - lo)
    return scaled, lo, hi


def pca_rgb(stack: PeakImageStack, clip_lo_pct: float = 1.0, clip_hi_pct: float = 99.0,
            mask: np.ndarray | None = None) -> np.ndarray:
    """Project a K-channel stack onto its top 3 principal components.

    Each masked-on pixel's K-vector is a sample. Samples are mean-centered
    and the K x K covariance is eigendecomposed; pixels are projected onto
    the top three components (flipped so the largest-|loading| entry of
    each is positive) and every projection channel is clipped at the
    [clip_lo_pct, clip_hi_pct] percentiles and mapped linearly to [0, 1].
    A channel with a degenerate clip range becomes constant 0.5.

    Masked-off pixels are excluded from the statistics and rendered black.

    Returns (H, W, 3) float64 in [0, 1].
    """
    if stack.channels < 3:
        raise ValidationError(f"need at least 3 channels for a 3-channel reduction, got {stack.channels}")
    if not (0 <= clip_lo_pct < clip_hi_pct <= 100):
        raise ValidationError("percentiles must satisfy 0 <= lo < hi <= 100")
    h, w, k = stack.data.shape
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, w):
            raise ValidationError(f"mask shape {mask.shape} != ({h}, {w})")

    flat = stack.data.reshape(-1, k)
    on = mask.reshape(-1)
    samples = flat[on]
    if samples.shape[0] < 2:
        raise DegenerateInputError("need at least 2 masked-on pixels")
    if np.all(samples == samples[0]):
        raise DegenerateInputError("stack is constant over masked-on pixels (zero covariance)")

    mean, evals, comps = _principal_components(samples, 3)
    scores = (samples - mean) @ comps.T

    out = np.zeros((h * w, 3), dtype=np.float64)
    lead = max(float(evals[0]), 0.0)
    for ch in range(3):
        # Components with numerically zero variance carry only rounding
        # noise; render them at the degenerate-range constant.
        if evals[ch] <= 1e-12 * lead:
            out[on, ch] = 0.5
            continue
        scaled, _, _ = _rescale_channel(scores[:, ch], clip_lo_pct, clip_hi_pct)
        out[on, ch] = scaled
    return out.reshape(h, w, 3)
