"""Seeded synthetic paired dataset with planted ground truth.

Each sample is built from one smooth random field over the pixel grid:

- the field is thresholded into background / two tissue classes;
- every class has its own amplitude pattern over a fixed set of m/z
  loci, so each pixel's spectrum is a class-weighted sum of Gaussian
  peaks plus noise (written as an MSI container on a per-sample
  jittered axis, which makes rebinning onto a shared axis meaningful);
- a histology-like rendering of the same field is warped into a larger,
  non-square frame by a random invertible affine (the planted
  misalignment) and saved as PNG;
- landmark pairs consistent with that affine are written as CSV.

Every byte on disk is a pure function of (seed, n_samples, image_size).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..imagereg import AffineTransform, PadMode, resize, save_control_points, warp
from ..pngio import save_png
from ..spectra import MSIDataset, MzAxis, save_msi

MZ_LO = 100.0
MZ_HI = 900.0
N_LOCI = 56
PEAK_SIGMA = 3.0
PIXEL_SIZE_UM = 100.0

BG_COLOR = np.array([0.93, 0.91, 0.94])
TISSUE_A_COLOR = np.array([0.86, 0.58, 0.72])
TISSUE_B_COLOR = np.array([0.52, 0.33, 0.62])


@dataclass
class SampleTruth:
    """Planted ground truth for one sample (not written to disk)."""

    sample_id: str
    misalignment: AffineTransform  # MSI-frame coords -> histology-frame coords
    reference_histology: np.ndarray  # aligned rendering in the MSI frame
    labels: np.ndarray


def _smooth_field(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Low-resolution noise bilinearly upsampled to (size, size)."""
    coarse = rng.normal(size=(cells, cells))
    return resize(coarse, size, size)


def _smoothstep(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def make_peak_loci(seed: int) -> np.ndarray:
    """Fixed m/z loci shared by the whole dataset, safely separated."""
    rng = np.random.default_rng([seed, 101])
    span = (MZ_HI - 60.0) - (MZ_LO + 30.0)
    step = span / N_LOCI
    base = MZ_LO + 30.0 + step * np.arange(N_LOCI)
    jitter = rng.uniform(-0.12 * step, 0.12 * step, size=N_LOCI)
    return base + jitter


def make_amplitudes(seed: int) -> np.ndarray:
    """(3, N_LOCI) per-class peak amplitudes; every locus is strong somewhere."""
    rng = np.random.default_rng([seed, 102])
    amps = np.zeros((3, N_LOCI))
    bg_active = rng.permutation(N_LOCI)[:10]
    amps[0, bg_active] = rng.uniform(0.05, 0.15, size=bg_active.size)
    for cls in (1, 2):
        active = rng.random(N_LOCI) < 0.7
        amps[cls, active] = rng.uniform(0.1, 1.0, size=int(active.sum()))
    weak = amps[1:].max(axis=0) < 0.3
    amps[1, weak] = rng.uniform(0.3, 0.6, size=int(weak.sum()))
    return amps


def _sample_fields(rng: np.random.Generator, size: int):
    field = _smooth_field(rng, size, 7)
    lo, hi = field.min(), field.max()
    field = (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.hypot(xx - (size - 1) / 2.0, yy - (size - 1) / 2.0)
    window = np.clip(1.0 - (r / (0.47 * size)) ** 2, 0.0, 1.0)
    field = field * window

    t1 = float(np.percentile(field, 55))
    t2 = float(np.percentile(field, 80))
    if t2 <= t1:  # degenerate field; nudge so labels stay three-valued
        t2 = t1 + 1e-6
    labels = np.zeros((size, size), dtype=np.int8)
    labels[field >= t1] = 1
    labels[field >= t2] = 2

    modulation = _smooth_field(rng, size, 5)
    mlo, mhi = modulation.min(), modulation.max()
    modulation = ((modulation - mlo) / (mhi - mlo)) if mhi > mlo else np.zeros_like(modulation)
    return field, labels, modulation, t1, t2


def _render_histology(field, labels, modulation, t1, t2, rng) -> np.ndarray:
    """Histology-like coloring of the field, softly blended at boundaries."""
    w = max((t2 - t1) * 0.5, 1e-6)
    a_tissue = _smoothstep(field, t1 - w, t1 + w)[..., None]
    a_deep = _smoothstep(field, t2 - w, t2 + w)[..., None]
    tissue = TISSUE_A_COLOR * (1.0 - a_deep) + TISSUE_B_COLOR * a_deep
    img = BG_COLOR * (1.0 - a_tissue) + tissue * a_tissue
    img = img * (1.0 - 0.12 * modulation[..., None] * a_tissue)
    img = img + rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _sample_misalignment(rng: np.random.Generator, size: int,
                         hist_w: int, hist_h: int) -> AffineTransform:
    theta = rng.uniform(-0.14, 0.14)  # about +-8 degrees
    scale = rng.uniform(1.02, 1.18)
    shear = rng.uniform(-0.04, 0.04)
    a = scale * np.cos(theta)
    b = -scale * np.sin(theta) + shear
    c = scale * np.sin(theta)
    d = scale * np.cos(theta)
    cx, cy = (size - 1) / 2.0, (size - 1) / 2.0
    hx, hy = (hist_w - 1) / 2.0, (hist_h - 1) / 2.0
    jx, jy = rng.uniform(-2.5, 2.5, size=2)
    tx = hx + jx - (a * cx + b * cy)
    ty = hy + jy - (c * cx + d * cy)
    return AffineTransform(a, b, c, d, tx, ty)


def _control_points(t: AffineTransform, size: int) -> np.ndarray:
    inset = size // 8
    qs = np.array([
        [inset, inset],
        [size - 1 - inset, inset],
        [inset, size - 1 - inset],
        [size - 1 - inset, size - 1 - inset],
        [(size - 1) / 2.0, (size - 1) / 2.0],
    ], dtype=np.float64)
    src = t.apply(qs)  # histology frame (moving)
    return np.concatenate([src, qs], axis=1)


def _spectra_for_sample(rng, labels, modulation, loci, amps, axis: np.ndarray) -> np.ndarray:
    basis = np.exp(-((axis[None, :] - loci[:, None]) ** 2) / (2.0 * PEAK_SIGMA ** 2))
    flat_labels = labels.reshape(-1)
    pixel_amps = amps[flat_labels] * (0.75 + 0.5 * modulation.reshape(-1))[:, None]
    spectra = pixel_amps @ basis
    spectra += rng.uniform(0.0, 0.08, size=spectra.shape)
    return spectra.astype(np.float32)


def generate_synthetic_dataset(out_dir: str | Path, n_samples: int, seed: int,
                               image_size: int = 64, n_bins: int = 320,
                               ) -> list[SampleTruth]:
    """Write a paired dataset under out_dir (msi/, hist/, points/, dataset.json).

    Returns the planted ground truth per sample for verification.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    if image_size < 16:
        raise ValidationError("image_size must be >= 16")
    if n_bins < 64:
        raise ValidationError("n_bins must be >= 64")
    out = Path(out_dir)
    (out / "msi").mkdir(parents=True, exist_ok=True)
    (out / "hist").mkdir(parents=True, exist_ok=True)
    (out / "points").mkdir(parents=True, exist_ok=True)

    loci = make_peak_loci(seed)
    amps = make_amplitudes(seed)
    hist_w = image_size * 3 // 2
    hist_h = image_size * 5 // 4

    truths = []
    ids = []
    for i in range(n_samples):
        sample_id = f"s{i:03d}"
        ids.append(sample_id)
        rng = np.random.default_rng([seed, 200 + i])

        field, labels, modulation, t1, t2 = _sample_fields(rng, image_size)

        # Per-sample jittered axis exercises rebinning onto the shared axis.
        bins = n_bins + int(rng.integers(-6, 7))
        offset = rng.uniform(-0.8, 0.8)
        axis = np.linspace(MZ_LO + offset, MZ_HI + offset, bins)
        spectra = _spectra_for_sample(rng, labels, modulation, loci, amps, axis)
        dataset = MSIDataset(image_size, image_size, PIXEL_SIZE_UM,
                             MzAxis(axis), spectra)
        save_msi(dataset, out / "msi" / sample_id)

        reference = _render_histology(field, labels, modulation, t1, t2, rng)
        misalign = _sample_misalignment(rng, image_size, hist_w, hist_h)
        histology = warp(reference, misalign, hist_w, hist_h, PadMode.WHITE)
        save_png(out / "hist" / f"{sample_id}.png", histology)
        save_control_points(out / "points" / f"{sample_id}.csv",
                            _control_points(misalign, image_size))

        truths.append(SampleTruth(sample_id, misalign, reference, labels))

    manifest = {
        "ids": ids,
        "image_size": image_size,
        "n_bins": n_bins,
        "seed": seed,
        "n_samples": n_samples,
    }
    (out / "dataset.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return truths
