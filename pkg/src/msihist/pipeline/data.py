"""Dataset manifest, deterministic splitting, and pair preparation.

Preparation runs the preprocessing chain end to end: rebin every sample
onto a shared axis, sum spectra dataset-wide, pick the top peaks, build
per-sample peak stacks, reduce them to 3 channels, bring both modalities
to common dimensions, fit the affine from the sample's landmarks, and
warp histology onto the MSI frame.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..imagereg import (
    AffineTransform,
    PadMode,
    fit_affine,
    load_control_points,
    pad_offsets,
    pad_to,
    resize,
    resize_point,
    warp,
)
from ..pngio import load_png
from ..reduce import pca_rgb
from ..spectra import (
    MzAxis,
    PeakList,
    build_peak_stack,
    build_target_axis,
    load_msi,
    pick_peaks,
    rebin,
    sum_spectra_raw,
)
from .config import RunConfig

log = logging.getLogger("msihist")


class PipelineStageError(RuntimeError):
    """Failure in a named pipeline stage for a named sample."""

    def __init__(self, sample_id: str, stage: str, cause: Exception):
        super().__init__(f"sample {sample_id}, stage {stage}: {cause}")
        self.sample_id = sample_id
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class SampleRef:
    sample_id: str
    msi_path: Path
    hist_path: Path
    points_path: Path


@dataclass
class DatasetManifest:
    samples: list[SampleRef]
    split: dict[str, str]  # sample id -> train | val | test

    def ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return [s.sample_id for s in self.samples]
        return [s.sample_id for s in self.samples if self.split[s.sample_id] == split]

    def by_id(self, sample_id: str) -> SampleRef:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise ValidationError(f"unknown sample id {sample_id}")

    def to_json(self) -> dict:
        return {
            "samples": [
                {
                    "id": s.sample_id,
                    "msi": str(s.msi_path),
                    "hist": str(s.hist_path),
                    "points": str(s.points_path),
                    "split": self.split[s.sample_id],
                }
                for s in self.samples
            ]
        }

    @classmethod
    def from_json(cls, payload: dict) -> "DatasetManifest":
        samples = []
        split = {}
        for entry in payload["samples"]:
            samples.append(SampleRef(entry["id"], Path(entry["msi"]),
                                     Path(entry["hist"]), Path(entry["points"])))
            split[entry["id"]] = entry["split"]
        return cls(samples, split)


def discover_samples(msi_dir: Path, hist_dir: Path, points_dir: Path) -> list[SampleRef]:
    """Pair up sample directories/files by id; every id needs all three parts."""
    if not msi_dir.is_dir():
        raise ValidationError(f"MSI directory not found: {msi_dir}")
    refs = []
    for entry in sorted(msi_dir.iterdir()):
        if not entry.is_dir():
            continue
        sample_id = entry.name
        hist = hist_dir / f"{sample_id}.png"
        points = points_dir / f"{sample_id}.csv"
        if not hist.is_file():
            raise ValidationError(f"sample {sample_id}: missing histology {hist}")
        if not points.is_file():
            raise ValidationError(f"sample {sample_id}: missing control points {points}")
        refs.append(SampleRef(sample_id, entry, hist, points))
    if not refs:
        raise ValidationError(f"no sample directories under {msi_dir}")
    return refs


def split_dataset(ids: list[str], fractions: tuple[float, float, float],
                  seed: int) -> dict[str, str]:
    """Seeded shuffle then contiguous assignment with largest-remainder rounding."""
    if not ids:
        raise ValidationError("cannot split an empty id list")
    if len(ids) != len(set(ids)):
        raise ValidationError("sample ids must be unique")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions sum to {sum(fractions)}, expected 1.0")
    if len(ids) < 10:
        log.warning("splitting only %d ids; fractions will be coarse", len(ids))
    n = len(ids)
    exact = [f * n for f in fractions]
    sizes = [int(np.floor(e)) for e in exact]
    remainder = n - sum(sizes)
    order = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in range(remainder):
        sizes[order[i]] += 1

    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(n)]
    names = ("train", "val", "test")
    split = {}
    cursor = 0
    for name, size in zip(names, sizes):
        for sample_id in shuffled[cursor:cursor + size]:
            split[sample_id] = name
        cursor += size
    return split


def build_manifest(cfg: RunConfig) -> DatasetManifest:
    refs = discover_samples(cfg.msi_dir, cfg.histology_dir, cfg.control_points_dir)
    split = split_dataset([r.sample_id for r in refs],
                          (cfg.train_fraction, cfg.val_fraction, cfg.test_fraction),
                          cfg.seed)
    return DatasetManifest(refs, split)


@dataclass
class ImagePair:
    """Co-registered (MSI-derived RGB, histology) pair with provenance."""

    sample_id: str
    msi_rgb: np.ndarray       # (S, S, 3) float64 in [0, 1]
    histology: np.ndarray     # (S, S, 3) float64 in [0, 1], warped onto the MSI frame
    pad_mode: PadMode
    transform: AffineTransform  # prepared-histology coords -> MSI-frame coords

    def provenance(self) -> dict:
        return {
            "id": self.sample_id,
            "pad_mode": self.pad_mode.value,
            "transform": list(self.transform.coefficients()),
        }


def _stage(sample_id: str, stage: str, fn):
    try:
        return fn()
    except Exception as e:  # noqa: BLE001 - rewrapped with sample/stage context
        raise PipelineStageError(sample_id, stage, e) from e


def shared_axis_and_peaks(manifest: DatasetManifest, cfg: RunConfig
                          ) -> tuple[MzAxis, PeakList]:
    """Dataset-wide preprocessing: shared axis and peaks of the summed spectrum."""
    axes = []
    for ref in manifest.samples:
        ds = _stage(ref.sample_id, "load", lambda r=ref: load_msi(r.msi_path))
        axes.append(ds.axis)
    target = build_target_axis(axes)

    total = np.zeros(len(target), dtype=np.float64)
    for ref in manifest.samples:
        ds = _stage(ref.sample_id, "load", lambda r=ref: load_msi(r.msi_path))
        rb = _stage(ref.sample_id, "rebin", lambda d=ds: rebin(d, target))
        total += _stage(ref.sample_id, "sum", lambda d=rb: sum_spectra_raw(d))

    peaks = pick_peaks(total, cfg.k_peaks, cfg.min_separation, axis=target)
    if len(peaks) < cfg.k_peaks:
        log.warning("summed spectrum yielded %d peaks (requested %d)",
                    len(peaks), cfg.k_peaks)
    return target, peaks


def _to_common_frame(image: np.ndarray, size: int, mode: PadMode):
    """Pad to square, resize to (size, size); returns the image and the
    coordinate map applied to points in its frame."""
    h, w = image.shape[:2]
    side = max(h, w)
    off_x, off_y = pad_offsets(w, h, side, side)
    padded = pad_to(image, side, side, mode) if side != w or side != h else image
    resized = resize(padded, size, size) if side != size else padded

    def map_point(x: float, y: float) -> tuple[float, float]:
        return resize_point((x + off_x, y + off_y), side, side, size, size)

    return resized, map_point


def prepare_pair(ref: SampleRef, target_axis: MzAxis, peaks: PeakList,
                 cfg: RunConfig) -> ImagePair:
    half_window = float(np.median(np.diff(target_axis.values))) / 2.0

    ds = _stage(ref.sample_id, "load", lambda: load_msi(ref.msi_path))
    rb = _stage(ref.sample_id, "rebin", lambda: rebin(ds, target_axis))
    stack = _stage(ref.sample_id, "stack",
                   lambda: build_peak_stack(rb, peaks, half_window))
    msi_rgb = _stage(ref.sample_id, "reduce",
                     lambda: pca_rgb(stack, mask=rb.mask))
    # MSI padding (when the grid is not square) is always black: the
    # reduction renders off-tissue pixels dark. The black/white choice the
    # config exposes applies to histology, which is where it matters.
    msi_rgb, map_dst = _stage(ref.sample_id, "msi-frame",
                              lambda: _to_common_frame(msi_rgb, cfg.image_size, PadMode.BLACK))

    hist = _stage(ref.sample_id, "load-histology", lambda: load_png(ref.hist_path))
    if hist.ndim == 2:
        hist = np.repeat(hist[:, :, None], 3, axis=2)
    hist, map_src = _stage(ref.sample_id, "hist-frame",
                           lambda: _to_common_frame(hist, cfg.image_size, cfg.pad_mode))

    points = _stage(ref.sample_id, "load-points",
                    lambda: load_control_points(ref.points_path))

    def register():
        mapped = np.empty_like(points)
        for i, (sx, sy, dx, dy) in enumerate(points):
            mapped[i, 0:2] = map_src(sx, sy)
            mapped[i, 2:4] = map_dst(dx, dy)
        t = fit_affine(mapped)
        registered = warp(hist, t, cfg.image_size, cfg.image_size, cfg.pad_mode)
        return t, registered

    t, registered = _stage(ref.sample_id, "register", register)
    return ImagePair(ref.sample_id, msi_rgb, registered, cfg.pad_mode, t)


def prepare_pairs(manifest: DatasetManifest, cfg: RunConfig,
                  out_dir: Path | None = None) -> list[ImagePair]:
    """Prepare every sample; optionally persist pairs under out_dir/prepared."""
    target_axis, peaks = shared_axis_and_peaks(manifest, cfg)
    pairs = []
    for ref in manifest.samples:
        pair = prepare_pair(ref, target_axis, peaks, cfg)
        pairs.append(pair)
        log.info("prepared %s", ref.sample_id)
    if out_dir is not None:
        save_pairs(pairs, out_dir)
    return pairs


def save_pairs(pairs: list[ImagePair], out_dir: Path) -> None:
    prepared = Path(out_dir) / "prepared"
    prepared.mkdir(parents=True, exist_ok=True)
    for pair in pairs:
        np.save(prepared / f"{pair.sample_id}.msi.npy", pair.msi_rgb)
        np.save(prepared / f"{pair.sample_id}.hist.npy", pair.histology)
        (prepared / f"{pair.sample_id}.json").write_text(
            json.dumps(pair.provenance(), sort_keys=True) + "\n")


def load_pairs(out_dir: Path, ids: list[str]) -> list[ImagePair]:
    prepared = Path(out_dir) / "prepared"
    pairs = []
    for sample_id in ids:
        meta_path = prepared / f"{sample_id}.json"
        if not meta_path.is_file():
            raise ValidationError(f"prepared pair not found for {sample_id}; run prepare first")
        meta = json.loads(meta_path.read_text())
        msi = np.load(prepared / f"{sample_id}.msi.npy")
        hist = np.load(prepared / f"{sample_id}.hist.npy")
        coeffs = meta["transform"]
        pairs.append(ImagePair(sample_id, msi, hist, PadMode.parse(meta["pad_mode"]),
                               AffineTransform(*coeffs)))
    return pairs


def save_manifest(manifest: DatasetManifest, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.to_json(), sort_keys=True, indent=1) + "\n")


def load_manifest(out_dir: Path) -> DatasetManifest:
    path = Path(out_dir) / "manifest.json"
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}; run prepare first")
    return DatasetManifest.from_json(json.loads(path.read_text()))
