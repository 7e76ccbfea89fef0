"""Mass spectrometry imaging data model and spectral preprocessing.

A dataset is a spatial grid of spectra sharing one mass-to-charge (m/z)
axis. This module provides the on-disk container formats, interpolation
rebinning onto a common axis, spectral summation, top-K peak picking on
the summed spectrum, and extraction of per-peak ion images.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ValidationError

HEADER_NAME = "header.json"
AXIS_NAME = "mzaxis.bin"
SPECTRA_NAME = "spectra.bin"
MASK_NAME = "mask.bin"
CONTAINER_VERSION = 1


@dataclass(frozen=True)
class MzAxis:
    """Strictly increasing m/z sample points shared by a set of spectra."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size < 2:
            raise ValidationError("m/z axis needs at least 2 one-dimensional values")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("m/z axis contains non-finite values")
        if np.any(vals < 0):
            raise ValidationError("m/z axis contains negative values")
        if np.any(np.diff(vals) <= 0):
            raise ValidationError("m/z axis must be strictly increasing")

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def lo(self) -> float:
        return float(self.values[0])

    @property
    def hi(self) -> float:
        return float(self.values[-1])

    def __eq__(self, other) -> bool:
        return isinstance(other, MzAxis) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class Spectrum:
    """Intensities sampled on an :class:`MzAxis`.

    Intensities are stored as float32; accumulating operations promote to
    float64 internally.
    """

    axis: MzAxis
    intensities: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.intensities, dtype=np.float32)
        object.__setattr__(self, "intensities", vals)
        if vals.ndim != 1 or vals.size != len(self.axis):
            raise ValidationError(
                f"intensity length {vals.size} != axis length {len(self.axis)}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValidationError("spectrum contains non-finite intensities")
        if np.any(vals < 0):
            raise ValidationError("spectrum contains negative intensities")


@dataclass
class MSIDataset:
    """Grid of spectra on a shared axis.

    Attributes
    ----------
    width, height : int
        Grid size in pixels.
    pixel_size_um : float
        Physical pixel pitch in micrometres.
    axis : MzAxis
        Shared m/z axis.
    spectra : np.ndarray
        (height*width, n_bins) float32, row-major y-then-x.
    mask : np.ndarray
        (height, width) bool; False marks pixels that were not acquired.
    """

    width: int
    height: int
    pixel_size_um: float
    axis: MzAxis
    spectra: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError("dataset dimensions must be positive")
        if self.pixel_size_um <= 0:
            raise ValidationError("pixel_size_um must be positive")
        spectra = np.asarray(self.spectra, dtype=np.float32)
        if spectra.ndim != 2 or spectra.shape != (self.height * self.width, len(self.axis)):
            raise ValidationError(
                f"spectra shape {spectra.shape} != "
                f"({self.height * self.width}, {len(self.axis)})"
            )
        if not np.all(np.isfinite(spectra)):
            raise ValidationError("dataset contains non-finite intensities")
        if np.any(spectra < 0):
            raise ValidationError("dataset contains negative intensities")
        self.spectra = spectra
        if self.mask is None:
            self.mask = np.ones((self.height, self.width), dtype=bool)
        else:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != (self.height, self.width):
                raise ValidationError(
                    f"mask shape {mask.shape} != ({self.height}, {self.width})"
                )
            self.mask = mask

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def spectrum_at(self, x: int, y: int) -> Spectrum:
        return Spectrum(self.axis, self.spectra[y * self.width + x])


@dataclass(frozen=True)
class PeakList:
    """Picked peaks as (mz, summed_intensity), sorted by descending intensity."""

    peaks: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "peaks", tuple((float(m), float(v)) for m, v in self.peaks)
        )
        mzs = [m for m, _ in self.peaks]
        if len(set(mzs)) != len(mzs):
            raise ValidationError("peak m/z values must be distinct")
        intens = [v for _, v in self.peaks]
        if any(b > a for a, b in zip(intens, intens[1:])):
            raise ValidationError("peaks must be sorted by descending intensity")

    def __len__(self) -> int:
        return len(self.peaks)

    @property
    def mzs(self) -> np.ndarray:
        return np.array([m for m, _ in self.peaks], dtype=np.float64)


@dataclass
class PeakImageStack:
    """H x W x K stack of ion images for K picked peaks."""

    width: int
    height: int
    data: np.ndarray
    peak_mzs: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.peak_mzs = np.asarray(self.peak_mzs, dtype=np.float64)
        if self.data.shape != (self.height, self.width, self.peak_mzs.size):
            raise ValidationError(
                f"stack shape {self.data.shape} != "
                f"({self.height}, {self.width}, {self.peak_mzs.size})"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("peak image stack contains non-finite values")

    @property
    def channels(self) -> int:
        return int(self.peak_mzs.size)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def save_msi(dataset: MSIDataset, path: str | Path, write_mask: bool | None = None) -> None:
    """Write a dataset as the binary container (a directory of files)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    header = {
        "width": dataset.width,
        "height": dataset.height,
        "pixel_size_um": dataset.pixel_size_um,
        "n_bins": len(dataset.axis),
        "dtype": "f32",
        "endianness": "little",
        "version": CONTAINER_VERSION,
    }
    (out / HEADER_NAME).write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")
    dataset.axis.values.astype("<f8").tofile(out / AXIS_NAME)
    dataset.spectra.astype("<f4").tofile(out / SPECTRA_NAME)
    if write_mask is None:
        write_mask = not dataset.mask.all()
    if write_mask:
        dataset.mask.astype(np.uint8).tofile(out / MASK_NAME)


def _load_container(path: Path) -> MSIDataset:
    header_path = path / HEADER_NAME
    if not header_path.is_file():
        raise DataFormatError(f"{path}: missing {HEADER_NAME}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{header_path}: invalid JSON: {e}") from e
    for key in ("width", "height", "pixel_size_um", "n_bins", "dtype", "endianness", "version"):
        if key not in header:
            raise DataFormatError(f"{header_path}: missing header field '{key}'")
    if header["dtype"] != "f32" or header["endianness"] != "little":
        raise DataFormatError(f"{header_path}: unsupported dtype/endianness")
    if header["version"] != CONTAINER_VERSION:
        raise DataFormatError(f"{header_path}: unsupported version {header['version']}")
    width, height, n_bins = int(header["width"]), int(header["height"]), int(header["n_bins"])
    if width < 1 or height < 1 or n_bins < 2:
        raise DataFormatError(f"{header_path}: non-positive dimensions in header")

    axis_raw = np.fromfile(path / AXIS_NAME, dtype="<f8")
    if axis_raw.size != n_bins:
        raise DataFormatError(
            f"{path / AXIS_NAME}: expected {n_bins} axis values, found {axis_raw.size}"
        )
    try:
        axis = MzAxis(axis_raw)
    except ValidationError as e:
        raise DataFormatError(f"{path / AXIS_NAME}: {e}") from e

    spectra_raw = np.fromfile(path / SPECTRA_NAME, dtype="<f4")
    expected = width * height * n_bins
    if spectra_raw.size != expected:
        raise DataFormatError(
            f"{path / SPECTRA_NAME}: expected {expected} intensity values "
            f"({width}x{height}x{n_bins}), found {spectra_raw.size}"
        )
    spectra = spectra_raw.reshape(width * height, n_bins)

    mask_path = path / MASK_NAME
    mask = None
    if mask_path.is_file():
        mask_raw = np.fromfile(mask_path, dtype=np.uint8)
        if mask_raw.size != width * height:
            raise DataFormatError(
                f"{mask_path}: expected {width * height} mask bytes, found {mask_raw.size}"
            )
        if np.any(mask_raw > 1):
            raise DataFormatError(f"{mask_path}: mask bytes must be 0 or 1")
        mask = mask_raw.reshape(height, width).astype(bool)
        # Masked-off pixels must not carry intensities into downstream sums.
        spectra = spectra.copy()
        spectra[~mask.reshape(-1)] = 0.0

    try:
        return MSIDataset(width, height, float(header["pixel_size_um"]), axis, spectra, mask)
    except ValidationError as e:
        raise DataFormatError(f"{path}: {e}") from e


def _load_csv(path: Path) -> MSIDataset:
    """CSV test format: header x,y,mz,intensity; all pixels share one m/z set."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if [h.strip() for h in header] != ["x", "y", "mz", "intensity"]:
            raise DataFormatError(f"{path}: expected header 'x,y,mz,intensity'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 columns")
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2]), float(row[3])))
            except ValueError as e:
                raise DataFormatError(f"{path}:{lineno}: {e}") from e
    if not rows:
        raise DataFormatError(f"{path}: no data rows")

    mz_set = sorted({r[2] for r in rows})
    axis = MzAxis(np.array(mz_set))
    mz_index = {m: i for i, m in enumerate(mz_set)}
    width = max(r[0] for r in rows) + 1
    height = max(r[1] for r in rows) + 1
    if min(r[0] for r in rows) < 0 or min(r[1] for r in rows) < 0:
        raise DataFormatError(f"{path}: negative pixel coordinates")

    spectra = np.zeros((width * height, len(mz_set)), dtype=np.float32)
    seen = np.zeros((height, width, len(mz_set)), dtype=bool)
    for x, y, mz, inten in rows:
        if seen[y, x, mz_index[mz]]:
            raise DataFormatError(f"{path}: duplicate entry for pixel ({x},{y}) m/z {mz}")
        seen[y, x, mz_index[mz]] = True
        spectra[y * width + x, mz_index[mz]] = inten
    complete = seen.all(axis=2)
    partial = seen.any(axis=2) & ~complete
    if partial.any():
        raise DataFormatError(f"{path}: pixels do not share the same m/z set")
    # Pixels with no rows at all are treated as not acquired.
    return MSIDataset(width, height, 1.0, axis, spectra, complete)


def load_msi(path: str | Path) -> MSIDataset:
    """Load a dataset from the binary container directory or the CSV test format."""
    p = Path(path)
    if p.is_dir():
        return _load_container(p)
    if p.suffix.lower() == ".csv":
        return _load_csv(p)
    raise DataFormatError(f"{p}: not a container directory or .csv file")


# ---------------------------------------------------------------------------
# Rebinning
# ---------------------------------------------------------------------------

def _interp_rows(target: np.ndarray, source: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of (P, n_src) rows onto `target` points.

    Target points outside [source[0], source[-1]] map to 0. Points landing
    exactly on a source node copy that node's value bit-for-bit.
    """
    n = source.size
    j = np.searchsorted(source, target, side="right") - 1
    j = np.clip(j, 0, n - 2)
    x0 = source[j]
    dx = source[j + 1] - source[j]
    w = (target - x0) / dx
    rows64 = rows.astype(np.float64, copy=False)
    y0 = rows64[:, j]
    y1 = rows64[:, j + 1]
    out = y0 + (y1 - y0) * w
    # Exact-node fast paths keep identity rebinning bit-exact.
    out = np.where(w == 0.0, y0, out)
    out = np.where(w == 1.0, y1, out)
    oob = (target < source[0]) | (target > source[-1])
    out[:, oob] = 0.0
    return np.maximum(out, 0.0)


def rebin(dataset: MSIDataset, target: MzAxis) -> MSIDataset:
    """Resample every spectrum onto `target` by linear interpolation.

    Target m/z outside the source axis range map to 0.
    """
    out = _interp_rows(target.values, dataset.axis.values, dataset.spectra)
    return MSIDataset(
        dataset.width,
        dataset.height,
        dataset.pixel_size_um,
        target,
        out.astype(np.float32),
        dataset.mask.copy(),
    )


def rebin_spectrum(spectrum: Spectrum, target: MzAxis) -> Spectrum:
    """Single-spectrum version of :func:`rebin`."""
    out = _interp_rows(target.values, spectrum.axis.values, spectrum.intensities[None, :])
    return Spectrum(target, out[0].astype(np.float32))


def build_target_axis(axes: list[MzAxis], bin_width: float | None = None) -> MzAxis:
    """Uniform axis spanning all inputs.

    Runs from the global minimum to the global maximum m/z with bin width
    equal to the median source bin width (pooled over all consecutive
    differences), unless an explicit `bin_width` is given.
    """
    if not axes:
        raise ValidationError("no axes given")
    lo = min(a.lo for a in axes)
    hi = max(a.hi for a in axes)
    if bin_width is None:
        diffs = np.concatenate([np.diff(a.values) for a in axes])
        bin_width = float(np.median(diffs))
    if bin_width <= 0:
        raise ValidationError("bin width must be positive")
    n = int(np.floor((hi - lo) / bin_width)) + 1
    if n < 2:
        n = 2
    return MzAxis(lo + np.arange(n, dtype=np.float64) * bin_width)


# ---------------------------------------------------------------------------
# Summation and peak picking
# ---------------------------------------------------------------------------

def sum_spectra(dataset: MSIDataset) -> Spectrum:
    """Elementwise sum of all masked-true pixel spectra (float64 accumulation)."""
    flat_mask = dataset.mask.reshape(-1)
    if not flat_mask.any():
        raise ValidationError("cannot sum spectra: no acquired (masked-true) pixels")
    total = dataset.spectra[flat_mask].astype(np.float64).sum(axis=0)
    return Spectrum(dataset.axis, total.astype(np.float32))


def sum_spectra_raw(dataset: MSIDataset) -> np.ndarray:
    """Like :func:`sum_spectra` but returns the float64 accumulator.

    Used when sums from several datasets are combined further; keeping
    float64 avoids re-quantizing between stages.
    """
    flat_mask = dataset.mask.reshape(-1)
    if not flat_mask.any():
        raise ValidationError("cannot sum spectra: no acquired (masked-true) pixels")
    return dataset.spectra[flat_mask].astype(np.float64).sum(axis=0)


def _local_maxima(intensities: np.ndarray) -> list[int]:
    """Interior local maxima indices; plateaus count once at their left edge."""
    n = intensities.size
    out = []
    i = 1
    while i < n - 1:
        if intensities[i] > intensities[i - 1]:
            j = i
            while j + 1 < n and intensities[j + 1] == intensities[i]:
                j += 1
            if j < n - 1 and intensities[j + 1] < intensities[i]:
                out.append(i)
            i = j + 1
        else:
            i += 1
    return out


def pick_peaks(spectrum: Spectrum | np.ndarray, k: int, min_separation: float = 0.0,
               axis: MzAxis | None = None) -> PeakList:
    """Pick up to `k` most intense local maxima, greedily enforcing m/z separation.

    Candidates are interior local maxima (strictly greater than both
    neighbors; plateaus count once at their leftmost index when flanked by
    strictly lower values). Candidates are visited in order of descending
    intensity (ties: lower m/z first); a candidate within `min_separation`
    of an already accepted peak is skipped.

    Parameters
    ----------
    spectrum : Spectrum or ndarray
        Input spectrum; a bare intensity array requires `axis`.
    k : int
        Maximum number of peaks to return (>= 1).
    min_separation : float
        Minimum m/z distance between accepted peaks. A candidate at
        distance <= min_separation from an accepted peak is suppressed;
        the default 0 suppresses nothing.
    """
    if isinstance(spectrum, Spectrum):
        intens = spectrum.intensities.astype(np.float64)
        mz = spectrum.axis.values
    else:
        if axis is None:
            raise ValidationError("bare intensity array requires an axis")
        intens = np.asarray(spectrum, dtype=np.float64)
        mz = axis.values
    if k < 1:
        raise ValidationError("k must be >= 1")
    if min_separation < 0:
        raise ValidationError("min_separation must be >= 0")
    if intens.size < 3:
        raise ValidationError("spectrum must have at least 3 bins to pick peaks")

    candidates = _local_maxima(intens)
    candidates.sort(key=lambda i: (-intens[i], mz[i]))
    accepted: list[int] = []
    for i in candidates:
        if len(accepted) == k:
            break
        if min_separation > 0 and any(
            abs(mz[i] - mz[a]) <= min_separation for a in accepted
        ):
            continue
        accepted.append(i)
    return PeakList(tuple((mz[i], intens[i]) for i in accepted))


# ---------------------------------------------------------------------------
# Ion images
# ---------------------------------------------------------------------------

def ion_image(dataset: MSIDataset, mz: float, half_window: float) -> np.ndarray:
    """Per-pixel intensity summed over axis bins within [mz-hw, mz+hw].

    Masked-false pixels yield 0. Returns (height, width) float64.
    """
    axis = dataset.axis.values
    if mz < axis[0] or mz > axis[-1]:
        raise ValidationError(
            f"m/z {mz} outside axis range [{axis[0]}, {axis[-1]}]"
        )
    if half_window < 0:
        raise ValidationError("half_window must be >= 0")
    lo = np.searchsorted(axis, mz - half_window, side="left")
    hi = np.searchsorted(axis, mz + half_window, side="right")
    img = dataset.spectra[:, lo:hi].astype(np.float64).sum(axis=1)
    img = img.reshape(dataset.height, dataset.width)
    img[~dataset.mask] = 0.0
    return img


def build_peak_stack(dataset: MSIDataset, peaks: PeakList, half_window: float) -> PeakImageStack:
    """Stack the ion image of every picked peak, in PeakList order."""
    if len(peaks) == 0:
        raise ValidationError("cannot build a peak stack from an empty peak list")
    channels = [ion_image(dataset, m, half_window) for m, _ in peaks.peaks]
    data = np.stack(channels, axis=2)
    return PeakImageStack(dataset.width, dataset.height, data, peaks.mzs)
