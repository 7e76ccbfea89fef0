"""Geometric preparation of image pairs.

Padding, bilinear resizing, affine fitting from user-supplied landmark
pairs, inverse-mapping warps, and patch extraction/reassembly. Images are
numpy arrays shaped (H, W) or (H, W, C) with float values; all sampling
uses half-pixel-centered coordinates with the pixel at integer index (x, y)
centred on that point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ValidationError


class PadMode(str, Enum):
    """Border fill used when squaring or warping: black (0.0) or white (1.0)."""

    BLACK = "black"
    WHITE = "white"

    @property
    def fill(self) -> float:
        return 0.0 if self is PadMode.BLACK else 1.0

    @classmethod
    def parse(cls, name: str) -> "PadMode":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValidationError(f"pad mode must be 'black' or 'white', got {name!r}") from None


@dataclass(frozen=True)
class AffineTransform:
    """Maps (x, y) -> (a*x + b*y + tx, c*x + d*y + ty)."""

    a: float
    b: float
    c: float
    d: float
    tx: float
    ty: float

    def __post_init__(self):
        for name in ("a", "b", "c", "d", "tx", "ty"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"affine coefficient {name} is not finite")

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)

    @property
    def determinant(self) -> float:
        return self.a * self.d - self.b * self.c

    def apply(self, xy: np.ndarray) -> np.ndarray:
        """Transform an (N, 2) array of (x, y) points."""
        pts = np.asarray(xy, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([self.a * x + self.b * y + self.tx,
                         self.c * x + self.d * y + self.ty], axis=-1)

    def inverse(self) -> "AffineTransform":
        det = self.determinant
        if det == 0 or not np.isfinite(det):
            raise ValidationError("affine transform is not invertible")
        ia, ib = self.d / det, -self.b / det
        ic, id_ = -self.c / det, self.a / det
        return AffineTransform(
            ia, ib, ic, id_,
            -(ia * self.tx + ib * self.ty),
            -(ic * self.tx + id_ * self.ty),
        )

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Return self applied after `other` (self o other)."""
        return AffineTransform(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
            self.a * other.tx + self.b * other.ty + self.tx,
            self.c * other.tx + self.d * other.ty + self.ty,
        )

    def coefficients(self) -> tuple[float, float, float, float, float, float]:
        return (self.a, self.b, self.c, self.d, self.tx, self.ty)


def _check_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValidationError(f"expected (H,W) or (H,W,C) image, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Padding and resizing
# ---------------------------------------------------------------------------

def pad_to(image: np.ndarray, target_w: int, target_h: int, mode: PadMode) -> np.ndarray:
    """Center the image on a target canvas filled with the pad color.

    When the leftover size is odd the extra pixel goes to the right/bottom.
    """
    arr = _check_image(image)
    h, w = arr.shape[:2]
    if target_w < w or target_h < h:
        raise ValidationError(
            f"pad target {target_w}x{target_h} smaller than image {w}x{h}"
        )
    off_x = (target_w - w) // 2
    off_y = (target_h - h) // 2
    shape = (target_h, target_w) + arr.shape[2:]
    out = np.full(shape, mode.fill, dtype=np.float64)
    out[off_y:off_y + h, off_x:off_x + w] = arr
    return out


def pad_offsets(w: int, h: int, target_w: int, target_h: int) -> tuple[int, int]:
    """(x, y) offset of the original image inside the padded canvas."""
    if target_w < w or target_h < h:
        raise ValidationError("pad target smaller than image")
    return (target_w - w) // 2, (target_h - h) // 2


def _sample_bilinear_clamped(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample at fractional coords, clamping coordinates to the image."""
    h, w = arr.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = arr[y0, x0]
    v01 = arr[y0, x1]
    v10 = arr[y1, x0]
    v11 = arr[y1, x1]
    # Difference-form lerp keeps constants and exact grid hits bit-exact.
    top = v00 + (v01 - v00) * fx
    bot = v10 + (v11 - v10) * fx
    return top + (bot - top) * fy


def resize(image: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling; edges clamp."""
    arr = _check_image(image)
    if new_w < 1 or new_h < 1:
        raise ValidationError("resize target must be at least 1x1")
    h, w = arr.shape[:2]
    xs = (np.arange(new_w, dtype=np.float64) + 0.5) * (w / new_w) - 0.5
    ys = (np.arange(new_h, dtype=np.float64) + 0.5) * (h / new_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return _sample_bilinear_clamped(arr, gx, gy)


def resize_point(xy: tuple[float, float], old_w: int, old_h: int,
                 new_w: int, new_h: int) -> tuple[float, float]:
    """Map a point through the same half-pixel convention :func:`resize` uses."""
    x, y = xy
    return ((x + 0.5) * (new_w / old_w) - 0.5,
            (y + 0.5) * (new_h / old_h) - 0.5)


# ---------------------------------------------------------------------------
# Affine fitting and warping
# ---------------------------------------------------------------------------

def load_control_points(path: str | Path) -> np.ndarray:
    """Read landmark pairs from CSV with header src_x,src_y,dst_x,dst_y."""
    pairs = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if [h.strip() for h in header] != ["src_x", "src_y", "dst_x", "dst_y"]:
            raise DataFormatError(f"{path}: expected header 'src_x,src_y,dst_x,dst_y'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 columns")
            try:
                pairs.append([float(v) for v in row])
            except ValueError as e:
                raise DataFormatError(f"{path}:{lineno}: {e}") from e
    if not pairs:
        raise DataFormatError(f"{path}: no control point rows")
    return np.asarray(pairs, dtype=np.float64)


def save_control_points(path: str | Path, pairs: np.ndarray) -> None:
    pairs = np.asarray(pairs, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src_x", "src_y", "dst_x", "dst_y"])
        for row in pairs:
            writer.writerow([repr(float(v)) for v in row])


def fit_affine(points: np.ndarray) -> AffineTransform:
    """Least-squares affine from (N, 4) rows of (src_x, src_y, dst_x, dst_y).

    Solves the 3x3 normal equations once per output coordinate. Exact when
    the pairs are consistent with a single affine map. Requires >= 3
    non-collinear source points.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ValidationError(f"expected (N, 4) control points, got shape {pts.shape}")
    n = pts.shape[0]
    if n < 3:
        raise ValidationError(f"affine fit needs at least 3 point pairs, got {n}")
    sx, sy = pts[:, 0], pts[:, 1]
    dx, dy = pts[:, 2], pts[:, 3]
    design = np.stack([sx, sy, np.ones(n)], axis=1)
    m = design.T @ design
    # Guard against collinear sources: the normal matrix becomes singular.
    scale = np.abs(m).max()
    if scale == 0 or np.linalg.cond(m) > 1e12:
        raise ValidationError("source control points are collinear or degenerate")
    coef_x = np.linalg.solve(m, design.T @ dx)
    coef_y = np.linalg.solve(m, design.T @ dy)
    return AffineTransform(coef_x[0], coef_x[1], coef_y[0], coef_y[1],
                           coef_x[2], coef_y[2])


def warp(image: np.ndarray, t: AffineTransform, out_w: int, out_h: int,
         fill: PadMode) -> np.ndarray:
    """Inverse-mapping warp: out(x, y) = image(t^-1(x, y)), bilinear sampled.

    Samples whose 2x2 neighborhood extends outside the image mix in the
    fill value; fully out-of-bounds samples are pure fill.
    """
    arr = _check_image(image)
    if out_w < 1 or out_h < 1:
        raise ValidationError("warp output must be at least 1x1")
    inv = t.inverse()
    gx, gy = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    xs = inv.a * gx + inv.b * gy + inv.tx
    ys = inv.c * gx + inv.d * gy + inv.ty

    h, w = arr.shape[:2]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    def fetch(ix, iy):
        inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        vals = arr[np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)]
        if arr.ndim == 3:
            inside = inside[..., None]
        return np.where(inside, vals, fill.fill)

    v00 = fetch(x0, y0)
    v01 = fetch(x0 + 1, y0)
    v10 = fetch(x0, y0 + 1)
    v11 = fetch(x0 + 1, y0 + 1)
    top = v00 + (v01 - v00) * fx
    bot = v10 + (v11 - v10) * fx
    return top + (bot - top) * fy


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------

def _axis_origins(dim: int, patch: int, stride: int) -> list[int]:
    origins = list(range(0, dim - patch + 1, stride))
    if origins[-1] != dim - patch:
        origins.append(dim - patch)
    return origins


def extract_patches(image: np.ndarray, patch: int, stride: int | None = None
                    ) -> list[tuple[int, int, np.ndarray]]:
    """Tile the image row-major into (x, y, patch) triples.

    When the size minus patch is not a stride multiple, one extra patch is
    emitted flush with the edge so every pixel is covered.
    """
    arr = _check_image(image)
    if stride is None:
        stride = patch
    if patch < 1 or stride < 1:
        raise ValidationError("patch and stride must be positive")
    h, w = arr.shape[:2]
    if patch > w or patch > h:
        raise ValidationError(f"patch {patch} larger than image {w}x{h}")
    out = []
    for y in _axis_origins(h, patch, stride):
        for x in _axis_origins(w, patch, stride):
            out.append((x, y, arr[y:y + patch, x:x + patch].copy()))
    return out


def reassemble(patches: list[tuple[int, int, np.ndarray]], out_w: int, out_h: int
               ) -> np.ndarray:
    """Inverse of :func:`extract_patches`; overlapping pixels average uniformly."""
    if not patches:
        raise ValidationError("no patches to reassemble")
    sample = np.asarray(patches[0][2], dtype=np.float64)
    shape = (out_h, out_w) + sample.shape[2:]
    acc = np.zeros(shape, dtype=np.float64)
    count = np.zeros((out_h, out_w), dtype=np.int64)
    for x, y, p in patches:
        p = np.asarray(p, dtype=np.float64)
        ph, pw = p.shape[:2]
        if x < 0 or y < 0 or x + pw > out_w or y + ph > out_h:
            raise ValidationError(f"patch at ({x},{y}) exceeds canvas {out_w}x{out_h}")
        acc[y:y + ph, x:x + pw] += p
        count[y:y + ph, x:x + pw] += 1
    if np.any(count == 0):
        raise ValidationError("patches leave uncovered pixels")
    divisor = count if acc.ndim == 2 else count[..., None]
    return acc / divisor
