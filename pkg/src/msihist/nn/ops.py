"""Differentiable operations: convolutions, activations, normalization,
pooling, and losses.

Convolution is cross-correlation implemented with im2col + GEMM; the
transposed convolution is its exact adjoint (same column machinery run in
reverse), so <conv(x), y> == <x, conv_t(y)> up to rounding. All backward
passes are hand-derived and checked against central finite differences in
the test suite.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


# ---------------------------------------------------------------------------
# im2col / col2im
# ---------------------------------------------------------------------------

def _conv_out_size(size: int, k: int, s: int, p: int) -> int:
    out = (size + 2 * p - k) // s + 1
    if out < 1:
        raise ValueError(f"convolution output collapses: size={size} k={k} s={s} p={p}")
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    """(N,C,H,W) -> (C*kh*kw, N*Ho*Wo) patch matrix (zero padding).

    The channel-major layout lets the whole batch run as one GEMM.
    """
    n, c, h, w = x.shape
    ho = _conv_out_size(h, kh, sh, ph)
    wo = _conv_out_size(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, kh, kw, n, ho, wo),
        strides=(s1, s2, s3, s0, s2 * sh, s3 * sw),
        writeable=False,
    )
    return view.reshape(c * kh * kw, n * ho * wo)


def _col2im(cols: np.ndarray, x_shape: tuple[int, int, int, int],
            kh: int, kw: int, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns back onto the image."""
    n, c, h, w = x_shape
    ho = _conv_out_size(h, kh, sh, ph)
    wo = _conv_out_size(w, kw, sw, pw)
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    colsv = cols.reshape(c, kh, kw, n, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + ho * sh:sh, j:j + wo * sw:sw] += colsv[:, i, j].transpose(1, 0, 2, 3)
    return xp[:, :, ph:ph + h, pw:pw + w]


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=1, pad=0) -> Tensor:
    """Cross-correlation of (N,C,H,W) input with (F,C,kh,kw) weights."""
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    n, c, h, wdt = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {cw}")
    if b is not None and b.data.shape != (f,):
        raise ValueError(f"conv2d bias shape {b.data.shape} != ({f},)")
    ho = _conv_out_size(h, kh, sh, ph)
    wo = _conv_out_size(wdt, kw, sw, pw)

    cols = _im2col(x.data, kh, kw, sh, sw, ph, pw)
    wmat = w.data.reshape(f, c * kh * kw)
    out = np.matmul(wmat, cols)  # (N, F, Ho*Wo)
    out = out.reshape(n, f, ho, wo)
    if b is not None:
        out = out + b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(dout):
        dflat = np.ascontiguousarray(dout).reshape(n, f, ho * wo)
        if x.requires_grad:
            dcols = np.matmul(wmat.T, dflat)
            x.accumulate_grad(_col2im(dcols, (n, c, h, wdt), kh, kw, sh, sw, ph, pw))
        if w.requires_grad:
            # Batched GEMM against the transposed view avoids large copies.
            dwmat = np.matmul(dflat, cols.transpose(0, 2, 1)).sum(axis=0)
            w.accumulate_grad(dwmat.reshape(f, c, kh, kw))
        if b is not None and b.requires_grad:
            b.accumulate_grad(dout.sum(axis=(0, 2, 3)))

    return Tensor.from_op(out, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride=1, pad=0) -> Tensor:
    """Adjoint of conv2d: (N,Cin,H,W) with (Cin,Cout,kh,kw) weights.

    Output spatial size is (H-1)*stride - 2*pad + kernel.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    n, cin, h, wdt = x.data.shape
    cw, cout, kh, kw = w.data.shape
    if cw != cin:
        raise ValueError(f"conv_transpose2d channel mismatch: input {cin}, weight {cw}")
    if b is not None and b.data.shape != (cout,):
        raise ValueError(f"conv_transpose2d bias shape {b.data.shape} != ({cout},)")
    ho = (h - 1) * sh - 2 * ph + kh
    wo = (wdt - 1) * sw - 2 * pw + kw
    if ho < 1 or wo < 1:
        raise ValueError("conv_transpose2d output collapses to nothing")

    wmat = w.data.reshape(cin, cout * kh * kw)
    xflat = x.data.reshape(n, cin, h * wdt)
    cols = np.matmul(wmat.T, xflat)  # (N, Cout*kh*kw, H*W)
    out = _col2im(cols, (n, cout, ho, wo), kh, kw, sh, sw, ph, pw)
    if b is not None:
        out = out + b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(dout):
        dcols = _im2col(dout, kh, kw, sh, sw, ph, pw)  # (N, Cout*kh*kw, H*W)
        if x.requires_grad:
            dx = np.matmul(wmat, dcols)
            x.accumulate_grad(dx.reshape(n, cin, h, wdt))
        if w.requires_grad:
            dwmat = np.matmul(xflat, dcols.transpose(0, 2, 1)).sum(axis=0)
            w.accumulate_grad(dwmat.reshape(cin, cout, kh, kw))
        if b is not None and b.requires_grad:
            b.accumulate_grad(dout.sum(axis=(0, 2, 3)))

    return Tensor.from_op(out, parents, backward)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(dout):
        if x.requires_grad:
            x.accumulate_grad(dout * (x.data > 0))

    return Tensor.from_op(out, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(x.data > 0, x.data, slope * x.data)

    def backward(dout):
        if x.requires_grad:
            x.accumulate_grad(dout * np.where(x.data > 0, 1.0, slope))

    return Tensor.from_op(out, (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def backward(dout):
        if x.requires_grad:
            x.accumulate_grad(dout * s * (1.0 - s))

    return Tensor.from_op(s, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(dout):
        if x.requires_grad:
            x.accumulate_grad(dout * (1.0 - t * t))

    return Tensor.from_op(t, (x,), backward)


# ---------------------------------------------------------------------------
# Normalization and pooling
# ---------------------------------------------------------------------------

def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over H,W with learnable scale/shift."""
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError("instance_norm scale/shift must have shape (C,)")
    m = h * w
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=(2, 3), keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(dout):
        if beta.requires_grad:
            beta.accumulate_grad(dout.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            gamma.accumulate_grad((dout * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = dout * gamma.data[None, :, None, None]
            dvar = np.sum(dxhat * xc, axis=(2, 3), keepdims=True) * (-0.5) * ivar ** 3
            dmu = (np.sum(dxhat, axis=(2, 3), keepdims=True) * (-ivar)
                   + dvar * np.sum(-2.0 * xc, axis=(2, 3), keepdims=True) / m)
            dx = dxhat * ivar + dvar * 2.0 * xc / m + dmu / m
            x.accumulate_grad(dx)

    return Tensor.from_op(out, (x, gamma, beta), backward)


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """k x k max pooling with stride k; ties route gradient to the first max."""
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ValueError(f"max_pool2d needs dims divisible by {k}, got {h}x{w}")
    ho, wo = h // k, w // k
    windows = (x.data.reshape(n, c, ho, k, wo, k)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, ho, wo, k * k))
    idx = np.argmax(windows, axis=4)
    out = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]

    def backward(dout):
        if x.requires_grad:
            dwin = np.zeros_like(windows)
            np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=4)
            dx = (dwin.reshape(n, c, ho, wo, k, k)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, h, w))
            x.accumulate_grad(dx)

    return Tensor.from_op(out, (x,), backward)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(dout):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * dout.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(dout[tuple(sl)])

    return Tensor.from_op(out, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# Losses (mean reduction, scalar output)
# ---------------------------------------------------------------------------

def _target_array(target) -> np.ndarray:
    if isinstance(target, Tensor):
        return target.data
    return np.asarray(target, dtype=np.float64)


def mse_loss(pred: Tensor, target) -> Tensor:
    t = _target_array(target)
    diff = pred.data - t
    out = np.mean(diff * diff)

    def backward(dout):
        if pred.requires_grad:
            pred.accumulate_grad(dout * 2.0 * diff / diff.size)

    return Tensor.from_op(out, (pred,), backward)


def l1_loss(pred: Tensor, target) -> Tensor:
    t = _target_array(target)
    diff = pred.data - t
    out = np.mean(np.abs(diff))

    def backward(dout):
        if pred.requires_grad:
            pred.accumulate_grad(dout * np.sign(diff) / diff.size)

    return Tensor.from_op(out, (pred,), backward)


def bce_with_logits_loss(logits: Tensor, target) -> Tensor:
    """Numerically stable binary cross-entropy on raw logits."""
    t = _target_array(target)
    z = logits.data
    out = np.mean(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z))))

    def backward(dout):
        if logits.requires_grad:
            logits.accumulate_grad(dout * (_sigmoid(z) - t) / z.size)

    return Tensor.from_op(out, (logits,), backward)
