"""Differentiable primitives over numpy arrays.

Every function takes and returns engine.Tensor. Backward closures push
adjoint contributions into parents via engine.accumulate; complex ops
follow the real-composite convention documented in engine.py.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import erf

from .engine import Tensor, accumulate, make_node, unbroadcast

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# arithmetic and activations

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        accumulate(a, unbroadcast(g, a.shape))
        accumulate(b, unbroadcast(g, b.shape))

    return make_node(out_data, (a, b), bwd, "add")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        accumulate(a, -g)

    return make_node(-a.data, (a,), bwd, "neg")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g):
        accumulate(a, unbroadcast(g, a.shape))
        accumulate(b, unbroadcast(-g, b.shape))

    return make_node(out_data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        accumulate(a, unbroadcast(g * np.conj(b.data), a.shape))
        accumulate(b, unbroadcast(g * np.conj(a.data), b.shape))

    return make_node(out_data, (a, b), bwd, "mul")


def square(a: Tensor) -> Tensor:
    _require_real(a, "square")

    def bwd(g):
        accumulate(a, 2.0 * a.data * g)

    return make_node(a.data * a.data, (a,), bwd, "square")


def absolute(a: Tensor) -> Tensor:
    _require_real(a, "absolute")

    def bwd(g):
        accumulate(a, np.sign(a.data) * g)

    return make_node(np.abs(a.data), (a,), bwd, "absolute")


def relu(a: Tensor) -> Tensor:
    _require_real(a, "relu")
    mask = a.data > 0

    def bwd(g):
        accumulate(a, g * mask)

    return make_node(a.data * mask, (a,), bwd, "relu")


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the Gaussian CDF via erf."""
    _require_real(a, "gelu")
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        accumulate(a, g * (cdf + x * pdf))

    return make_node(x * cdf, (a,), bwd, "gelu")


def mean(a: Tensor) -> Tensor:
    _require_real(a, "mean")
    n = a.size

    def bwd(g):
        accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return make_node(np.mean(a.data), (a,), bwd, "mean")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    _require_real(a, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        accumulate(a, y * (g - dot))

    return make_node(y, (a,), bwd, "softmax")


# ---------------------------------------------------------------------------
# shape

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bwd(g):
        accumulate(a, g.reshape(a.shape))

    return make_node(a.data.reshape(shape), (a,), bwd, "reshape")


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        accumulate(a, g.transpose(inverse))

    return make_node(a.data.transpose(axes), (a,), bwd, "transpose")


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat of an empty list")
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            accumulate(p, g[tuple(idx)])

    data = np.concatenate([p.data for p in parts], axis=axis)
    return make_node(data, tuple(parts), bwd, "concat")


def index0(a: Tensor, k: int) -> Tensor:
    """Pick element k of a 1-D tensor as a 0-d scalar."""
    if a.ndim != 1:
        raise ValueError(f"index0 expects a vector, got shape {a.shape}")

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[k] = g
        accumulate(a, ga)

    return make_node(a.data[k], (a,), bwd, "index0")


def gather2d(a: Tensor, iy: np.ndarray, ix: np.ndarray) -> Tensor:
    """Index the last two axes with integer grids iy[P], ix[Q].

    Indices may repeat (the adjoint scatter accumulates), which is what
    boundary padding needs.
    """
    *lead, h, w = a.shape
    xr = a.data.reshape(-1, h, w)
    y = xr[:, iy[:, None], ix[None, :]]
    out_shape = tuple(lead) + (len(iy), len(ix))

    def bwd(g):
        flat = (iy[:, None] * w + ix[None, :]).reshape(-1)
        g2 = g.reshape(-1, flat.size).T
        acc = np.zeros((h * w, g2.shape[1]), dtype=g.dtype)
        np.add.at(acc, flat, g2)
        accumulate(a, acc.T.reshape(a.shape))

    return make_node(y.reshape(out_shape), (a,), bwd, "gather2d")


# ---------------------------------------------------------------------------
# linear maps

def channel_matmul(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Mix channels pointwise: x[B,Ci,*sp], w[Co,Ci] -> [B,Co,*sp]."""
    y = np.einsum("oi,bi...->bo...", w.data, x.data, optimize=True)
    if b is not None:
        y = y + b.data.reshape((1, -1) + (1,) * (x.ndim - 2))
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        accumulate(x, np.einsum("oi,bo...->bi...", w.data, g, optimize=True))
        accumulate(w, np.einsum("bo...,bi...->oi", g, x.data, optimize=True))
        if b is not None:
            accumulate(b, g.sum(axis=(0,) + tuple(range(2, g.ndim))))

    return make_node(y, parents, bwd, "channel_matmul")


def _conv_geometry(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    pad = k // 2 if padding == "same" else 0
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise ValueError(f"kernel {k} does not fit axis of size {size}")
    return pad, out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, *,
           stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation: x[B,C,H,W], w[O,C,kh,kw], zero padding."""
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d stride must be 1 or 2, got {stride}")
    _, _, kh, kw = w.shape
    _, _, h, win = x.shape
    ph, oh = _conv_geometry(h, kh, stride, padding)
    pw, ow = _conv_geometry(win, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    y = np.einsum("bchwyx,ocyx->bohw", windows, w.data, optimize=True)
    if b is not None:
        y = y + b.data.reshape(1, -1, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        accumulate(w, np.einsum("bohw,bchwyx->ocyx", g, windows, optimize=True))
        gxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, :, dy:dy + stride * oh:stride, dx:dx + stride * ow:stride] += \
                    np.einsum("oc,bohw->bchw", w.data[:, :, dy, dx], g, optimize=True)
        if ph or pw:
            gxp = gxp[:, :, ph:ph + h, pw:pw + win]
        accumulate(x, gxp)
        if b is not None:
            accumulate(b, g.sum(axis=(0, 2, 3)))

    return make_node(y, parents, bwd, "conv2d")


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, *,
           stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation over (T, H, W): x[B,C,T,H,W], w[O,C,kt,kh,kw]."""
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    if stride not in (1, 2):
        raise ValueError(f"conv3d stride must be 1 or 2, got {stride}")
    _, _, kt, kh, kw = w.shape
    _, _, t, h, win = x.shape
    pt, ot = _conv_geometry(t, kt, stride, padding)
    ph, oh = _conv_geometry(h, kh, stride, padding)
    pw, ow = _conv_geometry(win, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(
        xp, (kt, kh, kw), axis=(2, 3, 4))
    windows = windows[:, :, ::stride, ::stride, ::stride]
    y = np.einsum("bcthwijk,ocijk->bothw", windows, w.data, optimize=True)
    if b is not None:
        y = y + b.data.reshape(1, -1, 1, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        accumulate(w, np.einsum("bothw,bcthwijk->ocijk", g, windows,
                                optimize=True))
        gxp = np.zeros_like(xp)
        for dt in range(kt):
            for dy in range(kh):
                for dx in range(kw):
                    gxp[:, :, dt:dt + stride * ot:stride,
                        dy:dy + stride * oh:stride,
                        dx:dx + stride * ow:stride] += np.einsum(
                            "oc,bothw->bcthw", w.data[:, :, dt, dy, dx], g,
                            optimize=True)
        if pt or ph or pw:
            gxp = gxp[:, :, pt:pt + t, ph:ph + h, pw:pw + win]
        accumulate(x, gxp)
        if b is not None:
            accumulate(b, g.sum(axis=(0, 2, 3, 4)))

    return make_node(y, parents, bwd, "conv3d")


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, *,
                     stride: int = 2) -> Tensor:
    """Transposed convolution: x[B,Ci,H,W], w[Ci,Co,kh,kw].

    Output is (H-1)*stride + kh per axis; the adjoint of a strided
    valid convolution.
    """
    ci, co, kh, kw = w.shape
    bsz, _, h, win = x.shape
    oh = (h - 1) * stride + kh
    ow = (win - 1) * stride + kw
    y = np.zeros((bsz, co, oh, ow))
    for dy in range(kh):
        for dx in range(kw):
            y[:, :, dy:dy + stride * h:stride, dx:dx + stride * win:stride] += \
                np.einsum("io,bihw->bohw", w.data[:, :, dy, dx], x.data,
                          optimize=True)
    if b is not None:
        y = y + b.data.reshape(1, -1, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for dy in range(kh):
            for dx in range(kw):
                gs = g[:, :, dy:dy + stride * h:stride,
                       dx:dx + stride * win:stride]
                gx += np.einsum("io,bohw->bihw", w.data[:, :, dy, dx], gs,
                                optimize=True)
                gw[:, :, dy, dx] = np.einsum("bihw,bohw->io", x.data, gs,
                                             optimize=True)
        accumulate(x, gx)
        accumulate(w, gw)
        if b is not None:
            accumulate(b, g.sum(axis=(0, 2, 3)))

    return make_node(y, parents, bwd, "conv_transpose2d")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; spatial dims must be even."""
    bsz, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even dims, got {h}x{w}")
    blocks = x.data.reshape(bsz, c, h // 2, 2, w // 2, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(bsz, c, h // 2, w // 2, 2, 2)
        gx = gx.transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
        accumulate(x, gx)

    return make_node(y, (x,), bwd, "maxpool2")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: dict, *,
               training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization (channel axis 1).

    ``state`` holds running 'mean' and 'var' arrays, updated in place in
    training mode and used as constants in eval mode. Biased variance is
    used for both normalization and the running update.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    bc = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        # in place so registered buffer arrays keep their identity
        state["mean"] *= 1.0 - momentum
        state["mean"] += momentum * mu
        state["var"] *= 1.0 - momentum
        state["var"] += momentum * var
    else:
        mu, var = state["mean"], state["var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bc)) * inv.reshape(bc)
    y = gamma.data.reshape(bc) * xhat + beta.data.reshape(bc)

    def bwd(g):
        accumulate(gamma, (g * xhat).sum(axis=axes))
        accumulate(beta, g.sum(axis=axes))
        scale = (gamma.data * inv).reshape(bc)
        if training:
            g_mean = g.mean(axis=axes).reshape(bc)
            gx_mean = (g * xhat).mean(axis=axes).reshape(bc)
            accumulate(x, scale * (g - g_mean - xhat * gx_mean))
        else:
            accumulate(x, scale * g)

    return make_node(y, (x, gamma, beta), bwd, "batch_norm")


# ---------------------------------------------------------------------------
# spectral

def _fft_axes(ndim_transform: int) -> tuple[int, ...]:
    return tuple(range(-ndim_transform, 0))


def _fft(a: Tensor, ndim_transform: int, inverse: bool) -> Tensor:
    axes = _fft_axes(ndim_transform)
    scale = float(np.prod([a.shape[ax] for ax in axes]))
    real_input = a.dtype.kind == "f"
    if inverse:
        data = np.fft.ifftn(a.data, axes=axes)
    else:
        data = np.fft.fftn(a.data, axes=axes)

    def bwd(g):
        # adjoint of the unnormalized DFT is scale * inverse DFT (and
        # the adjoint of the normalized inverse divides by scale)
        if inverse:
            ga = np.fft.fftn(g, axes=axes) / scale
        else:
            ga = np.fft.ifftn(g, axes=axes) * scale
        accumulate(a, ga.real if real_input else ga)

    name = ("ifft" if inverse else "fft") + str(ndim_transform)
    return make_node(data, (a,), bwd, name)


def fft2(a: Tensor) -> Tensor:
    """FFT over the last two axes; real input is promoted to complex."""
    return _fft(a, 2, inverse=False)


def ifft2(a: Tensor) -> Tensor:
    return _fft(a, 2, inverse=True)


def fft3(a: Tensor) -> Tensor:
    """FFT over the last three axes (time plus space for [B,C,T,H,W])."""
    return _fft(a, 3, inverse=False)


def ifft3(a: Tensor) -> Tensor:
    return _fft(a, 3, inverse=True)


def real_part(a: Tensor) -> Tensor:
    def bwd(g):
        accumulate(a, g.astype(np.complex128))

    return make_node(a.data.real.copy(), (a,), bwd, "real_part")


def complexify(re: Tensor, im: Tensor) -> Tensor:
    if re.shape != im.shape:
        raise ValueError(f"shape mismatch {re.shape} vs {im.shape}")

    def bwd(g):
        accumulate(re, g.real)
        accumulate(im, g.imag)

    return make_node(re.data + 1j * im.data, (re, im), bwd, "complexify")


def spec_matmul(x: Tensor, w: Tensor) -> Tensor:
    """Per-mode channel mixing: x[B,Ci,*M] (*) w[Ci,Co,*M] -> [B,Co,*M]."""
    n_modes = x.ndim - 2
    subs = "tyx"[3 - n_modes:]
    y = np.einsum(f"bi{subs},io{subs}->bo{subs}", x.data, w.data,
                  optimize=True)

    def bwd(g):
        accumulate(x, np.einsum(f"bo{subs},io{subs}->bi{subs}", g,
                                np.conj(w.data), optimize=True))
        accumulate(w, np.einsum(f"bi{subs},bo{subs}->io{subs}",
                                np.conj(x.data), g, optimize=True))

    return make_node(y, (x, w), bwd, "spec_matmul")


def _corner_blocks(modes: tuple[int, ...], dims: tuple[int, ...]):
    """(full-grid slice, packed-block slice) combos for kept corners."""
    per_axis = []
    for m, length in zip(modes, dims):
        if m < 1:
            raise ValueError(f"modes must be >= 1, got {m}")
        if 2 * m > length:
            raise ValueError(
                f"{m} modes exceed the Nyquist budget of axis {length} "
                f"(need 2*{m} <= {length})"
            )
        per_axis.append([
            (slice(0, m), slice(0, m)),
            (slice(length - m, length), slice(m, 2 * m)),
        ])
    return list(itertools.product(*per_axis))


def mode_crop(x: Tensor, modes: tuple[int, ...]) -> Tensor:
    """Keep the lowest ``modes`` frequencies (both signs) per trailing axis.

    Output trailing axes have size 2*m each, packed (nonnegative block
    first, negative block second).
    """
    dims = x.shape[-len(modes):]
    combos = _corner_blocks(modes, dims)
    lead = x.shape[:-len(modes)]
    out = np.zeros(lead + tuple(2 * m for m in modes), dtype=np.complex128)
    head = (slice(None),) * len(lead)
    for combo in combos:
        full = head + tuple(c[0] for c in combo)
        packed = head + tuple(c[1] for c in combo)
        out[packed] = x.data[full]

    def bwd(g):
        gx = np.zeros(x.shape, dtype=np.complex128)
        for combo in combos:
            full = head + tuple(c[0] for c in combo)
            packed = head + tuple(c[1] for c in combo)
            gx[full] = g[packed]
        accumulate(x, gx)

    return make_node(out, (x,), bwd, "mode_crop")


def mode_pad(x: Tensor, dims: tuple[int, ...]) -> Tensor:
    """Inverse of mode_crop: scatter packed corner blocks onto a full grid."""
    modes = tuple(s // 2 for s in x.shape[-len(dims):])
    if any(2 * m != s for m, s in zip(modes, x.shape[-len(dims):])):
        raise ValueError(f"packed axes must be even, got {x.shape}")
    combos = _corner_blocks(modes, dims)
    lead = x.shape[:-len(dims)]
    out = np.zeros(lead + tuple(dims), dtype=np.complex128)
    head = (slice(None),) * len(lead)
    for combo in combos:
        full = head + tuple(c[0] for c in combo)
        packed = head + tuple(c[1] for c in combo)
        out[full] = x.data[packed]

    def bwd(g):
        gx = np.zeros(x.shape, dtype=np.complex128)
        for combo in combos:
            full = head + tuple(c[0] for c in combo)
            packed = head + tuple(c[1] for c in combo)
            gx[packed] = g[full]
        accumulate(x, gx)

    return make_node(out, (x,), bwd, "mode_pad")


# ---------------------------------------------------------------------------
# resampling

def resample2d(x: Tensor, wy: np.ndarray, wx: np.ndarray) -> Tensor:
    """Separable linear resampling of the last two axes.

    wy [P,H] and wx [Q,W] are constant matrices (not differentiated).
    """
    *lead, h, w = x.shape
    xr = x.data.reshape(-1, h, w)
    y = np.einsum("ph,nhw,qw->npq", wy, xr, wx, optimize=True)
    out_shape = tuple(lead) + (wy.shape[0], wx.shape[0])

    def bwd(g):
        gr = g.reshape(-1, wy.shape[0], wx.shape[0])
        gx = np.einsum("ph,npq,qw->nhw", wy, gr, wx, optimize=True)
        accumulate(x, gx.reshape(x.shape))

    return make_node(y.reshape(out_shape), (x,), bwd, "resample2d")


def _require_real(a: Tensor, op: str) -> None:
    if a.dtype.kind != "f":
        raise TypeError(f"{op} expects a real tensor, got {a.dtype}")
