"""Differentiable building blocks for the operator models.

Layers register their parameters in a shared ParamStore under dotted
names, take and return autodiff Tensors, and keep no implicit global
state. Each layer receives a numpy Generator at construction so model
initialization is a pure function of the seed.
"""
from __future__ import annotations

import numpy as np

from . import grid
from .autodiff import ParamStore, Tensor
from .autodiff import ops

UPSAMPLE_MODES = ("nearest", "bilinear", "bicubic")


def _resample_mats(n_in: tuple[int, int], n_out: tuple[int, int], mode: str,
                   boundary: str) -> tuple[np.ndarray, np.ndarray]:
    wy = grid.interp_matrix(n_in[0], n_out[0], mode, boundary)
    wx = grid.interp_matrix(n_in[1], n_out[1], mode, boundary)
    return wy, wx


def upsample(x: Tensor, target: tuple[int, int], mode: str = "bicubic",
             boundary: str = "periodic") -> Tensor:
    """Interpolate the last two axes up to ``target`` (works per frame
    for [B, C, T, H, W] inputs too)."""
    h, w = x.shape[-2:]
    if target[0] < h or target[1] < w:
        raise ValueError(f"upsample cannot reduce {h}x{w} to {target}")
    wy, wx = _resample_mats((h, w), target, mode, boundary)
    return ops.resample2d(x, wy, wx)


def average_pool_t(x: Tensor, factor: int) -> Tensor:
    """Differentiable block-mean pooling of the last two axes."""
    h, w = x.shape[-2:]
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"pool factor {factor} does not divide {h}x{w}")
    return ops.resample2d(x, grid.pool_matrix(h, h // factor),
                          grid.pool_matrix(w, w // factor))


def _pad_periodic_or_edge(x: Tensor, pad: int, boundary: str) -> Tensor:
    h, w = x.shape[-2:]
    idx_y = np.arange(-pad, h + pad)
    idx_x = np.arange(-pad, w + pad)
    if boundary == "periodic":
        idx_y, idx_x = np.mod(idx_y, h), np.mod(idx_x, w)
    elif boundary == "replicate":
        idx_y = np.clip(idx_y, 0, h - 1)
        idx_x = np.clip(idx_x, 0, w - 1)
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    return ops.gather2d(x, idx_y, idx_x)


_SOBEL_BANKS: dict[int, np.ndarray] = {}


def _sobel_bank(channels: int) -> np.ndarray:
    if channels not in _SOBEL_BANKS:
        bank = np.zeros((2 * channels, channels, 3, 3))
        for c in range(channels):
            bank[2 * c, c] = grid.SOBEL_X
            bank[2 * c + 1, c] = grid.SOBEL_Y
        _SOBEL_BANKS[channels] = bank
    return _SOBEL_BANKS[channels]


def sobel_features(x: Tensor, boundary: str = "periodic") -> Tensor:
    """Differentiable Sobel gradients of [B, C, H, W], interleaved as
    (c0_gx, c0_gy, c1_gx, ...); matches grid.sobel numerically."""
    channels = x.shape[1]
    padded = _pad_periodic_or_edge(x, 1, boundary)
    return ops.conv2d(padded, Tensor(_sobel_bank(channels)), padding="valid")


def _conv_init(rng: np.random.Generator, cout: int, cin: int,
               *kernel: int) -> tuple[np.ndarray, np.ndarray]:
    k = 1.0 / np.sqrt(cin * int(np.prod(kernel)) if kernel else cin)
    w = rng.uniform(-k, k, (cout, cin) + kernel)
    b = rng.uniform(-k, k, (cout,))
    return w, b


class Conv2d:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 kernel: int, rng: np.random.Generator, *,
                 stride: int = 1, padding: str = "same"):
        w, b = _conv_init(rng, cout, cin, kernel, kernel)
        self.w = store.param(f"{name}.w", w)
        self.b = store.param(f"{name}.b", b)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride,
                          padding=self.padding)


class ChannelLinear:
    """1x1(x1) convolution: pointwise channel mixing for any rank."""

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 rng: np.random.Generator, *, zero_init: bool = False):
        if zero_init:
            w, b = np.zeros((cout, cin)), np.zeros(cout)
        else:
            w, b = _conv_init(rng, cout, cin)
        self.w = store.param(f"{name}.w", w)
        self.b = store.param(f"{name}.b", b)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.channel_matmul(x, self.w, self.b)


class SpectralConv2d:
    """Fourier-space channel mixing on the lowest modes.

    Transforms, keeps ``modes`` = (my, mx) frequencies of both signs per
    axis, multiplies by complex weights [Ci, Co, 2my, 2mx], pads back and
    inverse-transforms. Weight magnitudes scale as 1/(Ci*Co). Grid dims
    must satisfy dim >= 2*modes (checked at call time).
    """

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 modes: tuple[int, int], rng: np.random.Generator):
        self.modes = tuple(int(m) for m in modes)
        scale = 1.0 / (cin * cout)
        shape = (cin, cout, 2 * self.modes[0], 2 * self.modes[1])
        self.w_re = store.param(f"{name}.w_re", scale * rng.random(shape))
        self.w_im = store.param(f"{name}.w_im", scale * rng.random(shape))

    def __call__(self, x: Tensor) -> Tensor:
        z = ops.fft2(x)
        zc = ops.mode_crop(z, self.modes)
        w = ops.complexify(self.w_re, self.w_im)
        y = ops.spec_matmul(zc, w)
        zp = ops.mode_pad(y, x.shape[-2:])
        return ops.real_part(ops.ifft2(zp))


class SpectralConv3d:
    """SpectralConv2d lifted to (T, H, W); modes = (mt, my, mx)."""

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 modes: tuple[int, int, int], rng: np.random.Generator):
        self.modes = tuple(int(m) for m in modes)
        scale = 1.0 / (cin * cout)
        shape = (cin, cout) + tuple(2 * m for m in self.modes)
        self.w_re = store.param(f"{name}.w_re", scale * rng.random(shape))
        self.w_im = store.param(f"{name}.w_im", scale * rng.random(shape))

    def __call__(self, x: Tensor) -> Tensor:
        z = ops.fft3(x)
        zc = ops.mode_crop(z, self.modes)
        w = ops.complexify(self.w_re, self.w_im)
        y = ops.spec_matmul(zc, w)
        zp = ops.mode_pad(y, x.shape[-3:])
        return ops.real_part(ops.ifft3(zp))


class FourierBlock2d:
    """Spectral conv plus pointwise linear path, GELU activation."""

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 modes: tuple[int, int], rng: np.random.Generator):
        self.spectral = SpectralConv2d(store, f"{name}.spec", cin, cout,
                                       modes, rng)
        self.pointwise = ChannelLinear(store, f"{name}.pw", cin, cout, rng)

    def __call__(self, x: Tensor, activate: bool = True) -> Tensor:
        y = ops.add(self.spectral(x), self.pointwise(x))
        return ops.gelu(y) if activate else y


class FourierBlock3d:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 modes: tuple[int, int, int], rng: np.random.Generator):
        self.spectral = SpectralConv3d(store, f"{name}.spec", cin, cout,
                                       modes, rng)
        self.pointwise = ChannelLinear(store, f"{name}.pw", cin, cout, rng)

    def __call__(self, x: Tensor, activate: bool = True) -> Tensor:
        y = ops.add(self.spectral(x), self.pointwise(x))
        return ops.gelu(y) if activate else y


class MetaUpsample:
    """Learned convex mixture of nearest/bilinear/bicubic upsampling.

    Mixture logits start at zero (uniform 1/3 weights) and are shared
    across channels; softmax keeps the combination convex.
    """

    def __init__(self, store: ParamStore, name: str):
        self.logits = store.param(f"{name}.logits",
                                  np.zeros(len(UPSAMPLE_MODES)))

    def weights(self) -> np.ndarray:
        e = np.exp(self.logits.data - self.logits.data.max())
        return e / e.sum()

    def __call__(self, x: Tensor, target: tuple[int, int],
                 boundary: str) -> Tensor:
        w = ops.softmax(self.logits, axis=0)
        total = None
        for k, mode in enumerate(UPSAMPLE_MODES):
            term = ops.mul(ops.index0(w, k), upsample(x, target, mode, boundary))
            total = term if total is None else ops.add(total, term)
        return total


class MultiscaleReconstruct:
    """Parallel 3/5/7 convolutions, concatenated, merged by 1x1 conv."""

    KERNELS = (3, 5, 7)

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 rng: np.random.Generator, boundary: str = "periodic"):
        self.boundary = boundary
        self.branches = []
        for k in self.KERNELS:
            w, b = _conv_init(rng, cin, cin, k, k)
            self.branches.append((
                store.param(f"{name}.k{k}.w", w),
                store.param(f"{name}.k{k}.b", b),
                k,
            ))
        self.merge = ChannelLinear(store, f"{name}.merge",
                                   cin * len(self.KERNELS), cout, rng)

    def __call__(self, x: Tensor) -> Tensor:
        outs = []
        for w, b, k in self.branches:
            padded = _pad_periodic_or_edge(x, k // 2, self.boundary)
            outs.append(ops.gelu(ops.conv2d(padded, w, b, padding="valid")))
        return self.merge(ops.concat(outs, axis=1))


def softmax_constraint(y_raw: Tensor, base: np.ndarray | Tensor) -> Tensor:
    """Redistribute y_raw so it pools exactly onto ``base``.

    y_raw is [B, C, N*H, N*W] and base [B, C, H, W]; each N x N block of
    the output is N^2 * base_value * softmax(block), making the block
    mean equal base_value identically. Non-divisible shapes are errors.
    """
    if isinstance(base, Tensor):
        base = base.data
    b, c, hh, ww = y_raw.shape
    bb, cb, h, w = base.shape
    if (bb, cb) != (b, c):
        raise ValueError(f"batch/channel mismatch: {y_raw.shape} vs {base.shape}")
    if hh % h or ww % w or hh // h != ww // w:
        raise ValueError(
            f"output {hh}x{ww} is not an integer multiple of base {h}x{w}"
        )
    n = hh // h
    blocks = ops.reshape(y_raw, (b, c, h, n, w, n))
    blocks = ops.transpose(blocks, (0, 1, 2, 4, 3, 5))
    flat = ops.reshape(blocks, (b, c, h, w, n * n))
    soft = ops.softmax(flat, axis=-1)
    scaled = ops.mul(soft, Tensor((n * n) * base[..., None]))
    back = ops.reshape(scaled, (b, c, h, w, n, n))
    back = ops.transpose(back, (0, 1, 2, 4, 3, 5))
    return ops.reshape(back, (b, c, hh, ww))


class DoubleConv:
    """(conv 3x3 -> batch norm -> ReLU) twice."""

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 rng: np.random.Generator):
        self.conv1 = Conv2d(store, f"{name}.conv1", cin, cout, 3, rng)
        self.conv2 = Conv2d(store, f"{name}.conv2", cout, cout, 3, rng)
        self.bn = []
        for i in (1, 2):
            gamma = store.param(f"{name}.bn{i}.gamma", np.ones(cout))
            beta = store.param(f"{name}.bn{i}.beta", np.zeros(cout))
            state = {
                "mean": store.buffer(f"{name}.bn{i}.running_mean",
                                     np.zeros(cout)),
                "var": store.buffer(f"{name}.bn{i}.running_var",
                                    np.ones(cout)),
            }
            self.bn.append((gamma, beta, state))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for conv, (gamma, beta, state) in zip((self.conv1, self.conv2),
                                              self.bn):
            x = ops.relu(ops.batch_norm(conv(x), gamma, beta, state,
                                        training=training))
        return x


class UNet:
    """Four-level encoder/decoder with skip connections.

    Encoder widths come from ``widths``; the bottleneck reuses the last
    width. 2x2 max pooling descends, 2x2 stride-2 transposed
    convolutions ascend, skips concatenate. Spatial dims must be
    divisible by 16.
    """

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 widths: tuple[int, int, int, int],
                 rng: np.random.Generator):
        if len(widths) != 4:
            raise ValueError(f"UNet needs 4 widths, got {widths}")
        self.encoders = []
        prev = cin
        for i, width in enumerate(widths):
            self.encoders.append(
                DoubleConv(store, f"{name}.enc{i}", prev, width, rng))
            prev = width
        self.middle = DoubleConv(store, f"{name}.mid", widths[3], widths[3],
                                 rng)
        self.ups = []
        self.decoders = []
        up_in = widths[3]
        for i, width in enumerate(reversed(widths)):
            # conv_transpose2d expects [Ci, Co, kh, kw]
            bound = 1.0 / np.sqrt(up_in * 4)
            self.ups.append((
                store.param(f"{name}.up{i}.w",
                            rng.uniform(-bound, bound, (up_in, width, 2, 2))),
                store.param(f"{name}.up{i}.b",
                            rng.uniform(-bound, bound, width)),
            ))
            self.decoders.append(
                DoubleConv(store, f"{name}.dec{i}", 2 * width, width, rng))
            up_in = width
        self.head = ChannelLinear(store, f"{name}.head", widths[0], cout, rng)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h, w = x.shape[-2:]
        if h % 16 or w % 16:
            raise ValueError(
                f"UNet input dims must be divisible by 16, got {h}x{w}"
            )
        skips = []
        for enc in self.encoders:
            x = enc(x, training)
            skips.append(x)
            x = ops.maxpool2(x)
        x = self.middle(x, training)
        for (uw, ub), dec, skip in zip(self.ups, self.decoders,
                                       reversed(skips)):
            x = ops.conv_transpose2d(x, uw, ub, stride=2)
            x = dec(ops.concat([skip, x], axis=1), training)
        return self.head(x)
