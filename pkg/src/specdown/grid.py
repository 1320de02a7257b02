"""Uniform 2D grids on the unit square: transforms, resampling, gradients.

Fields are channel-first float64 arrays. The Fourier convention is the
unnormalized forward / 1/(HW) inverse pair with the real-input layout
(last axis holds W//2 + 1 nonnegative frequencies), so round trips are
exact to machine precision and Parseval reads sum|x|^2 = (1/HW) sum|X|^2
with the redundant half counted.

Resampling uses separable interpolation matrices under the pixel-center
convention: output sample p maps to source coordinate
(p + 0.5) * n_src / n_dst - 0.5. This is the convention under which
average-pooling a nearest-neighbour upsampled field returns the original
field exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

BOUNDARIES = ("periodic", "replicate")
RESAMPLE_MODES = ("nearest", "bilinear", "bicubic", "average-pool")

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


class GridError(ValueError):
    """Invalid grid data or an unsatisfiable grid operation."""


def _check_boundary(boundary: str) -> None:
    if boundary not in BOUNDARIES:
        raise GridError(f"unknown boundary {boundary!r}; expected one of {BOUNDARIES}")


@dataclass(frozen=True)
class Field:
    """A [C, H, W] snapshot sampled on a uniform grid."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise GridError(f"Field expects [C, H, W], got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise GridError(f"empty dimension in field shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SpatioTemporalField:
    """A [C, T, H, W] window of frames with a uniform time step."""

    data: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise GridError(f"expected [C, T, H, W], got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise GridError(f"empty dimension in shape {arr.shape}")
        if not self.dt > 0:
            raise GridError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "data", arr)

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    def frame(self, t: int) -> Field:
        return Field(self.data[:, t])


@dataclass(frozen=True)
class Spectrum:
    """Real-input Fourier coefficients, [C, H, W//2 + 1] complex."""

    coeffs: np.ndarray
    width: int  # spatial width W of the originating grid

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=np.complex128)
        if arr.ndim != 3:
            raise GridError(f"Spectrum expects [C, H, W//2+1], got {arr.shape}")
        if arr.shape[2] != self.width // 2 + 1:
            raise GridError(
                f"last axis {arr.shape[2]} does not match width {self.width}"
            )
        object.__setattr__(self, "coeffs", arr)

    @property
    def height(self) -> int:
        return self.coeffs.shape[1]

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer frequencies (ky[H], kx[W//2+1]) for each bin."""
        return wavenumbers(self.height, self.width)


def wavenumbers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer frequency grids for the real-input layout."""
    ky = np.fft.fftfreq(height, d=1.0 / height)
    kx = np.fft.rfftfreq(width, d=1.0 / width)
    return ky, kx


def fft2(field: Field) -> Spectrum:
    """Unnormalized forward transform of each channel."""
    return Spectrum(np.fft.rfft2(field.data, axes=(1, 2)), width=field.width)


def ifft2(spec: Spectrum) -> Field:
    """Inverse transform with the 1/(HW) factor; returns a real field."""
    data = np.fft.irfft2(spec.coeffs, s=(spec.height, spec.width), axes=(1, 2))
    return Field(data)


@dataclass(frozen=True)
class ResampleSpec:
    """How to change resolution: mode plus the intended scale factor."""

    mode: str
    factor: Fraction

    def __post_init__(self):
        if self.mode not in RESAMPLE_MODES:
            raise GridError(
                f"unknown resample mode {self.mode!r}; expected one of {RESAMPLE_MODES}"
            )
        factor = Fraction(self.factor)
        if factor <= 0:
            raise GridError(f"resample factor must be positive, got {factor}")
        if self.mode == "average-pool":
            if factor >= 1 and factor != 1:
                raise GridError("average-pool only reduces resolution (factor < 1)")
            if (1 / factor).denominator != 1:
                raise GridError(
                    f"average-pool needs an integer reciprocal factor, got {factor}"
                )
        elif factor < 1:
            raise GridError(
                f"{self.mode} interpolation does not reduce resolution "
                f"(factor {factor} < 1); use average-pool"
            )
        object.__setattr__(self, "factor", factor)


def _source_coords(n_src: int, n_dst: int) -> np.ndarray:
    p = np.arange(n_dst, dtype=np.float64)
    return (p + 0.5) * (n_src / n_dst) - 0.5


def _wrap_index(idx: np.ndarray, n: int, boundary: str) -> np.ndarray:
    if boundary == "periodic":
        return np.mod(idx, n)
    return np.clip(idx, 0, n - 1)


def _cubic_weight(s: np.ndarray) -> np.ndarray:
    # Catmull-Rom kernel, a = -0.5
    s = np.abs(s)
    out = np.zeros_like(s)
    near = s <= 1.0
    far = (s > 1.0) & (s < 2.0)
    out[near] = 1.5 * s[near] ** 3 - 2.5 * s[near] ** 2 + 1.0
    out[far] = -0.5 * s[far] ** 3 + 2.5 * s[far] ** 2 - 4.0 * s[far] + 2.0
    return out


@lru_cache(maxsize=256)
def interp_matrix(n_src: int, n_dst: int, mode: str, boundary: str) -> np.ndarray:
    """Dense [n_dst, n_src] one-axis interpolation matrix.

    Cached; treat the result as read-only. Exposed because model code
    composes these matrices directly (including for reductions that the
    public resample API rejects).
    """
    _check_boundary(boundary)
    if n_src < 1 or n_dst < 1:
        raise GridError(f"bad axis sizes {n_src} -> {n_dst}")
    x = _source_coords(n_src, n_dst)
    W = np.zeros((n_dst, n_src))
    rows = np.arange(n_dst)
    if mode == "nearest":
        idx = np.floor(x + 0.5).astype(np.int64)
        W[rows, _wrap_index(idx, n_src, boundary)] = 1.0
    elif mode == "bilinear":
        i0 = np.floor(x).astype(np.int64)
        t = x - i0
        for off, w in ((0, 1.0 - t), (1, t)):
            np.add.at(W, (rows, _wrap_index(i0 + off, n_src, boundary)), w)
    elif mode == "bicubic":
        i0 = np.floor(x).astype(np.int64)
        t = x - i0
        for off in (-1, 0, 1, 2):
            w = _cubic_weight(t - off)
            np.add.at(W, (rows, _wrap_index(i0 + off, n_src, boundary)), w)
    else:
        raise GridError(f"no interpolation matrix for mode {mode!r}")
    W.setflags(write=False)
    return W


@lru_cache(maxsize=256)
def pool_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Dense [n_dst, n_src] block-mean matrix; n_dst must divide n_src."""
    if n_src % n_dst != 0:
        raise GridError(f"pooling needs {n_dst} to divide {n_src}")
    k = n_src // n_dst
    W = np.zeros((n_dst, n_src))
    for p in range(n_dst):
        W[p, p * k:(p + 1) * k] = 1.0 / k
    W.setflags(write=False)
    return W


def _apply_separable(data: np.ndarray, wy: np.ndarray, wx: np.ndarray) -> np.ndarray:
    return np.einsum("ph,chw,qw->cpq", wy, data, wx, optimize=True)


def resample(field: Field, spec: ResampleSpec, *,
             boundary: str = "periodic") -> Field:
    """Change a field's resolution according to ``spec``.

    The target shape is factor * (H, W), which must come out integral.
    """
    _check_boundary(boundary)
    h, w = field.height, field.width
    th = Fraction(h) * spec.factor
    tw = Fraction(w) * spec.factor
    if th.denominator != 1 or tw.denominator != 1:
        raise GridError(
            f"factor {spec.factor} of {h}x{w} is not an integer grid"
        )
    th, tw = int(th), int(tw)
    if th < 1 or tw < 1:
        raise GridError(f"target {th}x{tw} is empty")
    if spec.mode == "average-pool":
        wy, wx = pool_matrix(h, th), pool_matrix(w, tw)
    else:
        wy = interp_matrix(h, th, spec.mode, boundary)
        wx = interp_matrix(w, tw, spec.mode, boundary)
    return Field(_apply_separable(field.data, wy, wx))


def average_pool(field: Field, factor: int) -> Field:
    """Block-mean reduction by an integer factor."""
    if factor < 1 or field.height % factor or field.width % factor:
        raise GridError(
            f"pool factor {factor} does not divide {field.height}x{field.width}"
        )
    return resample(field, ResampleSpec("average-pool", Fraction(1, factor)))


def _pad2(data: np.ndarray, boundary: str) -> np.ndarray:
    if boundary == "periodic":
        return np.pad(data, ((0, 0), (1, 1), (1, 1)), mode="wrap")
    return np.pad(data, ((0, 0), (1, 1), (1, 1)), mode="edge")


def sobel(field: Field, boundary: str = "periodic") -> Field:
    """Per-channel Sobel gradients, interleaved as (c0_gx, c0_gy, c1_gx, ...).

    Cross-correlation (no kernel flip): a left-to-right ramp has a
    positive x-gradient. Needs at least a 3x3 grid.
    """
    _check_boundary(boundary)
    if field.height < 3 or field.width < 3:
        raise GridError(
            f"sobel needs at least 3x3, got {field.height}x{field.width}"
        )
    padded = _pad2(field.data, boundary)
    c, h, w = field.data.shape
    out = np.zeros((2 * c, h, w))
    for dy in range(3):
        for dx in range(3):
            patch = padded[:, dy:dy + h, dx:dx + w]
            out[0::2] += SOBEL_X[dy, dx] * patch
            out[1::2] += SOBEL_Y[dy, dx] * patch
    return Field(out)
