"""Error metrics.

mae/mse accept either numpy arrays (returning floats) or autodiff
Tensors (returning a scalar Tensor in the graph), so the same functions
serve as training losses and evaluation columns.

SSIM uses an 11x11 Gaussian window (sigma 1.5, K1 0.01, K2 0.03) with
renormalized clipped windows: near borders the window is restricted to
valid pixels and its mass rescaled to one, so fields as small as the
window itself are handled without reflection tricks. PSNR uses an
explicit peak (dynamic range); a zero-MSE pair maps to +inf.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _is_tensor(*args) -> bool:
    return any(isinstance(a, Tensor) for a in args)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def mae(pred, target):
    """Mean absolute error over all elements."""
    if _is_tensor(pred, target):
        return ops.mean(ops.absolute(ops.sub(_as_tensor(pred), _as_tensor(target))))
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


def mse(pred, target):
    """Mean squared error over all elements."""
    if _is_tensor(pred, target):
        return ops.mean(ops.square(ops.sub(_as_tensor(pred), _as_tensor(target))))
    return float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))


LOSSES = {"l1": mae, "l2": mse}


def psnr(pred: np.ndarray, target: np.ndarray, peak) -> float:
    """Peak signal-to-noise ratio in dB, averaged over channels.

    ``peak`` is the dynamic range, scalar or per-channel [C] matching
    axis 0 of [C, ...] inputs. Zero per-channel MSE gives +inf.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    peak_arr = np.atleast_1d(np.asarray(peak, dtype=np.float64))
    if np.any(peak_arr <= 0):
        raise ValueError(f"peak must be positive, got {peak}")
    if peak_arr.size == 1:
        err = np.mean((pred - target) ** 2)
        if err == 0.0:
            return float("inf")
        return float(10.0 * np.log10(peak_arr[0] ** 2 / err))
    if peak_arr.size != pred.shape[0]:
        raise ValueError(
            f"{peak_arr.size} peak values for {pred.shape[0]} channels"
        )
    values = []
    for c in range(pred.shape[0]):
        err = np.mean((pred[c] - target[c]) ** 2)
        values.append(np.inf if err == 0.0
                      else 10.0 * np.log10(peak_arr[c] ** 2 / err))
    return float(np.mean(values))


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    g = np.exp(-0.5 * (np.arange(SSIM_WINDOW) - half) ** 2 / SSIM_SIGMA ** 2)
    g /= g.sum()
    return np.outer(g, g)


_WINDOW_2D = _gaussian_window()


def _window_means(x: np.ndarray, norm: np.ndarray) -> np.ndarray:
    """Clipped-window weighted means at every position of [H, W]."""
    half = SSIM_WINDOW // 2
    xp = np.pad(x, half)
    wins = np.lib.stride_tricks.sliding_window_view(
        xp, (SSIM_WINDOW, SSIM_WINDOW))
    return np.einsum("hwyx,yx->hw", wins, _WINDOW_2D, optimize=True) / norm


def _ssim_channel(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    h, w = a.shape
    half = SSIM_WINDOW // 2
    ones = np.pad(np.ones((h, w)), half)
    wins = np.lib.stride_tricks.sliding_window_view(
        ones, (SSIM_WINDOW, SSIM_WINDOW))
    norm = np.einsum("hwyx,yx->hw", wins, _WINDOW_2D, optimize=True)

    mu_a = _window_means(a, norm)
    mu_b = _window_means(b, norm)
    var_a = _window_means(a * a, norm) - mu_a ** 2
    var_b = _window_means(b * b, norm) - mu_b ** 2
    cov = _window_means(a * b, norm) - mu_a * mu_b

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(pred: np.ndarray, target: np.ndarray, data_range=None) -> float:
    """Structural similarity, averaged per channel then over channels.

    Inputs are [H, W] or [C, H, W]. ``data_range`` is scalar or
    per-channel; by default the per-channel range of ``target`` (floored
    at 1e-12 so identical constant fields still compare equal).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    if pred.ndim != 3:
        raise ValueError(f"ssim expects [C, H, W], got {pred.shape}")
    c = pred.shape[0]
    if data_range is None:
        ranges = np.maximum(
            target.reshape(c, -1).max(axis=1) - target.reshape(c, -1).min(axis=1),
            1e-12)
    else:
        ranges = np.broadcast_to(
            np.atleast_1d(np.asarray(data_range, dtype=np.float64)), (c,))
        if np.any(ranges <= 0):
            raise ValueError(f"data_range must be positive, got {data_range}")
    return float(np.mean([
        _ssim_channel(pred[i], target[i], ranges[i]) for i in range(c)
    ]))
