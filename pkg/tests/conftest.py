"""Shared oracles: slow, obviously-correct reference implementations
that the fast code is tested against, plus a finite-difference
gradient checker.
"""
from __future__ import annotations

import numpy as np
import pytest

from specdown.autodiff import Tensor, backward

GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-8


def fd_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one coordinate at
    a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2 * eps)
    return g


def check_grads(build, inputs: list[np.ndarray], eps: float = 1e-6,
                rtol: float = GRAD_RTOL, atol: float = GRAD_ATOL,
                max_coords: int = 64, seed: int = 0) -> float:
    """Compare reverse-mode gradients of ``build(*tensors) -> scalar``
    against central differences.

    For large inputs only a random subset of coordinates is probed.
    Returns the worst relative error seen.
    """
    tensors = [Tensor(np.array(x, dtype=np.float64)) for x in inputs]
    loss = build(*tensors)
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, (t, x0) in enumerate(zip(tensors, inputs)):
        assert t.grad is not None, f"input {k} got no gradient"
        ad = t.grad.reshape(-1)
        x0 = np.array(x0, dtype=np.float64)
        coords = np.arange(x0.size)
        if x0.size > max_coords:
            coords = rng.choice(x0.size, size=max_coords, replace=False)
        for i in coords:
            def f(v, i=i, k=k):
                probes = [np.array(x, dtype=np.float64) for x in inputs]
                probes[k].reshape(-1)[i] = v
                fresh = [Tensor(p) for p in probes]
                return float(build(*fresh).data)
            orig = x0.reshape(-1)[i]
            fd = (f(orig + eps) - f(orig - eps)) / (2 * eps)
            err = abs(ad[i] - fd)
            tol = rtol * max(abs(ad[i]), abs(fd)) + atol
            assert err <= tol, (
                f"input {k} coord {i}: ad={ad[i]:.10g} fd={fd:.10g} "
                f"err={err:.3g} > tol={tol:.3g}"
            )
            scale = max(abs(ad[i]), abs(fd), 1e-12)
            worst = max(worst, err / scale)
    return worst


def dft_matrix(n: int, inverse: bool = False) -> np.ndarray:
    """Dense unnormalized DFT matrix (inverse carries the 1/n)."""
    k = np.arange(n)
    sign = 2j if inverse else -2j
    mat = np.exp(sign * np.pi * np.outer(k, k) / n)
    return mat / n if inverse else mat


def brute_dftn(a: np.ndarray, axes: tuple[int, ...],
               inverse: bool = False) -> np.ndarray:
    """O(N^2)-per-axis DFT by explicit matrix application."""
    out = np.asarray(a, dtype=np.complex128)
    for ax in axes:
        mat = dft_matrix(out.shape[ax], inverse)
        out = np.moveaxis(np.tensordot(mat, np.moveaxis(out, ax, 0),
                                       axes=(1, 0)), 0, ax)
    return out


def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                 stride: int = 1, padding: str = "same") -> np.ndarray:
    """Direct-loop 2D convolution oracle (cross-correlation, like the
    fast path)."""
    bsz, cin, h, ww = x.shape
    cout, _, kh, kw = w.shape
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        x = np.pad(x, ((0, 0), (0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw)))
    hh = (x.shape[2] - kh) // stride + 1
    wo = (x.shape[3] - kw) // stride + 1
    out = np.zeros((bsz, cout, hh, wo))
    for n in range(bsz):
        for o in range(cout):
            for i in range(hh):
                for j in range(wo):
                    patch = x[n, :, i * stride:i * stride + kh,
                              j * stride:j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


def naive_ssim(a: np.ndarray, b: np.ndarray, data_range: float,
               window: int = 11, sigma: float = 1.5,
               k1: float = 0.01, k2: float = 0.03) -> float:
    """Per-pixel SSIM with Gaussian windows clipped at the border and
    renormalized to unit mass; plain loops."""
    h, w = a.shape
    half = window // 2
    ax = np.arange(window) - half
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    kern = np.outer(g, g)
    kern /= kern.sum()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    total = 0.0
    for i in range(h):
        for j in range(w):
            y0, y1 = max(0, i - half), min(h, i + half + 1)
            x0, x1 = max(0, j - half), min(w, j + half + 1)
            kwin = kern[y0 - i + half:y1 - i + half,
                        x0 - j + half:x1 - j + half]
            kwin = kwin / kwin.sum()
            pa = a[y0:y1, x0:x1]
            pb = b[y0:y1, x0:x1]
            mu_a = np.sum(kwin * pa)
            mu_b = np.sum(kwin * pb)
            var_a = np.sum(kwin * pa * pa) - mu_a ** 2
            var_b = np.sum(kwin * pb * pb) - mu_b ** 2
            cov = np.sum(kwin * pa * pb) - mu_a * mu_b
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
                (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return total / (h * w)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
