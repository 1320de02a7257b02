"""Numbered acceptance checks, one test per criterion.

Exact oracles where the math allows it (solver invariants, gradients,
constraint layer, metrics) and scaled-down directional training runs
for the learned models. Each test appends a PASS/FAIL line to the
terminal summary so the whole gate is readable at a glance.
"""
from __future__ import annotations

import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, naive_ssim
from specdown import cli, datasets, gridfile, metrics, nssim, training
from specdown.autodiff import Tensor, backward, ops
from specdown.autodiff.optim import adam_step
from specdown import layers
from specdown.models import (BicubicBaseline, ModelSpec, UpscaledPrediction,
                             VARIANTS, build_model)
from specdown.nssim import GRFConfig, NSConfig
from specdown.training import SplitArrays, TrainConfig


def _record(num: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(
        f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {num}: {detail}"


# ---------------------------------------------------------------- 1

def test_criterion_1_taylor_green_decay():
    n, nu = 64, 1e-2
    coords = (np.arange(n) + 0.5) / n
    x, y = np.meshgrid(coords, coords, indexing="xy")
    omega0 = np.sin(2*np.pi*x) * np.sin(2*np.pi*y)
    cfg = NSConfig(resolution=n, viscosity=nu, forcing_amplitude=0.0,
                   record_steps=1, record_interval=1.0, dt_max=1e-3)
    t0 = time.perf_counter()
    frames = nssim.simulate(omega0, cfg)
    elapsed = time.perf_counter() - t0
    analytic = omega0 * np.exp(-8*np.pi**2*nu*1.0)
    rel = np.linalg.norm(frames[0] - analytic) / np.linalg.norm(analytic)
    _record(1, rel <= 1e-4 and elapsed < 10.0,
            f"taylor-green decay rel L2 {rel:.2e} (tol 1e-4), {elapsed:.1f}s")


# ---------------------------------------------------------------- 2

def test_criterion_2_divergence_free_velocity():
    rng = np.random.default_rng(0)
    omega = np.stack([nssim.sample_initial_vorticity(64, rng)
                      for _ in range(100)])
    u, v = nssim.velocity_from_vorticity(omega)
    ky = np.fft.fftfreq(64, 1/64)[:, None]
    kx = np.fft.rfftfreq(64, 1/64)[None, :]
    # same discrete calculus as the solver: the unpaired Nyquist line has
    # no odd-derivative partner, so it carries no derivative
    ddx = 2j*np.pi*np.where(np.abs(kx) == 32, 0, kx)
    ddy = 2j*np.pi*np.where(np.abs(ky) == 32, 0, ky)
    div = np.fft.irfft2(ddx*np.fft.rfft2(u) + ddy*np.fft.rfft2(v),
                        s=(64, 64))
    worst = float(np.abs(div).max())
    _record(2, worst <= 1e-10,
            f"max divergence {worst:.2e} over 100 random fields (tol 1e-10)")


# ---------------------------------------------------------------- 3

def test_criterion_3_inviscid_invariants():
    rng = np.random.default_rng(1)
    omega0 = nssim.sample_initial_vorticity(64, rng)
    # band-limit the start field so the dealiased cascade cannot reach
    # the truncation boundary within the measured horizon
    w_hat = np.fft.rfft2(omega0)
    ky = np.fft.fftfreq(64, 1/64)[:, None]
    kx = np.fft.rfftfreq(64, 1/64)[None, :]
    w_hat[np.sqrt(kx**2 + ky**2) > 5] = 0
    omega0 = np.fft.irfft2(w_hat, s=(64, 64))
    cfg = NSConfig(resolution=64, viscosity=0.0, forcing_amplitude=0.0,
                   record_steps=100, record_interval=1e-3, dt_max=1e-3)
    frames = nssim.simulate(omega0, cfg)
    e0, z0 = nssim.kinetic_energy(omega0), nssim.enstrophy(omega0)
    e_drift = max(abs(nssim.kinetic_energy(f) - e0) / e0 for f in frames)
    z_drift = max(abs(nssim.enstrophy(f) - z0) / z0 for f in frames)
    worst = max(e_drift, z_drift)
    _record(3, worst <= 1e-6,
            f"energy drift {e_drift:.2e}, enstrophy drift {z_drift:.2e} "
            f"over 100 inviscid steps (tol 1e-6)")


# ---------------------------------------------------------------- 4

def _fd_check(name: str, build, inputs, max_coords=16, eps=1e-6,
              rtol=1e-4, atol=1e-8) -> float:
    """Reverse-mode vs central differences on a coordinate sample;
    returns the worst relative error."""
    tensors = [Tensor(np.array(v, dtype=np.float64)) for v in inputs]
    loss = build(*tensors)
    backward(loss)
    rng = np.random.default_rng(5)
    worst = 0.0
    for k, t in enumerate(tensors):
        assert t.grad is not None, f"{name}: input {k} got no gradient"
        ad = t.grad.reshape(-1)
        coords = np.arange(t.size)
        if t.size > max_coords:
            coords = rng.choice(t.size, size=max_coords, replace=False)
        for i in coords:
            def probe(v):
                fresh = [Tensor(np.array(a, dtype=np.float64))
                         for a in inputs]
                fresh[k].data.reshape(-1)[i] = v
                return float(build(*fresh).data)
            base = np.array(inputs[k], dtype=np.float64).reshape(-1)[i]
            fd = (probe(base + eps) - probe(base - eps)) / (2 * eps)
            err = abs(ad[i] - fd)
            scale = max(abs(ad[i]), abs(fd))
            assert err <= rtol * scale + atol, (
                f"{name} input {k} coord {i}: ad={ad[i]:.8g} fd={fd:.8g}")
            worst = max(worst, err / max(scale, 1e-12))
    return worst


def _sq_mean(t):
    return ops.mean(ops.square(t))


def _cabs2_mean(z):
    re = ops.real_part(z)
    im = ops.real_part(ops.mul(z, Tensor(np.array(-1j))))
    return ops.mean(ops.add(ops.square(re), ops.square(im)))


def _primitive_cases(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    x4 = rng.standard_normal((2, 3, 6, 6))
    w4 = rng.standard_normal((4, 3, 3, 3)) * 0.5
    bias = rng.standard_normal(4) * 0.1
    x5 = rng.standard_normal((2, 2, 4, 6, 6))
    w5 = rng.standard_normal((3, 2, 2, 3, 3)) * 0.5
    wc = rng.standard_normal((5, 3)) * 0.5
    spec_x = rng.standard_normal((2, 3, 4, 4))
    spec_wr = rng.standard_normal((3, 5, 4, 4)) * 0.3
    spec_wi = rng.standard_normal((3, 5, 4, 4)) * 0.3
    iy = np.array([0, 2, 2, 1])
    ix = np.array([1, 0, 3, 3])
    gamma, beta = np.ones(3), np.zeros(3)
    wy = np.abs(rng.standard_normal((8, 4))) + 0.1
    wx = np.abs(rng.standard_normal((8, 4))) + 0.1
    base = rng.standard_normal((1, 2, 3, 3))

    def bn(x):
        state = {"mean": np.zeros(3), "var": np.ones(3)}
        return _sq_mean(ops.batch_norm(x, Tensor(gamma), Tensor(beta),
                                       state, training=True))

    def spectral(x, wr, wi):
        f = ops.fft2(ops.complexify(x, ops.neg(x)))
        w = ops.complexify(wr, wi)
        return _cabs2_mean(ops.spec_matmul(ops.mode_crop(f, (2, 2)), w))

    return [
        ("add", lambda p, q: _sq_mean(ops.add(p, q)), [a, b]),
        ("sub", lambda p, q: _sq_mean(ops.sub(p, q)), [a, b]),
        ("neg", lambda p: _sq_mean(ops.neg(p)), [a]),
        ("mul broadcast", lambda p, q: _sq_mean(ops.mul(p, q)),
         [a, rng.standard_normal(4)]),
        ("square", lambda p: ops.mean(ops.square(p)), [a]),
        ("absolute", lambda p: ops.mean(ops.absolute(p)), [a + 3.0]),
        ("relu", lambda p: _sq_mean(ops.relu(p)), [a + 0.2]),
        ("gelu", lambda p: _sq_mean(ops.gelu(p)), [a]),
        ("mean", lambda p: ops.mean(p), [a]),
        ("softmax", lambda p: _sq_mean(ops.softmax(p, axis=-1)), [a]),
        ("reshape", lambda p: _sq_mean(ops.reshape(p, (4, 3))), [a]),
        ("transpose", lambda p: _sq_mean(ops.transpose(p, (1, 0))), [a]),
        ("concat", lambda p, q: _sq_mean(ops.concat([p, q], axis=1)),
         [a, b]),
        ("index0", lambda p: ops.square(ops.index0(p, 1)),
         [rng.standard_normal(5)]),
        ("gather2d", lambda p: _sq_mean(ops.gather2d(p, iy, ix)),
         [rng.standard_normal((4, 4))]),
        ("channel_matmul", lambda p, w: _sq_mean(ops.channel_matmul(p, w)),
         [x4, wc]),
        ("conv2d", lambda p, w, c: _sq_mean(
            ops.conv2d(p, w, c, padding="same")), [x4, w4, bias]),
        ("conv2d stride", lambda p, w: _sq_mean(
            ops.conv2d(p, w, padding="valid", stride=2)), [x4, w4]),
        ("conv3d", lambda p, w: _sq_mean(ops.conv3d(p, w, padding="same")),
         [x5, w5]),
        ("conv_transpose2d", lambda p, w: _sq_mean(
            ops.conv_transpose2d(p, w, stride=2)),
         [x4, rng.standard_normal((3, 5, 2, 2)) * 0.5]),
        ("maxpool2", lambda p: _sq_mean(ops.maxpool2(p)), [x4]),
        ("batch_norm", bn, [x4]),
        ("fft2/ifft2", lambda p: _cabs2_mean(
            ops.ifft2(ops.fft2(ops.complexify(p, p)))), [a]),
        ("fft3/ifft3", lambda p: _cabs2_mean(
            ops.ifft3(ops.fft3(ops.complexify(p, ops.neg(p))))),
         [rng.standard_normal((2, 3, 4, 4))]),
        ("real/complexify", lambda p, q: _sq_mean(
            ops.real_part(ops.complexify(p, q))), [a, b]),
        ("mode crop/pad + spec_matmul", spectral, [spec_x, spec_wr,
                                                   spec_wi]),
        ("mode_pad", lambda p: _cabs2_mean(ops.mode_pad(
            ops.mode_crop(ops.fft2(ops.complexify(p, p)), (2, 2)),
            (6, 6))), [x4[0]]),
        ("resample2d", lambda p: _sq_mean(ops.resample2d(p, wy, wx)),
         [x4[:, :, :4, :4]]),
        ("upsample bicubic", lambda p: _sq_mean(
            layers.upsample(p, (12, 12))), [x4]),
        ("average_pool_t", lambda p: _sq_mean(layers.average_pool_t(p, 2)),
         [x4]),
        ("sobel_features", lambda p: _sq_mean(layers.sobel_features(p)),
         [x4]),
        ("softmax_constraint", lambda p: _sq_mean(
            layers.softmax_constraint(p, base)),
         [rng.standard_normal((1, 2, 6, 6))]),
    ]


def _variant_fd_config(variant: str):
    rng = np.random.default_rng(11)
    if variant in ("temp_dfno", "temp_specdfno"):
        spec = ModelSpec(variant, in_channels=1, width=4, blocks=1,
                         modes=(3, 3, 1), window=3, seed=3)
        x = rng.standard_normal((2, 1, 3, 8, 8))
        y = {16: rng.standard_normal((2, 1, 3, 16, 16))}
    elif variant == "cnn2":
        spec = ModelSpec(variant, in_channels=1, width=4, blocks=1,
                         unet_widths=(4, 8, 16, 32), seed=3)
        x = rng.standard_normal((2, 1, 16, 16))
        y = {32: rng.standard_normal((2, 1, 32, 32))}
    elif variant == "cnn4":
        spec = ModelSpec(variant, in_channels=1, width=4, blocks=1,
                         unet_widths=(4, 8, 16, 32), seed=3)
        x = rng.standard_normal((2, 1, 8, 8))
        y = {32: rng.standard_normal((2, 1, 32, 32))}
    else:
        spec = ModelSpec(variant, in_channels=1, width=4, blocks=1,
                         modes=(3, 3), seed=3)
        x = rng.standard_normal((2, 1, 8, 8))
        y = {16: rng.standard_normal((2, 1, 16, 16))}
    return spec, x, y


def _check_variant_grads(variant: str, coords_per_param=4, eps=1e-5):
    spec, x, y = _variant_fd_config(variant)
    model = build_model(spec)
    targets = tuple(sorted(y))

    def loss_value():
        outs = model.forward(x, targets, training=True)
        terms = [ops.mean(ops.square(ops.sub(outs[r], Tensor(y[r]))))
                 for r in targets]
        total = terms[0]
        for t in terms[1:]:
            total = ops.add(total, t)
        return total

    loss = loss_value()
    backward(loss)
    rng = np.random.default_rng(17)
    for name, param in model.store.items():
        assert param.grad is not None, f"{variant}: no grad for {name}"
        flat_g = param.grad.reshape(-1)
        flat_p = param.data.reshape(-1)
        coords = np.arange(flat_p.size)
        if flat_p.size > coords_per_param:
            coords = rng.choice(flat_p.size, size=coords_per_param,
                                replace=False)
        for i in coords:
            orig = flat_p[i]
            # retry with a smaller step when a probe straddles a
            # maxpool/relu kink; a real gradient bug fails at every step
            for trial_eps in (eps, eps / 10, eps / 100):
                flat_p[i] = orig + trial_eps
                hi = float(loss_value().data)
                flat_p[i] = orig - trial_eps
                lo = float(loss_value().data)
                flat_p[i] = orig
                fd = (hi - lo) / (2 * trial_eps)
                err = abs(flat_g[i] - fd)
                scale = max(abs(flat_g[i]), abs(fd))
                if err <= 1e-4 * scale + 1e-8:
                    break
            else:
                raise AssertionError(
                    f"{variant} {name}[{i}]: ad={flat_g[i]:.8g} "
                    f"fd={fd:.8g}")


def test_criterion_4_gradient_gate():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    cases = _primitive_cases(rng)
    for name, build, inputs in cases:
        _fd_check(name, build, inputs)
    for variant in VARIANTS:
        _check_variant_grads(variant)
    elapsed = time.perf_counter() - t0
    _record(4, elapsed < 120.0,
            f"{len(cases)} primitives + {len(VARIANTS)} model variants "
            f"match finite differences (rel 1e-4), {elapsed:.0f}s")


# ---------------------------------------------------------------- 5

def test_criterion_5_constraint_exactness():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        factor = int(rng.choice([2, 4, 8]))
        m = int(rng.integers(1, 4))
        c = int(rng.integers(1, 3))
        base = rng.standard_normal((1, c, m, m))
        y_raw = rng.standard_normal((1, c, factor*m, factor*m)) * 3.0
        out = layers.softmax_constraint(Tensor(y_raw), base).data
        pooled = out.reshape(1, c, m, factor, m, factor).mean(axis=(3, 5))
        worst = max(worst, float(np.abs(pooled - base).max()))
    _record(5, worst <= 1e-6,
            f"pooled constraint output matches the coarse field to "
            f"{worst:.2e} over 1000 cases (tol 1e-6)")


# ---------------------------------------------------------------- 6

def test_criterion_6_metric_oracles():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        a = rng.random((8, 8))
        b = rng.random((8, 8))
        worst = max(worst, abs(metrics.ssim(a, b, data_range=1.0)
                               - naive_ssim(a, b, 1.0)))
    x = rng.random((16, 16))
    noise = rng.standard_normal((16, 16))
    peak = float(x.max() - x.min())
    values = [metrics.psnr(x + e*noise, x, peak) for e in (0.01, 0.02, 0.04)]
    monotone = values[0] > values[1] > values[2]
    _record(6, worst <= 1e-6 and monotone,
            f"ssim vs brute force {worst:.2e} over 50 pairs (tol 1e-6); "
            f"psnr strictly decreasing {[round(v, 2) for v in values]}")


# ---------------------------------------------------------------- 7

@pytest.fixture(scope="module")
def forecast_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept-sim") / "ds"
    cfg = NSConfig(resolution=64, record_steps=18, record_interval=1.0)
    nssim.generate_dataset(out, n_sims=100, base_seed=0, cfg=cfg,
                           ladder=(64, 32, 16), ratios=(0.7, 0.2, 0.1))
    return out


def test_criterion_7_zero_shot_temporal(forecast_dataset):
    t0 = time.perf_counter()
    ds = datasets.Dataset(forecast_dataset)
    window = 5
    xt, yt = ds.temporal_windows("train", 16, (16, 32), window=window)
    xv, yv = ds.temporal_windows("val", 16, (16, 32), window=window)
    model = build_model(ModelSpec("temp_dfno", in_channels=1, width=10,
                                  blocks=3, modes=(6, 6, 2), window=window,
                                  seed=0))
    cfg = TrainConfig(lr=2e-3, epochs=50, batch_size=16, seed=0,
                      val_every=5, val_limit=32)
    training.train(model, SplitArrays(xt, yt), SplitArrays(xv, yv),
                   ds.stats(), cfg)

    xe, ye = ds.temporal_windows("test", 16, (64,), window=window,
                                 stride=window)
    pred = training.predict_in_batches(model, xe, 64, batch_size=4)
    baseline = UpscaledPrediction(model, base_res=16, boundary="periodic")
    up = training.predict_in_batches(baseline, xe, 64, batch_size=4)
    m_model = metrics.mse(pred, ye[64])
    m_up = metrics.mse(up, ye[64])
    elapsed = time.perf_counter() - t0
    ok = (pred.shape == ye[64].shape and pred.shape[-3:] == (window, 64, 64)
          and np.all(np.isfinite(pred)) and m_model <= 1.5 * m_up
          and elapsed <= 3600.0)
    _record(7, ok,
            f"zero-shot 64x64x{window} forecast finite, mse {m_model:.4g} "
            f"vs 1.5x upsampled-prediction bound {1.5*m_up:.4g}, "
            f"{elapsed/60:.0f} min")


# ---------------------------------------------------------------- 8

@pytest.fixture(scope="module")
def current_patch_dataset(tmp_path_factory):
    """100 patches of a synthetic divergence-free current field with an
    energetic mesoscale ring, pooled down a 4-rung ladder."""
    root = tmp_path_factory.mktemp("accept-static")
    n, tau, alpha = 3840, 7.0, 2.5
    ring_k, ring_amp, ring_sig = 6.0, 14.0, 1.5
    rng = np.random.default_rng(0)
    ky = np.fft.fftfreq(n, 1/n)[:, None]
    kx = np.fft.rfftfreq(n, 1/n)[None, :]
    k2 = kx**2 + ky**2
    scale = n * tau**0.75 * (4*np.pi**2*k2 + tau**2)**(-alpha/2)
    kp = np.sqrt(k2) / (n / 128)
    scale *= 1 + ring_amp*np.exp(-(kp - ring_k)**2 / (2*ring_sig**2))
    scale[0, 0] = 0
    psi_hat = np.fft.rfft2(rng.standard_normal((n, n))) * scale
    u = np.fft.irfft2(2j*np.pi*ky*psi_hat, s=(n, n))
    v = np.fft.irfft2(-2j*np.pi*kx*psi_hat, s=(n, n))
    src = root / "currents.grd"
    gridfile.write_grd(src, np.stack([u, v]), names=("u", "v"))
    out = root / "ds"
    datasets.ingest_grid(src, out, patch=datasets.PatchSpec(128, 384),
                         ladder=(128, 64, 32, 16), ratios=(0.7, 0.2, 0.1),
                         seed=0)
    return out


def _train_static(variant: str, ds: datasets.Dataset, splits) -> float:
    (xt, yt), (xv, yv), (xe, ye) = splits
    model = build_model(ModelSpec(variant, in_channels=2, width=12,
                                  blocks=3, modes=(10, 10), seed=0))
    cfg = TrainConfig(lr=2e-3, epochs=150, batch_size=8, seed=0,
                      val_every=15)
    training.train(model, SplitArrays(xt, {32: yt}),
                   SplitArrays(xv, {32: yv}), ds.stats(), cfg)
    pred = training.predict_in_batches(model, xe, 32)
    return metrics.mse(pred, ye)


def test_criterion_8_downscaling_beats_bicubic(current_patch_dataset):
    ds = datasets.Dataset(current_patch_dataset)
    splits = [ds.static_pairs(s, 16, 32) for s in ("train", "val", "test")]
    xe, ye = splits[2]
    m_bicubic = metrics.mse(BicubicBaseline("replicate").predict(xe, 32), ye)
    m_dfno = _train_static("dfno", ds, splits)
    gain = 100 * (1 - m_dfno / m_bicubic)

    # soft report only: the full-scale table has the gradient variants in
    # front at 2x, desk-scale runs are logged but not gated
    m_meta = _train_static("metagrad", ds, splits)
    m_multi = _train_static("multigrad", ds, splits)
    order = sorted([("metagrad", m_meta), ("multigrad", m_multi),
                    ("dfno", m_dfno)], key=lambda kv: kv[1])
    ACCEPTANCE_LINES.append(
        "criterion  8 note  2x mse order " +
        " < ".join(f"{k} {v:.4g}" for k, v in order) +
        f"; gradient variants in front: "
        f"{order[-1][0] == 'dfno'} (soft, not gated)")
    _record(8, gain >= 20.0,
            f"dfno mse {m_dfno:.4g} vs bicubic {m_bicubic:.4g} at 2x, "
            f"{gain:.0f}% better (gate 20%)")


# ---------------------------------------------------------------- 9

def _smooth_fields(rng, shape):
    """Low-pass filtered noise; easy to memorize, hard to wire wrong."""
    noise = rng.standard_normal(shape)
    h, w = shape[-2:]
    ky = np.fft.fftfreq(h, 1/h)[:, None]
    kx = np.fft.rfftfreq(w, 1/w)[None, :]
    filt = np.exp(-0.06 * (ky**2 + kx**2))
    return np.fft.irfft2(np.fft.rfft2(noise) * filt, s=(h, w))


def _pool2(y, factor):
    h, w = y.shape[-2:]
    return y.reshape(*y.shape[:-2], h//factor, factor,
                     w//factor, factor).mean(axis=(-3, -1))


def _overfit_case(variant: str):
    rng = np.random.default_rng(0)
    if variant in ("temp_dfno", "temp_specdfno"):
        y = _smooth_fields(rng, (4, 1, 5, 16, 16))
        spec = ModelSpec(variant, in_channels=1, width=8, blocks=2,
                         modes=(3, 3, 2), window=5, seed=1)
        return spec, _pool2(y, 2), {16: y}, 5e-3
    if variant == "cnn2":
        y = _smooth_fields(rng, (4, 1, 32, 32))
        spec = ModelSpec(variant, in_channels=1,
                         unet_widths=(8, 16, 32, 64), seed=1)
        return spec, _pool2(y, 2), {32: y}, 1e-3
    if variant == "cnn4":
        y = _smooth_fields(rng, (4, 1, 64, 64))
        spec = ModelSpec(variant, in_channels=1,
                         unet_widths=(8, 16, 32, 64), seed=1)
        return spec, _pool2(y, 4), {64: y}, 1e-3
    y = _smooth_fields(rng, (4, 1, 16, 16))
    spec = ModelSpec(variant, in_channels=1, width=8, blocks=2,
                     modes=(3, 3), seed=1)
    return spec, _pool2(y, 2), {16: y}, 6e-3


def test_criterion_9_overfit_gate():
    steps_used = {}
    for variant in VARIANTS:
        spec, x, y, lr = _overfit_case(variant)
        model = build_model(spec)
        targets = tuple(sorted(y))
        for step in range(1, 501):
            outs = model.forward(x, targets, training=True)
            loss = ops.mean(ops.square(ops.sub(outs[targets[0]],
                                               Tensor(y[targets[0]]))))
            if float(loss.data) < 1e-3:
                steps_used[variant] = step - 1
                break
            model.store.zero_grad()
            backward(loss)
            adam_step(model.store, lr=lr)
        else:
            steps_used[variant] = 501
    slowest = max(steps_used, key=steps_used.get)
    ok = all(s <= 500 for s in steps_used.values())
    _record(9, ok,
            f"all {len(VARIANTS)} variants reach train mse < 1e-3 on 4 "
            f"samples, slowest {slowest} at {steps_used[slowest]} steps "
            f"(cap 500)")


# ---------------------------------------------------------------- 10

def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_criterion_10_determinism(tmp_path):
    # each command runs twice with the same arguments; only gen-ns gets a
    # fresh output directory because it refuses to overwrite
    gen_digests = []
    for run in ("a", "b"):
        data = tmp_path / f"data-{run}"
        assert cli.main(["gen-ns", "--out", str(data), "--sims", "6",
                         "--seed", "0", "--resolution", "16",
                         "--steps", "6", "--interval", "0.5",
                         "--ladder", "16,8"]) == 0
        gen_digests.append(_tree_digest(data))

    data = tmp_path / "data-a"
    ckpt_digests, csv_digests = [], []
    for _ in range(2):
        ckpt = tmp_path / "model.grck"
        assert cli.main(["train", "--data", str(data), "--model",
                         "temp_dfno", "--out", str(ckpt), "--epochs", "2",
                         "--lr", "1e-3", "--batch", "4", "--seed", "0",
                         "--width", "4", "--blocks", "1",
                         "--modes", "3,3,1", "--window", "3"]) == 0
        ckpt_digests.append(hashlib.sha256(ckpt.read_bytes()).hexdigest())
        csv = tmp_path / "eval.csv"
        assert cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                         "--csv", str(csv), "--res", "16",
                         "--input-res", "8", "--window", "3",
                         "--window-stride", "3"]) == 0
        csv_digests.append(hashlib.sha256(csv.read_bytes()).hexdigest())
    ok = (gen_digests[0] == gen_digests[1]
          and ckpt_digests[0] == ckpt_digests[1]
          and csv_digests[0] == csv_digests[1])
    _record(10, ok,
            "gen-ns, train and eval artifacts byte-identical across "
            "two seeded runs")
