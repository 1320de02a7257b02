"""Pseudo-spectral 2D incompressible flow on the unit torus.

Vorticity form: dw/dt + u . grad(w) = nu * Laplacian(w) + f, with the
velocity recovered from the stream function (u, v) =
(d psi / dy, -d psi / dx), psi solving -Laplacian(psi) = -w ... i.e.
psi_hat = w_hat / (4 pi^2 |k|^2). Time stepping is Heun (two-stage RK2)
for advection and forcing with Crank-Nicolson for diffusion; the
quadratic term is dealiased with the 2/3 rule and derivative multipliers
zero the unpaired Nyquist modes, which keeps the discrete mean of the
vorticity exactly conserved.

The state is batched: spectra are [S, H, W//2+1] so many trajectories
step together on one core.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datasets
from .training import NormStats


class BlowupError(RuntimeError):
    """A trajectory left the stable regime (amplitude or NaN check)."""


@dataclass(frozen=True)
class GRFConfig:
    """Gaussian random field for initial vorticity.

    Coefficient variance falls off as tau^(3/2) *
    (4 pi^2 |k|^2 + tau^2)^(-alpha); the mean mode is zeroed.
    """

    tau: float = 7.0
    alpha: float = 2.5

    def __post_init__(self):
        if self.tau <= 0 or self.alpha <= 0:
            raise ValueError(f"tau and alpha must be positive: {self}")


@dataclass(frozen=True)
class NSConfig:
    resolution: int = 64
    viscosity: float = 1e-4
    forcing_amplitude: float = 0.1
    record_steps: int = 50
    record_interval: float = 1.0
    dt_max: float = 1e-3
    cfl_safety: float = 0.5
    blowup_threshold: float = 1e6
    grf: GRFConfig = GRFConfig()

    def __post_init__(self):
        if self.resolution < 4 or self.resolution % 2:
            raise ValueError(f"resolution must be even and >= 4, got {self.resolution}")
        if self.viscosity < 0:
            raise ValueError(f"viscosity must be >= 0, got {self.viscosity}")
        if self.record_steps < 1 or self.record_interval <= 0:
            raise ValueError("need record_steps >= 1 and record_interval > 0")
        if self.dt_max <= 0 or not 0 < self.cfl_safety <= 1:
            raise ValueError("bad dt_max or cfl_safety")


class _Workspace:
    """Per-resolution spectral constants."""

    def __init__(self, n: int):
        self.n = n
        ky = np.fft.fftfreq(n, d=1.0 / n)
        kx = np.fft.rfftfreq(n, d=1.0 / n)
        self.ky = ky[:, None]
        self.kx = kx[None, :]
        # zero the unpaired Nyquist mode in odd-derivative multipliers
        ky_d = np.where(np.abs(ky) == n // 2, 0.0, ky)[:, None]
        kx_d = np.where(kx == n // 2, 0.0, kx)[None, :]
        self.ddy = 2j * np.pi * ky_d
        self.ddx = 2j * np.pi * kx_d
        self.lam = 4.0 * np.pi ** 2 * (self.kx ** 2 + self.ky ** 2)
        inv = np.zeros_like(self.lam)
        nonzero = self.lam > 0
        inv[nonzero] = 1.0 / self.lam[nonzero]
        self.inv_lap = inv
        # fused multipliers: w_hat -> (u_hat, v_hat, dw/dx_hat, dw/dy_hat)
        self.grad_mults = np.stack([
            self.ddy * inv,
            -self.ddx * inv,
            np.broadcast_to(self.ddx, self.lam.shape).copy(),
            np.broadcast_to(self.ddy, self.lam.shape).copy(),
        ])
        cutoff = n // 3
        self.dealias = ((np.abs(self.ky) <= cutoff)
                        & (np.abs(self.kx) <= cutoff)).astype(np.float64)


_WORKSPACES: dict[int, _Workspace] = {}


def _workspace(n: int) -> _Workspace:
    if n not in _WORKSPACES:
        _WORKSPACES[n] = _Workspace(n)
    return _WORKSPACES[n]


def sample_initial_vorticity(n: int, rng: np.random.Generator,
                             grf: GRFConfig = GRFConfig()) -> np.ndarray:
    """Draw one [n, n] vorticity field from the GRF prior."""
    ws = _workspace(n)
    k2 = ws.kx ** 2 + ws.ky ** 2
    scale = (np.sqrt(n * n) * grf.tau ** 0.75
             * (4.0 * np.pi ** 2 * k2 + grf.tau ** 2) ** (-grf.alpha / 2.0))
    scale[0, 0] = 0.0
    noise = rng.standard_normal((n, n))
    return np.fft.irfft2(np.fft.rfft2(noise) * scale, s=(n, n))


def forcing_field(n: int, amplitude: float = 0.1) -> np.ndarray:
    """f(x) = amplitude * (sin(2 pi (x1 + x2)) + cos(2 pi (x1 + x2)))."""
    coords = np.arange(n) / n
    phase = 2.0 * np.pi * (coords[:, None] + coords[None, :])
    return amplitude * (np.sin(phase) + np.cos(phase))


def velocity_from_vorticity(omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(u, v) on the grid from vorticity [..., H, W]; divergence-free."""
    n = omega.shape[-1]
    if omega.shape[-2] != n:
        raise ValueError(f"expected square fields, got {omega.shape}")
    ws = _workspace(n)
    w_hat = np.fft.rfft2(omega)
    psi_hat = w_hat * ws.inv_lap
    u = np.fft.irfft2(ws.ddy * psi_hat, s=(n, n))
    v = np.fft.irfft2(-ws.ddx * psi_hat, s=(n, n))
    return u, v


def kinetic_energy(omega: np.ndarray) -> float:
    u, v = velocity_from_vorticity(omega)
    return float(0.5 * np.mean(u * u + v * v))


def enstrophy(omega: np.ndarray) -> float:
    return float(0.5 * np.mean(np.asarray(omega) ** 2))


def _tendency(w_hat: np.ndarray, ws: _Workspace,
              f_hat: np.ndarray | float) -> np.ndarray:
    """Dealiased spectral tendency f - u . grad(w), excluding diffusion."""
    n = ws.n
    # one batched inverse transform for (u, v, dw/dx, dw/dy)
    stacked = ws.grad_mults[:, None] * w_hat[None] if w_hat.ndim == 3 \
        else ws.grad_mults * w_hat[None]
    fields = np.fft.irfft2(stacked, s=(n, n))
    adv_hat = np.fft.rfft2(fields[0] * fields[2] + fields[1] * fields[3])
    return f_hat - ws.dealias * adv_hat


def step(w_hat: np.ndarray, dt: float, nu: float, ws: _Workspace,
         f_hat: np.ndarray | float) -> np.ndarray:
    """One Heun/Crank-Nicolson step of batched spectra [S, H, W//2+1]."""
    half_visc = 0.5 * dt * nu * ws.lam
    denom = 1.0 + half_visc
    g0 = _tendency(w_hat, ws, f_hat)
    w1 = (w_hat + dt * g0 - half_visc * w_hat) / denom
    g1 = _tendency(w1, ws, f_hat)
    return (w_hat + 0.5 * dt * (g0 + g1) - half_visc * w_hat) / denom


def _max_speed(w_hat: np.ndarray, ws: _Workspace) -> np.ndarray:
    """Per-simulation max |velocity component| for the CFL bound."""
    n = ws.n
    psi_hat = w_hat * ws.inv_lap
    u = np.fft.irfft2(ws.ddy * psi_hat, s=(n, n))
    v = np.fft.irfft2(-ws.ddx * psi_hat, s=(n, n))
    flat_u = np.abs(u).reshape(u.shape[0], -1).max(axis=1)
    flat_v = np.abs(v).reshape(v.shape[0], -1).max(axis=1)
    return np.maximum(flat_u, flat_v)


def _substeps(w_hat: np.ndarray, cfg: NSConfig, ws: _Workspace) -> np.ndarray:
    """Per-simulation substep counts covering one record interval."""
    speed = np.maximum(_max_speed(w_hat, ws), 1e-12)
    dx = 1.0 / cfg.resolution
    dt_target = np.minimum(cfg.dt_max, cfg.cfl_safety * dx / speed)
    counts = np.maximum(np.ceil(cfg.record_interval / dt_target), 1)
    # non-finite trajectories get one step; the record check drops them
    return np.where(np.isfinite(counts), counts, 1).astype(int)


def simulate(omega0: np.ndarray, cfg: NSConfig) -> np.ndarray:
    """Integrate initial vorticity [S, n, n] (or [n, n]) and record
    ``record_steps`` frames at multiples of ``record_interval``.

    Returns [S, T, n, n] (or [T, n, n] for unbatched input). Raises
    BlowupError if any trajectory exceeds the amplitude threshold; use
    ``run_batch`` for drop-and-continue semantics.
    """
    single = omega0.ndim == 2
    batch = omega0[None] if single else omega0
    frames, dropped = run_batch(batch, cfg)
    if dropped:
        raise BlowupError(
            f"trajectories {sorted(dropped)} blew up "
            f"(|w| > {cfg.blowup_threshold:g} or non-finite)"
        )
    return frames[0] if single else frames


def run_batch(omega0: np.ndarray,
              cfg: NSConfig) -> tuple[np.ndarray, list[int]]:
    """Batched integration that drops unstable trajectories.

    Returns ([S, T, n, n] frames with dropped entries NaN-filled, list
    of dropped indices).
    """
    s, n, n2 = omega0.shape
    if n != n2 or n != cfg.resolution:
        raise ValueError(
            f"initial condition {omega0.shape} does not match "
            f"resolution {cfg.resolution}"
        )
    ws = _workspace(n)
    f_hat = np.fft.rfft2(forcing_field(n, cfg.forcing_amplitude)) \
        if cfg.forcing_amplitude != 0.0 else 0.0
    w_hat = np.fft.rfft2(omega0).astype(np.complex128)
    frames = np.full((s, cfg.record_steps, n, n), np.nan)
    active = np.arange(s)

    for r in range(cfg.record_steps):
        if active.size == 0:
            break
        counts = _substeps(w_hat[active], cfg, ws)
        for n_sub in np.unique(counts):
            group = active[counts == n_sub]
            dt = cfg.record_interval / n_sub
            block = w_hat[group]
            for _ in range(int(n_sub)):
                block = step(block, dt, cfg.viscosity, ws, f_hat)
            w_hat[group] = block
        omega = np.fft.irfft2(w_hat[active], s=(n, n))
        peak = np.abs(omega).reshape(active.size, -1).max(axis=1)
        bad = ~np.isfinite(peak) | (peak > cfg.blowup_threshold)
        good = active[~bad]
        frames[good, r] = omega[~bad]
        active = good
    dropped = sorted(set(range(s)) - set(active.tolist()))
    return frames, dropped


def generate_dataset(out_dir: str | Path, n_sims: int, base_seed: int,
                     cfg: NSConfig = NSConfig(),
                     ladder: tuple[int, ...] = (64, 32, 16),
                     ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
                     ) -> datasets.DatasetManifest:
    """Simulate ``n_sims`` trajectories (seed = base_seed + index) and
    write a dataset directory with the pooled resolution ladder.

    Blown-up trajectories are dropped and logged in the manifest.
    Normalization stats come from the training-split frames at base
    resolution.
    """
    if ladder[0] != cfg.resolution:
        raise datasets.DataError(
            f"ladder {ladder} must start at resolution {cfg.resolution}"
        )
    seeds = [base_seed + i for i in range(n_sims)]
    omega0 = np.stack([
        sample_initial_vorticity(cfg.resolution, np.random.default_rng(s),
                                 cfg.grf)
        for s in seeds
    ])
    frames, dropped = run_batch(omega0, cfg)
    kept = [i for i in range(n_sims) if i not in dropped]
    if not kept:
        raise BlowupError("every trajectory blew up; check the configuration")

    splits = datasets.assign_splits(len(kept), ratios, base_seed)
    train_frames = np.stack([frames[i] for i, sp in zip(kept, splits)
                             if sp == "train"])
    stats = NormStats.from_arrays(train_frames[:, None], channel_axis=1)

    manifest = datasets.DatasetManifest(
        source="ns-sim",
        channels=["vorticity"],
        base_resolution=cfg.resolution,
        ladder=list(ladder),
        boundary="periodic",
        norm_mean=list(stats.mean),
        norm_std=list(stats.std),
        extra={
            "viscosity": repr(cfg.viscosity),
            "forcing_amplitude": repr(cfg.forcing_amplitude),
            "record_steps": str(cfg.record_steps),
            "record_interval": repr(cfg.record_interval),
            "grf_tau": repr(cfg.grf.tau),
            "grf_alpha": repr(cfg.grf.alpha),
            "base_seed": str(base_seed),
            "n_requested": str(n_sims),
            "dropped_seeds": ",".join(str(base_seed + i) for i in dropped),
            "split_seed": str(base_seed),
            "split_ratios": ",".join(repr(float(r)) for r in ratios),
        },
    )
    writer = datasets.DatasetWriter(out_dir, manifest)
    width = max(len(str(max(n_sims - 1, 1))), 5)
    for pos, (i, split) in enumerate(zip(kept, splits)):
        rungs = datasets.pool_ladder(frames[i], cfg.resolution, list(ladder))
        writer.add_record(f"sim{i:0{width}d}", split, seeds[i], rungs)
    writer.finalize()
    return manifest
