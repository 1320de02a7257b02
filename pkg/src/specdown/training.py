"""Training loop and evaluation harness.

Normalization is per-channel Z-scoring with statistics from the training
split only; metrics are reported on denormalized (physical) fields.
Model selection is by validation MSE. A non-finite training loss aborts
with NumericError rather than writing a poisoned checkpoint.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .autodiff import adam_step, backward, no_grad


class NumericError(RuntimeError):
    """Training or prediction produced non-finite values."""


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError(f"bad stats shapes {mean.shape}, {std.shape}")
        if np.any(std <= 0) or not np.all(np.isfinite(std)):
            raise ValueError(f"std must be positive and finite, got {std}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_arrays(cls, arr: np.ndarray, channel_axis: int = 1) -> "NormStats":
        arr = np.asarray(arr, dtype=np.float64)
        moved = np.moveaxis(arr, channel_axis, 0)
        flat = moved.reshape(moved.shape[0], -1)
        return cls(flat.mean(axis=1), flat.std(axis=1))

    def _bc(self, x: np.ndarray, channel_axis: int) -> tuple:
        shape = [1] * x.ndim
        shape[channel_axis] = self.mean.size
        return self.mean.reshape(shape), self.std.reshape(shape)

    def normalize(self, x: np.ndarray, channel_axis: int = 1) -> np.ndarray:
        m, s = self._bc(np.asarray(x), channel_axis)
        return (x - m) / s

    def denormalize(self, x: np.ndarray, channel_axis: int = 1) -> np.ndarray:
        m, s = self._bc(np.asarray(x), channel_axis)
        return x * s + m


@dataclass
class SplitArrays:
    """One split's samples: inputs plus targets per resolution.

    Static tasks: x [N, C, h, w], y[res] [N, C, res, res].
    Temporal tasks: x [N, C, T, h, w], y[res] [N, C, T, res, res].
    """

    x: np.ndarray
    y: dict[int, np.ndarray]

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 600
    batch_size: int = 16
    loss: str = "l2"
    seed: int = 0
    val_every: int = 1
    val_limit: int | None = None
    res_weights: dict[int, float] = field(default_factory=dict)
    precision: str = "float64"

    def __post_init__(self):
        if self.loss not in metrics.LOSSES:
            raise ValueError(f"loss must be one of {sorted(metrics.LOSSES)}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"unknown precision {self.precision!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class EvalRow:
    model: str
    loss: str
    resolution: int
    mae: float
    mse: float
    psnr: float
    ssim: float
    n: int


EVAL_COLUMNS = ("model", "loss", "resolution", "mae", "mse", "psnr", "ssim", "n")


def write_eval_csv(path: str | Path, rows: list[EvalRow],
                   comments: list[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(EVAL_COLUMNS)
        for r in rows:
            writer.writerow([r.model, r.loss, r.resolution,
                             repr(r.mae), repr(r.mse), repr(r.psnr),
                             repr(r.ssim), r.n])


def read_eval_csv(path: str | Path) -> list[EvalRow]:
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for rec in csv.DictReader(lines):
        rows.append(EvalRow(rec["model"], rec["loss"], int(rec["resolution"]),
                            float(rec["mae"]), float(rec["mse"]),
                            float(rec["psnr"]), float(rec["ssim"]),
                            int(rec["n"])))
    return rows


@dataclass
class TrainResult:
    history: list[dict]
    best_val_mse: float
    best_epoch: int


def _loss_over_targets(model, xb: np.ndarray, yb: dict[int, np.ndarray],
                       cfg: TrainConfig):
    """Forward pass plus the (possibly multi-resolution) training loss."""
    loss_fn = metrics.LOSSES[cfg.loss]
    outputs = model.forward(xb, tuple(sorted(yb)), training=True)
    total = None
    for res in sorted(yb):
        term = loss_fn(outputs[res], yb[res])
        weight = cfg.res_weights.get(res, 1.0)
        if weight != 1.0:
            term = term * weight
        total = term if total is None else total + term
    return total


def train(model, train_data: SplitArrays, val_data: SplitArrays | None,
          stats: NormStats, cfg: TrainConfig,
          ckpt_path: str | Path | None = None,
          log_path: str | Path | None = None) -> TrainResult:
    """Adam training with per-epoch seeded shuffling.

    Inputs arrive in physical units and are normalized here; the best
    (validation MSE) model state is kept and written to ``ckpt_path``.
    """
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    model.norm = stats
    model.loss_tag = cfg.loss
    if cfg.precision == "float32":
        for _, p in model.store.items():
            p.data = p.data.astype(np.float32)

    xn = stats.normalize(train_data.x).astype(dtype)
    yn = {res: stats.normalize(y).astype(dtype)
          for res, y in train_data.y.items()}
    n = len(train_data)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best = (np.inf, -1)
    best_state: dict[str, np.ndarray] | None = None

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = xn[idx]
            yb = {res: y[idx] for res, y in yn.items()}
            model.store.zero_grad()
            loss = _loss_over_targets(model, xb, yb, cfg)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}"
                )
            backward(loss)
            adam_step(model.store, lr=cfg.lr)
            epoch_losses.append(value)

        row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
        run_val = (val_data is not None and len(val_data) > 0
                   and ((epoch + 1) % cfg.val_every == 0
                        or epoch == cfg.epochs - 1))
        if run_val:
            val_metrics = _validate(model, val_data, stats, cfg)
            row.update(val_metrics)
            if val_metrics["val_mse"] < best[0]:
                best = (val_metrics["val_mse"], epoch)
                best_state = {name: p.data.copy()
                              for name, p in model.store.items()}
        history.append(row)

    if best_state is not None:
        for name, p in model.store.items():
            p.data = best_state[name]
    else:
        best = (history[-1]["train_loss"], cfg.epochs - 1)

    if ckpt_path is not None:
        model.save(ckpt_path)
    if log_path is not None:
        _write_train_log(log_path, history)
    return TrainResult(history, best[0], best[1])


def _validate(model, val_data: SplitArrays, stats: NormStats,
              cfg: TrainConfig) -> dict[str, float]:
    limit = cfg.val_limit or len(val_data)
    res_list = tuple(sorted(val_data.y))
    finest = res_list[-1]
    x = val_data.x[:limit]
    truth = val_data.y[finest][:limit]
    pred = predict_in_batches(model, x, finest, cfg.batch_size)
    peak = truth.reshape(-1).max() - truth.reshape(-1).min()
    return {
        "val_mae": metrics.mae(pred, truth),
        "val_mse": metrics.mse(pred, truth),
        "val_psnr": metrics.psnr(pred, truth, max(peak, 1e-12)),
        "val_ssim": float(np.mean([
            metrics.ssim(_frames(pred[i]), _frames(truth[i]))
            for i in range(min(len(x), 8))
        ])),
    }


def _frames(sample: np.ndarray) -> np.ndarray:
    """Collapse [C, H, W] or [C, T, H, W] to stacked [C*, H, W] frames."""
    return sample.reshape(-1, *sample.shape[-2:])


def _write_train_log(path: str | Path, history: list[dict]) -> None:
    columns = ["epoch", "train_loss", "val_mae", "val_mse", "val_psnr",
               "val_ssim"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in history:
            writer.writerow([row.get(c, "") for c in columns])


def read_train_log(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append({k: (float(v) if v not in ("", None) and k != "epoch"
                             else (int(v) if k == "epoch" and v != "" else None))
                         for k, v in rec.items()})
    return rows


def predict_in_batches(predictor, x: np.ndarray, target_res: int,
                       batch_size: int = 8) -> np.ndarray:
    """Physical-units prediction in memory-bounded chunks."""
    outs = []
    with no_grad():
        for start in range(0, x.shape[0], batch_size):
            outs.append(predictor.predict(x[start:start + batch_size],
                                          target_res))
    return np.concatenate(outs, axis=0)


def evaluate(predictor, model_tag: str, loss_tag: str,
             test_data: SplitArrays, peaks: np.ndarray,
             resolutions: tuple[int, ...],
             batch_size: int = 8) -> list[EvalRow]:
    """Metric rows (denormalized units) for each requested resolution.

    ``peaks`` is the per-channel PSNR dynamic range fixed by the
    dataset; SSIM uses the same ranges.
    """
    rows = []
    for res in resolutions:
        if res not in test_data.y:
            raise KeyError(f"test split has no targets at resolution {res}")
        truth = test_data.y[res]
        pred = predict_in_batches(predictor, test_data.x, res, batch_size)
        if not np.all(np.isfinite(pred)):
            raise NumericError(
                f"{model_tag} produced non-finite predictions at {res}"
            )
        n = truth.shape[0]
        psnr_vals = [metrics.psnr(_frames(pred[i]), _frames(truth[i]),
                                  _tile_peaks(peaks, pred[i]))
                     for i in range(n)]
        ssim_vals = [metrics.ssim(_frames(pred[i]), _frames(truth[i]),
                                  _tile_peaks(peaks, pred[i]))
                     for i in range(n)]
        rows.append(EvalRow(
            model=model_tag, loss=loss_tag, resolution=res,
            mae=metrics.mae(pred, truth), mse=metrics.mse(pred, truth),
            psnr=float(np.mean(psnr_vals)), ssim=float(np.mean(ssim_vals)),
            n=n))
    return rows


def _tile_peaks(peaks: np.ndarray, sample: np.ndarray) -> np.ndarray:
    """Repeat per-channel peaks across flattened frame stacks."""
    peaks = np.atleast_1d(peaks)
    frames = int(np.prod(sample.shape[:-2]))
    reps = frames // peaks.size
    return np.repeat(peaks, reps) if reps > 1 else peaks
