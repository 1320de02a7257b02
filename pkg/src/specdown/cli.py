"""Command line front end.

Subcommands: gen-ns, ingest, train, eval, predict, plot. Exit codes:
0 success, 1 usage, 2 data or I/O, 3 numeric failure. Errors print a
single JSON line on stderr so batch drivers can parse them.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datasets, gridfile, models, nssim, training
from .datasets import DataError
from .gridfile import GridFileError
from .models import CheckpointError, ModelSpec
from .nssim import BlowupError
from .training import NumericError, SplitArrays, TrainConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v != "")
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v != "")
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="specdown",
                     description="spectral solver, downscaling models, "
                                 "datasets, and evaluation")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-ns", parents=[], add_help=True,
                       help="simulate vorticity trajectories into a dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--sims", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--steps", type=int, default=50,
                   help="recorded frames per trajectory")
    p.add_argument("--interval", type=float, default=1.0,
                   help="time between recorded frames")
    p.add_argument("--viscosity", type=float, default=1e-4)
    p.add_argument("--forcing", type=float, default=0.1)
    p.add_argument("--dt-max", type=float, default=1e-3)
    p.add_argument("--ladder", type=_ints, default=(64, 32, 16))
    p.add_argument("--ratios", type=_floats, default=(0.7, 0.2, 0.1))
    p.set_defaults(func=cmd_gen_ns)

    p = sub.add_parser("ingest", help="tile a grid file into patches")
    p.add_argument("--input", required=True, help="GRD1 source, [C, H, W]")
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=128)
    p.add_argument("--stride", type=int, default=0,
                   help="0 means non-overlapping (= patch size)")
    p.add_argument("--ladder", type=_ints, default=(128, 64, 32, 16))
    p.add_argument("--ratios", type=_floats, default=(0.7, 0.2, 0.1))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--boundary", choices=("periodic", "replicate"),
                   default="replicate")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=models.VARIANTS)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss", choices=("l1", "l2"), default="l2")
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--modes", type=_ints, default=(),
                   help="my,mx or my,mx,mt (default per variant)")
    p.add_argument("--constraint", action="store_true",
                   help="pin block means of the output to the input")
    p.add_argument("--upsample", default="bicubic",
                   choices=("nearest", "bilinear", "bicubic", "meta"))
    p.add_argument("--boundary", choices=("periodic", "replicate"),
                   default="", help="default: taken from the dataset")
    p.add_argument("--input-res", type=int, default=0,
                   help="0 means the coarsest ladder rung")
    p.add_argument("--target", type=_ints, default=(),
                   help="output resolutions (default: finest rung)")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--window-stride", type=int, default=1)
    p.add_argument("--val-every", type=int, default=1)
    p.add_argument("--val-limit", type=int, default=0, help="0 = all")
    p.add_argument("--float32", action="store_true")
    p.add_argument("--log", default="", help="training curve CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--csv", required=True, help="output table")
    p.add_argument("--res", type=_ints, default=(),
                   help="resolutions to score (default: trained targets)")
    p.add_argument("--input-res", type=int, default=0)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--adapt", choices=("bicubic", "recursion", "pool"),
                   default="bicubic",
                   help="cross-factor method for CNN baselines")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--window-stride", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="run a checkpoint on one grid file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--target", type=int, required=True,
                   help="output resolution (square)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", help="training curves or prediction panels")
    p.add_argument("--kind", choices=("curves", "panels"), required=True)
    p.add_argument("--out", required=True, help="PNG path")
    p.add_argument("--log", default="", help="curves: training CSV")
    p.add_argument("--ckpt", default="")
    p.add_argument("--data", default="")
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--res", type=int, default=0)
    p.add_argument("--input-res", type=int, default=0)
    p.add_argument("--window", type=int, default=5)
    p.set_defaults(func=cmd_plot)

    return parser


def cmd_gen_ns(args) -> int:
    cfg = nssim.NSConfig(
        resolution=args.resolution,
        viscosity=args.viscosity,
        forcing_amplitude=args.forcing,
        record_steps=args.steps,
        record_interval=args.interval,
        dt_max=args.dt_max,
    )
    manifest = nssim.generate_dataset(args.out, args.sims, args.seed,
                                      cfg, ladder=args.ladder,
                                      ratios=args.ratios)
    counts = {s: sum(1 for r in manifest.records if r.split == s)
              for s in ("train", "val", "test")}
    print(f"wrote {len(manifest.records)} trajectories to {args.out} "
          f"(train={counts['train']} val={counts['val']} "
          f"test={counts['test']})")
    dropped = manifest.extra.get("dropped_seeds", "")
    if dropped:
        print(f"dropped blown-up seeds: {dropped}")
    return 0


def cmd_ingest(args) -> int:
    stride = args.stride or args.patch_size
    patch = datasets.PatchSpec(size=args.patch_size, stride=stride)
    manifest = datasets.ingest_grid(
        args.input, args.out, patch=patch, ladder=args.ladder,
        ratios=args.ratios, seed=args.seed, boundary=args.boundary)
    print(f"wrote {len(manifest.records)} patches to {args.out} "
          f"(dropped {manifest.extra.get('dropped_patches', '0')} with NaN)")
    return 0


def _resolve_grid_args(dataset: datasets.Dataset, input_res: int,
                       targets: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
    ladder = dataset.manifest.ladder
    if not input_res:
        input_res = min(ladder)
    if not targets:
        targets = (max(ladder),)
    bad = [r for r in (input_res, *targets) if r not in ladder]
    if bad:
        raise UsageError(f"resolutions {bad} not in dataset ladder {ladder}")
    return input_res, tuple(sorted(targets))


def _split_arrays(dataset: datasets.Dataset, temporal: bool, split: str,
                  input_res: int, targets: tuple[int, ...],
                  window: int, stride: int) -> SplitArrays:
    if temporal:
        x, y = dataset.temporal_windows(split, input_res, targets,
                                        window=window, stride=stride)
        return SplitArrays(x, y)
    ys = {}
    x = None
    for res in targets:
        x, ys[res] = dataset.static_pairs(split, input_res, res)
    return SplitArrays(x, ys)


def cmd_train(args) -> int:
    dataset = datasets.Dataset(args.data)
    input_res, targets = _resolve_grid_args(dataset, args.input_res,
                                            args.target)
    spec = ModelSpec(
        variant=args.model,
        in_channels=len(dataset.channels),
        width=args.width,
        blocks=args.blocks,
        modes=args.modes,
        upsample=args.upsample,
        constraint=args.constraint,
        boundary=args.boundary or dataset.manifest.boundary,
        window=args.window,
        seed=args.seed,
    )
    if spec.variant in ("cnn2", "cnn4"):
        if len(targets) != 1 or targets[0] != input_res * spec.factor:
            raise UsageError(
                f"{spec.variant} trains at factor {spec.factor}: target must "
                f"be {input_res * spec.factor} for input {input_res}"
            )
    model = models.build_model(spec)
    train_data = _split_arrays(dataset, spec.temporal, "train", input_res,
                               targets, args.window, args.window_stride)
    val_data = _split_arrays(dataset, spec.temporal, "val", input_res,
                             targets, args.window, args.window_stride)
    if not len(train_data):
        raise DataError("training split is empty")
    cfg = TrainConfig(
        lr=args.lr, epochs=args.epochs, batch_size=args.batch,
        loss=args.loss, seed=args.seed, val_every=args.val_every,
        val_limit=args.val_limit or None,
        precision="float32" if args.float32 else "float64",
    )
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    result = training.train(model, train_data,
                            val_data if len(val_data) else None,
                            dataset.stats(), cfg, ckpt_path=args.out,
                            log_path=log_path)
    print(f"trained {spec.variant} for {cfg.epochs} epochs on "
          f"{len(train_data)} samples ({input_res} -> {targets}); "
          f"best val mse {result.best_val_mse:.6g} "
          f"at epoch {result.best_epoch}")
    print(f"checkpoint: {args.out}")
    print(f"log: {log_path}")
    return 0


def _predictor_for(model, adapt: str):
    if isinstance(model, models.CNNBaseline):
        return models.FactorAdapted(model, adapt)
    return model


def cmd_eval(args) -> int:
    model = models.load_checkpoint(args.ckpt)
    dataset = datasets.Dataset(args.data)
    input_res, targets = _resolve_grid_args(dataset, args.input_res, args.res)
    spec = model.spec
    window = spec.window if spec.temporal else args.window
    test_data = _split_arrays(dataset, spec.temporal, "test", input_res,
                              targets, window, args.window_stride)
    if not len(test_data):
        raise DataError("test split is empty")
    peaks = dataset.peaks()
    rows = training.evaluate(_predictor_for(model, args.adapt),
                             spec.variant, model.loss_tag, test_data,
                             peaks, targets, batch_size=args.batch)
    rows += training.evaluate(models.BicubicBaseline(spec.boundary),
                              "bicubic", "", test_data, peaks, targets,
                              batch_size=args.batch)
    peak_text = ",".join(repr(float(p)) for p in np.atleast_1d(peaks))
    comments = [
        f"dataset: {args.data} (source {dataset.source}), "
        f"input resolution {input_res}, test samples {len(test_data)}",
        f"mae/mse in the physical units of channels "
        f"{','.join(dataset.channels)}; psnr in dB with "
        f"peak(s) {peak_text}; ssim dimensionless",
    ]
    training.write_eval_csv(args.csv, rows, comments)
    for row in rows:
        print(f"{row.model:14s} res={row.resolution:4d} mae={row.mae:.6g} "
              f"mse={row.mse:.6g} psnr={row.psnr:.4g} ssim={row.ssim:.4g}")
    print(f"table: {args.csv}")
    return 0


def cmd_predict(args) -> int:
    model = models.load_checkpoint(args.ckpt)
    arr, names = gridfile.read_grd(args.input)
    rank = 5 if model.spec.temporal else 4
    if arr.ndim != rank - 1:
        kind = "[C, T, H, W]" if model.spec.temporal else "[C, H, W]"
        raise DataError(f"{args.input}: expected {kind}, got {arr.shape}")
    out = model.predict(arr.astype(np.float64), args.target)[0]
    gridfile.write_grd(args.out, out, names=tuple(names))
    print(f"wrote {args.out} shape {tuple(out.shape)}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if args.kind == "curves":
        if not args.log:
            raise UsageError("plot --kind curves needs --log")
        history = training.read_train_log(args.log)
        if not history:
            raise DataError(f"{args.log}: empty training log")
        epochs = [row["epoch"] for row in history]
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        axes[0].plot(epochs, [row["train_loss"] for row in history])
        axes[0].set_xlabel("epoch")
        axes[0].set_ylabel("train loss")
        axes[0].set_yscale("log")
        val = [(row["epoch"], row["val_mse"]) for row in history
               if row.get("val_mse") is not None]
        if val:
            axes[1].plot(*zip(*val))
            axes[1].set_xlabel("epoch")
            axes[1].set_ylabel("val mse")
            axes[1].set_yscale("log")
        fig.tight_layout()
        fig.savefig(args.out, dpi=120)
        plt.close(fig)
        print(f"wrote {args.out}")
        return 0

    if not (args.ckpt and args.data and args.res):
        raise UsageError("plot --kind panels needs --ckpt, --data, --res")
    model = models.load_checkpoint(args.ckpt)
    dataset = datasets.Dataset(args.data)
    input_res, targets = _resolve_grid_args(dataset, args.input_res,
                                            (args.res,))
    res = targets[0]
    spec = model.spec
    window = spec.window if spec.temporal else args.window
    data = _split_arrays(dataset, spec.temporal, args.split, input_res,
                         targets, window, window)
    if args.index >= len(data):
        raise DataError(f"split {args.split!r} has only {len(data)} samples")
    x = data.x[args.index:args.index + 1]
    truth = data.y[res][args.index]
    pred = _predictor_for(model, "bicubic").predict(x, res)[0]
    naive = models.BicubicBaseline(spec.boundary).predict(x, res)[0]

    def first_frame(a: np.ndarray) -> np.ndarray:
        return a.reshape(-1, *a.shape[-2:])[0]

    panels = [
        (f"input {input_res}", first_frame(x[0])),
        ("bicubic", first_frame(naive)),
        (spec.variant, first_frame(pred)),
        (f"truth {res}", first_frame(truth)),
    ]
    lo = min(p.min() for _, p in panels[1:])
    hi = max(p.max() for _, p in panels[1:])
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
    for ax, (title, img) in zip(axes, panels):
        im = ax.imshow(img, vmin=lo, vmax=hi, cmap="RdBu_r")
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes, shrink=0.8)
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


def _fail(code: int, exc: BaseException) -> int:
    line = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(line), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return 1
        return args.func(args)
    except UsageError as exc:
        return _fail(1, exc)
    except ValueError as exc:
        return _fail(1, exc)
    except (DataError, GridFileError, CheckpointError, OSError) as exc:
        return _fail(2, exc)
    except (NumericError, BlowupError) as exc:
        return _fail(3, exc)


if __name__ == "__main__":
    sys.exit(main())
