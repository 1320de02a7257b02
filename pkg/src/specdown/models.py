"""Model zoo: resolution-agnostic downscaling operators, spatio-temporal
surrogates, CNN baselines, plus checkpoint serialization.

Stable variant tags:

    dfno           spectral operator on an upsampled embedding
    specdfno       dfno plus a zero-initialized spectral residual stack
    metagrad       dfno with Sobel features and a learned mixture upsampler
    multigrad      dfno with Sobel features and multiscale reconstruction
    temp_dfno      space-time spectral operator over frame windows
    temp_specdfno  temp_dfno plus the residual stack
    cnn2, cnn4     bicubic upsample followed by a U-Net, fixed factor

All non-CNN variants accept any output resolution at least as fine as
the input (zero-shot in resolution); CNNs are factor-bound and reach
other factors through cross_factor_adapter.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import gridfile, layers
from .autodiff import ParamStore, Tensor, no_grad
from .autodiff import ops
from .training import NormStats

VARIANTS = ("dfno", "specdfno", "metagrad", "multigrad",
            "temp_dfno", "temp_specdfno", "cnn2", "cnn4")
TEMPORAL_VARIANTS = ("temp_dfno", "temp_specdfno")

CKPT_MAGIC = b"GRCK"
CKPT_VERSION = 1


class CheckpointError(Exception):
    """Malformed or incompatible checkpoint data."""


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild a model deterministically."""

    variant: str
    in_channels: int = 1
    out_channels: int = 0          # 0 -> same as in_channels
    width: int = 32
    blocks: int = 4
    modes: tuple[int, ...] = ()    # () -> (12, 12) or (8, 8, 2) as (y, x, t)
    residual_blocks: int = 2
    upsample: str = "bicubic"
    preprocess: str = "none"
    constraint: bool = False
    boundary: str = "periodic"
    window: int = 5
    unet_widths: tuple[int, int, int, int] = (64, 128, 256, 512)
    factor: int = 0                # 0 -> implied by cnn variant
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        fixes: dict = {}
        if self.out_channels == 0:
            fixes["out_channels"] = self.in_channels
        if not self.modes:
            fixes["modes"] = (8, 8, 2) if self.temporal else (12, 12)
        else:
            fixes["modes"] = tuple(int(m) for m in self.modes)
        # feature-defined variants pin their own switches
        if self.variant == "metagrad":
            fixes["upsample"] = "meta"
            fixes["preprocess"] = "sobel"
        elif self.variant == "multigrad":
            fixes["preprocess"] = "sobel"
        if self.variant == "cnn2" and self.factor == 0:
            fixes["factor"] = 2
        if self.variant == "cnn4" and self.factor == 0:
            fixes["factor"] = 4
        fixes["unet_widths"] = tuple(self.unet_widths)
        for key, value in fixes.items():
            object.__setattr__(self, key, value)
        if self.upsample not in layers.UPSAMPLE_MODES + ("meta",):
            raise ValueError(f"unknown upsample {self.upsample!r}")
        if self.preprocess not in ("none", "sobel"):
            raise ValueError(f"unknown preprocess {self.preprocess!r}")
        if self.boundary not in ("periodic", "replicate"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        n_modes = len(self.modes)
        if self.temporal and n_modes != 3:
            raise ValueError(
                f"temporal variants need modes (my, mx, mt), got {self.modes}"
            )
        if self.variant in ("dfno", "specdfno", "metagrad", "multigrad") \
                and n_modes != 2:
            raise ValueError(f"2D variants need modes (my, mx), got {self.modes}")

    @property
    def temporal(self) -> bool:
        return self.variant in TEMPORAL_VARIANTS

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        kwargs = dict(data)
        for key in ("modes", "unet_widths"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _coord_channels(shape: tuple[int, ...]) -> np.ndarray:
    """Normalized pixel-center coordinates: (x, y) or (x, y, t) channels."""
    if len(shape) == 2:
        h, w = shape
        ys = (np.arange(h) + 0.5) / h
        xs = (np.arange(w) + 0.5) / w
        return np.stack([
            np.broadcast_to(xs[None, :], (h, w)),
            np.broadcast_to(ys[:, None], (h, w)),
        ])
    t, h, w = shape
    base = _coord_channels((h, w))
    coords = np.broadcast_to(base[:, None], (2, t, h, w))
    ts = np.broadcast_to(((np.arange(t) + 0.5) / t)[None, :, None, None],
                         (1, t, h, w))
    return np.concatenate([coords, ts], axis=0)


class BaseModel:
    """Shared plumbing: parameter store, normalization, persistence."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.store = ParamStore()
        self.norm: NormStats | None = None
        self.loss_tag: str = ""
        self._rng = np.random.default_rng(spec.seed)

    # subclasses: forward(x, targets, training) -> {res: Tensor}

    def predict(self, x: np.ndarray, target_res: int) -> np.ndarray:
        """Physical units in, physical units out."""
        norm = self.norm or NormStats(np.zeros(self.spec.in_channels),
                                      np.ones(self.spec.in_channels))
        xn = norm.normalize(np.asarray(x, dtype=np.float64))
        with no_grad():
            out = self.forward(xn, (int(target_res),), training=False)
        return norm.denormalize(out[int(target_res)].data)

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self)

    def _batched(self, x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == rank - 1:
            return x[None], True
        if x.ndim != rank:
            raise ValueError(f"expected rank {rank} input, got shape {x.shape}")
        return x, False


class DownscaleOperator(BaseModel):
    """dfno / specdfno / metagrad / multigrad."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        rng = self._rng
        width = spec.width
        cin_eff = spec.in_channels * (3 if spec.preprocess == "sobel" else 1)
        modes_yx = (spec.modes[0], spec.modes[1])
        self.embed = layers.Conv2d(self.store, "embed", cin_eff, width, 3,
                                   rng, padding="valid")
        if spec.upsample == "meta":
            self.upsampler = layers.MetaUpsample(self.store, "upsample")
        else:
            self.upsampler = None
        self.mix = layers.ChannelLinear(self.store, "mix", width + 2, width,
                                        rng)
        self.blocks = [
            layers.FourierBlock2d(self.store, f"block{i}", width, width,
                                  modes_yx, rng)
            for i in range(spec.blocks)
        ]
        if spec.variant == "multigrad":
            self.recon = layers.MultiscaleReconstruct(
                self.store, "recon", width, spec.out_channels, rng,
                boundary=spec.boundary)
            self.proj = None
        else:
            self.proj = (
                layers.ChannelLinear(self.store, "proj1", width, width, rng),
                layers.ChannelLinear(self.store, "proj2", width,
                                     spec.out_channels, rng),
            )
            self.recon = None
        if spec.variant == "specdfno":
            self.res_lift = layers.ChannelLinear(
                self.store, "res.lift", width + spec.out_channels, width, rng)
            self.res_blocks = [
                layers.FourierBlock2d(self.store, f"res.block{i}", width,
                                      width, modes_yx, rng)
                for i in range(spec.residual_blocks)
            ]
            # zero init: the residual path vanishes at initialization
            self.res_proj = layers.ChannelLinear(
                self.store, "res.proj", width, spec.out_channels, rng,
                zero_init=True)

    def _upsample(self, t: Tensor, target: tuple[int, int]) -> Tensor:
        if self.upsampler is not None:
            return self.upsampler(t, target, self.spec.boundary)
        return layers.upsample(t, target, self.spec.upsample,
                               self.spec.boundary)

    def forward(self, x: np.ndarray, targets: tuple[int, ...],
                training: bool = False) -> dict[int, Tensor]:
        xb, _ = self._batched(x, 4)
        spec = self.spec
        if xb.shape[1] != spec.in_channels:
            raise ValueError(
                f"model expects {spec.in_channels} channels, got {xb.shape[1]}"
            )
        t_in = Tensor(xb)
        feats = t_in
        if spec.preprocess == "sobel":
            feats = ops.concat(
                [t_in, layers.sobel_features(t_in, spec.boundary)], axis=1)
        padded = layers._pad_periodic_or_edge(feats, 1, spec.boundary)
        h = ops.gelu(self.embed(padded))
        out: dict[int, Tensor] = {}
        for res in targets:
            res = int(res)
            target = (res, res)
            e = self._upsample(h, target)
            coords = np.broadcast_to(
                _coord_channels(target)[None], (xb.shape[0], 2) + target)
            e = self.mix(ops.concat([e, Tensor(coords.copy())], axis=1))
            z = e
            for i, block in enumerate(self.blocks):
                z = block(z, activate=(i + 1 < len(self.blocks)))
            if self.recon is not None:
                y = self.recon(z)
            else:
                y = self.proj[1](ops.gelu(self.proj[0](z)))
            if spec.variant == "specdfno":
                r = self.res_lift(ops.concat([e, y], axis=1))
                for i, block in enumerate(self.res_blocks):
                    r = block(r, activate=(i + 1 < len(self.res_blocks)))
                y = ops.add(y, self.res_proj(r))
            if spec.constraint:
                y = layers.softmax_constraint(y, xb)
            out[res] = y
        return out


class TemporalOperator(BaseModel):
    """temp_dfno / temp_specdfno: frame windows in, frame windows out."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        rng = self._rng
        width = spec.width
        my, mx, mt = spec.modes
        modes_tyx = (mt, my, mx)
        self.lift = layers.ChannelLinear(self.store, "lift",
                                         spec.in_channels, width, rng)
        if spec.upsample == "meta":
            self.upsampler = layers.MetaUpsample(self.store, "upsample")
        else:
            self.upsampler = None
        self.mix = layers.ChannelLinear(self.store, "mix", width + 3, width,
                                        rng)
        self.blocks = [
            layers.FourierBlock3d(self.store, f"block{i}", width, width,
                                  modes_tyx, rng)
            for i in range(spec.blocks)
        ]
        self.proj = (
            layers.ChannelLinear(self.store, "proj1", width, width, rng),
            layers.ChannelLinear(self.store, "proj2", width,
                                 spec.out_channels, rng),
        )
        if spec.variant == "temp_specdfno":
            self.res_lift = layers.ChannelLinear(
                self.store, "res.lift", width + spec.out_channels, width, rng)
            self.res_blocks = [
                layers.FourierBlock3d(self.store, f"res.block{i}", width,
                                      width, modes_tyx, rng)
                for i in range(spec.residual_blocks)
            ]
            self.res_proj = layers.ChannelLinear(
                self.store, "res.proj", width, spec.out_channels, rng,
                zero_init=True)

    def forward(self, x: np.ndarray, targets: tuple[int, ...],
                training: bool = False) -> dict[int, Tensor]:
        xb, _ = self._batched(x, 5)
        spec = self.spec
        if xb.shape[1] != spec.in_channels:
            raise ValueError(
                f"model expects {spec.in_channels} channels, got {xb.shape[1]}"
            )
        if xb.shape[2] != spec.window:
            raise ValueError(
                f"model expects windows of {spec.window} frames, "
                f"got {xb.shape[2]}"
            )
        t_in = Tensor(xb)
        h = self.lift(t_in)
        out: dict[int, Tensor] = {}
        resolutions = sorted(int(r) for r in targets)
        for res in resolutions:
            target = (res, res)
            e = self._up(h, target)
            coords = np.broadcast_to(
                _coord_channels((spec.window,) + target)[None],
                (xb.shape[0], 3, spec.window) + target)
            e = self.mix(ops.concat([e, Tensor(coords.copy())], axis=1))
            z = e
            for i, block in enumerate(self.blocks):
                z = block(z, activate=(i + 1 < len(self.blocks)))
            y = self.proj[1](ops.gelu(self.proj[0](z)))
            if spec.variant == "temp_specdfno":
                r = self.res_lift(ops.concat([e, y], axis=1))
                for i, block in enumerate(self.res_blocks):
                    r = block(r, activate=(i + 1 < len(self.res_blocks)))
                y = ops.add(y, self.res_proj(r))
            out[res] = y
        if spec.constraint and len(resolutions) > 1:
            anchor = out[resolutions[0]]
            base = anchor.data  # stop-gradient anchor
            for res in resolutions[1:]:
                if res % resolutions[0] == 0:
                    out[res] = _constrain_window(out[res], base)
        return out

    def _up(self, t: Tensor, target: tuple[int, int]) -> Tensor:
        if self.upsampler is not None:
            return self.upsampler(t, target, self.spec.boundary)
        return layers.upsample(t, target, self.spec.upsample,
                               self.spec.boundary)


def _constrain_window(y: Tensor, base: np.ndarray) -> Tensor:
    """Apply the softmax redistribution frame-wise over [B, C, T, H, W]."""
    b, c, t, hh, ww = y.shape
    merged = ops.reshape(y, (b, c * t, hh, ww))
    base_m = base.reshape(b, c * t, base.shape[-2], base.shape[-1])
    constrained = layers.softmax_constraint(merged, base_m)
    return ops.reshape(constrained, (b, c, t, hh, ww))


class CNNBaseline(BaseModel):
    """cnn2 / cnn4: bicubic upsample by a fixed factor, then a U-Net."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.unet = layers.UNet(self.store, "unet", spec.in_channels,
                                spec.out_channels, spec.unet_widths,
                                self._rng)

    def forward(self, x: np.ndarray, targets: tuple[int, ...],
                training: bool = False) -> dict[int, Tensor]:
        xb, _ = self._batched(x, 4)
        spec = self.spec
        if len(targets) != 1:
            raise ValueError("CNN baselines produce a single resolution")
        res = int(targets[0])
        h, w = xb.shape[-2:]
        if res != h * spec.factor or res != w * spec.factor:
            raise ValueError(
                f"{spec.variant} is bound to factor {spec.factor}; "
                f"target {res} does not match input {h}x{w} "
                f"(use cross_factor_adapter for other factors)"
            )
        up = layers.upsample(Tensor(xb), (res, res), "bicubic", spec.boundary)
        y = self.unet(up, training)
        if spec.constraint:
            y = layers.softmax_constraint(y, xb)
        return {res: y}


class BicubicBaseline:
    """Non-learned reference: bicubic upsampling of the input.

    For temporal windows this upsamples the input frames (persistence in
    time, interpolation in space).
    """

    def __init__(self, boundary: str = "periodic"):
        self.boundary = boundary
        self.norm = None
        self.loss_tag = ""

    def predict(self, x: np.ndarray, target_res: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        res = int(target_res)
        wy = grid_interp(x.shape[-2], res, self.boundary)
        wx = grid_interp(x.shape[-1], res, self.boundary)
        flat = x.reshape(-1, x.shape[-2], x.shape[-1])
        out = np.einsum("ph,nhw,qw->npq", wy, flat, wx, optimize=True)
        return out.reshape(x.shape[:-2] + (res, res))


class UpscaledPrediction:
    """Wraps a low-resolution predictor with bicubic upscaling.

    predict(x, R) = bicubic(base.predict(x, base_res), R): the learned
    dynamics at the native resolution, naively upscaled. The reference
    against which zero-shot resolution transfer is judged.
    """

    def __init__(self, base, base_res: int, boundary: str = "periodic"):
        self.base = base
        self.base_res = int(base_res)
        self.boundary = boundary
        self.norm = None
        self.loss_tag = getattr(base, "loss_tag", "")

    def predict(self, x: np.ndarray, target_res: int) -> np.ndarray:
        low = self.base.predict(x, self.base_res)
        if int(target_res) == self.base_res:
            return low
        return BicubicBaseline(self.boundary).predict(low, target_res)


class FactorAdapted:
    """Predictor view of a factor-bound CNN at arbitrary resolutions.

    At the native factor this is the model itself; elsewhere the native
    prediction goes through cross_factor_adapter.
    """

    def __init__(self, model: "CNNBaseline", method: str = "bicubic"):
        self.model = model
        self.method = method
        self.norm = model.norm
        self.loss_tag = model.loss_tag

    def predict(self, x: np.ndarray, target_res: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        factor = self.model.spec.factor
        native = x.shape[-1] * factor
        pred = self.model.predict(x, native)
        res = int(target_res)
        if res == native:
            return pred
        if res % x.shape[-1]:
            raise ValueError(
                f"target {res} is not an integer multiple of the "
                f"input resolution {x.shape[-1]}"
            )
        eval_factor = res // x.shape[-1]
        method = self.method
        if eval_factor < factor and method == "recursion":
            method = "pool"
        return cross_factor_adapter(pred, factor, eval_factor, method,
                                    model=self.model,
                                    boundary=self.model.spec.boundary)


def grid_interp(n_src: int, n_dst: int, boundary: str,
                mode: str = "bicubic") -> np.ndarray:
    from . import grid
    return grid.interp_matrix(n_src, n_dst, mode, boundary)


def cross_factor_adapter(pred: np.ndarray, trained_factor: int,
                         eval_factor: int, method: str, *,
                         model: BaseModel | None = None,
                         boundary: str = "periodic") -> np.ndarray:
    """Map a factor-bound CNN prediction to another evaluation factor.

    methods: 'recursion' (re-apply the model to its own output; needs
    ``model``), 'bicubic' (interpolate up or down), 'pool' (average-pool
    down). Identity when the factors agree.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if eval_factor == trained_factor:
        return pred
    h, w = pred.shape[-2:]
    if eval_factor > trained_factor:
        if (eval_factor % trained_factor):
            raise ValueError(
                f"cannot adapt factor {trained_factor} up to {eval_factor}"
            )
        ratio = eval_factor // trained_factor
        if method == "recursion":
            if model is None:
                raise ValueError("recursion needs the trained model")
            if ratio != model.spec.factor:
                raise ValueError(
                    f"recursion step is factor {model.spec.factor}, "
                    f"needed {ratio}"
                )
            return model.predict(pred, h * ratio)
        if method == "bicubic":
            return BicubicBaseline(boundary).predict(pred, h * ratio)
        raise ValueError(f"unknown upward method {method!r}")
    if trained_factor % eval_factor:
        raise ValueError(
            f"cannot adapt factor {trained_factor} down to {eval_factor}"
        )
    ratio = trained_factor // eval_factor
    if method == "pool":
        from . import grid
        mat_y = grid.pool_matrix(h, h // ratio)
        mat_x = grid.pool_matrix(w, w // ratio)
    elif method == "bicubic":
        mat_y = grid_interp(h, h // ratio, boundary)
        mat_x = grid_interp(w, w // ratio, boundary)
    else:
        raise ValueError(f"unknown downward method {method!r}")
    flat = pred.reshape(-1, h, w)
    out = np.einsum("ph,nhw,qw->npq", mat_y, flat, mat_x, optimize=True)
    return out.reshape(pred.shape[:-2] + out.shape[-2:])


_BUILDERS = {
    "dfno": DownscaleOperator,
    "specdfno": DownscaleOperator,
    "metagrad": DownscaleOperator,
    "multigrad": DownscaleOperator,
    "temp_dfno": TemporalOperator,
    "temp_specdfno": TemporalOperator,
    "cnn2": CNNBaseline,
    "cnn4": CNNBaseline,
}


def build_model(spec: ModelSpec) -> BaseModel:
    """Instantiate a variant; initialization is fixed by spec.seed."""
    return _BUILDERS[spec.variant](spec)


# ---------------------------------------------------------------------------
# checkpoints: GRCK container wrapping GRD1 records

def save_checkpoint(path: str | Path, model: BaseModel) -> None:
    """Versioned checkpoint: model spec, params, Adam state, buffers.

    Arrays are stored as named GRD1 records; reloading reproduces
    forward passes bit-for-bit.
    """
    store = model.store
    names = store.names()
    meta = {
        "format_version": CKPT_VERSION,
        "model": model.spec.to_dict(),
        "loss": model.loss_tag,
        "norm": None if model.norm is None else {
            "mean": [float(v) for v in model.norm.mean],
            "std": [float(v) for v in model.norm.std],
        },
        "params": names,
        "buffers": list(store.buffers),
        "adam_t": {name: store.adam_state(name)[2] for name in names},
    }
    blob = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION)]
    raw_meta = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob.append(struct.pack("<I", len(raw_meta)))
    blob.append(raw_meta)

    def add(name: str, arr: np.ndarray) -> None:
        raw_name = name.encode("utf-8")
        blob.append(struct.pack("<I", len(raw_name)))
        blob.append(raw_name)
        blob.append(gridfile.pack(arr))

    for name in names:
        m, v, _ = store.adam_state(name)
        add(name, store[name].data)
        add(f"adam.m.{name}", m)
        add(f"adam.v.{name}", v)
    for name, buf in store.buffers.items():
        add(f"buf.{name}", buf)
    Path(path).write_bytes(b"".join(blob))


def load_checkpoint(path: str | Path) -> BaseModel:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<H", buf[4:6])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", buf[6:10])
    meta = json.loads(buf[10:10 + meta_len].decode("utf-8"))
    offset = 10 + meta_len

    records: dict[str, np.ndarray] = {}
    while offset < len(buf):
        (name_len,) = struct.unpack("<I", buf[offset:offset + 4])
        offset += 4
        name = buf[offset:offset + name_len].decode("utf-8")
        offset += name_len
        arr, _, offset = gridfile.unpack(buf, offset)
        records[name] = arr

    spec = ModelSpec.from_dict(meta["model"])
    model = build_model(spec)
    for name in meta["params"]:
        if name not in records:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        model.store.load_param(name, records[name])
        model.store.load_adam_state(
            name, records[f"adam.m.{name}"], records[f"adam.v.{name}"],
            meta["adam_t"][name])
    for name in meta.get("buffers", []):
        model.store.load_buffer(name, records[f"buf.{name}"])
    if meta.get("norm"):
        model.norm = NormStats(np.asarray(meta["norm"]["mean"]),
                               np.asarray(meta["norm"]["std"]))
    model.loss_tag = meta.get("loss", "")
    return model
