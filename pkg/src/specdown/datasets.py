"""Dataset store: directory layout, manifest codec, loaders.

A dataset directory holds

    manifest.txt
    records/<id>_r<res>.grd      one GRD1 file per record per ladder rung

The manifest is a line-oriented "key: value" header followed by a
[records] table (tab-separated: id, split, seed, res:file list). Floats
are written with repr so parsing reproduces them bit-exactly. Nothing in
the store depends on wall-clock time; regenerating with the same seeds
writes byte-identical files.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grid, gridfile
from .training import NormStats

MANIFEST_NAME = "manifest.txt"
FORMAT_LINE = "specdown-dataset"
FORMAT_VERSION = 1

SOURCES = ("ns-sim", "external-grid")


class DataError(Exception):
    """Bad dataset layout, manifest, or source data."""


@dataclass
class RecordEntry:
    id: str
    split: str
    seed: int | None
    files: dict[int, str]  # resolution -> path relative to dataset root


@dataclass
class DatasetManifest:
    source: str
    channels: list[str]
    base_resolution: int
    ladder: list[int]
    boundary: str
    norm_mean: list[float]
    norm_std: list[float]
    extra: dict[str, str] = field(default_factory=dict)
    records: list[RecordEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise DataError(f"unknown source {self.source!r}")
        if self.ladder and self.ladder[0] != self.base_resolution:
            raise DataError(
                f"ladder {self.ladder} must start at base {self.base_resolution}"
            )

    def stats(self) -> NormStats:
        return NormStats(np.asarray(self.norm_mean), np.asarray(self.norm_std))


def _format_float(x: float) -> str:
    return repr(float(x))


def write_manifest(path: Path, manifest: DatasetManifest) -> None:
    lines = [
        f"format: {FORMAT_LINE}",
        f"version: {FORMAT_VERSION}",
        f"source: {manifest.source}",
        f"channels: {','.join(manifest.channels)}",
        f"base_resolution: {manifest.base_resolution}",
        f"ladder: {','.join(str(r) for r in manifest.ladder)}",
        f"boundary: {manifest.boundary}",
        f"norm_mean: {','.join(_format_float(v) for v in manifest.norm_mean)}",
        f"norm_std: {','.join(_format_float(v) for v in manifest.norm_std)}",
    ]
    for key in sorted(manifest.extra):
        lines.append(f"x-{key}: {manifest.extra[key]}")
    lines.append("")
    lines.append("[records]")
    for rec in manifest.records:
        seed = "" if rec.seed is None else str(rec.seed)
        files = ",".join(f"{res}:{rel}" for res, rel in sorted(rec.files.items(),
                                                               reverse=True))
        lines.append("\t".join([rec.id, rec.split, seed, files]))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_manifest(path: Path) -> DatasetManifest:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest: {exc}") from exc
    header: dict[str, str] = {}
    extra: dict[str, str] = {}
    records: list[RecordEntry] = []
    in_records = False
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.strip() == "[records]":
            in_records = True
            continue
        if not in_records:
            if ":" not in line:
                raise DataError(f"manifest line {lineno}: expected 'key: value'")
            key, _, value = line.partition(":")
            key, value = key.strip(), value.strip()
            if key.startswith("x-"):
                extra[key[2:]] = value
            else:
                header[key] = value
        else:
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"manifest line {lineno}: bad record row")
            rec_id, split, seed_s, files_s = parts
            files = {}
            for piece in files_s.split(","):
                res_s, _, rel = piece.partition(":")
                files[int(res_s)] = rel
            records.append(RecordEntry(
                rec_id, split, int(seed_s) if seed_s else None, files))
    if header.get("format") != FORMAT_LINE:
        raise DataError(f"{path}: not a dataset manifest")
    if int(header.get("version", "0")) != FORMAT_VERSION:
        raise DataError(f"unsupported manifest version {header.get('version')}")

    def floats(key: str) -> list[float]:
        raw = header.get(key, "")
        return [float(v) for v in raw.split(",") if v]

    return DatasetManifest(
        source=header["source"],
        channels=header["channels"].split(","),
        base_resolution=int(header["base_resolution"]),
        ladder=[int(r) for r in header["ladder"].split(",") if r],
        boundary=header["boundary"],
        norm_mean=floats("norm_mean"),
        norm_std=floats("norm_std"),
        extra=extra,
        records=records,
    )


def assign_splits(n: int, ratios: tuple[float, float, float],
                  seed: int) -> list[str]:
    """Seeded shuffle of n indices into train/val/test by ratios."""
    if len(ratios) != 3 or not np.isclose(sum(ratios), 1.0):
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    labels = [""] * n
    for pos, idx in enumerate(order):
        if pos < n_train:
            labels[idx] = "train"
        elif pos < n_train + n_val:
            labels[idx] = "val"
        else:
            labels[idx] = "test"
    return labels


def pool_ladder(base: np.ndarray, base_res: int,
                ladder: list[int]) -> dict[int, np.ndarray]:
    """Average-pool an array whose last two axes are [base_res, base_res]
    down each ladder rung. Returns {res: array} including the base."""
    out = {base_res: base}
    for res in ladder:
        if res == base_res:
            continue
        if base_res % res:
            raise DataError(f"ladder rung {res} does not divide {base_res}")
        wy = grid.pool_matrix(base_res, res)
        flat = base.reshape(-1, base_res, base_res)
        pooled = np.einsum("ph,nhw,qw->npq", wy, flat, wy, optimize=True)
        out[res] = pooled.reshape(base.shape[:-2] + (res, res))
    return out


class DatasetWriter:
    """Creates the on-disk layout; used by the generator and ingest."""

    def __init__(self, root: str | Path, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest
        (self.root / "records").mkdir(parents=True, exist_ok=True)

    def add_record(self, rec_id: str, split: str, seed: int | None,
                   arrays: dict[int, np.ndarray]) -> None:
        files = {}
        for res, arr in arrays.items():
            rel = f"records/{rec_id}_r{res}.grd"
            gridfile.write_grd(self.root / rel, arr,
                               tuple(self.manifest.channels))
            files[res] = rel
        self.manifest.records.append(RecordEntry(rec_id, split, seed, files))

    def finalize(self) -> None:
        write_manifest(self.root / MANIFEST_NAME, self.manifest)


class Dataset:
    """Read-side view of a dataset directory with a small array cache."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest = parse_manifest(self.root / MANIFEST_NAME)
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    @property
    def source(self) -> str:
        return self.manifest.source

    @property
    def channels(self) -> list[str]:
        return self.manifest.channels

    def records(self, split: str | None = None) -> list[RecordEntry]:
        if split is None:
            return list(self.manifest.records)
        return [r for r in self.manifest.records if r.split == split]

    def load(self, rec: RecordEntry, res: int) -> np.ndarray:
        key = (rec.id, res)
        if key not in self._cache:
            if res not in rec.files:
                raise DataError(
                    f"record {rec.id} has no resolution {res}; "
                    f"available: {sorted(rec.files)}"
                )
            arr, _ = gridfile.read_grd(self.root / rec.files[res])
            self._cache[key] = arr.astype(np.float64)
        return self._cache[key]

    def stats(self) -> NormStats:
        if not self.manifest.norm_mean:
            raise DataError("dataset manifest carries no normalization stats")
        return self.manifest.stats()

    def peaks(self) -> np.ndarray:
        """Per-channel dynamic range (max - min) of the test split at the
        base resolution; the PSNR peak, fixed once per dataset."""
        recs = self.records("test")
        if not recs:
            raise DataError("dataset has no test split")
        base = self.manifest.base_resolution
        lo, hi = None, None
        for rec in recs:
            arr = self.load(rec, base)
            flat = arr.reshape(arr.shape[0], -1) if self.source == "external-grid" \
                else arr.reshape(1, -1)
            lo = flat.min(axis=1) if lo is None else np.minimum(lo, flat.min(axis=1))
            hi = flat.max(axis=1) if hi is None else np.maximum(hi, flat.max(axis=1))
        return hi - lo

    # -- task-shaped views ---------------------------------------------------

    def temporal_windows(self, split: str, input_res: int,
                         target_res: tuple[int, ...], window: int = 5,
                         stride: int = 1
                         ) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        """Forecast pairs: frames [s, s+window) at input_res as input,
        frames [s+window, s+2*window) at each target resolution."""
        if self.source != "ns-sim":
            raise DataError("temporal windows need a simulation dataset")
        xs, ys = [], {res: [] for res in target_res}
        for rec in self.records(split):
            by_res = {res: self.load(rec, res)
                      for res in {input_res, *target_res}}
            t_total = by_res[input_res].shape[0]
            if t_total < 2 * window:
                raise DataError(
                    f"record {rec.id} has {t_total} frames; "
                    f"need at least {2 * window}"
                )
            for s in range(0, t_total - 2 * window + 1, stride):
                xs.append(by_res[input_res][s:s + window][None])
                for res in target_res:
                    ys[res].append(by_res[res][s + window:s + 2 * window][None])
        x = np.stack(xs) if xs else np.zeros((0, 1, window, input_res, input_res))
        y = {res: np.stack(v) for res, v in ys.items()}
        return x, y

    def static_pairs(self, split: str, input_res: int, target_res: int
                     ) -> tuple[np.ndarray, np.ndarray]:
        """Downscaling pairs: a pooled record as input, a finer rung as
        the target."""
        if self.source != "external-grid":
            raise DataError("static pairs need an ingested grid dataset")
        xs, ys = [], []
        for rec in self.records(split):
            xs.append(self.load(rec, input_res))
            ys.append(self.load(rec, target_res))
        c = len(self.channels)
        x = np.stack(xs) if xs else np.zeros((0, c, input_res, input_res))
        y = np.stack(ys) if ys else np.zeros((0, c, target_res, target_res))
        return x, y


@dataclass(frozen=True)
class PatchSpec:
    """How to tile a source grid into square patches."""

    size: int = 128
    stride: int = 128

    def __post_init__(self):
        if self.size < 1 or self.stride < 1:
            raise DataError(f"bad patch spec {self}")


def ingest_grid(source: str | Path, out_dir: str | Path, *,
                patch: PatchSpec = PatchSpec(),
                ladder: tuple[int, ...] = (128, 64, 32, 16),
                ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
                seed: int = 0, boundary: str = "replicate") -> DatasetManifest:
    """Tile an external [C, H, W] grid file into a patch dataset.

    Patches containing NaN are dropped and counted in the manifest.
    Normalization stats come from the training split only.
    """
    arr, names = gridfile.read_grd(source)
    if arr.ndim != 3:
        raise DataError(f"expected [C, H, W] source, got shape {arr.shape}")
    arr = arr.astype(np.float64)
    c, h, w = arr.shape
    size = patch.size
    if ladder[0] != size:
        raise DataError(f"ladder {ladder} must start at patch size {size}")
    names = list(names) if names else [f"c{i}" for i in range(c)]
    if len(names) != c:
        raise DataError(f"{len(names)} channel names for {c} channels")

    patches, dropped = [], 0
    for top in range(0, h - size + 1, patch.stride):
        for left in range(0, w - size + 1, patch.stride):
            tile = arr[:, top:top + size, left:left + size]
            if np.isnan(tile).any():
                dropped += 1
                continue
            patches.append(tile)
    if not patches:
        raise DataError("no usable patches (all dropped or source too small)")

    splits = assign_splits(len(patches), ratios, seed)
    train_stack = np.stack([p for p, s in zip(patches, splits) if s == "train"])
    stats = NormStats.from_arrays(train_stack)

    manifest = DatasetManifest(
        source="external-grid",
        channels=names,
        base_resolution=size,
        ladder=list(ladder),
        boundary=boundary,
        norm_mean=list(stats.mean),
        norm_std=list(stats.std),
        extra={
            "patch_stride": str(patch.stride),
            "dropped_patches": str(dropped),
            "split_seed": str(seed),
            "split_ratios": ",".join(repr(float(r)) for r in ratios),
            "source_shape": f"{c},{h},{w}",
        },
    )
    writer = DatasetWriter(out_dir, manifest)
    width = len(str(max(len(patches) - 1, 1)))
    for i, (tile, split) in enumerate(zip(patches, splits)):
        rungs = pool_ladder(tile, size, list(ladder))
        writer.add_record(f"patch{i:0{width}d}", split, None, rungs)
    writer.finalize()
    return manifest
