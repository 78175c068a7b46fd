"""Paired thermal/visible datasets: manifests, subject-disjoint splits,
color adjustment, and deterministic batch assembly with on-the-fly
degradation.

The manifest is a CSV with columns ``subject_id,tag,thermal_path,visible_path``;
paths are stored relative to the manifest file. Batch streams are pure
functions of (dataset, config, stream seed, batch index): epoch shuffles fork
on ``epoch{e}`` and per-sample degradations on ``iter{n}/sample{k}``, so any
batch can be regenerated in isolation and training can resume mid-epoch.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from turbvis.config import DegradeConfig
from turbvis.imageio import Image, load_image
from turbvis.rng import RngStream
from turbvis.turbulence import degrade, sample_params

MANIFEST_COLUMNS = ["subject_id", "tag", "thermal_path", "visible_path"]


class DatasetError(Exception):
    """Manifest or image ingestion failure; message names the record."""


@dataclass(frozen=True)
class PairedRecord:
    subject_id: str
    tag: str
    thermal_path: Path
    visible_path: Path

    @property
    def key(self) -> str:
        return f"{self.subject_id}/{self.tag}"


@dataclass
class PairedDataset:
    records: list[PairedRecord]
    resolution: int
    manifest_path: Path | None = None

    def __len__(self) -> int:
        return len(self.records)

    def subjects(self) -> list[str]:
        return sorted({r.subject_id for r in self.records})


def write_manifest(records: list[PairedRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for rec in records:
            writer.writerow([
                rec.subject_id, rec.tag,
                os.path.relpath(rec.thermal_path, path.parent),
                os.path.relpath(rec.visible_path, path.parent),
            ])


def _png_size(path: Path) -> tuple[int, int]:
    with PILImage.open(path) as pil:
        return pil.size  # (width, height)


def load_paired_dataset(manifest_path) -> PairedDataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetError(f"manifest {manifest_path} does not exist")
    base = manifest_path.parent
    records = []
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing_cols = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing_cols:
            raise DatasetError(f"manifest {manifest_path} lacks columns {missing_cols}")
        for row in reader:
            records.append(PairedRecord(
                subject_id=row["subject_id"].strip(),
                tag=row["tag"].strip(),
                thermal_path=(base / row["thermal_path"].strip()).resolve(),
                visible_path=(base / row["visible_path"].strip()).resolve(),
            ))
    if not records:
        raise DatasetError(f"manifest {manifest_path} has no records")

    resolution = None
    for rec in records:
        for path in (rec.thermal_path, rec.visible_path):
            if not path.exists():
                raise DatasetError(f"record {rec.key}: missing file {path}")
            w, h = _png_size(path)
            if w != h:
                raise DatasetError(f"record {rec.key}: image {path} is not square ({w}x{h})")
            if resolution is None:
                resolution = w
            elif (w, h) != (resolution, resolution):
                raise DatasetError(
                    f"record {rec.key}: resolution {w}x{h} != dataset {resolution}x{resolution}"
                )
    records.sort(key=lambda r: (r.subject_id, r.tag, str(r.thermal_path)))
    return PairedDataset(records=records, resolution=int(resolution),
                         manifest_path=manifest_path)


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_val: int
    n_test: int
    seed: int = 0


def vis_th_split(seed: int = 0) -> SplitSpec:
    return SplitSpec(n_train=35, n_val=5, n_test=10, seed=seed)


def arl_vtf_split(seed: int = 0) -> SplitSpec:
    return SplitSpec(n_train=160, n_val=40, n_test=20, seed=seed)


def split_subjects(ds: PairedDataset, spec: SplitSpec
                   ) -> tuple[PairedDataset, PairedDataset, PairedDataset]:
    """Seeded shuffle of subject ids, partitioned by counts; subject-disjoint."""
    subjects = ds.subjects()
    need = spec.n_train + spec.n_val + spec.n_test
    if need > len(subjects):
        raise ValueError(f"split needs {need} subjects, dataset has {len(subjects)}")
    perm = RngStream(spec.seed, "split").permutation(len(subjects))
    shuffled = [subjects[i] for i in perm]
    groups = (
        set(shuffled[: spec.n_train]),
        set(shuffled[spec.n_train : spec.n_train + spec.n_val]),
        set(shuffled[spec.n_train + spec.n_val : need]),
    )
    parts = []
    for group in groups:
        recs = [r for r in ds.records if r.subject_id in group]
        parts.append(PairedDataset(records=recs, resolution=ds.resolution,
                                   manifest_path=ds.manifest_path))
    return tuple(parts)


def color_adjust(img: Image, percentile: float = 99.0) -> Image:
    """Clip at the given intensity percentile, rescale so it maps to 1.

    Uses the order-statistic ("lower") percentile so the operation is an
    exact projection: applying it twice returns the first output unchanged.
    """
    data = img.array
    p = float(np.percentile(data, percentile, method="lower"))
    if p <= 1e-6:
        return Image(data.copy(), img.color_space)
    return Image(np.minimum(data, p) / np.float32(p), img.color_space)


class _ImageCache:
    def __init__(self):
        self._cache: dict[Path, Image] = {}

    def get(self, path: Path) -> Image:
        if path not in self._cache:
            self._cache[path] = load_image(path)
        return self._cache[path]


class BatchStream:
    """Indexable stream of (degraded thermal, clean visible) batches.

    ``batch(n)`` is a pure function of (dataset, config, stream, n): the
    epoch permutation comes from ``fork("epoch{e}")`` and each sample's
    degradation from ``fork("iter{n}/sample{k}")``. Incomplete tail batches
    are dropped so batch statistics stay fixed.
    """

    def __init__(self, ds: PairedDataset, degrade_cfg: DegradeConfig, batch_size: int,
                 rng: RngStream, color_adjust_visible: bool = False):
        if not ds.records:
            raise ValueError("dataset is empty")
        if batch_size < 1 or batch_size > len(ds.records):
            raise ValueError(
                f"batch_size {batch_size} invalid for dataset of {len(ds.records)}"
            )
        self.ds = ds
        self.cfg = degrade_cfg
        self.batch_size = batch_size
        self.rng = rng
        self.color_adjust_visible = color_adjust_visible
        self.batches_per_epoch = len(ds.records) // batch_size
        self._cache = _ImageCache()
        self._epoch_orders: dict[int, np.ndarray] = {}

    def _order(self, epoch: int) -> np.ndarray:
        if epoch not in self._epoch_orders:
            self._epoch_orders[epoch] = self.rng.fork(f"epoch{epoch}").permutation(
                len(self.ds.records))
        return self._epoch_orders[epoch]

    def batch(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        epoch, slot = divmod(n, self.batches_per_epoch)
        order = self._order(epoch)
        idx = order[slot * self.batch_size : (slot + 1) * self.batch_size]
        thermals, visibles = [], []
        for k, i in enumerate(idx):
            rec = self.ds.records[int(i)]
            srng = self.rng.fork(f"iter{n}/sample{k}")
            thermal = self._cache.get(rec.thermal_path)
            params = sample_params(srng, self.cfg, thermal.height, thermal.width)
            degraded = degrade(thermal, params, srng.fork("noise"))
            visible = self._cache.get(rec.visible_path)
            if self.color_adjust_visible:
                visible = color_adjust(visible)
            thermals.append(degraded.array)
            visibles.append(visible.to_rgb().array)
        return np.stack(thermals), np.stack(visibles)


def batch_iter(ds: PairedDataset, degrade_cfg: DegradeConfig, batch_size: int,
               rng: RngStream, epochs: int = 1, color_adjust_visible: bool = False):
    """Epoch-ordered generator over BatchStream; replay-deterministic."""
    stream = BatchStream(ds, degrade_cfg, batch_size, rng,
                         color_adjust_visible=color_adjust_visible)
    for n in range(epochs * stream.batches_per_epoch):
        yield stream.batch(n)


class VisibleStream:
    """Visible-only batches for generator pretraining; same epoch discipline."""

    def __init__(self, ds: PairedDataset, batch_size: int, rng: RngStream,
                 color_adjust_visible: bool = False):
        if not ds.records:
            raise ValueError("dataset is empty")
        if batch_size < 1 or batch_size > len(ds.records):
            raise ValueError(
                f"batch_size {batch_size} invalid for dataset of {len(ds.records)}"
            )
        self.ds = ds
        self.batch_size = batch_size
        self.rng = rng
        self.color_adjust_visible = color_adjust_visible
        self.batches_per_epoch = len(ds.records) // batch_size
        self._cache = _ImageCache()

    def batch(self, n: int) -> np.ndarray:
        epoch, slot = divmod(n, self.batches_per_epoch)
        order = self.rng.fork(f"epoch{epoch}").permutation(len(self.ds.records))
        idx = order[slot * self.batch_size : (slot + 1) * self.batch_size]
        out = []
        for i in idx:
            visible = self._cache.get(self.ds.records[int(i)].visible_path)
            if self.color_adjust_visible:
                visible = color_adjust(visible)
            out.append(visible.to_rgb().array)
        return np.stack(out)
