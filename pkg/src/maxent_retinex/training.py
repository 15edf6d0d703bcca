"""Self-supervised training on low-light images only.

An epoch in dataset mode is a fresh shuffle of the image list with one
random crop per image, grouped into batches. In single-image mode an epoch
is a single batch of ``batch_size`` crops of the one image.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

from .core import ContractError, list_images, load_image, to_uint8
from .loss import LossWeights, total_loss
from .metrics import MetricsReport, evaluate_set
from .network import ModelState, build_network, forward, make_optimizer, save_checkpoint, table1_spec
from .ops import equalization_lut

log = logging.getLogger(__name__)

MODES = ("dataset", "single-image")
HE_SCOPES = ("full-image", "per-patch")
DEFAULT_EPOCHS = {"dataset": 200, "single-image": 10000}


class IngestionError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, snapshot):
        super().__init__(f"{message}: {snapshot}")
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    mode: str = "dataset"
    batch_size: int = 16
    patch_size: int = 48
    learning_rate: float = 0.001
    epochs: int | None = None
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    he_scope: str = "full-image"
    eval_every: int = 20
    final_relu: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.he_scope not in HE_SCOPES:
            raise ValueError(f"he_scope must be one of {HE_SCOPES}, got {self.he_scope!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ValueError("patch_size must be an even number >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.mode]
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DatasetEntry:
    name: str
    low_path: Path
    pixels: np.ndarray          # HxWx3 uint8
    max_bins: np.ndarray        # HxW uint8, max channel
    he_lut: np.ndarray          # 256 floats, equalization of the full max channel
    ref_path: Path | None = None

    @property
    def shape(self):
        return self.pixels.shape[:2]

    def image(self) -> np.ndarray:
        return self.pixels.astype(np.float32) / np.float32(255.0)

    def he_target(self) -> np.ndarray:
        return self.he_lut[self.max_bins]


@dataclass
class Dataset:
    entries: list

    def __len__(self):
        return len(self.entries)

    @property
    def has_references(self) -> bool:
        return bool(self.entries) and all(e.ref_path is not None for e in self.entries)

    @property
    def min_size(self) -> int:
        return min(min(e.shape) for e in self.entries)

    def low_images(self) -> list:
        return [e.image() for e in self.entries]

    def ref_images(self) -> list:
        return [load_image(e.ref_path) for e in self.entries]

    def names(self) -> list:
        return [e.name for e in self.entries]


def make_entry(path, ref_path=None) -> DatasetEntry:
    pixels = to_uint8(load_image(path))
    bins = pixels.max(axis=2)
    return DatasetEntry(name=Path(path).name, low_path=Path(path), pixels=pixels,
                        max_bins=bins, he_lut=equalization_lut(bins), ref_path=ref_path)


def dataset_from_paths(paths: Sequence, ref_paths: Sequence | None = None) -> Dataset:
    if not paths:
        raise IngestionError("no training images given")
    refs = list(ref_paths) if ref_paths is not None else [None] * len(paths)
    return Dataset([make_entry(p, r) for p, r in zip(paths, refs)])


def ingest_dataset(low_dir, ref_dir=None) -> Dataset:
    """Load every image in ``low_dir`` (sorted by name) with its HE target.

    References, when given, are paired by identical filename and are only
    ever used for evaluation.
    """
    lows = list_images(low_dir)
    if not lows:
        raise IngestionError(f"{low_dir}: no readable images")
    refs = None
    if ref_dir is not None:
        ref_files = {p.name: p for p in list_images(ref_dir)}
        low_names = {p.name for p in lows}
        unmatched = sorted(low_names ^ set(ref_files))
        if unmatched:
            raise IngestionError(f"unpaired files between {low_dir} and {ref_dir}: {unmatched}")
        refs = [ref_files[p.name] for p in lows]
    return dataset_from_paths(lows, refs)


# --- patch sampling ---------------------------------------------------------

def _crop(entry: DatasetEntry, rng: np.random.Generator, patch: int, he_scope: str):
    h, w = entry.shape
    y = int(rng.integers(0, h - patch + 1))
    x = int(rng.integers(0, w - patch + 1))
    px = entry.pixels[y:y + patch, x:x + patch]
    if he_scope == "full-image":
        target = entry.he_lut[entry.max_bins[y:y + patch, x:x + patch]]
    else:
        bins = entry.max_bins[y:y + patch, x:x + patch]
        target = equalization_lut(bins)[bins]
    return px, target


def _to_batch(crops):
    S = np.stack([c[0] for c in crops]).astype(np.float32) / np.float32(255.0)
    T = np.stack([c[1] for c in crops]).astype(np.float32)
    return torch.from_numpy(S.transpose(0, 3, 1, 2).copy()), torch.from_numpy(T[:, None].copy())


def sample_batches(dataset: Dataset, rng: np.random.Generator, config: TrainConfig) -> Iterator:
    """Yield the ``(S, target)`` batches of one epoch as (N,3,p,p)/(N,1,p,p) tensors."""
    p = config.patch_size
    if config.mode == "single-image":
        entry = dataset.entries[0]
        yield _to_batch([_crop(entry, rng, p, config.he_scope) for _ in range(config.batch_size)])
        return
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        yield _to_batch([_crop(dataset.entries[i], rng, p, config.he_scope) for i in idx])


def batches_per_epoch(n_images: int, config: TrainConfig) -> int:
    if config.mode == "single-image":
        return 1
    return math.ceil(n_images / config.batch_size)


# --- training loop ------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    reconstruction: float
    reflectance: float
    illumination: float
    reflectance_tv: float
    batches: int
    seconds: float = 0.0
    metrics: MetricsReport | None = None

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {k: getattr(self, k) for k in
             ("epoch", "loss", "reconstruction", "reflectance", "illumination",
              "reflectance_tv", "batches")}
        if include_timing:
            d["seconds"] = self.seconds
        if self.metrics is not None:
            m = self.metrics.to_dict()
            if not include_timing:
                m.pop("wall_time_s", None)
            d["metrics"] = m
        return d


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, record: EpochRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("train log is append-only in epoch order")
        self.records.append(record)

    def losses(self) -> list:
        return [r.loss for r in self.records]

    def to_jsonl(self, include_timing: bool = False) -> str:
        return "".join(json.dumps(r.to_dict(include_timing), sort_keys=True) + "\n"
                       for r in self.records)


def smoothed(values: Sequence[float], window: int = 20) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what exists."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _setup(dataset: Dataset, config: TrainConfig, model: ModelState | None):
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    if config.patch_size > dataset.min_size:
        raise ContractError(
            f"patch_size {config.patch_size} exceeds smallest image side {dataset.min_size}")
    if model is None:
        model = build_network(table1_spec(final_relu=config.final_relu), seed=config.seed)
    if model.optimizer is None:
        model.optimizer = make_optimizer(model.net, config.learning_rate)
    if model.rng_state is None:
        rng = np.random.Generator(np.random.PCG64(config.seed))
    else:
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = model.rng_state
    return model, rng


def train(dataset: Dataset, config: TrainConfig, model: ModelState | None = None,
          on_epoch: Callable[[ModelState, EpochRecord], None] | None = None):
    """Minimize the Retinex objective with Adam.

    Resumes from ``model.epoch`` when a restored model is passed. ``on_epoch``
    runs after every epoch (checkpointing, evaluation). Returns the model and
    a :class:`TrainLog` holding the epochs run by this call.
    """
    model, rng = _setup(dataset, config, model)
    torch.manual_seed(config.seed)
    net, opt = model.net, model.optimizer
    dtype = next(net.parameters()).dtype
    log_ = TrainLog()
    net.train()
    while model.epoch < config.epochs:
        epoch = model.epoch + 1
        t0 = time.perf_counter()
        sums = np.zeros(5)
        count = 0
        for b, (S, T) in enumerate(sample_batches(dataset, rng, config)):
            S, T = S.to(dtype), T.to(dtype)
            R, I = net(S)
            parts = total_loss(S, R, I, config.weights, target=T)
            if not torch.isfinite(parts.total):
                raise TrainingDiverged("non-finite loss", {"epoch": epoch, "batch": b,
                                                           **parts.as_floats()})
            opt.zero_grad(set_to_none=True)
            parts.total.backward()
            opt.step()
            model.step += 1
            f = parts.as_floats()
            n = S.shape[0]
            sums += n * np.array([f["total"], f["reconstruction"], f["reflectance"],
                                  f["illumination"], f["reflectance_tv"]])
            count += n
        model.epoch = epoch
        model.rng_state = rng.bit_generator.state
        means = sums / count
        record = EpochRecord(epoch, *map(float, means), batches=b + 1,
                             seconds=time.perf_counter() - t0)
        if on_epoch is not None:
            net.eval()
            on_epoch(model, record)
            net.train()
        log_.append(record)
        log.debug("epoch %d loss %.6f", epoch, record.loss)
    net.eval()
    return model, log_


def enhance(model: ModelState, S: np.ndarray) -> np.ndarray:
    """Enhanced image = reflectance, clamped to [0, 1]."""
    return np.clip(forward(model, S).reflectance, 0.0, 1.0)


def make_enhancer(model: ModelState):
    return lambda img: enhance(model, img)


class CheckpointWriter:
    """``on_epoch`` hook: saves ``epoch_NNNNN.pt`` every ``every`` epochs and at
    ``final_epoch``, and optionally evaluates a test set at the same points."""

    def __init__(self, directory, every: int, final_epoch: int,
                 test_set=None, eval_hook: Callable | None = None):
        self.directory = Path(directory)
        self.every = every
        self.final_epoch = final_epoch
        self.test_set = test_set
        self.eval_hook = eval_hook
        self.saved = []

    def due(self, epoch: int) -> bool:
        return epoch % self.every == 0 or epoch == self.final_epoch

    def __call__(self, model: ModelState, record: EpochRecord):
        if not self.due(record.epoch):
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / f"epoch_{record.epoch:05d}.pt"
        save_checkpoint(model, path)
        self.saved.append(path)
        if self.test_set is not None:
            lows, refs, names = self.test_set
            record.metrics, _ = evaluate_set(make_enhancer(model), lows, refs, names)
            if self.eval_hook is not None:
                self.eval_hook(record)


def repeated_stability_run(dataset: Dataset, config: TrainConfig, runs: int,
                           test_lows, test_refs=None, seeds: Sequence[int] | None = None):
    """Train ``runs`` independent models and score each on the test set."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seeds = list(seeds) if seeds is not None else [config.seed + k for k in range(runs)]
    if len(seeds) != runs:
        raise ValueError(f"{runs} runs but {len(seeds)} seeds")
    reports = []
    for k, seed in enumerate(seeds):
        cfg = TrainConfig(**{**config.to_dict(), "seed": seed})
        model, _ = train(dataset, cfg)
        mean, _ = evaluate_set(make_enhancer(model), test_lows, test_refs)
        mean.name = f"run{k + 1}"
        reports.append(mean)
    return reports


def spread(reports: Sequence[MetricsReport]) -> dict | None:
    """Max - min of every populated metric across runs; ``None`` for a single run."""
    if len(reports) < 2:
        return None
    out = {}
    for key in ("ge", "ce", "gmi", "gmg", "loe_low", "loe_high", "psnr", "ssim"):
        vals = [getattr(r, key) for r in reports]
        if all(v is not None for v in vals):
            out[key] = float(max(vals) - min(vals))
    return out
