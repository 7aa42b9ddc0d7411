"""Trials, datasets, the EEGF file format, splitting, scaling and synthetic data."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError

log = logging.getLogger(__name__)

EEGF_MAGIC = b"EEGF"
EEGF_VERSION = 1
_EEGF_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class EegTrial:
    samples: np.ndarray  # (channels, time)
    label: int

    def __post_init__(self):
        if np.ndim(self.samples) != 2:
            raise DataError(f"trial must be channels x time, got shape {np.shape(self.samples)}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("trial contains non-finite samples")
        if self.label < 0:
            raise DataError(f"label must be non-negative, got {self.label}")


@dataclass
class Dataset:
    """A stack of equally shaped trials.

    ``X`` has shape (n_trials, n_channels, n_samples); ``y`` holds integer
    labels in ``[0, n_classes)``.
    """

    X: np.ndarray
    y: np.ndarray
    class_names: list[str] | None = None
    sfreq: float | None = None
    provenance: str = "memory"

    def __post_init__(self):
        self.X = np.asarray(self.X)
        if self.X.dtype.kind != "f":
            self.X = self.X.astype(np.float64)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.X.ndim != 3:
            raise DataError(f"dataset samples must be (trials, channels, time), got {self.X.shape}")
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"{self.X.shape[0]} trials but {self.y.shape[0]} labels")
        if not np.all(np.isfinite(self.X)):
            raise DataError("dataset contains non-finite samples")
        if self.class_names is None:
            k = int(self.y.max()) + 1 if self.y.size else 0
            self.class_names = [f"class{i}" for i in range(k)]
        if self.y.size and (self.y.min() < 0 or self.y.max() >= len(self.class_names)):
            raise DataError(f"labels must lie in [0, {len(self.class_names)})")

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i) -> EegTrial:
        return EegTrial(self.X[i], int(self.y[i]))

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_channels(self) -> int:
        return self.X.shape[1]

    @property
    def n_samples(self) -> int:
        return self.X.shape[2]

    def class_counts(self) -> list[int]:
        return np.bincount(self.y, minlength=self.n_classes).tolist()

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], list(self.class_names), self.sfreq, self.provenance)

    def with_samples(self, X) -> "Dataset":
        return Dataset(X, self.y.copy(), list(self.class_names), self.sfreq, self.provenance)


# ---------------------------------------------------------------- EEGF format


def save_dataset(path, ds: Dataset) -> None:
    """Write ``ds`` as EEGF. Samples are stored as float32."""
    n, c, t = ds.X.shape
    if ds.y.size and ds.y.max() > 0xFFFF:
        raise DataError("labels do not fit in u16")
    with open(path, "wb") as fh:
        fh.write(_EEGF_HEADER.pack(EEGF_MAGIC, EEGF_VERSION, n, c, t))
        fh.write(ds.y.astype("<u2").tobytes())
        fh.write(np.ascontiguousarray(ds.X, dtype="<f4").tobytes())


def load_dataset(path, n_classes: int | None = None, sfreq: float | None = None) -> Dataset:
    """Read an EEGF file, validating header counts against the payload.

    Labels at or above ``n_classes`` (when given) are rejected.
    """
    raw = Path(path).read_bytes()
    hsize = _EEGF_HEADER.size
    if len(raw) < hsize:
        raise FormatError(f"file has {len(raw)} bytes, header needs {hsize}", offset=len(raw))
    magic, version, n, c, t = _EEGF_HEADER.unpack_from(raw, 0)
    if magic != EEGF_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EEGF_MAGIC!r}", offset=0)
    if version != EEGF_VERSION:
        raise FormatError(f"unsupported EEGF version {version}", offset=4)
    label_end = hsize + 2 * n
    if len(raw) < label_end:
        raise FormatError(f"truncated labels: header declares {n} trials", offset=len(raw))
    trial_bytes = 4 * c * t
    expected = label_end + n * trial_bytes
    if len(raw) < expected:
        whole = (len(raw) - label_end) // trial_bytes if trial_bytes else 0
        raise FormatError(f"truncated payload: header declares {n} trials, found {whole} complete",
                          offset=len(raw))
    if len(raw) > expected:
        raise FormatError(f"{len(raw) - expected} trailing bytes after payload", offset=expected)
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=hsize).astype(np.int64)
    if n_classes is not None:
        bad = np.flatnonzero(labels >= n_classes)
        if bad.size:
            raise FormatError(f"label {labels[bad[0]]} out of range for {n_classes} classes",
                              offset=hsize + 2 * int(bad[0]))
    X = np.frombuffer(raw, dtype="<f4", count=n * c * t, offset=label_end).reshape(n, c, t).astype(np.float32)
    finite = np.isfinite(X)
    if not finite.all():
        first = int(np.flatnonzero(~finite.reshape(-1))[0])
        raise FormatError("non-finite sample", offset=label_end + 4 * first)
    names = [f"class{i}" for i in range(n_classes)] if n_classes is not None else None
    return Dataset(X, labels, names, sfreq, provenance=f"file:{Path(path).name}")


def load_csv(samples_path, labels_path, n_channels: int, sfreq: float | None = None) -> Dataset:
    """Import hand-made fixtures: one CSV row per (trial, channel), trial-major,
    plus a label file with one integer per line."""
    rows = np.atleast_2d(np.loadtxt(samples_path, delimiter=",", dtype=np.float64))
    labels = np.atleast_1d(np.loadtxt(labels_path, dtype=np.int64))
    if rows.shape[0] % n_channels:
        raise DataError(f"{rows.shape[0]} CSV rows is not a multiple of {n_channels} channels")
    X = rows.reshape(-1, n_channels, rows.shape[1])
    return Dataset(X, labels, sfreq=sfreq, provenance=f"csv:{Path(samples_path).name}")


def single_arm_adapter(X, y, sfreq: float, class_names: Sequence[str] | None = None) -> Dataset:
    """Wrap arrays from the single-arm reaching recordings.

    The recordings themselves are not redistributable. Holders of the data
    pass epoched arrays shaped (trials, 22, 1001) with 4-class labels.
    """
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[1:] != (22, 1001):
        raise DataError(f"expected (trials, 22, 1001) epochs, got {X.shape}")
    ds = Dataset(X, y, list(class_names) if class_names else None, sfreq, provenance="single-arm")
    if ds.n_classes != 4:
        raise DataError(f"expected 4 classes, got {ds.n_classes}")
    return ds


# ---------------------------------------------------------------- splitting / scaling


def split_train_test(ds: Dataset, per_class_test: int = 10, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Hold out ``per_class_test`` random trials of every class."""
    rng = np.random.default_rng(seed)
    test_idx = []
    for k, name in enumerate(ds.class_names):
        members = np.flatnonzero(ds.y == k)
        if per_class_test and members.size <= per_class_test:
            raise DataError(f"class {name!r} has {members.size} trials, need more than {per_class_test}")
        test_idx.extend(rng.permutation(members)[:per_class_test].tolist())
    test_idx = np.sort(np.asarray(test_idx, dtype=np.int64))
    train_idx = np.setdiff1d(np.arange(len(ds)), test_idx)
    return ds.subset(train_idx), ds.subset(test_idx)


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, ds: Dataset) -> Dataset:
        X = (ds.X.astype(np.float64) - self.mean[None, :, None]) / self.std[None, :, None]
        return ds.with_samples(X)


def fit_channel_stats(ds: Dataset, eps: float = 1e-12) -> ChannelStats:
    X = ds.X.astype(np.float64)
    mean = X.mean(axis=(0, 2))
    std = X.std(axis=(0, 2))
    flat = std < eps
    if flat.any():
        log.warning("channels %s have zero variance; std floored at %g", np.flatnonzero(flat).tolist(), eps)
        std = np.where(flat, eps, std)
    return ChannelStats(mean, std)


def normalize(ds: Dataset, stats: ChannelStats | None = None) -> tuple[Dataset, ChannelStats]:
    """Per-channel z-scoring. Statistics come from ``ds`` unless ``stats`` is given,
    so fit on train data and pass the result when scaling test data."""
    stats = stats if stats is not None else fit_channel_stats(ds)
    return stats.apply(ds), stats


# ---------------------------------------------------------------- synthetic data


@dataclass
class SyntheticSpec:
    """Band-limited class signatures on top of Gaussian background noise.

    Class ``k`` adds a tapered sinusoid with frequency drawn from
    ``class_bands[k]`` and an independent random phase on each channel in
    ``active_channels[k]``. Optional distractor oscillations appear on all
    channels of every trial with a random per-channel gain, independently of
    the class.
    """

    n_classes: int = 4
    trials_per_class: int = 50
    n_channels: int = 22
    n_samples: int = 1001
    sfreq: float = 250.0
    class_bands: list[tuple[float, float]] | None = None
    active_channels: list[list[int]] | None = None
    amplitude: float = 1.0
    noise: float = 1.0
    distractor_bands: list[tuple[float, float]] = field(default_factory=list)
    distractor_amplitude: float = 0.0
    seed: int = 0

    def resolved_bands(self) -> list[tuple[float, float]]:
        if self.class_bands is not None:
            return [tuple(map(float, b)) for b in self.class_bands]
        nyq = self.sfreq / 2
        # 4 Hz wide bands from 8 Hz upward, spaced to stay clear of each other
        bands = [(8.0 + 6.0 * k, 12.0 + 6.0 * k) for k in range(self.n_classes)]
        if bands[-1][1] >= nyq:
            raise ConfigError(f"class_bands: default bands reach {bands[-1][1]} Hz, above Nyquist {nyq}")
        return bands

    def resolved_channels(self) -> list[list[int]]:
        if self.active_channels is not None:
            return [list(map(int, c)) for c in self.active_channels]
        width = max(1, self.n_channels // self.n_classes)
        return [[(k * width + j) % self.n_channels for j in range(width)] for k in range(self.n_classes)]

    def validate(self):
        for name in ("n_classes", "trials_per_class", "n_channels", "n_samples"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.sfreq <= 0:
            raise ConfigError(f"sfreq: must be positive, got {self.sfreq}")
        for name in ("amplitude", "noise", "distractor_amplitude"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0, got {getattr(self, name)}")
        nyq = self.sfreq / 2
        bands = self.resolved_bands()
        if len(bands) != self.n_classes:
            raise ConfigError(f"class_bands: need {self.n_classes} bands, got {len(bands)}")
        for lo, hi in list(bands) + [tuple(b) for b in self.distractor_bands]:
            if not 0 < lo < hi < nyq:
                raise ConfigError(f"band ({lo}, {hi}) must satisfy 0 < low < high < Nyquist ({nyq})")
        chans = self.resolved_channels()
        if len(chans) != self.n_classes:
            raise ConfigError(f"active_channels: need {self.n_classes} subsets, got {len(chans)}")
        for sub in chans:
            if not sub or min(sub) < 0 or max(sub) >= self.n_channels:
                raise ConfigError(f"active_channels: subset {sub} outside [0, {self.n_channels})")


def _taper(n: int, frac: float = 0.25) -> np.ndarray:
    """Tukey window: cosine ramps over ``frac`` of the trial, flat in between."""
    w = np.ones(n)
    m = int(frac * n / 2)
    if m > 0:
        ramp = 0.5 * (1 - np.cos(np.pi * np.arange(m) / m))
        w[:m] = ramp
        w[n - m:] = ramp[::-1]
    return w


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a labelled dataset from ``spec``. Samples are float32, trials ordered by class."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    bands, chans = spec.resolved_bands(), spec.resolved_channels()
    t = np.arange(spec.n_samples) / spec.sfreq
    env = _taper(spec.n_samples)
    n = spec.n_classes * spec.trials_per_class
    X = spec.noise * rng.standard_normal((n, spec.n_channels, spec.n_samples))
    y = np.repeat(np.arange(spec.n_classes), spec.trials_per_class)
    for i, k in enumerate(y):
        lo, hi = bands[k]
        f = rng.uniform(lo, hi)
        phase = rng.uniform(0, 2 * np.pi, size=len(chans[k]))
        X[i, chans[k]] += spec.amplitude * env * np.sin(2 * np.pi * f * t[None, :] + phase[:, None])
        for lo_d, hi_d in spec.distractor_bands:
            fd = rng.uniform(lo_d, hi_d)
            gain = rng.uniform(0.0, 2.0, size=spec.n_channels)
            ph = rng.uniform(0, 2 * np.pi, size=spec.n_channels)
            X[i] += (spec.distractor_amplitude * gain[:, None]) * env * np.sin(2 * np.pi * fd * t[None, :] + ph[:, None])
    names = [f"class{k}" for k in range(spec.n_classes)]
    return Dataset(X.astype(np.float32), y, names, spec.sfreq, provenance=f"synthetic:seed={spec.seed}")
