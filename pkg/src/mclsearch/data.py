"""Datasets: tensor container I/O, stratified splits and synthetic data."""

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import multilinear_map

__all__ = [
    "LabeledDataset",
    "SplitIndices",
    "SyntheticSpec",
    "write_tensor",
    "read_tensor",
    "save_dataset",
    "load_dataset",
    "stratified_split",
    "make_synthetic",
]

TENSOR_MAGIC = b"MCLT"
TENSOR_VERSION = 1
MANIFEST = "manifest.csv"


@dataclass
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)

    def __getitem__(self, name):
        if name not in ("train", "val", "test"):
            raise KeyError(name)
        return getattr(self, name)


@dataclass
class LabeledDataset:
    """Samples at full resolution, stacked along axis 0, with integer labels."""

    samples: np.ndarray
    labels: np.ndarray
    class_count: int
    split: SplitIndices = None
    name: str = "dataset"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim < 2:
            raise ValueError("samples must be stacked along axis 0")
        if len(self.samples) != len(self.labels):
            raise ValueError("samples and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("label outside 0..class_count-1")

    @property
    def shape(self):
        return tuple(self.samples.shape[1:])

    def __len__(self):
        return len(self.labels)

    def subset(self, split_name):
        if self.split is None:
            raise ValueError("dataset has no split")
        idx = self.split[split_name]
        return self.samples[idx], self.labels[idx]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a labelled dataset with a known multilinear rank.

    All samples share one orthonormal basis per mode; classes differ in the
    mean of their core tensors. ``separation`` scales the spread of class
    means relative to the within-class core spread, and core entries decay
    as ``1 / (1 + sum of indices)`` to give the data an energy spectrum.
    """

    class_count: int = 3
    samples_per_class: int = 100
    shape: tuple = (32, 32, 3)
    rank: tuple = (6, 6, 2)
    noise: float = 0.05
    seed: int = 0
    separation: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        object.__setattr__(self, "rank", tuple(int(r) for r in self.rank))
        if len(self.shape) != len(self.rank):
            raise ValueError("shape and rank differ in order")
        for k, (r, d) in enumerate(zip(self.rank, self.shape), start=1):
            if not 1 <= r <= d:
                raise ValueError(f"rank {r} exceeds extent {d} in mode {k}")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.class_count < 1 or self.samples_per_class < 1:
            raise ValueError("class_count and samples_per_class must be positive")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic field(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self):
        return {
            "class_count": self.class_count,
            "samples_per_class": self.samples_per_class,
            "shape": list(self.shape),
            "rank": list(self.rank),
            "noise": self.noise,
            "seed": self.seed,
            "separation": self.separation,
        }


def write_tensor(path, t):
    t = np.asarray(t, dtype=np.float64)
    header = TENSOR_MAGIC + struct.pack(f"<II{t.ndim}I", TENSOR_VERSION, t.ndim, *t.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(t).astype("<f8", copy=False).tobytes())


def read_tensor(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not a tensor container (bad magic)")
    version, k = struct.unpack_from("<II", raw, 4)
    if version != TENSOR_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    dims = struct.unpack_from(f"<{k}I", raw, 12)
    offset = 12 + 4 * k
    count = int(np.prod(dims))
    if len(raw) - offset != 8 * count:
        raise ValueError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(dims)


def _normalize(t, path):
    if t.size == 0:
        return t
    lo, hi = float(t.min()), float(t.max())
    if lo >= 0.0 and hi <= 1.0:
        return t
    if lo < 0.0 or hi > 255.0 or not np.all(t == np.round(t)):
        raise ValueError(f"{path}: values are neither in [0,1] nor 8-bit integers")
    return t / 255.0


def save_dataset(ds, directory):
    """Write ``ds`` as a manifest plus one container file per sample."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(ds))))
    with open(directory / MANIFEST, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["file", "label"])
        for i, (x, c) in enumerate(zip(ds.samples, ds.labels)):
            name = f"sample_{i:0{width}d}.mclt"
            write_tensor(directory / name, x)
            w.writerow([name, int(c)])
    return directory / MANIFEST


def load_dataset(path, class_count=None, name=None):
    """Read a dataset from a manifest CSV (``file,label``) or its directory.

    Samples keep manifest order. Values outside [0,1] are taken as 8-bit
    intensities and divided by 255.
    """
    path = Path(path)
    manifest = path / MANIFEST if path.is_dir() else path
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    root = manifest.parent
    with open(manifest, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != ["file", "label"]:
            raise ValueError(f"{manifest}: header must be 'file,label'")
        rows = [(r["file"].strip(), r["label"].strip()) for r in reader]
    if not rows:
        raise ValueError(f"{manifest}: no samples listed")
    samples, labels = [], []
    shape = None
    for fname, label in rows:
        try:
            c = int(label)
        except ValueError:
            c = -1
        if c < 0 or (class_count is not None and c >= class_count):
            raise ValueError(f"{manifest}: unknown label {label!r} for {fname}")
        fpath = root / fname
        if not fpath.exists():
            raise FileNotFoundError(f"sample file missing: {fpath}")
        t = read_tensor(fpath)
        if shape is None:
            shape = t.shape
        elif t.shape != shape:
            raise ValueError(f"{fpath}: shape {t.shape} does not match {shape}")
        samples.append(_normalize(t, fpath))
        labels.append(c)
    count = class_count if class_count is not None else max(labels) + 1
    return LabeledDataset(np.stack(samples), np.array(labels), count, name=name or root.name)


def stratified_split(ds, fractions=(0.6, 0.2, 0.2), seed=0):
    """Per-class shuffled split.

    Validation and test receive ``floor(fraction * n_c)`` samples of each
    class; the remainder goes to training.
    """
    labels = np.asarray(ds.labels if hasattr(ds, "labels") else ds)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 3:
            raise ValueError(f"class {int(c)} has {len(idx)} samples; at least 3 are required")
        idx = idx[rng.permutation(len(idx))]
        n_val = int(np.floor(fractions[1] * len(idx) + 1e-9))
        n_test = int(np.floor(fractions[2] * len(idx) + 1e-9))
        test.extend(idx[:n_test])
        val.extend(idx[n_test:n_test + n_val])
        train.extend(idx[n_test + n_val:])
    return SplitIndices(np.sort(train), np.sort(val), np.sort(test))


def _basis_with_ones(rng, extent, rank):
    # constant vector first so that affine rescaling keeps the multilinear rank
    a = rng.standard_normal((extent, rank))
    a[:, 0] = 1.0
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def make_synthetic(spec, split_seed=None):
    rng = np.random.default_rng(spec.seed)
    bases = [_basis_with_ones(rng, d, r) for d, r in zip(spec.shape, spec.rank)]
    grids = np.meshgrid(*[np.arange(r) for r in spec.rank], indexing="ij")
    decay = 1.0 / (1.0 + sum(grids))
    means = rng.standard_normal((spec.class_count,) + spec.rank) * spec.separation * decay
    n = spec.class_count * spec.samples_per_class
    labels = np.repeat(np.arange(spec.class_count), spec.samples_per_class)
    cores = means[labels] + rng.standard_normal((n,) + spec.rank) * decay
    clean = np.stack([multilinear_map(c, bases) for c in cores])
    lo, hi = clean.min(), clean.max()
    x = (clean - lo) / (hi - lo) if hi > lo else np.zeros_like(clean)
    if spec.noise > 0:
        x = x + spec.noise * rng.standard_normal(x.shape)
        lo, hi = x.min(), x.max()
        x = (x - lo) / (hi - lo)
    ds = LabeledDataset(x, labels, spec.class_count, name="synthetic")
    if spec.samples_per_class >= 3:
        ds.split = stratified_split(ds, seed=spec.seed if split_seed is None else split_seed)
    return ds
