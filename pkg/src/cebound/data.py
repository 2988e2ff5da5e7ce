"""Toy generators, the random-walk simulator, and image-file ingestion."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Shapes read off figures rather than stated; kept here as data so that
# configs can override them (``gen_toy(..., params=...)``).
TOY_PARAMS = {
    "MOG5": {"centers": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]], "std": 0.05},
    "TWO_MOONS": {"radius": 1.0, "offset": 0.5, "jitter": 0.05},
    "GAUSS": {"center": [0.5, 0.5], "std": 0.15},
    "MIX": {"components": 20, "var_low": 0.2, "var_high": 0.8, "center_box": 5.0},
    "UNIFORM5D": {"dim": 5},
}
KINDS = ("MOG5", "TWO_MOONS", "GAUSS", "MIX1", "MIX2", "MIX3", "UNIFORM5D")
DEFAULT_N = {"UNIFORM5D": 10_000}


@dataclass
class Dataset:
    """Samples with the affine map back to raw units: ``raw = samples * scale + offset``."""

    samples: np.ndarray
    name: str
    seed: int | None = None
    offset: np.ndarray | None = None
    scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 2:
            raise ValueError("a dataset needs an N x d sample matrix with N >= 2")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("dataset contains non-finite values")
        d = self.samples.shape[1]
        self.offset = np.zeros(d) if self.offset is None else np.asarray(self.offset, dtype=float)
        self.scale = np.ones(d) if self.scale is None else np.asarray(self.scale, dtype=float)
        if np.any(self.scale <= 0):
            raise ValueError("normalization scale must be positive")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def denormalize(self, x=None):
        x = self.samples if x is None else np.asarray(x)
        return x * self.scale + self.offset

    def to_csv(self, path):
        header = ",".join(f"x{i}" for i in range(self.d))
        np.savetxt(path, self.samples, delimiter=",", header=header, comments="", fmt="%.17g")


def _unit_box(raw):
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    scale = np.where(hi > lo, hi - lo, 1.0)
    return (raw - lo) / scale, lo, scale


def _mix_components(kind, seed, p):
    rng = np.random.default_rng([KINDS.index(kind), seed])
    k = p["components"]
    means = rng.uniform(-p["center_box"], p["center_box"], (k, 2))
    variances = rng.uniform(p["var_low"], p["var_high"], k)
    return rng, means, variances


def gen_toy(kind: str, n: int | None = None, seed: int = 0, params: dict | None = None) -> Dataset:
    """Generate one of the named 2-D (or 5-D) toy sets.

    Two-moons and MIX sets are rescaled to the unit box; the rescaling is kept
    in the dataset's normalization record.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    n = DEFAULT_N.get(kind, 2000) if n is None else int(n)
    if n < 2:
        raise ValueError("n must be >= 2")
    base = "MIX" if kind.startswith("MIX") else kind
    p = {**TOY_PARAMS[base], **(params or {})}
    meta = {"params": p}
    if kind == "MOG5":
        rng = np.random.default_rng(seed)
        centers = np.asarray(p["centers"], dtype=float)
        labels = rng.integers(0, len(centers), n)
        X = centers[labels] + p["std"] * rng.standard_normal((n, 2))
        meta["labels"] = labels
        return Dataset(X, kind, seed, meta=meta)
    if kind == "GAUSS":
        rng = np.random.default_rng(seed)
        X = np.asarray(p["center"]) + p["std"] * rng.standard_normal((n, 2))
        return Dataset(X, kind, seed, meta=meta)
    if kind == "UNIFORM5D":
        rng = np.random.default_rng(seed)
        return Dataset(rng.uniform(0.0, 1.0, (n, p["dim"])), kind, seed, meta=meta)
    if kind == "TWO_MOONS":
        rng = np.random.default_rng(seed)
        upper = rng.random(n) < 0.5
        t = rng.uniform(0.0, np.pi, n)
        r = p["radius"]
        x = np.where(upper, r * np.cos(t), r - r * np.cos(t))
        y = np.where(upper, r * np.sin(t), p["offset"] - r * np.sin(t))
        raw = np.stack([x, y], axis=1) + p["jitter"] * rng.standard_normal((n, 2))
        meta["labels"] = upper.astype(int)
    else:
        rng, means, variances = _mix_components(kind, seed, p)
        labels = rng.integers(0, len(means), n)
        raw = means[labels] + np.sqrt(variances[labels])[:, None] * rng.standard_normal((n, 2))
        meta.update(labels=labels, means=means, variances=variances)
    X, lo, scale = _unit_box(raw)
    return Dataset(X, kind, seed, offset=lo, scale=scale, meta=meta)


@dataclass
class WalkEnsemble:
    positions: np.ndarray  # trials x length x 1
    step_std: float = 1.0
    divisor: float = 30.0

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=1, prepend=0.0)

    def transitions(self):
        """Consecutive ``(x_t, x_{t+1})`` pairs over all trials, starting from 0."""
        full = np.concatenate([np.zeros((self.positions.shape[0], 1, 1)), self.positions], axis=1)
        return full[:, :-1].reshape(-1, 1), full[:, 1:].reshape(-1, 1)


def simulate_random_walk(trials: int = 300, length: int = 100, seed: int = 0,
                         step_std: float = 1.0, divisor: float = 30.0) -> WalkEnsemble:
    """Cumulative sums of Gaussian steps, scaled down by ``divisor``."""
    if trials < 1 or length < 1:
        raise ValueError("trials and length must be >= 1")
    rng = np.random.default_rng(seed)
    steps = step_std * rng.standard_normal((trials, length, 1))
    return WalkEnsemble(np.cumsum(steps, axis=1) / divisor, step_std, divisor)


# -- files -----------------------------------------------------------------------
IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, count=None):
    """Read an IDX array, returning at most ``count`` leading records."""
    with _open(path) as fh:
        head = fh.read(4)
        if len(head) != 4 or head[0] != 0 or head[1] != 0 or head[2] not in IDX_DTYPES:
            raise ValueError(f"{path}: malformed IDX header")
        ndim = head[3]
        if ndim < 1:
            raise ValueError(f"{path}: IDX file declares no dimensions")
        raw_dims = fh.read(4 * ndim)
        if len(raw_dims) != 4 * ndim:
            raise ValueError(f"{path}: truncated IDX header")
        dims = struct.unpack(f">{ndim}I", raw_dims)
        dtype = np.dtype(IDX_DTYPES[head[2]])
        n = dims[0] if count is None else int(count)
        if n > dims[0]:
            raise ValueError(f"{path}: requested {n} records but the file holds {dims[0]}")
        per = int(np.prod(dims[1:], dtype=np.int64)) if ndim > 1 else 1
        buf = fh.read(n * per * dtype.itemsize)
        if len(buf) != n * per * dtype.itemsize:
            raise ValueError(f"{path}: file is shorter than its header claims")
    return np.frombuffer(buf, dtype=dtype).reshape((n, *dims[1:])), head[2]


def load_idx_subset(path, count: int = 800) -> Dataset:
    """First ``count`` records as flat vectors in ``[0, 1]``.

    IDX files (``.idx``/``-ubyte``, optionally gzipped) are read natively;
    ``.npy`` and comma- or whitespace-separated text files are read as float
    matrices and min-max scaled.
    """
    path = Path(path)
    name = path.name[:-3] if path.suffix == ".gz" else path.name
    if name.endswith(".npy"):
        raw = np.load(path)
        kind = None
    elif name.endswith((".csv", ".txt")):
        raw = np.loadtxt(path, delimiter="," if name.endswith(".csv") else None, ndmin=2)
        kind = None
    else:
        raw, kind = read_idx(path, count)
    if raw.shape[0] < count:
        raise ValueError(f"{path}: requested {count} records but the file holds {raw.shape[0]}")
    X = np.asarray(raw[:count], dtype=np.float64).reshape(count, -1)
    if kind == 0x08:
        return Dataset(X / 255.0, path.name, offset=np.zeros(X.shape[1]), scale=np.full(X.shape[1], 255.0))
    lo, hi = X.min(), X.max()
    span = hi - lo if hi > lo else 1.0
    return Dataset((X - lo) / span, path.name, offset=np.full(X.shape[1], lo), scale=np.full(X.shape[1], span))


def write_idx(path, images):
    """Write unsigned-byte images in IDX format (magic ``0x00000803`` for 3-D arrays)."""
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">BBBB", 0, 0, 0x08, images.ndim) + struct.pack(f">{images.ndim}I", *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def image_surrogate(n: int = 800, side: int = 28, classes: int = 10, seed: int = 0) -> Dataset:
    """Digit-like ``side x side`` images in ``[0, 1]`` for runs without an image file.

    Each class is a smooth random stroke pattern; samples shift it by up to two
    pixels, vary its thickness and add light pixel noise, so that samples
    cluster by class with continuous variation inside each class.
    """
    rng = np.random.default_rng([side, classes, seed])
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    protos = []
    for _ in range(classes):
        pts = rng.uniform(0.25, 0.75, (6, 2))
        field_ = np.zeros((side, side))
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            for t in np.linspace(0.0, 1.0, 12):
                cx, cy = ax + t * (bx - ax), ay + t * (by - ay)
                field_ = np.maximum(field_, np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 0.035**2)))
        protos.append(field_)
    protos = np.stack(protos)
    labels = rng.integers(0, classes, n)
    out = np.empty((n, side, side))
    for i, c in enumerate(labels):
        img = np.roll(protos[c], tuple(rng.integers(-2, 3, 2)), axis=(0, 1))
        img = np.clip(img * rng.uniform(0.7, 1.3), 0.0, 1.0) ** rng.uniform(0.6, 1.4)
        out[i] = np.clip(img + 0.05 * rng.standard_normal((side, side)), 0.0, 1.0)
    return Dataset(out.reshape(n, -1), "image_surrogate", seed, meta={"labels": labels})
