"""Stride-pooled appearance features and their per-stride combination.

An image is cut into ``n`` horizontal bands and each band is described
independently. Features of the hallucinated frame (h) and the aligned frame
(phi) are concatenated band by band, giving F(h, phi) with one
[f_i(h) || f_i(phi)] vector per stride. Matching uses Euclidean distance.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateLabelsError, FormatError, ShapeError, TooSmallError
from .imaging import ImageBuffer
from .rng import SplitMix64, substream

DEFAULT_STRIDES = 6
DEFAULT_BINS = 32
PRESET_DIM = 256
FEATURE_MAGIC = b"PRIDF1"


@dataclass(frozen=True, eq=False)
class StrideFeatures:
    vectors: np.ndarray  # (n_strides, dim)

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ShapeError(f"expected (n_strides, dim) matrix, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("stride features must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def n_strides(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class CombinedFeature:
    """Per-stride [f_i(h) || f_i(phi)]; ``vectors`` has shape (n_strides, sources*dim)."""

    vectors: np.ndarray
    sources: int = 2

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] % self.sources:
            raise ShapeError(f"bad combined feature shape {v.shape} for {self.sources} sources")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def n_strides(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1] // self.sources

    def flat(self) -> np.ndarray:
        return self.vectors.ravel()

    def __len__(self) -> int:
        return self.vectors.size


# --- strides and the histogram embedder -------------------------------------------

def stride_bounds(height: int, n: int) -> list[int]:
    """Band boundaries floor(i * H / n) for i = 0..n; any remainder lands in the last bands."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if height < n:
        raise TooSmallError(f"image height {height} is smaller than the stride count {n}")
    return [i * height // n for i in range(n + 1)]


def extract_strides(image: ImageBuffer, n: int) -> list[ImageBuffer]:
    b = stride_bounds(image.height, n)
    return [ImageBuffer(image.data[b[i]:b[i + 1]]) for i in range(n)]


def _histograms(band: np.ndarray, bins: int) -> np.ndarray:
    idx = np.minimum((band * bins).astype(np.intp), bins - 1)
    per_channel = [np.bincount(idx[:, :, c].ravel(), minlength=bins) for c in range(band.shape[2])]
    counts = np.concatenate(per_channel).astype(np.float64)
    return counts / (band.shape[0] * band.shape[1])


def random_projection(in_dim: int, out_dim: int, seed: int = 0) -> np.ndarray:
    """Fixed Gaussian (out_dim, in_dim) matrix scaled by 1/sqrt(in_dim)."""
    rng = substream(seed, 0x9407, in_dim, out_dim)
    vals = np.array([rng.normal() for _ in range(in_dim * out_dim)])
    return vals.reshape(out_dim, in_dim) / math.sqrt(in_dim)


def histogram_embed(image: ImageBuffer, n: int = DEFAULT_STRIDES, bins_per_channel: int = DEFAULT_BINS,
                    projection: np.ndarray | None = None, l2_normalize: bool = False) -> StrideFeatures:
    """Per-stride, per-channel normalized intensity histograms.

    Each channel histogram sums to 1 within its stride, so ``dim`` is
    channels * bins unless a (dim, channels*bins) ``projection`` is given.
    """
    if bins_per_channel < 2:
        raise ValueError("bins_per_channel must be >= 2")
    rows = np.stack([_histograms(band.data, bins_per_channel) for band in extract_strides(image, n)])
    if projection is not None:
        rows = rows @ np.asarray(projection).T
    if l2_normalize:
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        rows = rows / np.where(norms > 0, norms, 1.0)
    return StrideFeatures(rows)


@dataclass
class HistogramEmbedder:
    """Deterministic stride histogram embedder with optional fixed projection.

    ``dim=None`` keeps the raw channels*bins histogram; any other value
    projects each stride to ``dim`` with a seeded random matrix.
    """

    n_strides: int = DEFAULT_STRIDES
    bins: int = DEFAULT_BINS
    dim: int | None = None
    channels: int = 3
    seed: int = 0
    l2_normalize: bool = False
    _projection: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        raw = self.channels * self.bins
        if self.dim is not None and self.dim != raw:
            self._projection = random_projection(raw, self.dim, self.seed)

    @property
    def out_dim(self) -> int:
        return self.dim if self.dim is not None else self.channels * self.bins

    def __call__(self, image: ImageBuffer) -> StrideFeatures:
        if image.channels != self.channels:
            raise ShapeError(f"embedder configured for {self.channels} channels, image has {image.channels}")
        return histogram_embed(image, self.n_strides, self.bins, self._projection, self.l2_normalize)


def preset_256(**kw) -> HistogramEmbedder:
    """Six strides projected to 256 dimensions each."""
    return HistogramEmbedder(n_strides=DEFAULT_STRIDES, dim=PRESET_DIM, **kw)


class PrecomputedEmbedder:
    """Looks up externally computed (n_strides, dim) features by image key."""

    def __init__(self, table: dict[str, np.ndarray]):
        shapes = {np.shape(v) for v in table.values()}
        if len(shapes) > 1:
            raise ShapeError(f"precomputed features have mixed shapes: {sorted(shapes)}")
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}

    @classmethod
    def from_npz(cls, path) -> "PrecomputedEmbedder":
        with np.load(path) as z:
            return cls({k: z[k] for k in z.files})

    def __call__(self, key) -> StrideFeatures:
        return StrideFeatures(self.table[str(key)])


# --- combination and classifier -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StrideProjection:
    """Per-stride linear map (n_strides, out, in) plus bias, optional ReLU."""

    weight: np.ndarray
    bias: np.ndarray
    relu: bool = False

    def apply(self, stacked: np.ndarray) -> np.ndarray:
        out = np.einsum("soi,si->so", self.weight, stacked) + self.bias
        return np.maximum(out, 0.0) if self.relu else out


def combine(h_feats: StrideFeatures, phi_feats: StrideFeatures,
            projection: StrideProjection | None = None) -> CombinedFeature:
    if h_feats.vectors.shape != phi_feats.vectors.shape:
        raise ShapeError(f"cannot combine shapes {h_feats.vectors.shape} and {phi_feats.vectors.shape}")
    stacked = np.concatenate([h_feats.vectors, phi_feats.vectors], axis=1)
    if projection is not None:
        return CombinedFeature(projection.apply(stacked), sources=1)
    return CombinedFeature(stacked, sources=2)


def feature_distance(a: CombinedFeature, b: CombinedFeature) -> float:
    if a.vectors.shape != b.vectors.shape:
        raise ShapeError(f"feature shapes differ: {a.vectors.shape} vs {b.vectors.shape}")
    d = a.vectors - b.vectors
    return float(np.sqrt(np.sum(d * d)))


@dataclass
class StrideClassifier:
    """One softmax classifier per stride over the combined stride vector."""

    weight: np.ndarray  # (n_strides, n_classes, in_dim)
    bias: np.ndarray  # (n_strides, n_classes)
    classes: list

    @classmethod
    def zeros(cls, n_strides: int, in_dim: int, classes: Sequence) -> "StrideClassifier":
        k = len(classes)
        return cls(np.zeros((n_strides, k, in_dim)), np.zeros((n_strides, k)), list(classes))

    def scores(self, x: np.ndarray) -> np.ndarray:
        """x: (batch, n_strides, in_dim) -> (batch, n_strides, n_classes)."""
        return np.einsum("ski,bsi->bsk", self.weight, x) + self.bias[None]

    def as_projection(self, relu: bool = False) -> StrideProjection:
        return StrideProjection(self.weight.copy(), self.bias.copy(), relu)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def stride_cross_entropy(clf: StrideClassifier, x: np.ndarray, y: np.ndarray):
    """Summed-over-strides mean cross-entropy and its gradients (dW, db)."""
    logp = _log_softmax(clf.scores(x))
    b = len(y)
    loss = -float(logp[np.arange(b), :, y].sum(axis=1).mean())
    p = np.exp(logp)
    p[np.arange(b), :, y] -= 1.0
    p /= b
    dw = np.einsum("bsk,bsi->ski", p, x)
    db = p.sum(axis=0)
    return loss, dw, db


class ClassifierFit(NamedTuple):
    classifier: StrideClassifier
    trace: list[float]


def train_stride_classifier(features: Sequence[tuple[CombinedFeature, object]], steps: int, lr: float,
                            rng: SplitMix64 | None = None, batch_size: int | None = None,
                            init: StrideClassifier | None = None) -> ClassifierFit:
    """Gradient descent on the sum over strides of softmax cross-entropy.

    Full-batch by default; with ``batch_size`` minibatches are drawn from
    ``rng``. The trace holds the summed loss of each step's batch before
    the update.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    labels = [lab for _, lab in features]
    classes = sorted(set(labels), key=repr)
    if len(classes) < 2:
        raise DegenerateLabelsError("need at least two identities to train a classifier")
    x = np.stack([f.vectors for f, _ in features])
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[lab] for lab in labels])
    clf = init if init is not None else StrideClassifier.zeros(x.shape[1], x.shape[2], classes)
    w, b = clf.weight.copy(), clf.bias.copy()
    trace = []
    n = len(y)
    for _ in range(steps):
        if batch_size is None or batch_size >= n:
            sel = slice(None)
        else:
            sel = np.array(sorted((rng or SplitMix64(0)).permutation(n)[:batch_size]))
        cur = StrideClassifier(w, b, classes)
        loss, dw, db = stride_cross_entropy(cur, x[sel], y[sel])
        if not math.isfinite(loss):
            raise FloatingPointError("classifier loss became non-finite")
        trace.append(loss)
        w = w - lr * dw
        b = b - lr * db
    return ClassifierFit(StrideClassifier(w, b, classes), trace)


# --- feature files --------------------------------------------------------------------

@dataclass
class FeatureRecord:
    identity: int
    camera: int
    feature: CombinedFeature


def identity_key(label) -> int:
    """64-bit key for an identity label; integers map to themselves."""
    if isinstance(label, (int, np.integer)) and 0 <= int(label) < 2**64:
        return int(label)
    s = str(label)
    if s.isdigit() and int(s) < 2**64:
        return int(s)
    import hashlib

    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "little")


def write_feature_file(path, records: Sequence[FeatureRecord]) -> None:
    """Binary little-endian feature file.

    Layout: b"PRIDF1", u32 {count, n_strides, dim, sources}, then per record
    u64 identity, u32 camera, and n_strides*dim*sources float32 values in
    stride-major order.
    """
    if records:
        f0 = records[0].feature
        n_strides, dim, sources = f0.n_strides, f0.dim, f0.sources
    else:
        n_strides = dim = 0
        sources = 2
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<4I", len(records), n_strides, dim, sources))
        for r in records:
            f = r.feature
            if (f.n_strides, f.dim, f.sources) != (n_strides, dim, sources):
                raise ShapeError("all records in a feature file must share one shape")
            fh.write(struct.pack("<QI", identity_key(r.identity), int(r.camera)))
            fh.write(np.asarray(f.flat(), dtype="<f4").tobytes())


class FeatureFile(NamedTuple):
    n_strides: int
    dim: int
    sources: int
    records: list[FeatureRecord]


def read_feature_file(path) -> FeatureFile:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != FEATURE_MAGIC or len(blob) < 22:
        raise FormatError(f"{path}: not a feature file")
    count, n_strides, dim, sources = struct.unpack_from("<4I", blob, 6)
    if sources not in (1, 2):
        raise FormatError(f"{path}: sources must be 1 or 2, got {sources}")
    width = n_strides * dim * sources
    rec_size = 12 + 4 * width
    if len(blob) != 22 + count * rec_size:
        raise FormatError(f"{path}: size does not match header ({count} records)")
    records = []
    off = 22
    for _ in range(count):
        ident, cam = struct.unpack_from("<QI", blob, off)
        vals = np.frombuffer(blob, dtype="<f4", count=width, offset=off + 12).astype(np.float64)
        records.append(FeatureRecord(ident, cam, CombinedFeature(vals.reshape(n_strides, dim * sources), sources)))
        off += rec_size
    return FeatureFile(n_strides, dim, sources, records)


Embedder = Callable[[ImageBuffer], StrideFeatures]
