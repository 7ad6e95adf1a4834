"""Ranking metrics (CMC, mAP) and the evaluation protocols."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ProtocolError, ShapeError
from .features import CombinedFeature
from .rng import SplitMix64, substream

RANKS = (1, 5, 10)
PROTOCOLS = ("crop-cuhk03", "partial-reid-single-shot", "custom")


@dataclass(frozen=True, eq=False)
class LabeledSet:
    """Identity, camera and flattened feature for every record."""

    identities: np.ndarray
    cameras: np.ndarray
    features: np.ndarray  # (N, L)
    keys: tuple = ()

    def __post_init__(self):
        ids = np.asarray(self.identities)
        cams = np.asarray(self.cameras, dtype=np.int64)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or len(feats) == 0:
            raise ShapeError("a labeled set needs a non-empty (N, L) feature matrix")
        if len(ids) != len(feats) or len(cams) != len(feats):
            raise ShapeError("identities, cameras and features disagree in length")
        keys = tuple(self.keys) if self.keys else tuple(f"{i}" for i in range(len(feats)))
        object.__setattr__(self, "identities", ids)
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "keys", keys)

    def __len__(self) -> int:
        return len(self.features)

    @classmethod
    def from_records(cls, records: Sequence[tuple], keys: Sequence[str] = ()) -> "LabeledSet":
        """Build from (identity, camera, CombinedFeature | array) triples."""
        ids = [r[0] for r in records]
        cams = [r[1] for r in records]
        feats = [r[2].flat() if isinstance(r[2], CombinedFeature) else np.ravel(r[2]) for r in records]
        if len({len(f) for f in feats}) > 1:
            raise ShapeError("features in a labeled set must share one shape")
        return cls(np.array(ids), np.array(cams), np.stack(feats), tuple(keys))

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledSet(self.identities[idx], self.cameras[idx], self.features[idx],
                          tuple(self.keys[i] for i in idx))


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    row_keys: tuple = ()
    col_keys: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError("distance matrix must be 2-D")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("distances must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def distance_matrix(queries: LabeledSet, gallery: LabeledSet) -> DistanceMatrix:
    """Euclidean distances between every query and gallery feature."""
    q, g = queries.features, gallery.features
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != gallery dim {g.shape[1]}")
    # Direct differences rather than the |a|^2 + |b|^2 - 2ab expansion, which
    # loses precision near zero.
    diff = q[:, None, :] - g[None, :, :]
    return DistanceMatrix(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)), queries.keys, gallery.keys)


def _ranked_matches(dist, queries: LabeledSet, gallery: LabeledSet, exclude_same_camera: bool):
    """For each query, the boolean match vector over its ranked, filtered gallery."""
    d = dist.values if isinstance(dist, DistanceMatrix) else np.asarray(dist, dtype=np.float64)
    if d.shape != (len(queries), len(gallery)):
        raise ShapeError(f"distance matrix {d.shape} does not match sets ({len(queries)}, {len(gallery)})")
    out = []
    for i in range(len(queries)):
        order = np.argsort(d[i], kind="stable")
        same_id = gallery.identities[order] == queries.identities[i]
        if exclude_same_camera:
            keep = ~(same_id & (gallery.cameras[order] == queries.cameras[i]))
            same_id = same_id[keep]
        if not same_id.any():
            raise ProtocolError(f"query {queries.keys[i]!r} (identity {queries.identities[i]}) "
                                "has no valid gallery match")
        out.append(same_id)
    return out


def cmc(dist, queries: LabeledSet, gallery: LabeledSet, exclude_same_camera: bool = False) -> np.ndarray:
    """CMC curve: element k-1 is the fraction of queries matched within rank k.

    Ties are broken by gallery record order.
    """
    matches = _ranked_matches(dist, queries, gallery, exclude_same_camera)
    curve = np.zeros(len(gallery))
    for m in matches:
        curve[int(np.argmax(m)):] += 1.0
    return curve / len(matches)


def first_match_ranks(dist, queries, gallery, exclude_same_camera: bool = False) -> np.ndarray:
    return np.array([int(np.argmax(m)) + 1 for m in _ranked_matches(dist, queries, gallery, exclude_same_camera)])


def rank_k(curve: np.ndarray, k: int) -> float:
    return float(curve[min(k, len(curve)) - 1])


def average_precisions(dist, queries, gallery, exclude_same_camera: bool = False) -> np.ndarray:
    aps = []
    for m in _ranked_matches(dist, queries, gallery, exclude_same_camera):
        hits = np.cumsum(m)
        ranks = np.nonzero(m)[0] + 1
        aps.append(float(np.mean(hits[ranks - 1] / ranks)))
    return np.array(aps)


def mean_average_precision(dist, queries, gallery, exclude_same_camera: bool = False) -> float:
    """Mean over queries of the uninterpolated average precision."""
    return float(np.mean(average_precisions(dist, queries, gallery, exclude_same_camera)))


def single_shot_sample(gallery_pool: LabeledSet, rng: SplitMix64) -> LabeledSet:
    """One record per identity, uniform within the identity, in first-seen identity order."""
    groups: "OrderedDict[object, list[int]]" = OrderedDict()
    for i, ident in enumerate(gallery_pool.identities.tolist()):
        groups.setdefault(ident, []).append(i)
    picks = [idx[rng.randbelow(len(idx))] for idx in groups.values()]
    return gallery_pool.subset(picks)


# --- protocols ----------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolConfig:
    """``name`` picks the defaults; ``custom`` reads the two flags as given."""

    name: str = "crop-cuhk03"
    seed: int = 0
    exclude_same_camera: bool | None = None
    single_shot: bool | None = None
    query_camera: int = 0

    def __post_init__(self):
        if self.name not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.name!r}; expected one of {PROTOCOLS}")

    @property
    def resolved(self) -> tuple[bool, bool]:
        """(exclude_same_camera, single_shot)."""
        if self.name == "crop-cuhk03":
            return True, False
        if self.name == "partial-reid-single-shot":
            return False, True
        return bool(self.exclude_same_camera), bool(self.single_shot)


@dataclass
class EvalReport:
    rank_k: dict
    map_score: float
    protocol: str
    trials: int
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        ks = sorted(self.rank_k)
        vals = [self.rank_k[k] for k in ks]
        if any(not (0.0 <= v <= 1.0) for v in vals + [self.map_score]):
            raise ValueError("metrics must lie in [0, 1]")
        if any(b < a - 1e-12 for a, b in zip(vals, vals[1:])):
            raise ValueError("rank-k accuracies must be non-decreasing in k")

    def to_dict(self) -> dict:
        d = {f"r{k}": self.rank_k[k] for k in sorted(self.rank_k)}
        d.update({"map": self.map_score, "protocol": self.protocol, "trials": self.trials, "seed": self.seed})
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        ranks = {int(k[1:]): float(v) for k, v in d.items() if k[:1] == "r" and k[1:].isdigit()}
        return cls(ranks, float(d["map"]), str(d["protocol"]), int(d["trials"]), int(d.get("seed", 0)))

    def table(self, label: str = "") -> str:
        """Percentages laid out as ``method | r1 r5 r10 map``."""
        head = f"{'method':<24}" + "".join(f"{f'r{k}':>8}" for k in sorted(self.rank_k)) + f"{'map':>8}"
        row = f"{(label or self.protocol):<24}" + "".join(
            f"{100 * self.rank_k[k]:>8.1f}" for k in sorted(self.rank_k)) + f"{100 * self.map_score:>8.1f}"
        return head + "\n" + row


def evaluate_sets(queries: LabeledSet, gallery: LabeledSet, exclude_same_camera: bool):
    dist = distance_matrix(queries, gallery)
    curve = cmc(dist, queries, gallery, exclude_same_camera)
    return {k: rank_k(curve, k) for k in RANKS}, mean_average_precision(dist, queries, gallery, exclude_same_camera)


def split_by_camera(pool: LabeledSet, query_camera: int) -> tuple[LabeledSet, LabeledSet]:
    q = np.nonzero(pool.cameras == query_camera)[0]
    g = np.nonzero(pool.cameras != query_camera)[0]
    if len(q) == 0 or len(g) == 0:
        raise ProtocolError(f"camera {query_camera} does not split the pool into query and gallery")
    return pool.subset(q), pool.subset(g)


def run_protocol(config: ProtocolConfig, queries: LabeledSet, gallery: LabeledSet | None = None,
                 trials: int = 10) -> EvalReport:
    """Evaluate ``queries`` against ``gallery`` under a named protocol.

    Without an explicit gallery the query set is split by camera
    (``config.query_camera`` becomes the probe side). Single-shot protocols
    resample the gallery once per trial from substream (seed, trial) and
    average the metrics; deterministic protocols run a single trial.
    """
    if gallery is None:
        queries, gallery = split_by_camera(queries, config.query_camera)
    exclude, single_shot = config.resolved
    if not single_shot:
        ranks, m = evaluate_sets(queries, gallery, exclude)
        return EvalReport(ranks, m, config.name, 1, config.seed)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rank_sums = {k: 0.0 for k in RANKS}
    map_sum = 0.0
    for t in range(trials):
        g = single_shot_sample(gallery, substream(config.seed, t))
        ranks, m = evaluate_sets(queries, g, exclude)
        for k in RANKS:
            rank_sums[k] += ranks[k]
        map_sum += m
    return EvalReport({k: v / trials for k, v in rank_sums.items()}, map_sum / trials, config.name, trials,
                      config.seed)


def expected_random_ap(gallery_size: int) -> float:
    """E[AP] with one relevant item at a uniformly random rank: H_G / G."""
    return math.fsum(1.0 / k for k in range(1, gallery_size + 1)) / gallery_size
