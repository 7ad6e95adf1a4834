"""Joint-based alignment of partial views into a common reference frame.

Joints come from an external pose detector. Reliable joints are those whose
confidence lies within ``n_sigma`` standard deviations of that joint's
training mean; their coordinates drive a closed-form least-squares fit of a
uniform scale plus translation onto the reference joint layout.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateConfigurationError, FormatError, InsufficientDataError
from .imaging import ImageBuffer, SimilarityTransform, ValidityMask, resize, warp_similarity

DEFAULT_MIN_SCALE = 1e-3


class JointName(enum.Enum):
    HEAD = "head"
    NECK = "neck"
    RIGHT_SHOULDER = "rightshoulder"
    RIGHT_ELBOW = "rightelbow"
    RIGHT_WRIST = "rightwrist"
    LEFT_SHOULDER = "leftshoulder"
    LEFT_ELBOW = "leftelbow"
    LEFT_WRIST = "leftwrist"
    LEFT_HIP = "lefthip"
    LEFT_KNEE = "leftknee"
    LEFT_ANKLE = "leftankle"
    RIGHT_HIP = "righthip"
    RIGHT_KNEE = "rightknee"
    RIGHT_ANKLE = "rightankle"


JOINT_ORDER: tuple[JointName, ...] = tuple(JointName)
N_JOINTS = len(JOINT_ORDER)


@dataclass(frozen=True, eq=False)
class JointSet:
    """Coordinates (14, 2) in pixels and confidences (14,) in [0, 1]."""

    xy: np.ndarray
    conf: np.ndarray

    def __post_init__(self):
        xy = np.array(self.xy, dtype=np.float64).reshape(N_JOINTS, 2)
        conf = np.array(self.conf, dtype=np.float64).reshape(N_JOINTS)
        if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
            raise ValueError("joint confidences must lie in [0, 1]")
        if not np.all(np.isfinite(xy)):
            raise ValueError("joint coordinates must be finite")
        xy.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "conf", conf)

    def __getitem__(self, name: JointName) -> tuple[float, float, float]:
        k = JOINT_ORDER.index(name)
        return float(self.xy[k, 0]), float(self.xy[k, 1]), float(self.conf[k])

    def to_records(self) -> list[dict]:
        return [
            {"name": j.value, "x": float(self.xy[k, 0]), "y": float(self.xy[k, 1]), "m": float(self.conf[k])}
            for k, j in enumerate(JOINT_ORDER)
        ]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "JointSet":
        if len(records) != N_JOINTS:
            raise ValueError(f"expected {N_JOINTS} joints, got {len(records)}")
        for k, (rec, expected) in enumerate(zip(records, JOINT_ORDER)):
            if rec.get("name") != expected.value:
                raise ValueError(f"joint {k} should be {expected.value!r}, got {rec.get('name')!r}")
        xy = [[float(r["x"]), float(r["y"])] for r in records]
        conf = [float(r["m"]) for r in records]
        return cls(xy, conf)


@dataclass(frozen=True, eq=False)
class ReferenceFrame:
    width: int
    height: int
    mean_xy: np.ndarray
    conf_mean: np.ndarray
    conf_std: np.ndarray
    n_sigma: float = 3.0

    def __post_init__(self):
        if self.n_sigma <= 0:
            raise ValueError("n_sigma must be positive")
        if np.any(np.asarray(self.conf_std) < 0):
            raise ValueError("conf_std must be non-negative")
        if not np.all(np.isfinite(self.mean_xy)):
            raise ValueError("reference coordinates must be finite")


def compute_reference(training_joints: Sequence[JointSet], width: int, height: int,
                      n_sigma: float = 3.0) -> ReferenceFrame:
    """Per-joint mean layout and confidence statistics from training data.

    ``conf_std`` is the population standard deviation, so a single training
    sample yields zero spread.
    """
    if len(training_joints) == 0:
        raise InsufficientDataError("at least one training JointSet is required")
    xy = np.stack([j.xy for j in training_joints])
    conf = np.stack([j.conf for j in training_joints])
    return ReferenceFrame(
        width=int(width),
        height=int(height),
        mean_xy=xy.mean(axis=0),
        conf_mean=conf.mean(axis=0),
        conf_std=conf.std(axis=0),
        n_sigma=float(n_sigma),
    )


def reliable_mask(conf: np.ndarray, ref: ReferenceFrame) -> np.ndarray:
    conf = np.asarray(conf, dtype=np.float64)
    dev = np.abs(conf - ref.conf_mean)
    zero_var = ref.conf_std == 0
    # Zero spread: only an exact match counts as reliable.
    return np.where(zero_var, conf == ref.conf_mean, dev <= ref.n_sigma * ref.conf_std)


def select_reliable(joints: JointSet, ref: ReferenceFrame) -> frozenset[JointName]:
    keep = reliable_mask(joints.conf, ref)
    return frozenset(j for j, k in zip(JOINT_ORDER, keep) if k)


def estimate_similarity(src_points, dst_points, min_scale: float = DEFAULT_MIN_SCALE) -> SimilarityTransform:
    """Least-squares scale and translation taking ``src_points`` onto ``dst_points``.

    Minimizes sum ||s * x_i + t - m_i||^2. With centroids x_bar, m_bar the
    minimizer is s = <x~, m~> / ||x~||^2 and t = m_bar - s * x_bar. A
    non-positive optimum is clamped to ``min_scale``.
    """
    src = np.asarray(src_points, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_points, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise DegenerateConfigurationError("source and destination point counts differ")
    if len(src) < 2:
        raise DegenerateConfigurationError(f"need at least 2 point pairs, got {len(src)}")
    src_bar = src.mean(axis=0)
    dst_bar = dst.mean(axis=0)
    src_c = src - src_bar
    dst_c = dst - dst_bar
    denom = float(np.sum(src_c * src_c))
    if not denom > 0.0:
        raise DegenerateConfigurationError("source points are all coincident")
    scale = float(np.sum(src_c * dst_c)) / denom
    if scale <= 0.0:
        scale = min_scale
    t = dst_bar - scale * src_bar
    return SimilarityTransform(scale, float(t[0]), float(t[1]))


def similarity_residual(t: SimilarityTransform, src_points, dst_points) -> float:
    """Sum of squared residuals of ``t`` mapping src onto dst."""
    src = np.asarray(src_points, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_points, dtype=np.float64).reshape(-1, 2)
    return float(np.sum((t.apply(src) - dst) ** 2))


class AlignmentOutcome(NamedTuple):
    image: ImageBuffer
    mask: ValidityMask
    transform: SimilarityTransform
    n_reliable: int
    fallback: bool


def align_with_report(image: ImageBuffer, joints: JointSet, ref: ReferenceFrame,
                      min_scale: float = DEFAULT_MIN_SCALE) -> AlignmentOutcome:
    keep = reliable_mask(joints.conf, ref)
    n_reliable = int(keep.sum())
    if n_reliable >= 2:
        try:
            t = estimate_similarity(joints.xy[keep], ref.mean_xy[keep], min_scale=min_scale)
        except DegenerateConfigurationError:
            t = None
        if t is not None:
            out, mask = warp_similarity(image, t, ref.width, ref.height)
            return AlignmentOutcome(out, mask, t, n_reliable, False)
    out = resize(image, ref.width, ref.height)
    t = SimilarityTransform(ref.height / image.height, 0.0, 0.0)
    return AlignmentOutcome(out, ValidityMask.all_valid(ref.width, ref.height), t, n_reliable, True)


def align_image(image: ImageBuffer, joints: JointSet, ref: ReferenceFrame,
                min_scale: float = DEFAULT_MIN_SCALE):
    """Warp ``image`` into the reference canvas; returns (image, mask, transform).

    Falls back to a plain resize when fewer than two joints are reliable.
    """
    res = align_with_report(image, joints, ref, min_scale=min_scale)
    return res.image, res.mask, res.transform


# --- joint files -------------------------------------------------------------

@dataclass
class JointRecord:
    image: str
    joints: JointSet
    extra: dict = field(default_factory=dict)


def read_joint_file(path) -> list[JointRecord]:
    """Parse line-delimited JSON ``{image, joints: [{name, x, y, m} x 14]}``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                joints = JointSet.from_records(rec["joints"])
                image = str(rec["image"])
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"bad joint record in {path}: {exc}", line=lineno) from exc
            extra = {k: v for k, v in rec.items() if k not in ("image", "joints")}
            out.append(JointRecord(image, joints, extra))
    return out


def write_joint_file(path, records: Sequence[JointRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            rec = {"image": r.image, "joints": r.joints.to_records(), **r.extra}
            fh.write(json.dumps(rec) + "\n")


def resolve_path(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else Path(base) / q
