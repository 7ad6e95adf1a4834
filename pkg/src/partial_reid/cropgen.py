"""Synthetic partial-view datasets built from paired random crops.

Each crop keeps the frame's aspect ratio and covers a fraction ``s`` of its
area, so its normalized side is sqrt(s). Cross-camera crops of one identity
are sampled jointly so that their overlap, measured relative to the area of a
single crop, is at least ``o_min``.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import FormatError, MismatchedCropsError
from .imaging import CropRect, crop, load_image, save_image
from .rng import SplitMix64, substream

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 10_000

# Standard crop settings (s, o_min).
STANDARD_SETTINGS = ((0.5, 0.5), (0.25, 0.5), (0.5, 0.25), (0.25, 0.0))


@dataclass(frozen=True)
class CropSpec:
    s: float
    o_min: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.s <= 1.0):
            raise ValueError(f"s must lie in (0, 1], got {self.s}")
        if not (0.0 <= self.o_min <= 1.0):
            raise ValueError(f"o_min must lie in [0, 1], got {self.o_min}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def side(self) -> float:
        return math.sqrt(self.s)

    def to_dict(self) -> dict:
        return {"s": self.s, "o_min": self.o_min, "seed": int(self.seed)}


def _intersection_1d(a0: float, aw: float, b0: float, bw: float) -> float:
    if aw == bw:
        # Equal extents: w - |offset| avoids the round-off of (x + w) - x.
        return max(0.0, aw - abs(a0 - b0))
    return max(0.0, min(a0 + aw, b0 + bw) - max(a0, b0))


def overlap(a: CropRect, b: CropRect) -> float:
    """Intersection area over the area of one crop (both crops share an area)."""
    if not math.isclose(a.area, b.area, rel_tol=1e-9, abs_tol=0.0):
        raise MismatchedCropsError(f"crop areas differ: {a.area} vs {b.area}")
    inter = _intersection_1d(a.x, a.w, b.x, b.w) * _intersection_1d(a.y, a.h, b.y, b.h)
    return min(1.0, inter / a.area)


def _random_rect(side: float, rng: SplitMix64) -> CropRect:
    span = 1.0 - side
    return CropRect(rng.uniform() * span, rng.uniform() * span, side, side)


def _fallback_partner(a: CropRect, o_min: float) -> CropRect:
    # Overlap of a copy shifted by d along one axis is 1 - d / side.
    side = a.w
    span = 1.0 - side
    want = side * (1.0 - o_min)
    moves = [
        (min(want, span - a.x), (1, 0)),
        (min(want, a.x), (-1, 0)),
        (min(want, span - a.y), (0, 1)),
        (min(want, a.y), (0, -1)),
    ]
    shift, (dx, dy) = max(moves, key=lambda m: m[0])
    shift = max(0.0, shift)
    while True:
        b = CropRect(a.x + dx * shift, a.y + dy * shift, side, side)
        if shift == 0.0 or overlap(a, b) >= o_min:
            return b
        # Round-off can leave the exact-boundary shift a hair short.
        shift *= 1.0 - 1e-12


def sample_crop_pair(spec: CropSpec, rng: SplitMix64) -> tuple[CropRect, CropRect]:
    """Draw crop ``a`` uniformly, then rejection-sample ``b`` until the overlap holds.

    After MAX_ATTEMPTS rejections ``b`` is ``a`` shifted by the largest offset
    that still meets ``o_min``.
    """
    side = spec.side
    a = _random_rect(side, rng)
    for _ in range(MAX_ATTEMPTS):
        b = _random_rect(side, rng)
        if overlap(a, b) >= spec.o_min:
            return a, b
    return a, _fallback_partner(a, spec.o_min)


# --- dataset generation --------------------------------------------------------

@dataclass(frozen=True)
class FrameRecord:
    identity: str | int
    camera: int
    frame: str


@dataclass
class CropRecord:
    identity: str | int
    camera: int
    frame: str
    rect: CropRect
    partner_overlap: float
    source: str = ""
    pair: int = 0
    spec: dict = field(default_factory=dict)

    def to_json(self) -> str:
        rec = OrderedDict(
            identity=self.identity,
            camera=self.camera,
            frame=self.frame,
            rect=self.rect.to_dict(),
            partner_overlap=self.partner_overlap,
            source=self.source,
            pair=self.pair,
            spec=self.spec,
        )
        return json.dumps(rec)

    @classmethod
    def from_dict(cls, d: dict) -> "CropRecord":
        return cls(
            identity=d["identity"],
            camera=int(d["camera"]),
            frame=str(d["frame"]),
            rect=CropRect.from_dict(d["rect"]),
            partner_overlap=float(d["partner_overlap"]),
            source=str(d.get("source", "")),
            pair=int(d.get("pair", 0)),
            spec=dict(d.get("spec", {})),
        )


@dataclass
class GenerationReport:
    records: list[CropRecord]
    skipped_identities: list

    @property
    def n_pairs(self) -> int:
        return len(self.records) // 2

    def overlap_stats(self) -> dict:
        ov = [r.partner_overlap for r in self.records[::2]]
        if not ov:
            return {"pairs": 0}
        return {"pairs": len(ov), "min": min(ov), "mean": sum(ov) / len(ov), "max": max(ov)}


def read_frame_manifest(path) -> list[FrameRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(FrameRecord(d["identity"], int(d["camera"]), str(d["frame"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"bad frame record in {path}: {exc}", line=lineno) from exc
    return out


def write_frame_manifest(path, frames: Iterable[FrameRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            fh.write(json.dumps({"identity": f.identity, "camera": f.camera, "frame": f.frame}) + "\n")


def write_manifest(path, records: Iterable[CropRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_manifest(path) -> list[CropRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(CropRecord.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise FormatError(f"bad crop record in {path}: {exc}", line=lineno) from exc
    return out


def cross_camera_pairs(frames: Sequence[FrameRecord]):
    """Yield (identity, frame_a, frame_b) for cross-camera frames, input order.

    Returns the pairs and the identities seen under a single camera only.
    """
    by_id: "OrderedDict[object, list[FrameRecord]]" = OrderedDict()
    for f in frames:
        by_id.setdefault(f.identity, []).append(f)
    pairs, skipped = [], []
    for ident, group in by_id.items():
        if len({f.camera for f in group}) < 2:
            skipped.append(ident)
            continue
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                if group[i].camera != group[j].camera:
                    pairs.append((ident, group[i], group[j]))
    return pairs, skipped


def generate_dataset(frames: Sequence[FrameRecord], spec: CropSpec, out_dir=None,
                     frame_root=None) -> GenerationReport:
    """Emit paired crops for every cross-camera frame pair of each identity.

    Pair ``p`` draws from the substream keyed by (seed, p), so the output is a
    pure function of the frame listing and ``spec``. When ``out_dir`` is
    given the crops are written there as ``{identity}_{camera}_{index}.png``;
    ``index`` is the record's position in the emitted manifest.
    """
    pairs, skipped = cross_camera_pairs(frames)
    if skipped:
        log.warning("skipped %d identities seen by a single camera", len(skipped))
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    root = Path(frame_root) if frame_root is not None else None
    records: list[CropRecord] = []
    for p, (ident, fa, fb) in enumerate(pairs):
        ra, rb = sample_crop_pair(spec, substream(spec.seed, p))
        ov = overlap(ra, rb)
        for f, rect in ((fa, ra), (fb, rb)):
            name = f"{ident}_{f.camera}_{len(records)}.png"
            if out_path is not None:
                src = Path(f.frame)
                if root is not None and not src.is_absolute():
                    src = root / src
                save_image(crop(load_image(src), rect), out_path / name)
            records.append(CropRecord(ident, f.camera, name, rect, ov, source=f.frame, pair=p,
                                      spec=spec.to_dict()))
    return GenerationReport(records, skipped)
