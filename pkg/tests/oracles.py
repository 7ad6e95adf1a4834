"""Independent reference implementations used only by the tests.

Each oracle is written from the definition with plain loops and shares no
code with the package.
"""

from __future__ import annotations

import math

import numpy as np
from shapely.geometry import box


def overlap_oracle(a, b) -> float:
    """Intersection over single-crop area via polygon clipping."""
    pa = box(a.x, a.y, a.x + a.w, a.y + a.h)
    pb = box(b.x, b.y, b.x + b.w, b.y + b.h)
    return pa.intersection(pb).area / pa.area


def similarity_oracle(src, dst):
    """Scale/translation least squares via the full normal equations.

    Unknowns (s, tx, ty); every point contributes two rows
    [x, 1, 0] and [y, 0, 1].
    """
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, 1.0, 0.0])
        rhs.append(u)
        rows.append([y, 0.0, 1.0])
        rhs.append(v)
    a = np.array(rows)
    sol = np.linalg.solve(a.T @ a, a.T @ np.array(rhs))
    return float(sol[0]), float(sol[1]), float(sol[2])


def two_pass_stats(values):
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def bilinear_at(img: np.ndarray, x: float, y: float) -> np.ndarray:
    """Bilinear sample of an (H, W, C) array at an in-range point, by hand."""
    h, w = img.shape[:2]
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x0, y0 = min(max(x0, 0), w - 1), min(max(y0, 0), h - 1)
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    out = []
    for c in range(img.shape[2]):
        top = img[y0, x0, c] * (1 - fx) + img[y0, x1, c] * fx
        bot = img[y1, x0, c] * (1 - fx) + img[y1, x1, c] * fx
        out.append(top * (1 - fy) + bot * fy)
    return np.array(out)


def fill_oracle(img: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Pixel-by-pixel interpreter of the mirror / row mean / global mean / 0 rule."""
    h, w, c = img.shape
    out = img.copy()
    all_valid = [(yy, xx) for yy in range(h) for xx in range(w) if valid[yy, xx]]
    for y in range(h):
        for x in range(w):
            if valid[y, x]:
                continue
            if valid[y, w - 1 - x]:
                out[y, x] = img[y, w - 1 - x]
                continue
            row = [img[y, xx] for xx in range(w) if valid[y, xx]]
            if row:
                out[y, x] = sum(row) / len(row)
            elif all_valid:
                out[y, x] = sum(img[p] for p in all_valid) / len(all_valid)
            else:
                out[y, x] = np.zeros(c)
    return out


def brute_ranks_and_aps(dist, q_ids, q_cams, g_ids, g_cams, exclude_same_camera):
    """First-match rank and AP per query by explicit enumeration."""
    ranks, aps = [], []
    for i in range(len(q_ids)):
        cand = []
        for j in range(len(g_ids)):
            if exclude_same_camera and g_ids[j] == q_ids[i] and g_cams[j] == q_cams[i]:
                continue
            cand.append((dist[i][j], j))
        # Sort on (distance, gallery index): ties fall back to record order.
        cand.sort()
        rel = [g_ids[j] == q_ids[i] for _, j in cand]
        first = None
        hits = 0
        precisions = []
        for r, ok in enumerate(rel, start=1):
            if ok:
                hits += 1
                precisions.append(hits / r)
                if first is None:
                    first = r
        ranks.append(first)
        aps.append(sum(precisions) / len(precisions) if precisions else None)
    return ranks, aps


def brute_cmc(ranks, gallery_size):
    return [sum(1 for r in ranks if r <= k) / len(ranks) for k in range(1, gallery_size + 1)]
