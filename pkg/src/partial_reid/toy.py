"""Procedural striped "pedestrians" for running every command without external data.

Identity i is a stack of horizontal bands coloured by a shared palette
rotated by i. Camera 0 sees the top of the figure, camera 1 the bottom; the
two views differ by a pure vertical translation. Because every identity is a
rotation of the same palette, naively resizing a partial view makes it look
like a different identity, while aligning it on the joints does not.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .alignment import JointRecord, JointSet, N_JOINTS, write_joint_file
from .cropgen import FrameRecord, write_frame_manifest
from .imaging import ImageBuffer, save_image
from .rng import substream

WIDTH = 32
HEIGHT = 96
N_IDENTITIES = 8
N_BANDS = 6
# Visible rows [start, stop) per camera.
VIEW_ROWS = {0: (0, 60), 1: (36, 96)}

# Channel levels are distinct per colour and stay clear of 0 so padding
# never lands in a colour's histogram bin.
_LEVELS = np.linspace(0.18, 0.88, N_IDENTITIES)
PALETTE = np.stack([_LEVELS[[0, 3, 6, 1, 4, 7, 2, 5]],
                    _LEVELS[[5, 0, 3, 6, 1, 4, 7, 2]],
                    _LEVELS[[2, 5, 0, 3, 6, 1, 4, 7]]], axis=1)

# (x, y) of head, neck, r-shoulder, r-elbow, r-wrist, l-shoulder, l-elbow,
# l-wrist, l-hip, l-knee, l-ankle, r-hip, r-knee, r-ankle.
JOINT_TEMPLATE = np.array([
    [16, 6], [16, 16], [10, 19], [8, 32], [7, 44], [22, 19], [24, 32], [25, 44],
    [20, 50], [20, 70], [20, 90], [12, 50], [12, 70], [12, 90],
], dtype=np.float64)

MISSING_CONFIDENCE = 0.2


def person(identity: int) -> ImageBuffer:
    band = HEIGHT // N_BANDS
    img = np.zeros((HEIGHT, WIDTH, 3))
    for k in range(N_BANDS):
        img[k * band:(k + 1) * band] = PALETTE[(identity + k) % len(PALETTE)]
    return ImageBuffer(img)


def _confidences(seed: int, *keys: int) -> np.ndarray:
    rng = substream(seed, *keys)
    return np.clip([0.8 + 0.05 * rng.normal() for _ in range(N_JOINTS)], 0.0, 1.0)


def full_joints(identity: int, camera: int, seed: int = 0) -> JointSet:
    return JointSet(JOINT_TEMPLATE, _confidences(seed, 1, identity, camera))


def view(identity: int, camera: int, seed: int = 0) -> tuple[ImageBuffer, JointSet]:
    """Partial view and its joints; joints outside the view get a low confidence."""
    start, stop = VIEW_ROWS[camera]
    img = ImageBuffer(person(identity).data[start:stop].copy())
    conf = _confidences(seed, 2, identity, camera)
    inside = (JOINT_TEMPLATE[:, 1] >= start) & (JOINT_TEMPLATE[:, 1] < stop)
    conf = np.where(inside, conf, MISSING_CONFIDENCE)
    xy = JOINT_TEMPLATE - np.array([0.0, start])
    return img, JointSet(xy, conf)


def write_toy_dataset(out_dir, seed: int = 0, n_identities: int = N_IDENTITIES) -> dict:
    """Write frames, views, manifests and joint files; returns their paths."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "views").mkdir(parents=True, exist_ok=True)
    frames, train_joints, views, view_joints = [], [], [], []
    for ident in range(n_identities):
        full = person(ident)
        for cam in sorted(VIEW_ROWS):
            fname = f"frames/{ident}_{cam}.png"
            save_image(full, out / fname)
            frames.append(FrameRecord(ident, cam, fname))
            train_joints.append(JointRecord(fname, full_joints(ident, cam, seed), {"identity": ident, "camera": cam}))
            vimg, vj = view(ident, cam, seed)
            vname = f"views/{ident}_{cam}.png"
            save_image(vimg, out / vname)
            views.append(FrameRecord(ident, cam, vname))
            view_joints.append(JointRecord(vname, vj, {"identity": ident, "camera": cam}))
    paths = {
        "frames": out / "frames.jsonl",
        "views": out / "views.jsonl",
        "train_joints": out / "train_joints.jsonl",
        "view_joints": out / "view_joints.jsonl",
    }
    write_frame_manifest(paths["frames"], frames)
    write_frame_manifest(paths["views"], views)
    write_joint_file(paths["train_joints"], train_joints)
    write_joint_file(paths["view_joints"], view_joints)
    (out / "toy.json").write_text(json.dumps({"width": WIDTH, "height": HEIGHT, "identities": n_identities,
                                              "seed": seed}) + "\n")
    return paths
