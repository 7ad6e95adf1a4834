"""Cycle-consistent hallucination objectives and a desk-scale trainer.

Two generators map between aligned partial views (phi) and full-body views
(h): PCN completes phi -> h, PGN degrades h -> phi. Each has a
discriminator in its target domain. The objective is

    L_tot = L_GAN(PGN, D_phi) + L_GAN(PCN, D_h) + lambda * L_cyc(PGN, PCN)

with least-squares adversarial terms and an L1 cycle term. Images enter as
flattened vectors. ``baseline_fill`` is a deterministic, untrained stand-in
for PCN.
"""

from __future__ import annotations

import copy
import csv
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DivergenceError, EmptyBatchError, FormatError, ShapeError
from .imaging import ImageBuffer, ValidityMask, resize
from .rng import SplitMix64, substream

PARAM_MAGIC = b"PMNMAP01"


# --- differentiable maps ----------------------------------------------------------

class DifferentiableMap:
    """Parametric map on row-batched vectors with a flat parameter vector.

    Subclasses implement ``forward`` and ``backward``; ``backward`` returns
    the gradient with respect to the parameters and to the input, given the
    output cotangent.
    """

    in_dim: int
    out_dim: int
    params: np.ndarray

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, x: np.ndarray, cot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(self._check_input(x))

    def parameter_gradient(self, x, cot) -> np.ndarray:
        return self.backward(self._check_input(x), np.asarray(cot, dtype=np.float64))[0]

    def with_params(self, params) -> "DifferentiableMap":
        params = np.array(params, dtype=np.float64).reshape(-1)
        if params.shape != self.params.shape:
            raise ShapeError(f"expected {self.params.size} parameters, got {params.size}")
        clone = copy.copy(self)
        clone.params = params
        return clone

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{type(self).__name__} expects (batch, {self.in_dim}) input, got {x.shape}")
        return x


class IdentityMap(DifferentiableMap):
    def __init__(self, dim: int):
        self.in_dim = self.out_dim = dim
        self.params = np.zeros(0)

    def forward(self, x):
        return x.copy()

    def backward(self, x, cot):
        return np.zeros(0), cot.copy()


class LinearMap(DifferentiableMap):
    """y = x W^T + b; parameters are W (row-major) followed by b."""

    def __init__(self, in_dim: int, out_dim: int, params=None):
        self.in_dim, self.out_dim = in_dim, out_dim
        n = out_dim * in_dim + out_dim
        self.params = np.zeros(n) if params is None else np.array(params, dtype=np.float64).reshape(n)

    @property
    def weight(self) -> np.ndarray:
        return self.params[: self.out_dim * self.in_dim].reshape(self.out_dim, self.in_dim)

    @property
    def bias(self) -> np.ndarray:
        return self.params[self.out_dim * self.in_dim:]

    def forward(self, x):
        return x @ self.weight.T + self.bias

    def backward(self, x, cot):
        dw = cot.T @ x
        db = cot.sum(axis=0)
        return np.concatenate([dw.ravel(), db]), cot @ self.weight

    @classmethod
    def affine(cls, weight, bias) -> "LinearMap":
        weight = np.atleast_2d(np.asarray(weight, dtype=np.float64))
        bias = np.atleast_1d(np.asarray(bias, dtype=np.float64))
        out_dim, in_dim = weight.shape
        return cls(in_dim, out_dim, np.concatenate([weight.ravel(), np.broadcast_to(bias, (out_dim,))]))


class TwoLayerMap(DifferentiableMap):
    """y = tanh(x W1^T + b1) W2^T + b2."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, params=None):
        self.in_dim, self.hidden, self.out_dim = in_dim, hidden, out_dim
        self._sizes = (hidden * in_dim, hidden, out_dim * hidden, out_dim)
        n = sum(self._sizes)
        self.params = np.zeros(n) if params is None else np.array(params, dtype=np.float64).reshape(n)

    def _unpack(self):
        a, b, c, _ = self._sizes
        p = self.params
        w1 = p[:a].reshape(self.hidden, self.in_dim)
        b1 = p[a:a + b]
        w2 = p[a + b:a + b + c].reshape(self.out_dim, self.hidden)
        b2 = p[a + b + c:]
        return w1, b1, w2, b2

    def forward(self, x):
        w1, b1, w2, b2 = self._unpack()
        return np.tanh(x @ w1.T + b1) @ w2.T + b2

    def backward(self, x, cot):
        w1, b1, w2, b2 = self._unpack()
        hid = np.tanh(x @ w1.T + b1)
        dw2 = cot.T @ hid
        db2 = cot.sum(axis=0)
        dpre = (cot @ w2) * (1.0 - hid * hid)
        dw1 = dpre.T @ x
        db1 = dpre.sum(axis=0)
        return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2]), dpre @ w1


def random_init(m: DifferentiableMap, rng: SplitMix64, gain: float = 1.0) -> DifferentiableMap:
    """Gaussian init scaled by 1/sqrt(fan_in) for weights; zero biases."""
    if isinstance(m, LinearMap):
        w = np.array([rng.normal() for _ in range(m.out_dim * m.in_dim)]) * gain / math.sqrt(m.in_dim)
        return m.with_params(np.concatenate([w, np.zeros(m.out_dim)]))
    if isinstance(m, TwoLayerMap):
        w1 = np.array([rng.normal() for _ in range(m.hidden * m.in_dim)]) * gain / math.sqrt(m.in_dim)
        w2 = np.array([rng.normal() for _ in range(m.out_dim * m.hidden)]) * gain / math.sqrt(m.hidden)
        return m.with_params(np.concatenate([w1, np.zeros(m.hidden), w2, np.zeros(m.out_dim)]))
    return m


# --- objectives -----------------------------------------------------------------

@dataclass(frozen=True)
class CycleObjectiveConfig:
    lam: float = 10.0

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be a non-negative real, got {self.lam}")


@dataclass(frozen=True)
class LossReport:
    l_gan_pgn: float
    l_gan_pcn: float
    l_cyc: float
    l_total: float

    def consistent(self, lam: float, tol: float = 1e-12) -> bool:
        expected = self.l_gan_pgn + self.l_gan_pcn + lam * self.l_cyc
        return self.l_cyc >= 0 and abs(self.l_total - expected) <= tol * max(1.0, abs(expected))

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.l_gan_pgn, self.l_gan_pcn, self.l_cyc, self.l_total))


def _batch(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be a (batch, dim) array")
    if len(x) == 0:
        raise EmptyBatchError(f"{name} is empty")
    return x


def _check_cycle_shapes(pgn, pcn, phi, h):
    if pcn.in_dim != phi.shape[1] or pgn.out_dim != phi.shape[1]:
        raise ShapeError("phi batch does not match PCN input / PGN output")
    if pgn.in_dim != h.shape[1] or pcn.out_dim != h.shape[1]:
        raise ShapeError("h batch does not match PGN input / PCN output")


def cycle_loss(pgn: DifferentiableMap, pcn: DifferentiableMap, phi_batch, h_batch) -> float:
    """Batch mean of |PGN(PCN(phi)) - phi|_1 + |PCN(PGN(h)) - h|_1.

    The two reconstructions are averaged over their own batches.
    """
    phi = _batch(phi_batch, "phi_batch")
    h = _batch(h_batch, "h_batch")
    _check_cycle_shapes(pgn, pcn, phi, h)
    r_phi = pgn.forward(pcn.forward(phi))
    r_h = pcn.forward(pgn.forward(h))
    return float(np.abs(r_phi - phi).sum(axis=1).mean() + np.abs(r_h - h).sum(axis=1).mean())


def cycle_loss_grads(pgn, pcn, phi_batch, h_batch):
    """Cycle loss and its gradients with respect to (PGN, PCN) parameters."""
    phi = _batch(phi_batch, "phi_batch")
    h = _batch(h_batch, "h_batch")
    _check_cycle_shapes(pgn, pcn, phi, h)

    a = pcn.forward(phi)
    r_phi = pgn.forward(a)
    d1 = r_phi - phi
    g_pgn, da = pgn.backward(a, np.sign(d1) / len(phi))
    g_pcn, _ = pcn.backward(phi, da)

    b = pgn.forward(h)
    r_h = pcn.forward(b)
    d2 = r_h - h
    g_pcn2, db = pcn.backward(b, np.sign(d2) / len(h))
    g_pgn2, _ = pgn.backward(h, db)

    loss = float(np.abs(d1).sum(axis=1).mean() + np.abs(d2).sum(axis=1).mean())
    return loss, g_pgn + g_pgn2, g_pcn + g_pcn2


def _scores(disc: DifferentiableMap, x: np.ndarray) -> np.ndarray:
    if disc.out_dim != 1:
        raise ShapeError("discriminator must output one score per sample")
    return disc.forward(x)[:, 0]


def adversarial_losses(gen: DifferentiableMap, disc: DifferentiableMap, real_batch, source_batch):
    """Least-squares GAN losses; returns (gen_loss, disc_loss).

    disc_loss = mean[(D(real) - 1)^2] + mean[D(G(source))^2]
    gen_loss  = mean[(D(G(source)) - 1)^2]
    """
    real = _batch(real_batch, "real_batch")
    source = _batch(source_batch, "source_batch")
    s_real = _scores(disc, real)
    s_fake = _scores(disc, gen.forward(source))
    disc_loss = float(np.mean((s_real - 1.0) ** 2) + np.mean(s_fake ** 2))
    gen_loss = float(np.mean((s_fake - 1.0) ** 2))
    return gen_loss, disc_loss


class AdversarialGrads(NamedTuple):
    gen_loss: float
    disc_loss: float
    gen_grad: np.ndarray
    disc_grad: np.ndarray


def adversarial_grads(gen, disc, real_batch, source_batch) -> AdversarialGrads:
    real = _batch(real_batch, "real_batch")
    source = _batch(source_batch, "source_batch")
    fake = gen.forward(source)
    s_real = _scores(disc, real)
    s_fake = _scores(disc, fake)
    nr, ns = len(real), len(source)
    g_real, _ = disc.backward(real, (2.0 * (s_real - 1.0) / nr)[:, None])
    g_fake, _ = disc.backward(fake, (2.0 * s_fake / ns)[:, None])
    _, d_fake = disc.backward(fake, (2.0 * (s_fake - 1.0) / ns)[:, None])
    g_gen, _ = gen.backward(source, d_fake)
    return AdversarialGrads(
        float(np.mean((s_fake - 1.0) ** 2)),
        float(np.mean((s_real - 1.0) ** 2) + np.mean(s_fake ** 2)),
        g_gen,
        g_real + g_fake,
    )


def total_loss(cfg: CycleObjectiveConfig, l_gan_pgn: float, l_gan_pcn: float, l_cyc: float) -> LossReport:
    report = LossReport(float(l_gan_pgn), float(l_gan_pcn), float(l_cyc),
                        float(l_gan_pgn) + float(l_gan_pcn) + cfg.lam * float(l_cyc))
    if l_cyc < 0:
        raise ValueError("cycle loss cannot be negative")
    return report


def evaluate_objective(pgn, pcn, d_phi, d_h, phi_batch, h_batch, cfg: CycleObjectiveConfig) -> LossReport:
    g_pgn, _ = adversarial_losses(pgn, d_phi, phi_batch, h_batch)
    g_pcn, _ = adversarial_losses(pcn, d_h, h_batch, phi_batch)
    return total_loss(cfg, g_pgn, g_pcn, cycle_loss(pgn, pcn, phi_batch, h_batch))


# --- training ----------------------------------------------------------------------

class CycleModels(NamedTuple):
    pgn: DifferentiableMap
    pcn: DifferentiableMap
    d_phi: DifferentiableMap
    d_h: DifferentiableMap


def _draw_batch(rng: SplitMix64, n: int, size: int | None) -> np.ndarray:
    if size is None or size >= n:
        return np.arange(n)
    idx = list(range(n))
    for i in range(size):
        j = i + rng.randbelow(n - i)
        idx[i], idx[j] = idx[j], idx[i]
    return np.array(sorted(idx[:size]))


def train_cycle(pgn, pcn, d_phi, d_h, phi_data, h_data, cfg: CycleObjectiveConfig,
                steps: int, lr: float, rng: SplitMix64, batch_size: int | None = 32,
                decay: str = "linear"):
    """Alternating SGD on the cycle objective.

    Each step first moves both discriminators down their least-squares loss,
    then moves both generators down gen_loss + lambda * L_cyc against the
    updated discriminators. The trace entry for a step is the objective on
    that step's minibatch before any update. Input maps are not modified.

    ``decay="linear"`` shrinks the step size linearly from ``lr`` towards zero
    over the run; ``"none"`` keeps it constant. Constant steps never settle
    on the L1 cycle term, they oscillate at an amplitude of about lr * lambda.
    """
    if decay not in ("linear", "none"):
        raise ValueError(f"unknown decay schedule {decay!r}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not lr >= 0:
        raise ValueError("lr must be non-negative")
    phi_data = _batch(phi_data, "phi_data")
    h_data = _batch(h_data, "h_data")
    models = [m.with_params(m.params.copy()) for m in (pgn, pcn, d_phi, d_h)]
    trace: list[LossReport] = []
    with np.errstate(over="ignore", invalid="ignore"):
        models = _sgd_loop(models, phi_data, h_data, cfg, steps, lr, rng, batch_size, decay, trace)
    return CycleModels(*models), trace


def _sgd_loop(models, phi_data, h_data, cfg, steps, lr, rng, batch_size, decay, trace):
    for step in range(steps):
        pgn_, pcn_, dphi_, dh_ = models
        phi = phi_data[_draw_batch(rng, len(phi_data), batch_size)]
        h = h_data[_draw_batch(rng, len(h_data), batch_size)]

        report = evaluate_objective(pgn_, pcn_, dphi_, dh_, phi, h, cfg)
        if not report.is_finite():
            raise DivergenceError(step)
        trace.append(report)

        rate = lr * (1.0 - step / steps) if decay == "linear" else lr
        gd_phi = adversarial_grads(pgn_, dphi_, phi, h).disc_grad
        gd_h = adversarial_grads(pcn_, dh_, h, phi).disc_grad
        dphi_ = dphi_.with_params(dphi_.params - rate * gd_phi)
        dh_ = dh_.with_params(dh_.params - rate * gd_h)

        adv_pgn = adversarial_grads(pgn_, dphi_, phi, h).gen_grad
        adv_pcn = adversarial_grads(pcn_, dh_, h, phi).gen_grad
        _, cyc_pgn, cyc_pcn = cycle_loss_grads(pgn_, pcn_, phi, h)
        pgn_ = pgn_.with_params(pgn_.params - rate * (adv_pgn + cfg.lam * cyc_pgn))
        pcn_ = pcn_.with_params(pcn_.params - rate * (adv_pcn + cfg.lam * cyc_pcn))

        models = [pgn_, pcn_, dphi_, dh_]
        if not all(np.all(np.isfinite(m.params)) for m in models):
            raise DivergenceError(step, f"non-finite parameters after step {step}")
    return models


# --- reference fixtures ---------------------------------------------------------------

class CycleFixture(NamedTuple):
    pgn: DifferentiableMap
    pcn: DifferentiableMap
    d_phi: DifferentiableMap
    d_h: DifferentiableMap
    phi: np.ndarray
    h: np.ndarray


def linear_fixture_1d(seed: int = 7, n: int = 64) -> CycleFixture:
    """1-D linear generators and discriminators; phi samples are h samples + 1.

    The two domains are drawn independently (unpaired), h ~ U(0, 1).
    """
    data = substream(seed, 0)
    h = np.array([data.uniform() for _ in range(n)])[:, None]
    phi = np.array([data.uniform() for _ in range(n)])[:, None] + 1.0
    init = substream(seed, 1)
    pcn = LinearMap.affine([[0.5 + 0.1 * init.normal()]], [0.1 * init.normal()])
    pgn = LinearMap.affine([[0.5 + 0.1 * init.normal()]], [0.1 * init.normal()])
    d_phi = LinearMap.affine([[0.0]], [0.5])
    d_h = LinearMap.affine([[0.0]], [0.5])
    return CycleFixture(pgn, pcn, d_phi, d_h, phi, h)


IMAGE_SIDE = 16


def image_generator(hidden: int = 32, seed: int = 0) -> TwoLayerMap:
    """Two-layer map on flattened 16x16 single-channel images."""
    d = IMAGE_SIDE * IMAGE_SIDE
    return random_init(TwoLayerMap(d, hidden, d), substream(seed, 0x6E6))


def image_discriminator(hidden: int = 16, seed: int = 0) -> TwoLayerMap:
    d = IMAGE_SIDE * IMAGE_SIDE
    return random_init(TwoLayerMap(d, hidden, 1), substream(seed, 0xD15))


def image_to_vector(image: ImageBuffer) -> np.ndarray:
    """Gray 16x16 thumbnail, flattened row-major."""
    gray = image.data.mean(axis=2)
    small = resize(ImageBuffer(gray), IMAGE_SIDE, IMAGE_SIDE)
    return small.data[:, :, 0].ravel()


def apply_completion(pcn: DifferentiableMap, aligned: ImageBuffer, mask: ValidityMask) -> ImageBuffer:
    """Fill invalid pixels from PCN's 16x16 output; valid pixels pass through."""
    if not mask.matches(aligned):
        raise ShapeError("mask and image dimensions differ")
    out_vec = pcn(image_to_vector(aligned)[None, :])[0]
    thumb = ImageBuffer(np.clip(out_vec, 0.0, 1.0).reshape(IMAGE_SIDE, IMAGE_SIDE))
    up = resize(thumb, aligned.width, aligned.height).data
    data = aligned.data.copy()
    invalid = ~mask.valid
    data[invalid] = np.repeat(up[invalid], aligned.channels, axis=1)
    return ImageBuffer(data)


# --- untrained baseline ------------------------------------------------------------

def baseline_fill(aligned: ImageBuffer, mask: ValidityMask) -> ImageBuffer:
    """Deterministic fill of padded pixels.

    An invalid pixel (x, y) takes, in order of preference: the mirrored pixel
    (W-1-x, y) if valid, the mean of valid pixels in row y, the mean of all
    valid pixels, or 0.
    """
    if not mask.matches(aligned):
        raise ShapeError("mask and image dimensions differ")
    data = aligned.data
    valid = mask.valid
    out = data.copy()
    invalid = ~valid
    if not invalid.any():
        return aligned

    mirror_ok = invalid & valid[:, ::-1]
    mirrored = data[:, ::-1]
    out[mirror_ok] = mirrored[mirror_ok]

    rest = invalid & ~mirror_ok
    if rest.any():
        counts = valid.sum(axis=1)
        sums = (data * valid[:, :, None]).sum(axis=1)
        total = counts.sum()
        global_mean = sums.sum(axis=0) / total if total else np.zeros(data.shape[2])
        for y in np.nonzero(rest.any(axis=1))[0]:
            fill = sums[y] / counts[y] if counts[y] else global_mean
            out[y, rest[y]] = fill
    return ImageBuffer(np.clip(out, 0.0, 1.0))


# --- serialization ---------------------------------------------------------------------

def save_params(m: DifferentiableMap | np.ndarray, path) -> None:
    params = np.asarray(m.params if isinstance(m, DifferentiableMap) else m, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC)
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.tobytes())


def load_params(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:8] != PARAM_MAGIC:
            raise FormatError(f"{path}: not a parameter file")
        (count,) = struct.unpack("<Q", header[8:])
        body = fh.read()
    if len(body) != 8 * count:
        raise FormatError(f"{path}: expected {count} parameters, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)


TRACE_FIELDS = ("step", "l_gan_pgn", "l_gan_pcn", "l_cyc", "l_total")


def write_trace(path, trace: Sequence[LossReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for i, r in enumerate(trace):
            w.writerow([i, repr(r.l_gan_pgn), repr(r.l_gan_pcn), repr(r.l_cyc), repr(r.l_total)])


def read_trace(path) -> list[LossReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [LossReport(float(r["l_gan_pgn"]), float(r["l_gan_pcn"]), float(r["l_cyc"]), float(r["l_total"]))
            for r in rows]
