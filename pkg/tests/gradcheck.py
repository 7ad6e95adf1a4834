"""Central finite-difference gradient checks for the shipped maps and losses."""

from __future__ import annotations

import numpy as np

from partial_reid.hallucination import (LinearMap, TwoLayerMap, adversarial_grads, adversarial_losses,
                                        cycle_loss, cycle_loss_grads, random_init)
from partial_reid.rng import substream

STEP = 1e-5
TOL = 1e-4


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def fd_gradient(loss, params: np.ndarray, coords) -> np.ndarray:
    out = np.empty(len(coords))
    for n, i in enumerate(coords):
        p = params.copy()
        p[i] += STEP
        up = loss(p)
        p[i] -= 2 * STEP
        out[n] = (up - loss(p)) / (2 * STEP)
    return out


def _coords(n_params: int, rng: np.random.Generator, max_coords):
    if max_coords is None or n_params <= max_coords:
        return np.arange(n_params)
    return np.sort(rng.choice(n_params, size=max_coords, replace=False))


def check_all_losses(gen_a, gen_b, disc, x, y, seed: int, max_coords=None) -> dict[str, float]:
    """Relative errors of every loss gradient for the maps gen_a (x -> y), gen_b (y -> x), disc (on y)."""
    rng = np.random.default_rng(seed)
    errs = {}

    def cyc(p, which):
        a = gen_a.with_params(p) if which == "a" else gen_a
        b = gen_b.with_params(p) if which == "b" else gen_b
        # gen_b plays PCN (x -> y), gen_a plays PGN (y -> x).
        return cycle_loss(a, b, x, y)

    _, g_a, g_b = cycle_loss_grads(gen_a, gen_b, x, y)
    for which, m, g in (("a", gen_a, g_a), ("b", gen_b, g_b)):
        idx = _coords(m.params.size, rng, max_coords)
        errs[f"cycle/{which}"] = rel_error(g[idx], fd_gradient(lambda p: cyc(p, which), m.params, idx))

    # Adversarial: gen_a maps y-samples into the x domain judged by disc.
    ag = adversarial_grads(gen_a, disc, x, y)
    idx = _coords(gen_a.params.size, rng, max_coords)
    errs["gan/gen"] = rel_error(ag.gen_grad[idx], fd_gradient(
        lambda p: adversarial_losses(gen_a.with_params(p), disc, x, y)[0], gen_a.params, idx))
    idx = _coords(disc.params.size, rng, max_coords)
    errs["gan/disc"] = rel_error(ag.disc_grad[idx], fd_gradient(
        lambda p: adversarial_losses(gen_a, disc.with_params(p), x, y)[1], disc.params, idx))
    return errs


def linear_trial(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    dx, dy = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    pgn = LinearMap(dy, dx, rng.normal(size=dx * dy + dx))
    pcn = LinearMap(dx, dy, rng.normal(size=dx * dy + dy))
    disc = LinearMap(dx, 1, rng.normal(size=dx + 1))
    x = rng.normal(size=(int(rng.integers(1, 9)), dx))
    y = rng.normal(size=(int(rng.integers(1, 9)), dy))
    return check_all_losses(pgn, pcn, disc, x, y, seed)


def two_layer_trial(seed: int, dim: int = 6, hidden: int = 5, max_coords=None) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    pgn = random_init(TwoLayerMap(dim, hidden, dim), substream(seed, 1))
    pcn = random_init(TwoLayerMap(dim, hidden, dim), substream(seed, 2))
    disc = random_init(TwoLayerMap(dim, hidden, 1), substream(seed, 3))
    # Non-zero biases so every parameter block is exercised.
    pgn = pgn.with_params(pgn.params + 0.1 * rng.normal(size=pgn.params.size))
    pcn = pcn.with_params(pcn.params + 0.1 * rng.normal(size=pcn.params.size))
    disc = disc.with_params(disc.params + 0.1 * rng.normal(size=disc.params.size))
    x = rng.random((4, dim))
    y = rng.random((4, dim))
    return check_all_losses(pgn, pcn, disc, x, y, seed, max_coords)


def image_map_trial(seed: int, max_coords: int = 24) -> dict[str, float]:
    """The shipped 16x16 generator/discriminator pair on a random coordinate subset."""
    from partial_reid.hallucination import image_discriminator, image_generator

    rng = np.random.default_rng(seed)
    pgn = image_generator(seed=seed)
    pcn = image_generator(seed=seed + 1)
    disc = image_discriminator(seed=seed + 2)
    x = rng.random((3, pgn.in_dim))
    y = rng.random((3, pgn.in_dim))
    return check_all_losses(pgn, pcn, disc, x, y, seed, max_coords)
