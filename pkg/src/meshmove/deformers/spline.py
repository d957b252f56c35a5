"""
Monotone rational-quadratic splines on [0, 1] and the coupling network built from them.

The spline has fixed endpoints S(0) = 0 and S(1) = 1 with unit end slopes,
so a coordinate sitting on 0 or 1 never moves.  Stacking couplings that
transform x conditioned on y, then y conditioned on x, keeps the unit square
and each of its edges invariant.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument
from ..nn import tensor as T
from ..nn.layers import MLP
from ..nn.params import ParameterStore

CLAMP_TOL = 1e-12


def spline_knots(raw, bins: int, min_bin: float = 1e-3, min_derivative: float = 1e-3):
    """
    Knots from unconstrained conditioner outputs.

    Parameters
    ----------
    raw : (N, 3K - 1) tensor or array
        K width logits, K height logits, K - 1 interior derivative logits.

    Returns
    -------
    knots_x, knots_y, derivs : (N, K + 1) tensors
        Monotone knot positions from exactly 0 to exactly 1 and positive knot
        slopes, the two end slopes being 1.  Zero logits give the identity.
    """
    raw = T.as_tensor(raw)
    K = bins
    if raw.ndim != 2 or raw.shape[1] != 3 * K - 1:
        raise InvalidArgument(f"spline needs {3 * K - 1} parameters per row, got shape {raw.shape}")
    if min_bin * K >= 1:
        raise InvalidArgument(f"min_bin {min_bin} too large for {K} bins")
    n = raw.shape[0]
    zeros, ones = np.zeros((n, 1)), np.ones((n, 1))

    def knots(logits):
        sizes = min_bin + (1.0 - K * min_bin) * T.softmax(logits, axis=1)
        inner = T.cumsum(sizes, axis=1)[:, : K - 1]
        return T.concat([zeros, inner, ones], axis=1)

    shift = np.log(np.expm1(1.0 - min_derivative))
    inner_d = min_derivative + T.softplus(raw[:, 2 * K:] + shift)
    derivs = T.concat([ones, inner_d, ones], axis=1)
    return knots(raw[:, :K]), knots(raw[:, K:2 * K]), derivs


def rq_spline(x, knots_x, knots_y, derivs):
    """
    Evaluate the spline at ``x`` (one value per row).

    Returns
    -------
    y, dydx : (N,) tensors
    clamped : (N,) bool array
        Rows whose input fell outside [0, 1] by more than ``CLAMP_TOL``
        (all inputs are clamped to [0, 1] before evaluation).
    """
    x = T.as_tensor(x)
    raw_x = x.data
    clamped = (raw_x < -CLAMP_TOL) | (raw_x > 1.0 + CLAMP_TOL)
    x = T.clip(x, 0.0, 1.0)
    K = knots_x.shape[1] - 1
    idx = np.sum(knots_x.data[:, 1:K] <= x.data[:, None], axis=1)[:, None]
    nxt = idx + 1

    def pick(a, i):
        return T.take_along_last(a, i).reshape(-1)

    xl, xh = pick(knots_x, idx), pick(knots_x, nxt)
    yl, yh = pick(knots_y, idx), pick(knots_y, nxt)
    dl, dh = pick(derivs, idx), pick(derivs, nxt)
    w = xh - xl
    h = yh - yl
    s = h / w
    t = (x - xl) / w
    omt = 1.0 - t
    mix = t * omt
    den = s + (dh + dl - 2.0 * s) * mix
    # written from the upper knot so that t = 1 and t = 0 land on the knots exactly
    y = yh - h * ((s * omt * omt + dh * mix) / den)
    dydx = s * s * (dh * t * t + 2.0 * s * mix + dl * omt * omt) / (den * den)
    return y, dydx, clamped


def rq_spline_inverse(y, knots_x, knots_y, derivs, tol: float = 1e-14, max_iter: int = 200) -> np.ndarray:
    """Invert the spline by bisection (independent of the closed-form inverse)."""
    y = np.asarray(y, dtype=float)
    lo, hi = np.zeros_like(y), np.ones_like(y)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = rq_spline(mid, knots_x, knots_y, derivs)[0].data
        below = val < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < tol:
            break
    return 0.5 * (lo + hi)


class Conditioner:
    """
    3-layer SELU MLP on ``[I, other coordinate]`` producing raw spline knots.

    The first layer is split so the per-sample part ``I W`` is computed once
    per sample and broadcast to its nodes.
    """

    def __init__(self, store: ParameterStore, name: str, cond_size: int, n_out: int, hidden: int,
                 rng: np.random.Generator):
        scale = 1.0 / np.sqrt(cond_size + 1)
        self.w_cond = store.add(f"{name}.0.weight", rng.normal(0.0, scale, (cond_size, hidden)))
        self.w_coord = store.add(f"{name}.0.weight_coord", rng.normal(0.0, scale, (1, hidden)))
        self.b0 = store.add(f"{name}.0.bias", np.zeros(hidden))
        self.rest = MLP(store, f"{name}.rest", [hidden, hidden, n_out], rng, zero_last=True)

    def __call__(self, cond, owner, coord):
        h = T.gather_rows(T.matmul(cond, self.w_cond) + self.b0, owner) + T.matmul(coord.reshape(-1, 1), self.w_coord)
        return self.rest(T.selu(h))


class SplineCoupling:
    """
    ``blocks`` coupling layers on bounding-box-normalised coordinates.

    Block ``b`` transforms coordinate ``b % 2`` with a spline whose knots are
    predicted from ``[I, other coordinate]`` by a conditioner whose last layer
    starts at zero (the identity map).
    """

    def __init__(self, store: ParameterStore, cond_size: int, rng: np.random.Generator, bins: int = 8,
                 blocks: int = 4, hidden: int = 64, min_bin: float = 1e-3, min_derivative: float = 1e-3):
        self.bins, self.blocks = bins, blocks
        self.min_bin, self.min_derivative = min_bin, min_derivative
        self.conditioners = [
            Conditioner(store, f"spline.block{b}", cond_size, 3 * bins - 1, hidden, rng) for b in range(blocks)
        ]

    def __call__(self, u, cond, owner):
        """
        Parameters
        ----------
        u : (N, 2) array of coordinates in [0, 1]^2
        cond : (B, C) tensor of per-sample conditioning features
        owner : (N,) sample index of every node

        Returns
        -------
        (N, 2) tensor and the clamp flags of every spline evaluation.
        """
        cols = [T.as_tensor(u[:, 0]), T.as_tensor(u[:, 1])]
        flags = np.zeros(len(u), dtype=bool)
        for b, net in enumerate(self.conditioners):
            d = b % 2
            raw = net(cond, owner, cols[1 - d])
            kx, ky, kd = spline_knots(raw, self.bins, self.min_bin, self.min_derivative)
            cols[d], _, clamped = rq_spline(cols[d], kx, ky, kd)
            flags |= clamped
        return T.concat([cols[0].reshape(-1, 1), cols[1].reshape(-1, 1)], axis=1), flags
