"""Explicit ReQU/ReCU approximants of cosine profiles and of spectral Barron
functions.

A profile g(z) = gamma / (1 + pi^4 k1^4) * cos(pi (k1 z + b)) on [-1, 1] is
first interpolated by a width 2m+4 ReQU network on the uniform partition
z_j = -1 + j/m. Each ReQU neuron is then replaced by the difference quotient

    ReQU(z) ~ (ReCU(z + h) - ReCU(z - h)) / (6h),

and neurons sharing an inner weight and bias are merged. Composing with
z = k.x / |k|_1 gives d-dimensional ReCU networks, and Monte Carlo sampling of
modes turns these into approximants of arbitrary cosine expansions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import ShallowNetwork
from .problem import SpectralFunction, barron_norm
from .quadrature import as_rng, gauss_legendre_01, network_grid


@dataclass(frozen=True)
class CosProfile:
    """g(z) = gamma / (1 + pi^4 k1^4) * cos(pi (k1 z + b_phase))."""

    gamma: float
    k1: int
    b_phase: int = 0
    B: float = 1.0

    def __post_init__(self):
        if self.k1 < 1:
            raise ValueError("k1 must be a positive integer")
        if self.b_phase not in (0, 1):
            raise ValueError("b_phase must be 0 or 1")
        if abs(self.gamma) > self.B * (1 + 1e-12):
            raise ValueError(f"|gamma| = {abs(self.gamma)} exceeds B = {self.B}")

    @property
    def amplitude(self) -> float:
        return self.gamma / (1.0 + np.pi**4 * self.k1**4)

    def __call__(self, z) -> np.ndarray:
        return self.amplitude * np.cos(np.pi * (self.k1 * np.asarray(z, dtype=float) + self.b_phase))

    def derivative(self, z) -> np.ndarray:
        w = np.pi * self.k1
        return -self.amplitude * w * np.sin(np.pi * (self.k1 * np.asarray(z, dtype=float) + self.b_phase))


@dataclass(frozen=True)
class Partition:
    """Uniform knots z_0 = -1 < ... < z_m = 0 < ... < z_2m = 1."""

    m: int

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("partition needs m >= 2")

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def knots(self) -> np.ndarray:
        # integer multiples keep the spacing exact up to one rounding
        return (np.arange(2 * self.m + 1) - self.m) / self.m


def _second_differences(G: np.ndarray, m: int, h: float) -> np.ndarray:
    """a~_1..a~_2m (index 0 unused): one-sided slopes at the centre and
    second differences elsewhere, all divided by h."""
    at = np.zeros(2 * m + 1)
    at[m + 1] = (G[m + 1] - G[m]) / h
    at[m] = (G[m - 1] - G[m]) / h
    i = np.arange(m + 2, 2 * m + 1)
    at[i] = (G[i] - 2 * G[i - 1] + G[i - 2]) / h
    i = np.arange(1, m)
    at[i] = (G[i - 1] - 2 * G[i] + G[i + 1]) / h
    return at


def requ_coefficients(g, m: int):
    """Outer weights a^, signs eps and offsets b^ of the ReQU interpolant
    c + sum_i a^_i ReQU(eps_i z - b^_i), i = 0..2m+3."""
    part = Partition(m)
    h, z = part.h, part.knots
    at = _second_differences(g(z), m, h)

    def left(i):
        return at[i] if 1 <= i <= m else 0.0

    def right(i):
        return at[i] if m + 1 <= i <= 2 * m else 0.0

    width = 2 * m + 4
    a_hat = np.zeros(width)
    eps = np.empty(width)
    b_hat = np.empty(width)
    for i in range(m + 2):
        # neurons ReQU(z_i - z); the sign here makes the interpolant converge
        a_hat[i] = (left(i - 1) - left(i + 1)) / (4 * h)
        eps[i], b_hat[i] = -1.0, -z[i]
    for i in range(m + 2, width):
        # neurons ReQU(z - z_{i-3})
        a_hat[i] = (right(i - 1) - right(i - 3)) / (4 * h)
        eps[i], b_hat[i] = 1.0, z[i - 3]
    return a_hat, eps, b_hat


def requ_interpolant(g: CosProfile, m: int) -> ShallowNetwork:
    """Width 2m+4 ReQU network on [-1, 1] with output bias g(0)."""
    a_hat, eps, b_hat = requ_coefficients(g, m)
    return ShallowNetwork(
        2, [float(g(0.0))], a_hat[:, None], eps[:, None], -b_hat, g.B, constrained=False
    )


def merge_neurons(net: ShallowNetwork, decimals: int = 12) -> ShallowNetwork:
    """Sum outer weights of neurons with equal (W_i, b_i); drops exact zeros."""
    if net.m == 0:
        return net
    key = np.round(np.concatenate([net.W, net.b[:, None]], axis=1), decimals) + 0.0
    uniq, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    a = np.zeros((len(uniq), net.p))
    np.add.at(a, inv.ravel(), net.a)
    keep = np.any(a != 0.0, axis=1)
    return ShallowNetwork(
        net.k, net.c, a[keep], net.W[first][keep], net.b[first][keep], net.barron_bound, net.constrained
    )


def prune_inactive(net: ShallowNetwork, lo: float = -1.0, hi: float = 1.0) -> ShallowNetwork:
    """Drop neurons of a 1-d-input network whose pre-activation is <= 0 on [lo, hi]."""
    if net.m == 0:
        return net
    z_max = np.maximum(net.W[:, 0] * lo, net.W[:, 0] * hi) + net.b
    keep = z_max > 0.0
    return ShallowNetwork(net.k, net.c, net.a[keep], net.W[keep], net.b[keep], net.barron_bound, net.constrained)


def _knot_spacing(net: ShallowNetwork) -> float:
    kn = np.unique(np.round(net.b, 12))
    gaps = np.diff(kn)
    return float(gaps.min()) if gaps.size else math.nan


def recu_from_requ(requ: ShallowNetwork, h: float) -> ShallowNetwork:
    """Replace every ReQU neuron by the ReCU pair
    (a/(6h)) (ReCU(eps z - b^ + h) - ReCU(eps z - b^ - h)), merge coincident
    neurons and drop those inactive on [-1, 1]."""
    if requ.k != 2 or requ.d != 1:
        raise ValueError("expected a 1-d ReQU network")
    if h <= 0:
        raise ValueError("h must be positive")
    spacing = _knot_spacing(requ)
    if np.isfinite(spacing) and abs(spacing - h) > 1e-9:
        raise ValueError(f"h = {h} does not match the interpolant knot spacing {spacing}")
    a = np.concatenate([requ.a, -requ.a]) / (6 * h)
    W = np.concatenate([requ.W, requ.W])
    b = np.concatenate([requ.b + h, requ.b - h])
    net = ShallowNetwork(3, requ.c, a, W, b, requ.barron_bound, constrained=False)
    return prune_inactive(merge_neurons(net))


def recu_pair_residual(z, delta: float) -> np.ndarray:
    """r(z) = ReCU(z + delta) - ReCU(z - delta) - 6 delta ReQU(z) in closed form.

    r vanishes for z <= -delta, equals (z + delta)^3 on (-delta, 0],
    (z + delta)^3 - 6 delta z^2 on (0, delta] and 2 delta^3 beyond.
    """
    z = np.asarray(z, dtype=float)
    zd = (z + delta) ** 3
    return np.select(
        [z <= -delta, z <= 0.0, z <= delta],
        [0.0, zd, zd - 6 * delta * z**2],
        2 * delta**3,
    )


def recu_interpolant(g: CosProfile, m: int) -> ShallowNetwork:
    return recu_from_requ(requ_interpolant(g, m), Partition(m).h)


def profile_h1_error(net: ShallowNetwork, g: CosProfile, m: int, q: int = 8) -> float:
    """||g - net||_{H^1(-1, 1)} by Gauss-Legendre on cells of width 1/m
    (all kinks of the constructions sit on this grid)."""
    nodes, weights = gauss_legendre_01(q, 2 * m)
    z = 2.0 * nodes - 1.0
    w = 2.0 * weights
    x = z[:, None]
    val = net.forward(x)[:, 0] - g(z)
    der = net.input_jacobian(x)[:, 0, 0] - g.derivative(z)
    return float(np.sqrt(w @ (val**2 + der**2)))


# -- d-dimensional class members ----------------------------------------------


def cos_mode_network(k, gamma: float, b_phase: int, m: int, B: float = 1.0) -> ShallowNetwork:
    """ReCU approximant of gamma / (1 + pi^4 |k|_1^4) cos(pi k.x + b_phase pi)
    along w = k / |k|_1, for a signed integer multi-index k."""
    k = np.asarray(k, dtype=float).ravel()
    k1 = int(round(np.abs(k).sum()))
    if k1 == 0:
        raise ValueError("multi-index must be nonzero")
    prof = CosProfile(gamma, k1, b_phase, B)
    one_d = recu_interpolant(prof, m)
    w = k / k1
    return ShallowNetwork(3, one_d.c, one_d.a, one_d.W * w[None, :], one_d.b, B, constrained=False)


def cos_mode_term(k, gamma: float, b_phase: int):
    """Values and gradients of the exact mode term, as a callable on (N, d) points."""
    k = np.asarray(k, dtype=float).ravel()
    amp = gamma / (1.0 + np.pi**4 * np.abs(k).sum() ** 4)

    def fn(x):
        theta = np.pi * (x @ k + b_phase)
        return amp * np.cos(theta), -amp * np.pi * np.sin(theta)[:, None] * k[None, :]

    return fn


def concat_networks(nets, c=None, barron_bound: float | None = None) -> ShallowNetwork:
    """Sum of networks with the same k, d and p as one network."""
    nets = list(nets)
    if not nets:
        raise ValueError("need at least one network")
    base = nets[0]
    c = sum(n.c for n in nets) if c is None else np.asarray(c, dtype=float)
    B = base.barron_bound if barron_bound is None else barron_bound
    return ShallowNetwork(
        base.k,
        c,
        np.concatenate([n.a for n in nets]),
        np.concatenate([n.W for n in nets]),
        np.concatenate([n.b for n in nets]),
        B,
        constrained=False,
    )


def _sign_patterns(k: np.ndarray):
    """Signed copies k_xi of a nonnegative multi-index with
    prod_i cos(pi k_i x_i) = 2^(1-s) sum_xi cos(pi k_xi . x), s = nnz(k);
    patterns equal up to a global sign are kept once."""
    nz = np.flatnonzero(k)
    if nz.size == 0:
        return [k.copy()], 1.0
    pats = []
    for signs in np.ndindex(*([2] * (nz.size - 1))):
        kk = k.copy()
        kk[nz[1:]] *= 1 - 2 * np.asarray(signs)
        pats.append(kk)
    return pats, 2.0 ** (1 - nz.size)


def spectral_h1_error(net: ShallowNetwork, u: SpectralFunction, grid=None) -> float:
    """||u - net||_{H^1((0,1)^d)} on a tensor rule."""
    grid = network_grid(u.d) if grid is None else grid
    grads = u.gradient_functions()

    def integrand(x):
        v = net.forward(x)[:, 0] - u.evaluate(x)
        g = net.input_jacobian(x)[:, 0, :] - np.stack([gf.evaluate(x) for gf in grads], axis=-1)
        return v**2 + np.sum(g**2, axis=1)

    return float(np.sqrt(max(grid.integrate_function(integrand), 0.0)))


@dataclass
class BarronApproximation:
    network: ShallowNetwork
    h1_error: float
    sampled: dict  # mode tuple -> multiplicity
    class_bound: float


def approximate_barron(u: SpectralFunction, m: int, seed=None, partition: int | None = None, grid=None):
    """Monte Carlo approximant of u by m sampled ReCU mode networks.

    Modes k != 0 are drawn from mu(k) ~ |u^(k)| (1 + pi^4 |k|_1^4); each draw
    contributes Z sign(u^(k)) / (1 + pi^4 |k|_1^4) Phi_k / m, with Z the
    normaliser, so the average is unbiased for u - u^(0). ``partition`` is the
    half-count of the 1-d knot grid (default m).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not u.is_cosine:
        raise ValueError("expected a plain cosine expansion")
    part = m if partition is None else partition
    part = max(part, 2)
    d = u.d
    B = barron_norm(u, 4)
    c0 = u.constant_coefficient()
    nonconst = np.any(u.modes != 0, axis=1) & (u.coeffs != 0)
    modes, coeffs = u.modes[nonconst], u.coeffs[nonconst]
    sampled = {}
    nets = []
    if modes.shape[0]:
        k1 = modes.sum(axis=1).astype(float)
        weight = np.abs(coeffs) * (1.0 + np.pi**4 * k1**4)
        Z = float(weight.sum())
        counts = as_rng(seed).multinomial(m, weight / Z)
        for idx in np.flatnonzero(counts):
            mult = int(counts[idx])
            sampled[tuple(int(v) for v in modes[idx])] = mult
            gamma = Z * np.sign(coeffs[idx]) * mult / m
            pats, share = _sign_patterns(modes[idx].astype(float))
            for kk in pats:
                nets.append(cos_mode_network(kk, gamma * share, 0, part, abs(gamma * share)))
    if nets:
        net = merge_neurons(concat_networks(nets, c=c0 + sum(n.c for n in nets), barron_bound=B))
    else:
        net = ShallowNetwork.empty(3, d, 1, c=[c0], barron_bound=B)
    net = ShallowNetwork(3, net.c, net.a, net.W, net.b, B)
    return BarronApproximation(net, spectral_h1_error(net, u, grid), sampled, B)


# -- rate study ---------------------------------------------------------------


@dataclass
class RateRow:
    m: int
    requ_error: float
    recu_error: float
    coef_sum: float
    bound_5: float
    bound_6: float

    def as_dict(self) -> dict:
        return {
            "m": self.m,
            "h1_error": self.recu_error,
            "bound_6B_sqrt_m": self.bound_6,
            "requ_error": self.requ_error,
            "bound_5B_sqrt_m": self.bound_5,
            "coef_sum": self.coef_sum,
        }


def approximation_rate_study(g: CosProfile, ms) -> list[RateRow]:
    rows = []
    for m in ms:
        requ = requ_interpolant(g, m)
        recu = recu_from_requ(requ, Partition(m).h)
        rows.append(
            RateRow(
                m,
                profile_h1_error(requ, g, m),
                profile_h1_error(recu, g, m),
                float(np.abs(requ.a).sum()),
                5 * g.B / math.sqrt(m),
                6 * g.B / math.sqrt(m),
            )
        )
    return rows
