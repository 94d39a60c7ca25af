"""Coercivity ratio studies, weighted energies and Rademacher estimates."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import fields as F
from .fields import FIRST, BoundaryKind, FirstOrderBundle, check_system, network_bundle
from .loss import PointSet, bilinear_form, empirical_loss, expected_loss
from .network import ShallowNetwork, relu_power
from .problem import ProblemSpec, single_mode_spec
from .quadrature import (
    CubeRule,
    boundary_vector_l2,
    cube_rule,
    norm_parts,
    sample_set,
    sobolev_norms,
)
from .train import ACTIVATION, init_network, output_width


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("need at least two positive points")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass(frozen=True)
class PerturbationWeights:
    """delta_k = delta^k / (k+1) and eps_k = sqrt((k+1)^2 - 1) / (k+1)."""

    delta: float
    K: int = 8

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    def __call__(self, k: int) -> float:
        if k < 0:
            raise ValueError("index must be nonnegative")
        return self.delta**k / (k + 1)

    @property
    def values(self) -> np.ndarray:
        """delta_1 .. delta_K."""
        k = np.arange(1, self.K + 1)
        return self.delta**k / (k + 1)

    @staticmethod
    def eps(k: int) -> float:
        return math.sqrt((k + 1) ** 2 - 1) / (k + 1)


def young_check(delta: float, n: int, a_grid, b_grid, tol: float = 1e-12) -> int:
    """Grid points (k, a, b), 2 <= k <= 2n, where
    delta_k a b <= (eps_2n / 2)(delta_{k+1} a^2 + delta_{k-1} b^2) fails by more than tol."""
    w = PerturbationWeights(delta, 2 * n + 1)
    a = np.asarray(a_grid, dtype=float)[:, None]
    b = np.asarray(b_grid, dtype=float)[None, :]
    half_eps = 0.5 * w.eps(2 * n)
    bad = 0
    for k in range(2, 2 * n + 1):
        lhs = w(k) * a * b
        rhs = half_eps * (w(k + 1) * a**2 + w(k - 1) * b**2)
        bad += int(np.count_nonzero(lhs - rhs > tol))
    return bad


def weighted_energy(bundle, delta: float, n: int, grid, system: str | None = None) -> float:
    """Energy with weights delta_k; ``system`` defaults to the bundle's own."""
    if n != bundle.n:
        raise ValueError("n does not match the bundle")
    if system is not None and (check_system(system) == FIRST) != isinstance(bundle, FirstOrderBundle):
        raise ValueError("system does not match the bundle")
    w = PerturbationWeights(delta, 2 * n + 2)
    parts = norm_parts(bundle, grid)
    total = 0.0
    for k in range(n):
        if isinstance(bundle, FirstOrderBundle):
            total += w(2 * (n - k) - 1) * parts.div_psi[k]
            total += w(2 * (n - k)) * (parts.grad_phi[k] + parts.psi[k])
            if k >= 1:
                total += w(2 * (n - k) + 1) * parts.phi[k]
        else:
            total += w(n - k) * parts.lap_phi[k]
            if k >= 1:
                total += w(n - k + 1) * parts.phi[k]
    return float(total)


# -- coercivity ----------------------------------------------------------------


@dataclass
class CoercivityTrial:
    trial: int
    B_value: float
    norm_sum: float
    ratio: float
    h1_norm: float
    scaled_ratio: float

    def as_row(self) -> dict:
        return {"trial": self.trial, "B_value": self.B_value, "norm_sum": self.norm_sum, "ratio": self.ratio}


@dataclass
class CoercivityReport:
    kind: str
    system: str
    n: int
    d: int
    delta: float
    seed: int
    trials: list = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([t.ratio for t in self.trials])

    @property
    def min_ratio(self) -> float:
        return float(self.ratios.min())

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.ratios))

    @property
    def all_positive(self) -> bool:
        return bool(np.all(self.ratios > 0))

    @property
    def max_scale_drift(self) -> float:
        """Largest relative change of a ratio when the bundle is doubled."""
        r = self.ratios
        s = np.array([t.scaled_ratio for t in self.trials])
        return float(np.max(np.abs(s - r) / np.abs(r)))

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "system": self.system,
            "n": self.n,
            "d": self.d,
            "delta": self.delta,
            "seed": self.seed,
            "trials": len(self.trials),
            "min_ratio": self.min_ratio,
            "median_ratio": self.median_ratio,
            "all_positive": self.all_positive,
            "max_scale_drift": self.max_scale_drift,
        }


def random_feasible_network(d: int, p: int, k: int, width: int, rng, B: float = 1.0) -> ShallowNetwork:
    """Class-feasible network with uniform output bias in [-B, B]."""
    net = init_network(width, d, p, k, B, int(rng.integers(0, 2**63 - 1)))
    net.c = rng.uniform(-B, B, size=p)
    return net


def _ratio_parts(bundle, spec: ProblemSpec, rule: CubeRule):
    b_val = bilinear_form(bundle, bundle, spec, rule)
    norms = sobolev_norms(bundle, rule.interior)
    norm_sum = float(np.sum(norms.h1_sq) + np.sum(norms.hdiv_sq))
    if spec.kind is BoundaryKind.DIRICHLET:
        trace = float(np.sum(boundary_vector_l2(bundle, rule.boundary)))
        lhs = (math.sqrt(max(b_val, 0.0)) + trace) * math.sqrt(max(b_val, 0.0))
    else:
        lhs = b_val
    return b_val, norm_sum, lhs / norm_sum, float(np.sqrt(np.sum(norms.h1_sq)))


def _neuron_features(net: ShallowNetwork, x):
    """Values, gradients and Laplacians of the scalar basis 1, sigma(W_i.x + b_i);
    shapes (M, N), (M, N, d), (M, N) with M = m + 1."""
    z = x @ net.W.T + net.b
    N, d = x.shape
    S = np.ones((net.m + 1, N))
    G = np.zeros((net.m + 1, N, d))
    L = np.zeros((net.m + 1, N))
    S[1:] = relu_power(z, net.k, 0).T
    G[1:] = relu_power(z, net.k, 1).T[:, :, None] * net.W[:, None, :]
    if net.k >= 2:
        L[1:] = (relu_power(z, net.k, 2) * np.sum(net.W**2, axis=1)).T
    return S, G, L


def _basis_rows(net: ShallowNetwork, n: int, system: str, kind, pts: PointSet):
    """Weighted residual, trace, phi_0-mean and norm features of every basis
    bundle e_j * (1 or sigma_i), ordered j-major; one row per basis element."""
    p, M = net.p, net.m + 1
    first = check_system(system) == FIRST
    d = net.d
    sw, swb = np.sqrt(pts.w), np.sqrt(pts.wb)
    S, G, L = _neuron_features(net, pts.x)
    Sb, Gb, _ = _neuron_features(net, pts.xb)
    N, Nb = pts.x.shape[0], pts.xb.shape[0]
    nbt = np.tile(pts.nb, (M, 1))
    R, T, mean, Fn = [], [], [], []
    for j in range(p):
        vals = np.zeros((M, N, p))
        jac = np.zeros((M, N, p, d))
        lap = np.zeros((M, N, p))
        bvals = np.zeros((M, Nb, p))
        bjac = np.zeros((M, Nb, p, d))
        vals[:, :, j], jac[:, :, j], lap[:, :, j] = S, G, L
        bvals[:, :, j], bjac[:, :, j] = Sb, Gb
        v2, j2 = vals.reshape(M * N, p), jac.reshape(M * N, p, d)
        bv2, bj2 = bvals.reshape(M * Nb, p), bjac.reshape(M * Nb, p, d)
        if first:
            r = F._p_residual(v2, j2, n, d)
            t = F._trace_first(bv2, nbt, n, d, kind)
            blocks = v2.reshape(M * N, n, d + 1)
            jb = j2.reshape(M * N, n, d + 1, d)
            feats = [
                blocks[:, :, 0],
                jb[:, :, 0, :].reshape(M * N, -1),
                blocks[:, :, 1:].reshape(M * N, -1),
                np.trace(jb[:, :, 1:, :], axis1=2, axis2=3),
            ]
        else:
            r = F._pstar_residual(v2, lap.reshape(M * N, p))
            t = F._trace_second(bv2, bj2, nbt, kind)
            g = j2.reshape(M * N, -1)
            feats = [v2, g, g, lap.reshape(M * N, p)]
        R.append((r.reshape(M, N, -1) * sw[None, :, None]).reshape(M, -1))
        T.append((t.reshape(M, Nb, -1) * swb[None, :, None]).reshape(M, -1))
        mean.append(vals[:, :, 0] @ pts.w)
        f = np.concatenate(feats, axis=1)
        Fn.append((f.reshape(M, N, -1) * sw[None, :, None]).reshape(M, -1))
    return np.concatenate(R), np.concatenate(T), np.concatenate(mean), np.concatenate(Fn)


def span_worst_network(net: ShallowNetwork, n: int, system: str, spec: ProblemSpec, pts: PointSet) -> ShallowNetwork:
    """Network with the inner weights of ``net`` whose outer weights and bias
    minimise B(u, u) / sum of norms over their span, rescaled into the class."""
    R, T, mean, Fn = _basis_rows(net, n, system, spec.kind, pts)
    Bm = R @ R.T + spec.lam * (T @ T.T)
    if spec.kind is BoundaryKind.NEUMANN:
        Bm += spec.mu * np.outer(mean, mean)
    Nm = Fn @ Fn.T
    ev, U = np.linalg.eigh(Nm)
    # drop numerically dependent combinations before whitening
    keep = ev > 1e-10 * ev.max()
    Wh = U[:, keep] / np.sqrt(ev[keep])
    _, V = np.linalg.eigh(Wh.T @ Bm @ Wh)
    v = (Wh @ V[:, 0]).reshape(net.p, net.m + 1)
    c, a = v[:, 0], v[:, 1:].T
    B = net.barron_bound
    scale = min(4 * B / max(np.abs(a).sum(), 1e-300), 2 * B / max(np.abs(c).max(), 1e-300))
    return ShallowNetwork(net.k, c * scale, a * scale, net.W, net.b, B)


SAMPLERS = ("span", "random")


def coercivity_study(
    kind,
    system: str,
    n: int,
    d: int,
    trials: int = 200,
    delta: float = 0.1,
    seed: int = 0,
    width: int = 4,
    rule: CubeRule | None = None,
    lam: float = 1.0,
    mu: float = 1.0,
    sampler: str = "span",
) -> CoercivityReport:
    """Ratios B(u, u) / sum of norms (Neumann, Robin) or the sup-linear left
    side / sum of norms (Dirichlet) over class-feasible bundles.

    Each trial draws random inner weights and biases. With ``sampler="span"``
    the outer weights are then chosen to minimise B / norms over that span (the
    least coercive bundle the trial's neurons can express); ``"random"`` keeps
    the random outer weights. ``delta`` only labels the study.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}")
    check_system(system)
    PerturbationWeights(delta)
    # only n, d, the boundary kind and the penalties enter the bilinear form
    spec = single_mode_spec(n, d, kind, lam=lam, mu=mu)
    rule = cube_rule(d, 8, 8) if rule is None else rule
    pts = PointSet.from_rule(rule)
    p = output_width(spec, system)
    report = CoercivityReport(spec.kind.value, system, n, d, delta, seed)
    streams = np.random.SeedSequence(seed).spawn(trials)
    for t, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        net = random_feasible_network(d, p, ACTIVATION[system], width, rng)
        if sampler == "span":
            net = span_worst_network(net, n, system, spec, pts)
        bundle = network_bundle(net, n, system)
        b_val, norm_sum, ratio, h1 = _ratio_parts(bundle, spec, rule)
        scaled = _ratio_parts(bundle.scaled(2.0), spec, rule)[2]
        report.trials.append(CoercivityTrial(t, b_val, norm_sum, ratio, h1, scaled))
    return report


# -- Rademacher complexity ----------------------------------------------------


def constant_class(value: float = 1.0):
    """Singleton class {f = value}."""

    def sampler(rng, candidates, x):
        return np.full((1, x.shape[0]), float(value))

    return sampler


def linear_class(d: int):
    """Random members of {w.x + b : |w|_2 = 1, |b| <= 1}."""

    def sampler(rng, candidates, x):
        w = rng.normal(size=(candidates, d))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        b = rng.uniform(-1.0, 1.0, size=candidates)
        return w @ x.T + b[:, None]

    return sampler


def _sign_matrix(N: int, sign_draws: int | None, rng) -> np.ndarray:
    if sign_draws is None:
        if N > 16:
            raise ValueError("exact sign enumeration is limited to N <= 16")
        return np.array(list(itertools.product((-1.0, 1.0), repeat=N)))
    return rng.choice(np.array([-1.0, 1.0]), size=(sign_draws, N))


def empirical_rademacher(
    sampler,
    N: int,
    d: int,
    sign_draws: int | None = 200,
    candidates: int = 256,
    seed=None,
    x_redraws: int = 1,
) -> float:
    """Random-candidate (lower-bound) estimate of
    E_eps sup_f |(1/N) sum_i eps_i f(X_i)|, averaged over ``x_redraws`` draws
    of X ~ U[0,1]^d. ``sign_draws=None`` enumerates all sign vectors."""
    if candidates < 1 or N < 1 or x_redraws < 1:
        raise ValueError("N, candidates and x_redraws must be >= 1")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(x_redraws):
        x = rng.random((N, d))
        F = sampler(rng, candidates, x)  # (candidates, N)
        eps = _sign_matrix(N, sign_draws, rng)
        corr = np.abs(eps @ F.T) / N  # (draws, candidates)
        total += float(np.mean(corr.max(axis=1)))
    return total / x_redraws


def linear_class_sup(N: int, d: int, sign_draws: int = 200, seed=None) -> float:
    """Exact inner sup for the linear class: |mean eps x|_2 + |mean eps|."""
    rng = np.random.default_rng(seed)
    x = rng.random((N, d))
    eps = _sign_matrix(N, sign_draws, rng)
    return float(np.mean(np.linalg.norm(eps @ x, axis=1) / N + np.abs(eps.mean(axis=1))))


def linear_class_bound(N: int, d: int) -> float:
    return (math.sqrt(2 * d * math.log(d)) + 1.0) / math.sqrt(N)


# -- generalization gap -------------------------------------------------------


@dataclass
class GapRow:
    N: int
    rms_gap: float
    median_gap: float

    def as_row(self) -> dict:
        return {"N": self.N, "rms_gap": self.rms_gap, "median_gap": self.median_gap}


def generalization_gap_study(bundle, spec: ProblemSpec, N_list, resamples: int = 64, seed: int = 0, rule=None):
    """RMS over resamples of |expected - empirical| loss at each N, and the
    fitted log-log slope of the RMS gap."""
    rule = cube_rule(spec.d, 8, 8) if rule is None else rule
    target = expected_loss(bundle, spec, rule).total
    rows = []
    streams = np.random.SeedSequence(seed).spawn(len(N_list))
    for N, ss in zip(N_list, streams):
        rng = np.random.default_rng(ss)
        gaps = np.array(
            [abs(empirical_loss(bundle, spec, sample_set(spec.d, N, None, rng)).total - target) for _ in range(resamples)]
        )
        rows.append(GapRow(int(N), float(np.sqrt(np.mean(gaps**2))), float(np.median(gaps))))
    if all(r.rms_gap > 0 for r in rows) and len(rows) > 1:
        slope = loglog_slope([r.N for r in rows], [r.rms_gap for r in rows])
    else:
        slope = math.nan
    return rows, slope
