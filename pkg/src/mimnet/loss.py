"""Mixed residual losses, their parameter gradients, and the bilinear forms.

Both the expected loss (tensor quadrature) and the empirical loss (Monte
Carlo samples) reduce to weighted sums over interior and boundary points:

    interior     = sum_j w_j |(P u - f)(x_j)|^2
    boundary     = lam * sum_j wb_j |(S u - g)(xb_j)|^2
    mean_penalty = mu * (sum_j w_j phi_0(x_j))^2          (Neumann only)

For Monte Carlo samples w_j = |Omega|/N = 1/N and wb_j = |dOmega|/N_hat = 2d/N_hat.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fields as F
from .fields import BoundaryKind, FirstOrderBundle, SecondOrderBundle
from .problem import ProblemSpec, data_f, data_g
from .quadrature import CubeRule, SampleSet


@dataclass(frozen=True)
class LossBreakdown:
    interior: float
    boundary: float
    mean_penalty: float = 0.0

    @property
    def total(self) -> float:
        return self.interior + self.boundary + self.mean_penalty

    def as_row(self) -> dict:
        return {
            "interior": self.interior,
            "boundary": self.boundary,
            "mean_penalty": self.mean_penalty,
            "total": self.total,
        }


@dataclass
class PointSet:
    """Weighted interior and boundary points for one loss evaluation."""

    x: np.ndarray
    w: np.ndarray
    xb: np.ndarray
    nb: np.ndarray
    wb: np.ndarray
    f: np.ndarray | None = None  # cached data, see with_data
    g: np.ndarray | None = None
    spec: ProblemSpec | None = None

    def with_data(self, spec: ProblemSpec) -> "PointSet":
        """Copy with f and g evaluated once, for repeated losses on fixed points."""
        return PointSet(
            self.x, self.w, self.xb, self.nb, self.wb,
            data_f(spec).evaluate(self.x), data_g(spec)(self.xb, self.nb), spec,
        )

    @classmethod
    def from_rule(cls, rule: CubeRule) -> "PointSet":
        return cls(
            rule.interior.nodes,
            rule.interior.weights,
            rule.boundary.nodes,
            rule.boundary.normals,
            rule.boundary.weights,
        )

    @classmethod
    def from_samples(cls, samples: SampleSet) -> "PointSet":
        N = samples.interior.shape[0]
        Nb = len(samples.boundary)
        if N == 0 or Nb == 0:
            raise ValueError("sample set is empty")
        d = samples.d
        # repeated boundary points (always the case for d = 1) are merged with
        # summed weights; the loss is the same sum
        xb, inv = np.unique(samples.boundary.points, axis=0, return_inverse=True)
        inv = inv.ravel()
        wb = np.bincount(inv, minlength=len(xb)) * (2.0 * d / Nb)
        first = np.full(len(xb), Nb)
        np.minimum.at(first, inv, np.arange(Nb))
        return cls(
            samples.interior,
            np.full(N, 1.0 / N),
            xb,
            samples.boundary.normals[first],
            wb,
        )


def _points(where) -> PointSet:
    if isinstance(where, PointSet):
        return where
    if isinstance(where, CubeRule):
        return PointSet.from_rule(where)
    if isinstance(where, SampleSet):
        return PointSet.from_samples(where)
    raise TypeError(f"cannot build loss points from {type(where).__name__}")


def _needs_jac(bundle, kind) -> bool:
    return isinstance(bundle, SecondOrderBundle) and BoundaryKind.parse(kind) is not BoundaryKind.DIRICHLET


def _residuals(bundle, spec: ProblemSpec | None, pts: PointSet, kind, with_data: bool):
    """Interior residual (N, r), boundary residual (Nb, n), mean of phi_0, and
    the raw source evaluations needed for backprop."""
    src = bundle.source
    n, d = bundle.n, bundle.d
    vals = src.values(pts.x)
    if isinstance(bundle, FirstOrderBundle):
        jac = src.gradients(pts.x)
        lap = None
        r = F._p_residual(vals, jac, n, d)
    elif isinstance(bundle, SecondOrderBundle):
        jac = None
        lap = src.laplacians(pts.x)
        r = F._pstar_residual(vals, lap)
    else:
        raise TypeError("expected a field bundle")
    bvals = src.values(pts.xb)
    bjac = src.gradients(pts.xb) if _needs_jac(bundle, kind) else None
    if isinstance(bundle, FirstOrderBundle):
        t = F._trace_first(bvals, pts.nb, n, d, kind)
        phi0 = vals[:, 0]
    else:
        t = F._trace_second(bvals, bjac, pts.nb, kind)
        phi0 = vals[:, 0]
    if with_data:
        if pts.spec is spec:
            r[:, -1] -= pts.f
            t = t - pts.g
        else:
            r[:, -1] -= data_f(spec).evaluate(pts.x)
            t = t - data_g(spec)(pts.xb, pts.nb)
    mean = float(pts.w @ phi0)
    return r, t, mean


def _check(bundle, spec: ProblemSpec):
    if bundle.n != spec.n or bundle.d != spec.d:
        raise ValueError(f"bundle (n={bundle.n}, d={bundle.d}) does not match problem (n={spec.n}, d={spec.d})")


def _breakdown(spec, pts, r, t, mean) -> LossBreakdown:
    interior = float(pts.w @ np.sum(r**2, axis=1))
    boundary = float(spec.lam * (pts.wb @ np.sum(t**2, axis=1)))
    penalty = spec.mu * mean**2 if spec.kind is BoundaryKind.NEUMANN else 0.0
    return LossBreakdown(interior, boundary, float(penalty))


def evaluate_loss(bundle, spec: ProblemSpec, where) -> LossBreakdown:
    _check(bundle, spec)
    pts = _points(where)
    r, t, mean = _residuals(bundle, spec, pts, spec.kind, True)
    return _breakdown(spec, pts, r, t, mean)


def expected_loss(bundle, spec: ProblemSpec, rule: CubeRule) -> LossBreakdown:
    """Loss with integrals computed by the quadrature rule."""
    return evaluate_loss(bundle, spec, rule)


def empirical_loss(bundle, spec: ProblemSpec, samples: SampleSet) -> LossBreakdown:
    """Monte Carlo loss; the Neumann penalty squares the sample mean."""
    return evaluate_loss(bundle, spec, samples)


def loss_and_gradient(bundle, spec: ProblemSpec, where):
    """Loss breakdown and its exact gradient wrt the network parameters."""
    _check(bundle, spec)
    net = bundle.network
    if net is None:
        raise TypeError("loss gradients need a network-backed bundle")
    pts = _points(where)
    n, d = bundle.n, bundle.d
    r, t, mean = _residuals(bundle, spec, pts, spec.kind, True)
    loss = _breakdown(spec, pts, r, t, mean)

    cot_r = 2.0 * pts.w[:, None] * r
    cot_t = 2.0 * spec.lam * pts.wb[:, None] * t
    cot_lap = None
    if isinstance(bundle, FirstOrderBundle):
        cot_vals, cot_jac = F._p_vjp(cot_r, n, d)
        bvals, bjac = F._trace_first_vjp(cot_t, pts.nb, n, d, spec.kind)
    else:
        cot_vals, cot_lap = F._pstar_vjp(cot_r)
        cot_jac = None
        bvals, bjac = F._trace_second_vjp(cot_t, pts.nb, spec.kind)
    if spec.kind is BoundaryKind.NEUMANN:
        cot_vals[:, 0] += 2.0 * spec.mu * mean * pts.w
    grad = net.parameter_backprop(pts.x, cot_vals, cot_jac, cot_lap)
    grad += net.parameter_backprop(pts.xb, bvals, bjac)
    return loss, grad


def loss_gradient(bundle, spec: ProblemSpec, samples: SampleSet) -> np.ndarray:
    return loss_and_gradient(bundle, spec, samples)[1]


def bilinear_form(u, w, spec: ProblemSpec, rule: CubeRule) -> float:
    """(P u, P w) + lam (S u, S w) [+ mu int phi_0 int theta_0 for Neumann]."""
    _check(u, spec)
    _check(w, spec)
    if type(u) is not type(w):
        raise ValueError("bilinear form arguments must share the system")
    pts = _points(rule)
    ru, tu, mu_ = _residuals(u, None, pts, spec.kind, False)
    rw, tw, mw = _residuals(w, None, pts, spec.kind, False)
    value = pts.w @ np.sum(ru * rw, axis=1) + spec.lam * (pts.wb @ np.sum(tu * tw, axis=1))
    if spec.kind is BoundaryKind.NEUMANN:
        value += spec.mu * mu_ * mw
    return float(value)
