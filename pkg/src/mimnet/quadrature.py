"""Unit-cube geometry, Monte Carlo samplers, tensor Gauss-Legendre rules and
Sobolev norms of field bundles.

Faces of [0,1]^d are numbered ``2*j + s``: axis ``j``, side ``s`` (0 for
x_j = 0 with normal -e_j, 1 for x_j = 1 with normal +e_j). Every face has
unit area, so |boundary| = 2d.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import FirstOrderBundle, SecondOrderBundle

CHUNK = 4096


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class UnitCube:
    d: int

    @property
    def volume(self) -> float:
        return 1.0

    @property
    def boundary_measure(self) -> float:
        return 2.0 * self.d

    @property
    def n_faces(self) -> int:
        return 2 * self.d


def face_normal(face: int, d: int) -> np.ndarray:
    axis, side = divmod(face, 2)
    nrm = np.zeros(d)
    nrm[axis] = 1.0 if side else -1.0
    return nrm


@dataclass
class QuadGrid:
    """Quadrature nodes and positive weights; boundary grids carry normals."""

    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray | None = None

    def __len__(self):
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.nodes.shape[1]

    def integrate(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))

    def integrate_function(self, fn) -> np.ndarray:
        """Integrate ``fn(points)`` chunk by chunk in a fixed order."""
        total = None
        for s in range(0, len(self), CHUNK):
            part = self.integrate_slice(fn, s, min(s + CHUNK, len(self)))
            total = part if total is None else total + part
        return total

    def integrate_slice(self, fn, start, stop):
        return np.tensordot(self.weights[start:stop], fn(self.nodes[start:stop]), axes=(0, 0))


def gauss_legendre_01(q: int, panels: int = 1):
    """Composite Gauss-Legendre rule on [0, 1] with ``panels`` equal cells."""
    if q < 1 or panels < 1:
        raise ValueError("need q >= 1 and panels >= 1")
    x, w = np.polynomial.legendre.leggauss(q)
    h = 1.0 / panels
    left = np.arange(panels) * h
    nodes = (left[:, None] + 0.5 * h * (x + 1.0)[None, :]).ravel()
    weights = np.tile(0.5 * h * w, panels)
    return nodes, weights


def _tensor(nodes1, weights1, dim):
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*([nodes1] * dim), indexing="ij")
    wgrids = np.meshgrid(*([weights1] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return pts, wts


def tensor_grid(d: int, q: int, panels: int = 1) -> QuadGrid:
    nodes1, weights1 = gauss_legendre_01(q, panels)
    pts, wts = _tensor(nodes1, weights1, d)
    return QuadGrid(pts, wts)


def boundary_grid(d: int, q: int, panels: int = 1) -> QuadGrid:
    """Per-face tensor rule of dimension d-1; weights sum to 2d."""
    nodes1, weights1 = gauss_legendre_01(q, panels)
    fpts, fwts = _tensor(nodes1, weights1, d - 1)
    nodes, weights, normals = [], [], []
    for face in range(2 * d):
        axis, side = divmod(face, 2)
        pts = np.insert(fpts, axis, float(side), axis=1)
        nodes.append(pts)
        weights.append(fwts)
        normals.append(np.broadcast_to(face_normal(face, d), pts.shape))
    return QuadGrid(np.concatenate(nodes), np.concatenate(weights), np.concatenate(normals))


@dataclass
class BoundarySamples:
    faces: np.ndarray
    points: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return self.faces.shape[0]


@dataclass
class SampleSet:
    interior: np.ndarray
    boundary: BoundarySamples
    seed: object = None

    @property
    def d(self) -> int:
        return self.interior.shape[1]


def default_boundary_count(N: int, d: int) -> int:
    return max(1, math.ceil(N / d**2))


def _open_unit(rng, shape):
    x = rng.random(shape)
    while np.any(x == 0.0):
        bad = x == 0.0
        x[bad] = rng.random(int(bad.sum()))
    return x


def sample_interior(d: int, N: int, seed=None) -> np.ndarray:
    """N i.i.d. uniform points strictly inside the cube."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return _open_unit(as_rng(seed), (N, d))


def sample_boundary(d: int, N_hat: int, seed=None) -> BoundarySamples:
    """Uniform face (all faces have unit area), then uniform within it."""
    if N_hat < 1:
        raise ValueError("N_hat must be >= 1")
    rng = as_rng(seed)
    faces = rng.integers(0, 2 * d, size=N_hat)
    pts = _open_unit(rng, (N_hat, d))
    axis, side = np.divmod(faces, 2)
    rows = np.arange(N_hat)
    pts[rows, axis] = side.astype(float)
    normals = np.zeros((N_hat, d))
    normals[rows, axis] = np.where(side == 1, 1.0, -1.0)
    return BoundarySamples(faces, pts, normals)


def sample_set(d: int, N: int, N_hat: int | None = None, seed=None) -> SampleSet:
    rng = as_rng(seed)
    N_hat = default_boundary_count(N, d) if N_hat is None else N_hat
    interior = sample_interior(d, N, rng)
    boundary = sample_boundary(d, N_hat, rng)
    return SampleSet(interior, boundary, seed if not isinstance(seed, np.random.Generator) else None)


def mc_integrate(fn, d: int, N: int, seed=None) -> float:
    x = sample_interior(d, N, seed)
    return float(np.mean(fn(x)))


# -- Sobolev norms of bundles ---------------------------------------------------


@dataclass
class NormParts:
    """Squared L2 norms per component index k = 0..n-1."""

    phi: np.ndarray
    grad_phi: np.ndarray
    psi: np.ndarray | None = None
    div_psi: np.ndarray | None = None
    lap_phi: np.ndarray | None = None


def norm_parts(bundle, grid: QuadGrid) -> NormParts:
    if len(grid) == 0:
        raise ValueError("empty quadrature grid")
    src = bundle.source
    if isinstance(bundle, FirstOrderBundle):

        def integrand(x):
            phi, psi, gphi, dpsi = bundle.split(src.values(x), src.gradients(x))
            return np.concatenate(
                [phi**2, np.sum(gphi**2, -1), np.sum(psi**2, -1), dpsi**2], axis=1
            )

        out = grid.integrate_function(integrand).reshape(4, bundle.n)
        return NormParts(out[0], out[1], psi=out[2], div_psi=out[3])
    if isinstance(bundle, SecondOrderBundle):

        def integrand(x):
            vals, jac, lap = src.values(x), src.gradients(x), src.laplacians(x)
            return np.concatenate([vals**2, np.sum(jac**2, -1), lap**2], axis=1)

        out = grid.integrate_function(integrand).reshape(3, bundle.n)
        return NormParts(out[0], out[1], lap_phi=out[2])
    raise TypeError("expected a field bundle")


@dataclass
class ErrorNorms:
    """Squared H^1 norms of the scalar components and squared H(div) norms of
    the vector components (grad phi_k for the second-order system)."""

    h1_sq: np.ndarray
    hdiv_sq: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.h1_sq) + np.sum(self.hdiv_sq))

    def to_dict(self) -> dict:
        return {"h1_sq": self.h1_sq.tolist(), "hdiv_sq": self.hdiv_sq.tolist(), "total": self.total}


def sobolev_norms(bundle, grid: QuadGrid) -> ErrorNorms:
    parts = norm_parts(bundle, grid)
    h1 = parts.phi + parts.grad_phi
    if isinstance(bundle, FirstOrderBundle):
        hdiv = parts.psi + parts.div_psi
    else:
        hdiv = parts.grad_phi + parts.lap_phi
    return ErrorNorms(h1, hdiv)


def error_norms(approx, exact, grid: QuadGrid) -> ErrorNorms:
    """Squared errors of ``approx`` against ``exact`` (same system, n and d)."""
    return sobolev_norms(approx - exact, grid)


def boundary_vector_l2(bundle, bgrid: QuadGrid) -> np.ndarray:
    """||psi_k||_{L2(boundary)} (first-order) or ||grad phi_k|| (second-order), per k."""
    src = bundle.source
    if isinstance(bundle, FirstOrderBundle):

        def integrand(x):
            _, psi, _, _ = bundle.split(src.values(x), src.gradients(x))
            return np.sum(psi**2, -1)

    else:

        def integrand(x):
            return np.sum(src.gradients(x) ** 2, -1)

    return np.sqrt(np.maximum(bgrid.integrate_function(integrand), 0.0))


def network_grid(d: int, q: int | None = None) -> QuadGrid:
    """Dense rule for piecewise-polynomial network integrands."""
    if q is None:
        q = 128 if d <= 2 else 24
    return tensor_grid(d, q)


@dataclass
class CubeRule:
    """Interior and boundary quadrature grids used for expected losses."""

    interior: QuadGrid
    boundary: QuadGrid

    @property
    def d(self) -> int:
        return self.interior.d


def cube_rule(d: int, q: int, panels: int = 1) -> CubeRule:
    return CubeRule(tensor_grid(d, q, panels), boundary_grid(d, q, panels))
